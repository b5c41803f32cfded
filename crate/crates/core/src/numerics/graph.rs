//! Matrix-valued reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so a single reverse sweep from the
//! root visits each node after all of its consumers. Leaves created with
//! [`Graph::variable`] receive gradients; [`Graph::constant`] leaves and
//! everything computed only from constants are skipped during the sweep.

use super::ops::{self, log_sum_exp};
use super::Matrix;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking their logarithm in the N-pair term.
pub const LOG_FLOOR: f64 = 1e-30;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    Relu(Var),
    Tanh(Var),
    ColumnNorm { input: Var, inv_std: Vec<f64> },
    ColumnAffine { input: Var, scale: Vec<f64> },
    HCat(Var, Var),
    L2Rows { input: Var, norms: Vec<f64> },
    PairDistance { a: Var, b: Var, interior: Vec<bool> },
    NPair(Box<NPairCache>),
    QuadHinge { h1: Var, h2: Var, mask: Vec<usize> },
    Sum(Var),
    WeightedSum { input: Var, weights: Matrix },
}

#[derive(Debug)]
struct NPairCache {
    logits: Var,
    mask: Vec<usize>,
    row_soft: Matrix,
    col_soft: Matrix,
    row_active: Vec<bool>,
    col_active: Vec<bool>,
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Values are computed eagerly as nodes are added.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Deliberately wrong local-gradient rules, used to show that the gradient
/// check detects them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Uses `1 - y` instead of `1 - y²` for the derivative of `tanh`.
    TanhDerivative,
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, value: Matrix, op: Op, input: Var) -> Var {
        let rg = self.rg(input);
        self.push(value, op, rg)
    }

    fn binary(&mut self, value: Matrix, op: Op, a: Var, b: Var) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(value, Op::MatMul(a, b), a, b))
    }

    /// `a + b` with the 1×C row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_row(a, b, |x, y| x + y)?;
        Ok(self.binary(value, Op::AddRow(a, b), a, b))
    }

    /// `a ∘ b` with the 1×C row `b` broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_row(a, b, |x, y| x * y)?;
        Ok(self.binary(value, Op::MulRow(a, b), a, b))
    }

    fn broadcast_row(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (am, bm) = (self.value(a), self.value(b));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::Dimension(format!(
                "row broadcast of {}x{} onto {}x{}",
                bm.rows(),
                bm.cols(),
                am.rows(),
                am.cols()
            )));
        }
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (x, y) in out.row_mut(i).iter_mut().zip(bm.as_slice()) {
                *x = f(*x, *y);
            }
        }
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.binary(value, Op::Add(a, b), a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.binary(value, Op::Sub(a, b), a, b))
    }

    /// `scale · a + shift`, elementwise with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|v| scale * v + shift);
        self.unary(value, Op::Affine(a, scale), a)
    }

    /// Multiplies `x` by the 1×1 node `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::Dimension("scale_by expects a 1x1 factor".into()));
        }
        let value = self.value(x).scale(self.value(s).item());
        Ok(self.binary(value, Op::ScaleBy(s, x), s, x))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = ops::relu(self.value(a));
        self.unary(value, Op::Relu(a), a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.unary(value, Op::Tanh(a), a)
    }

    /// Per-column standardization over the rows (context normalization,
    /// or batch normalization with batch statistics). Returns the node plus
    /// the column means and population variances that were used.
    pub fn column_norm(&mut self, a: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let (value, mean, var, inv_std) = ops::standardize_columns(self.value(a), eps);
        let v = self.unary(value, Op::ColumnNorm { input: a, inv_std }, a);
        (v, mean, var)
    }

    /// `(a - shift) ∘ scale` per column with constant vectors.
    pub fn column_affine(&mut self, a: Var, shift: &[f64], scale: &[f64]) -> Result<Var> {
        let am = self.value(a);
        if shift.len() != am.cols() || scale.len() != am.cols() {
            return Err(Error::Dimension(format!(
                "column_affine with {} / {} coefficients on {} columns",
                shift.len(),
                scale.len(),
                am.cols()
            )));
        }
        let mut value = am.clone();
        for i in 0..value.rows() {
            for ((x, m), s) in value.row_mut(i).iter_mut().zip(shift).zip(scale) {
                *x = (*x - m) * s;
            }
        }
        Ok(self.unary(
            value,
            Op::ColumnAffine {
                input: a,
                scale: scale.to_vec(),
            },
            a,
        ))
    }

    pub fn hcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hcat(self.value(b))?;
        Ok(self.binary(value, Op::HCat(a, b), a, b))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let (value, norms) = ops::l2_normalize_rows_with_norms(self.value(a));
        self.unary(value, Op::L2Rows { input: a, norms }, a)
    }

    /// `D = sqrt(2 · clamp(1 - A Bᵀ, 0, 2))` for unit-norm rows.
    ///
    /// Entries that hit either clamp bound are constants for differentiation.
    pub fn pair_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        for (name, m) in [("first", am), ("second", bm)] {
            for (i, r) in m.iter_rows().enumerate() {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Contract(format!(
                        "distance matrix needs unit rows; {name} set row {i} has norm {n}"
                    )));
                }
            }
        }
        let dots = am.matmul_t(bm)?;
        let mut interior = Vec::with_capacity(dots.len());
        let value = dots.map(|d| {
            let u = 1.0 - d;
            (2.0 * u.clamp(0.0, 2.0)).sqrt()
        });
        for &d in dots.as_slice() {
            let u = 1.0 - d;
            interior.push(u > 0.0 && u < 2.0);
        }
        Ok(self.binary(value, Op::PairDistance { a, b, interior }, a, b))
    }

    /// `-½ (Σ_{i∈mask} log s^r_ii + Σ_{i∈mask} log s^c_ii)` where `s^r`/`s^c`
    /// are the row-wise and column-wise softmax of the square `logits`.
    /// Every row and column takes part in the normalizers; only masked
    /// indices contribute diagonal terms.
    pub fn npair(&mut self, logits: Var, mask: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let n = x.rows();
        if x.cols() != n {
            return Err(Error::Dimension(format!(
                "N-pair logits must be square, got {}x{}",
                n,
                x.cols()
            )));
        }
        if let Some(&bad) = mask.iter().find(|&&i| i >= n) {
            return Err(Error::Contract(format!("mask index {bad} out of range {n}")));
        }
        let mut row_soft = Matrix::zeros(n, n);
        let mut col_soft = Matrix::zeros(n, n);
        let mut row_lse = vec![0.0; n];
        let mut col_lse = vec![0.0; n];
        for i in 0..n {
            row_lse[i] = log_sum_exp(x.row(i).iter().copied());
            col_lse[i] = log_sum_exp((0..n).map(|k| x[(k, i)]));
        }
        for i in 0..n {
            for j in 0..n {
                row_soft[(i, j)] = (x[(i, j)] - row_lse[i]).exp();
                col_soft[(i, j)] = (x[(i, j)] - col_lse[j]).exp();
            }
        }
        let floor = LOG_FLOOR.ln();
        let mut total = 0.0;
        let mut row_active = Vec::with_capacity(mask.len());
        let mut col_active = Vec::with_capacity(mask.len());
        for &i in mask {
            let lr = x[(i, i)] - row_lse[i];
            let lc = x[(i, i)] - col_lse[i];
            row_active.push(lr > floor);
            col_active.push(lc > floor);
            total += lr.max(floor) + lc.max(floor);
        }
        let value = Matrix::scalar(-0.5 * total);
        let cache = NPairCache {
            logits,
            mask: mask.to_vec(),
            row_soft,
            col_soft,
            row_active,
            col_active,
        };
        Ok(self.unary(value, Op::NPair(Box::new(cache)), logits))
    }

    /// Mean hinge `max(0, 1 - (h1_i - h1_j)(h2_i - h2_j))` over ordered pairs
    /// `i ≠ j` drawn from `mask`. `h1`, `h2` are K×1 score columns.
    pub fn quad_hinge(&mut self, h1: Var, h2: Var, mask: &[usize]) -> Result<Var> {
        let (a, b) = (self.value(h1), self.value(h2));
        if a.cols() != 1 || a.shape() != b.shape() {
            return Err(Error::Dimension(format!(
                "quad hinge expects matching K×1 scores, got {}x{} and {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if mask.len() < 2 {
            return Err(Error::InsufficientPairs(mask.len()));
        }
        if let Some(&bad) = mask.iter().find(|&&i| i >= a.rows()) {
            return Err(Error::Contract(format!(
                "mask index {bad} out of range {}",
                a.rows()
            )));
        }
        let (a, b) = (a.as_slice(), b.as_slice());
        let mut total = 0.0;
        for &i in mask {
            for &j in mask {
                if i != j {
                    total += (1.0 - (a[i] - a[j]) * (b[i] - b[j])).max(0.0);
                }
            }
        }
        let km = mask.len() as f64;
        let value = Matrix::scalar(total / (km * (km - 1.0)));
        Ok(self.binary(
            value,
            Op::QuadHinge {
                h1,
                h2,
                mask: mask.to_vec(),
            },
            h1,
            h2,
        ))
    }

    /// `Σ a ∘ weights`.
    pub fn weighted_sum(&mut self, a: Var, weights: Matrix) -> Result<Var> {
        let value = self.value(a).zip_map(&weights, |x, w| x * w)?.sum();
        Ok(self.unary(Matrix::scalar(value), Op::WeightedSum { input: a, weights }, a))
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    /// Which branch every piecewise-defined node took: relu signs, active hinge
    /// terms and clamp interiors. Finite differences are only meaningful while
    /// this pattern stays fixed.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(_) => out.extend(n.value.as_slice().iter().map(|&v| v > 0.0)),
                Op::PairDistance { interior, .. } => out.extend(interior),
                Op::QuadHinge { h1, h2, mask } => {
                    let (a, b) = (self.value(*h1).as_slice(), self.value(*h2).as_slice());
                    for &i in mask {
                        for &j in mask {
                            if i != j {
                                out.push(1.0 - (a[i] - a[j]) * (b[i] - b[j]) > 0.0);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.unary(value, Op::Sum(a), a)
    }

    /// Reverse sweep from a 1×1 `root`. Each call starts from fresh zero
    /// gradients, so repeated calls return identical results.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(root).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], target: Var, delta: Matrix) {
        if !self.rg(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b))?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let db = Matrix::from_vec(1, g.cols(), g.column_sums())?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MulRow(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut da = g.clone();
                    for i in 0..da.rows() {
                        for (x, y) in da.row_mut(i).iter_mut().zip(bm.as_slice()) {
                            *x *= y;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let prod = g.zip_map(am, |x, y| x * y)?;
                    let db = Matrix::from_vec(1, g.cols(), prod.column_sums())?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Affine(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::ScaleBy(s, x) => {
                if self.rg(*s) {
                    let ds = g.zip_map(self.value(*x), |p, q| p * q)?.sum();
                    self.accumulate(grads, *s, Matrix::scalar(ds));
                }
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.scale(self.value(*s).item()));
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(&node.value, |gv, y| if y > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = match self.fault {
                    Some(Fault::TanhDerivative) => g.zip_map(&node.value, |gv, y| gv * (1.0 - y))?,
                    None => g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?,
                };
                self.accumulate(grads, *a, d);
            }
            Op::ColumnNorm { input, inv_std } => {
                // dx = inv_std · (g - mean(g) - y · mean(g ∘ y)), column-wise
                let y = &node.value;
                let k = y.rows() as f64;
                let mut mean_g = vec![0.0; y.cols()];
                let mut mean_gy = vec![0.0; y.cols()];
                for i in 0..y.rows() {
                    for c in 0..y.cols() {
                        mean_g[c] += g[(i, c)];
                        mean_gy[c] += g[(i, c)] * y[(i, c)];
                    }
                }
                mean_g.iter_mut().for_each(|v| *v /= k);
                mean_gy.iter_mut().for_each(|v| *v /= k);
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    for c in 0..y.cols() {
                        dx[(i, c)] =
                            inv_std[c] * (g[(i, c)] - mean_g[c] - y[(i, c)] * mean_gy[c]);
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::ColumnAffine { input, scale } => {
                let mut dx = g.clone();
                for i in 0..dx.rows() {
                    for (x, s) in dx.row_mut(i).iter_mut().zip(scale) {
                        *x *= s;
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::HCat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut da = Matrix::zeros(g.rows(), ca);
                let mut db = Matrix::zeros(g.rows(), cb);
                for i in 0..g.rows() {
                    da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                    db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::L2Rows { input, norms } => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for (i, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yv), gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * dot) / n;
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::PairDistance { a, b, interior } => {
                // ∂d/∂(a·b) = -1/d on the interior of the clamp
                let d = &node.value;
                let mut coef = Matrix::zeros(d.rows(), d.cols());
                for (k, (c, &inside)) in coef.as_mut_slice().iter_mut().zip(interior).enumerate() {
                    if inside {
                        *c = -g.as_slice()[k] / d.as_slice()[k];
                    }
                }
                if self.rg(*a) {
                    self.accumulate(grads, *a, coef.matmul(self.value(*b))?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, coef.t_matmul(self.value(*a))?);
                }
            }
            Op::NPair(cache) => {
                let scale = -0.5 * g.item();
                let n = cache.row_soft.rows();
                let mut dx = Matrix::zeros(n, n);
                for (t, &i) in cache.mask.iter().enumerate() {
                    if cache.row_active[t] {
                        for j in 0..n {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            dx[(i, j)] += scale * (delta - cache.row_soft[(i, j)]);
                        }
                    }
                    if cache.col_active[t] {
                        for k in 0..n {
                            let delta = if i == k { 1.0 } else { 0.0 };
                            dx[(k, i)] += scale * (delta - cache.col_soft[(k, i)]);
                        }
                    }
                }
                self.accumulate(grads, cache.logits, dx);
            }
            Op::QuadHinge { h1, h2, mask } => {
                let (a, b) = (self.value(*h1).as_slice(), self.value(*h2).as_slice());
                let km = mask.len() as f64;
                let scale = g.item() / (km * (km - 1.0));
                let mut da = vec![0.0; a.len()];
                let mut db = vec![0.0; b.len()];
                for &i in mask {
                    for &j in mask {
                        if i == j {
                            continue;
                        }
                        let (ga, gb) = (a[i] - a[j], b[i] - b[j]);
                        if 1.0 - ga * gb > 0.0 {
                            da[i] -= scale * gb;
                            da[j] += scale * gb;
                            db[i] -= scale * ga;
                            db[j] += scale * ga;
                        }
                    }
                }
                self.accumulate(grads, *h1, Matrix::column(&da));
                self.accumulate(grads, *h2, Matrix::column(&db));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::WeightedSum { input, weights } => {
                self.accumulate(grads, *input, weights.scale(g.item()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let p = g.variable(Matrix::column(&[1.0, -2.0, 3.5]));
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gradient_is_p() {
        let mut g = Graph::new();
        let p = g.variable(Matrix::from_vec(1, 4, vec![0.5, -1.5, 2.0, 3.0]).unwrap());
        let sq = g.mul_row(p, p).unwrap();
        let s = g.sum(sq);
        let half = g.affine(s, 0.5, 0.0);
        let grads = g.backward(half).unwrap();
        assert_eq!(grads.get(p).unwrap().as_slice(), &[0.5, -1.5, 2.0, 3.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let p = g.variable(Matrix::zeros(2, 2));
        assert!(matches!(
            g.backward(p),
            Err(Error::NonScalarRoot { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn repeated_backward_identical() {
        let mut g = Graph::new();
        let p = g.variable(Matrix::from_rows(&[[0.3, -0.7, 1.1]]).unwrap());
        let t = g.tanh(p);
        let s = g.sum(t);
        let a = g.backward(s).unwrap().get(p).unwrap().clone();
        let b = g.backward(s).unwrap().get(p).unwrap().clone();
        assert_eq!(a, b);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Matrix::scalar(2.0));
        let v = g.variable(Matrix::scalar(3.0));
        let p = g.scale_by(c, v).unwrap();
        let grads = g.backward(p).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(v).unwrap().item(), 2.0);
    }

    #[test]
    fn quad_hinge_needs_two_indices() {
        let mut g = Graph::new();
        let a = g.variable(Matrix::column(&[1.0, 2.0]));
        let b = g.variable(Matrix::column(&[1.0, 2.0]));
        assert!(matches!(
            g.quad_hinge(a, b, &[0]),
            Err(Error::InsufficientPairs(1))
        ));
    }
}
