//! Regional feature grids, inverse-distance interpolation at keypoints and the
//! visual context encoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::numerics::{Activation, Forward, LayerSpec, Matrix, Mlp, MlpSpec, Mode, Norm, ParamStore, Var};

/// Default number of neighbours used by [`interpolate_regional`].
pub const DEFAULT_NEIGHBORS: usize = 3;
/// Queries closer than this (in pixels) to an anchor take its feature verbatim.
pub const EXACT_HIT: f64 = 1e-9;

/// `gh × gw` cells of `d`-dimensional features; cell `(r, c)` is anchored at
/// `((c + 0.5)·stride, (r + 0.5)·stride)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionalGrid {
    gh: usize,
    gw: usize,
    stride: f64,
    /// `(gh·gw) × d`, row-major over cells.
    features: Matrix,
}

impl RegionalGrid {
    pub fn new(gh: usize, gw: usize, stride: f64, features: Matrix) -> Result<Self> {
        if gh == 0 || gw == 0 {
            return Err(Error::EmptyInput("regional grid needs gh, gw ≥ 1".into()));
        }
        if features.rows() != gh * gw {
            return Err(Error::Dimension(format!(
                "{gh}x{gw} grid needs {} feature rows, got {}",
                gh * gw,
                features.rows()
            )));
        }
        if !(stride > 0.0) {
            return Err(Error::Contract(format!("grid stride must be positive, got {stride}")));
        }
        if !features.is_finite() {
            return Err(Error::Contract("regional features must be finite".into()));
        }
        Ok(Self {
            gh,
            gw,
            stride,
            features,
        })
    }

    pub fn gh(&self) -> usize {
        self.gh
    }

    pub fn gw(&self) -> usize {
        self.gw
    }

    pub fn depth(&self) -> usize {
        self.features.cols()
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn cells(&self) -> usize {
        self.gh * self.gw
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn anchor(&self, cell: usize) -> Point {
        let (r, c) = (cell / self.gw, cell % self.gw);
        ((c as f64 + 0.5) * self.stride, (r as f64 + 0.5) * self.stride)
    }

    pub fn cell_feature(&self, cell: usize) -> &[f64] {
        self.features.row(cell)
    }
}

/// Inverse-distance weighted average of the `k` nearest cell features at each query.
///
/// Ties in distance go to the lower row-major cell index.
pub fn interpolate_regional(grid: &RegionalGrid, queries: &[Point], k: usize) -> Result<Matrix> {
    let n = grid.cells();
    if k == 0 || k > n {
        return Err(Error::Contract(format!(
            "neighbour count {k} outside 1..={n}"
        )));
    }
    let d = grid.depth();
    let anchors: Vec<Point> = (0..n).map(|i| grid.anchor(i)).collect();
    let mut out = Matrix::zeros(queries.len(), d);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (qi, &q) in queries.iter().enumerate() {
        order.clear();
        order.extend(anchors.iter().enumerate().map(|(i, a)| {
            let dist = ((q.0 - a.0).powi(2) + (q.1 - a.1).powi(2)).sqrt();
            (dist, i)
        }));
        order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &mut order[..k];
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let row = out.row_mut(qi);
        if nearest[0].0 < EXACT_HIT {
            row.copy_from_slice(grid.cell_feature(nearest[0].1));
            continue;
        }
        let mut wsum = 0.0;
        for &(dist, cell) in nearest.iter() {
            let w = 1.0 / dist;
            wsum += w;
            for (o, f) in row.iter_mut().zip(grid.cell_feature(cell)) {
                *o += w * f;
            }
        }
        row.iter_mut().for_each(|v| *v /= wsum);
    }
    Ok(out)
}

/// Reduces regional features, concatenates `[reduced ∥ local]` and fuses to the output width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisEncoder {
    pub reduce: Mlp,
    pub fuse: Mlp,
}

impl VisEncoder {
    pub fn new(regional_depth: usize, hidden: usize, desc_dim: usize, fuse_hidden: usize, out_dim: usize) -> Self {
        let reduce = MlpSpec::new(
            regional_depth,
            vec![
                LayerSpec::new(hidden, Norm::Context, Activation::Relu),
                LayerSpec::new(desc_dim, Norm::Context, Activation::None),
            ],
        )
        .expect("positive widths");
        let fuse = MlpSpec::new(
            2 * desc_dim,
            vec![
                LayerSpec::new(fuse_hidden, Norm::None, Activation::Relu),
                LayerSpec::new(out_dim, Norm::None, Activation::None),
            ],
        )
        .expect("positive widths");
        Self {
            reduce: Mlp::new("vis.reduce", reduce),
            fuse: Mlp::new("vis.fuse", fuse),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, out_gain: f64, rng: &mut R) {
        self.reduce.init(store, 1.0, rng);
        self.fuse.init(store, out_gain, rng);
    }

    pub fn forward(&self, fwd: &mut Forward<'_>, regional: Var, local: Var) -> Result<Var> {
        let (kr, kl) = (fwd.value(regional).rows(), fwd.value(local).rows());
        if kr != kl {
            return Err(Error::Dimension(format!(
                "visual encoder got {kr} regional rows and {kl} local rows"
            )));
        }
        let reduced = self.reduce.forward(fwd, regional)?;
        let cat = fwd.graph.hcat(reduced, local)?;
        self.fuse.forward(fwd, cat)
    }
}

pub fn encode_visual(
    enc: &VisEncoder,
    store: &ParamStore,
    regional: &Matrix,
    local: &Matrix,
) -> Result<Matrix> {
    let mut fwd = Forward::new(store, Mode::Infer);
    let r = fwd.input(regional.clone());
    let l = fwd.input(local.clone());
    let y = enc.forward(&mut fwd, r, l)?;
    Ok(fwd.value(y).clone())
}
