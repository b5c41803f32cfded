//! Matchability prediction and the geometric context encoder.
//!
//! The encoder consumes `(x, y, tanh(H(f)))` per keypoint and stacks
//! pre-activation residual units, each branch being
//! `[CN → BN → ReLU → perceptron] × 2` around an identity skip.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::layers::{init_batch_norm, init_linear, init_weight};
use crate::numerics::{Activation, Forward, LayerSpec, Matrix, Mlp, MlpSpec, Mode, Norm, ParamStore, Var};

/// Output widths of the matchability MLP.
pub const HEAD_WIDTHS: [usize; 4] = [128, 32, 32, 1];
/// Hinge margin of the ranking objective.
pub const QUAD_MARGIN: f64 = 1.0;

/// Maps a raw local descriptor to one real-valued matchability score.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchabilityHead {
    pub mlp: Mlp,
}

impl MatchabilityHead {
    pub fn new(desc_dim: usize) -> Self {
        let n = HEAD_WIDTHS.len();
        let layers = HEAD_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let act = if i + 1 < n {
                    Activation::Relu
                } else {
                    Activation::None
                };
                LayerSpec::new(w, Norm::None, act)
            })
            .collect();
        let spec = MlpSpec::new(desc_dim, layers).expect("static widths are valid");
        Self {
            mlp: Mlp::new("match", spec),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.mlp.init(store, 1.0, rng);
    }

    /// Raw scores `H(f)`, K×1.
    pub fn scores(&self, fwd: &mut Forward<'_>, descriptors: Var) -> Result<Var> {
        self.mlp.forward(fwd, descriptors)
    }

    pub fn raw_scores(&self, store: &ParamStore, descriptors: &Matrix) -> Result<Vec<f64>> {
        Ok(self.mlp.apply(store, descriptors, Mode::Infer)?.into_vec())
    }
}

/// `tanh(H(f))` per descriptor row, each strictly inside (-1, 1).
pub fn matchability(
    head: &MatchabilityHead,
    store: &ParamStore,
    descriptors: &Matrix,
) -> Result<Vec<f64>> {
    Ok(head
        .raw_scores(store, descriptors)?
        .into_iter()
        .map(f64::tanh)
        .collect())
}

/// Two matched descriptor sets: row `n` of `view1` corresponds to row `n` of `view2`.
#[derive(Clone, Debug)]
pub struct QuadrupleBatch {
    pub view1: Matrix,
    pub view2: Matrix,
}

impl QuadrupleBatch {
    pub fn new(view1: Matrix, view2: Matrix) -> Result<Self> {
        if view1.rows() != view2.rows() {
            return Err(Error::Dimension(format!(
                "quadruple batch views have {} and {} rows",
                view1.rows(),
                view2.rows()
            )));
        }
        Ok(Self { view1, view2 })
    }
}

/// Hinge ranking loss over ordered pairs of matchable indices, computed on raw scores.
pub fn quad_loss(
    head: &MatchabilityHead,
    store: &ParamStore,
    batch: &QuadrupleBatch,
    matchable: &[usize],
) -> Result<f64> {
    if matchable.len() < 2 {
        return Err(Error::InsufficientPairs(matchable.len()));
    }
    let h1 = head.raw_scores(store, &batch.view1)?;
    let h2 = head.raw_scores(store, &batch.view2)?;
    quad_loss_from_scores(&h1, &h2, matchable)
}

/// The ranking loss given precomputed raw scores of both views.
pub fn quad_loss_from_scores(h1: &[f64], h2: &[f64], matchable: &[usize]) -> Result<f64> {
    let mut fwd_graph = crate::numerics::Graph::new();
    let a = fwd_graph.constant(Matrix::column(h1));
    let b = fwd_graph.constant(Matrix::column(h2));
    let l = fwd_graph.quad_hinge(a, b, matchable)?;
    Ok(fwd_graph.value(l).item())
}

/// Geometric context encoder over normalized keypoint coordinates and matchability.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeoEncoder {
    pub prefix: String,
    pub width: usize,
    pub units: usize,
    pub out_dim: usize,
}

impl GeoEncoder {
    /// Perceptrons per residual branch.
    pub const BRANCH_DEPTH: usize = 2;
    pub const INPUT_DIM: usize = 3;

    pub fn new(width: usize, units: usize, out_dim: usize) -> Self {
        Self {
            prefix: "geo".into(),
            width,
            units,
            out_dim,
        }
    }

    fn unit_prefix(&self, u: usize, p: usize) -> (String, String) {
        (
            format!("{}.u{u}.bn{p}", self.prefix),
            format!("{}.u{u}.fc{p}", self.prefix),
        )
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, head_gain: f64, rng: &mut R) {
        let c = self.width;
        init_weight(store, &format!("{}.lift", self.prefix), Self::INPUT_DIM, c, 1.0, rng);
        for u in 0..self.units {
            for p in 0..Self::BRANCH_DEPTH {
                let (bn, fc) = self.unit_prefix(u, p);
                init_batch_norm(store, &bn, c);
                // the last perceptron of each branch starts small so the skip dominates
                let gain = if p + 1 == Self::BRANCH_DEPTH { 0.5 } else { 2f64.sqrt() };
                init_weight(store, &fc, c, c, gain, rng);
            }
        }
        init_batch_norm(store, &format!("{}.out.bn", self.prefix), c);
        init_linear(store, &format!("{}.head", self.prefix), c, self.out_dim, head_gain, rng);
    }

    /// `coords` is K×2 (normalized), `m` is K×1 activated matchability.
    pub fn forward(&self, fwd: &mut Forward<'_>, coords: Var, m: Var) -> Result<Var> {
        let k = fwd.value(coords).rows();
        if k == 0 {
            return Err(Error::EmptyInput("geometric encoder needs K ≥ 1".into()));
        }
        if fwd.value(coords).cols() != 2 || fwd.value(m).shape() != (k, 1) {
            return Err(Error::Dimension(format!(
                "geometric encoder expects K×2 coords and K×1 matchability, got {:?} and {:?}",
                fwd.value(coords).shape(),
                fwd.value(m).shape()
            )));
        }
        let input = fwd.graph.hcat(coords, m)?;
        // every pre-head affine map feeds a context norm, so only the head has a bias
        let mut x = fwd.linear_no_bias(&format!("{}.lift", self.prefix), input)?;
        for u in 0..self.units {
            let mut branch = x;
            for p in 0..Self::BRANCH_DEPTH {
                let (bn, fc) = self.unit_prefix(u, p);
                branch = fwd.context_norm(branch);
                branch = fwd.batch_norm(&bn, branch)?;
                branch = fwd.graph.relu(branch);
                branch = fwd.linear_no_bias(&fc, branch)?;
            }
            x = fwd.graph.add(x, branch)?;
        }
        // closing pre-activation: removes the per-channel offsets carried by the skip path
        let mut y = fwd.context_norm(x);
        y = fwd.batch_norm(&format!("{}.out.bn", self.prefix), y)?;
        y = fwd.graph.relu(y);
        fwd.linear(&format!("{}.head", self.prefix), y)
    }
}

/// Encodes one keypoint set; `coords` K×2 normalized, `m` K×1 in (-1, 1).
pub fn encode_geometric(
    enc: &GeoEncoder,
    store: &ParamStore,
    coords: &Matrix,
    m: &Matrix,
    mode: Mode,
) -> Result<Matrix> {
    let mut fwd = Forward::new(store, mode);
    let c = fwd.input(coords.clone());
    let mv = fwd.input(m.clone());
    let y = enc.forward(&mut fwd, c, mv)?;
    Ok(fwd.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with_head(seed: u64) -> (MatchabilityHead, ParamStore) {
        let head = MatchabilityHead::new(128);
        let mut store = ParamStore::new();
        head.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        (head, store)
    }

    #[test]
    fn zero_head_gives_zero_matchability() {
        let (head, mut store) = store_with_head(0);
        for (_, p) in store.iter_mut() {
            p.value.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let f = Matrix::filled(5, 128, 0.3);
        assert!(matchability(&head, &store, &f)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn matchability_in_open_interval() {
        let (head, store) = store_with_head(1);
        let f = crate::numerics::l2_normalize_rows(
            &Matrix::from_vec(4, 128, (0..512).map(|i| (i as f64).sin()).collect()).unwrap(),
        );
        for v in matchability(&head, &store, &f).unwrap() {
            assert!(v > -1.0 && v < 1.0);
        }
        assert!(matches!(
            matchability(&head, &store, &Matrix::zeros(2, 64)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn quad_loss_constant_scores_is_one() {
        let l = quad_loss_from_scores(&[0.7; 5], &[0.7; 5], &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn quad_loss_consistent_ranking_is_zero() {
        let h = [0.0, 1.0, 2.0];
        assert_eq!(quad_loss_from_scores(&h, &h, &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn quad_loss_needs_two() {
        assert!(matches!(
            quad_loss_from_scores(&[1.0, 2.0], &[1.0, 2.0], &[1]),
            Err(Error::InsufficientPairs(1))
        ));
    }

    #[test]
    fn encoder_rejects_empty_input() {
        let enc = GeoEncoder::new(8, 4, 8);
        let mut store = ParamStore::new();
        enc.init(&mut store, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let r = encode_geometric(&enc, &store, &Matrix::zeros(0, 2), &Matrix::zeros(0, 1), Mode::Infer);
        assert!(matches!(r, Err(Error::EmptyInput(_))));
    }
}
