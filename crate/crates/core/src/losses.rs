//! Cross-modality aggregation and the N-pair objective with a trainable
//! softmax temperature.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows, Graph, Matrix, Var};

/// Lower bound the temperature is projected onto after each update.
pub const MIN_TEMPERATURE: f64 = 1e-3;

/// Which context streams are summed onto the raw descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Streams {
    pub geo: bool,
    pub vis: bool,
}

impl Streams {
    pub const RAW: Streams = Streams {
        geo: false,
        vis: false,
    };
    pub const GEO: Streams = Streams {
        geo: true,
        vis: false,
    };
    pub const VIS: Streams = Streams {
        geo: false,
        vis: true,
    };
    pub const BOTH: Streams = Streams {
        geo: true,
        vis: true,
    };

    pub fn name(&self) -> &'static str {
        match (self.geo, self.vis) {
            (false, false) => "raw",
            (true, false) => "+geo",
            (false, true) => "+vis",
            (true, true) => "+both",
        }
    }
}

impl fmt::Display for Streams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Streams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim_start_matches('+') {
            "raw" => Ok(Streams::RAW),
            "geo" => Ok(Streams::GEO),
            "vis" => Ok(Streams::VIS),
            "both" => Ok(Streams::BOTH),
            _ => Err(Error::Config(format!(
                "unknown streams `{s}` (expected raw, +geo, +vis or +both)"
            ))),
        }
    }
}

/// Row-wise sum of the enabled streams followed by L2 normalization.
pub fn aggregate(
    raw: &Matrix,
    geo: Option<&Matrix>,
    vis: Option<&Matrix>,
) -> Result<Matrix> {
    let mut sum = raw.clone();
    for s in [geo, vis].into_iter().flatten() {
        sum = sum.add(s)?;
    }
    Ok(l2_normalize_rows(&sum))
}

/// Graph form of [`aggregate`].
pub fn aggregate_node(g: &mut Graph, raw: Var, geo: Option<Var>, vis: Option<Var>) -> Result<Var> {
    let mut sum = raw;
    for s in [geo, vis].into_iter().flatten() {
        sum = g.add(sum, s)?;
    }
    Ok(g.l2_normalize_rows(sum))
}

/// `d_ij = sqrt(2 · clamp(1 - ⟨a_i, b_j⟩, 0, 2))` for unit-norm rows.
pub fn distance_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let d = g.pair_distance(av, bv)?;
    Ok(g.value(d).clone())
}

/// Index sets of matchable and noisy keypoints within one aligned batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrespondenceMask {
    matchable: Vec<usize>,
    noisy: Vec<usize>,
}

impl CorrespondenceMask {
    pub fn new(matchable: Vec<usize>, noisy: Vec<usize>) -> Result<Self> {
        if matchable.is_empty() {
            return Err(Error::Contract("mask needs at least one matchable index".into()));
        }
        if let Some(i) = matchable.iter().find(|i| noisy.contains(i)) {
            return Err(Error::Contract(format!(
                "index {i} is both matchable and noisy"
            )));
        }
        Ok(Self { matchable, noisy })
    }

    /// Every one of `n` rows matchable.
    pub fn all(n: usize) -> Result<Self> {
        Self::new((0..n).collect(), Vec::new())
    }

    pub fn matchable(&self) -> &[usize] {
        &self.matchable
    }

    pub fn noisy(&self) -> &[usize] {
        &self.noisy
    }
}

/// Softmax temperature `α > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Contract(format!("temperature must be positive, got {alpha}")));
        }
        Ok(Self(alpha))
    }

    /// Clamps onto `[MIN_TEMPERATURE, ∞)`.
    pub fn projected(alpha: f64) -> Self {
        Self(if alpha.is_nan() { MIN_TEMPERATURE } else { alpha.max(MIN_TEMPERATURE) })
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Graph form of the N-pair loss on unit-norm feature rows.
pub fn npair_node(
    g: &mut Graph,
    f1: Var,
    f2: Var,
    alpha: Var,
    mask: &CorrespondenceMask,
) -> Result<Var> {
    let (n1, n2) = (g.value(f1).rows(), g.value(f2).rows());
    if n1 != n2 {
        return Err(Error::Dimension(format!(
            "N-pair sets have {n1} and {n2} rows"
        )));
    }
    let d = g.pair_distance(f1, f2)?;
    let sim = g.affine(d, -1.0, 2.0);
    let logits = g.scale_by(alpha, sim)?;
    g.npair(logits, mask.matchable())
}

/// `-½ (Σ_{i∈Cₘ} log s^r_ii + Σ_{i∈Cₘ} log s^c_ii)` with `s = softmax(α(2 - D))`
/// row- and column-wise over the full matrix.
pub fn npair_loss(
    f1: &Matrix,
    f2: &Matrix,
    alpha: Temperature,
    mask: &CorrespondenceMask,
) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(f1.clone());
    let b = g.constant(f2.clone());
    let t = g.constant(Matrix::scalar(alpha.value()));
    let l = npair_node(&mut g, a, b, t, mask)?;
    Ok(g.value(l).item())
}

/// `npair + λ · quad`.
pub fn total_loss(npair: f64, quad: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("loss weight must be non-negative, got {lambda}")));
    }
    Ok(npair + lambda * quad)
}
