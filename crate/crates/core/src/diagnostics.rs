//! Reverse-mode gradients of every loss and encoder checked against central
//! finite differences on small random instances.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::losses::{aggregate_node, npair_node, CorrespondenceMask, Streams};
use crate::model::{Model, ModelConfig, TEMPERATURE};
use crate::numerics::gradcheck::{relative_error, DEFAULT_STEP, REL_TOL};
use crate::numerics::graph::Fault;
use crate::numerics::{Forward, Matrix, Mode, ParamStore, Var};
use crate::pipeline::{forward_view, ViewInput};

/// Coordinates compared per case and seed.
pub const SAMPLES_PER_CASE: usize = 24;
/// Keypoints in each random instance.
const K: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradCase {
    MatchabilityHead,
    GeometricEncoder,
    VisualEncoder,
    Aggregate,
    QuadLoss,
    NpairLoss,
    TotalLoss,
}

impl GradCase {
    pub const ALL: [GradCase; 7] = [
        GradCase::MatchabilityHead,
        GradCase::GeometricEncoder,
        GradCase::VisualEncoder,
        GradCase::Aggregate,
        GradCase::QuadLoss,
        GradCase::NpairLoss,
        GradCase::TotalLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCase::MatchabilityHead => "matchability_head",
            GradCase::GeometricEncoder => "geometric_encoder",
            GradCase::VisualEncoder => "visual_encoder",
            GradCase::Aggregate => "aggregate",
            GradCase::QuadLoss => "quad_loss",
            GradCase::NpairLoss => "npair_loss",
            GradCase::TotalLoss => "total_loss",
        }
    }
}

impl fmt::Display for GradCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub samples: usize,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            samples: SAMPLES_PER_CASE,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: GradCase,
    /// Relative error of every compared coordinate.
    pub errors: Vec<f64>,
    /// Coordinates whose perturbation crossed a relu, hinge or clamp boundary.
    pub skipped: usize,
}

impl CaseResult {
    fn empty(case: GradCase) -> Self {
        Self { case, errors: Vec::new(), skipped: 0 }
    }

    pub fn checked(&self) -> usize {
        self.errors.len()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn median_rel_err(&self) -> f64 {
        let mut e = self.errors.clone();
        e.sort_by(f64::total_cmp);
        match e.len() {
            0 => 0.0,
            n if n % 2 == 1 => e[n / 2],
            n => 0.5 * (e[n / 2 - 1] + e[n / 2]),
        }
    }

    pub fn passed(&self) -> bool {
        !self.errors.is_empty() && self.max_rel_err() < REL_TOL
    }

    fn merge(&mut self, other: CaseResult) {
        self.errors.extend(other.errors);
        self.skipped += other.skipped;
    }
}

/// Model small enough for exhaustive finite differences.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        desc_dim: 8,
        geo_width: 6,
        geo_units: 2,
        regional_depth: 5,
        vis_hidden: 7,
        fuse_hidden: 4,
        context_gain: 1.0,
        init_temperature: 1.0,
    }
}

fn gaussian<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

fn uniform<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// Compares `build`'s reverse-mode gradient with central differences on a random
/// sample of the entries of `names` (entries of `priority` are always included).
#[allow(clippy::too_many_arguments)]
fn compare<R: Rng>(
    case: GradCase,
    store: &ParamStore,
    names: &[String],
    priority: &[&str],
    mode: Mode,
    opts: &GradcheckOptions,
    rng: &mut R,
    build: impl Fn(&mut Forward<'_>) -> Result<Var>,
) -> Result<CaseResult> {
    let (grads, pattern) = {
        let mut fwd = Forward::new(store, mode);
        if let Some(f) = opts.fault {
            fwd.graph.inject_fault(f);
        }
        let root = build(&mut fwd)?;
        let g = fwd.graph.backward(root)?;
        (fwd.param_gradients(&g), fwd.graph.branch_pattern())
    };
    let eval = |s: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut fwd = Forward::new(s, mode);
        let root = build(&mut fwd)?;
        Ok((fwd.value(root).item(), fwd.graph.branch_pattern()))
    };
    let mut coords: Vec<(String, usize)> = names
        .iter()
        .flat_map(|n| {
            let len = store.value(n).map_or(0, Matrix::len);
            (0..len).map(move |k| (n.clone(), k))
        })
        .collect();
    coords.shuffle(rng);
    coords.sort_by_key(|(n, _)| !priority.contains(&n.as_str()));

    let mut res = CaseResult::empty(case);
    let mut probe = store.clone();
    for (name, k) in coords {
        if res.errors.len() >= opts.samples {
            break;
        }
        let x0 = store.value(&name)?.as_slice()[k];
        let mut side = |x: f64| -> Result<(f64, Vec<bool>)> {
            probe.get_mut(&name).expect("present").value.as_mut_slice()[k] = x;
            eval(&probe)
        };
        let (fp, pp) = side(x0 + opts.step)?;
        let (fm, pm) = side(x0 - opts.step)?;
        probe.get_mut(&name).expect("present").value.as_mut_slice()[k] = x0;
        if pp != pattern || pm != pattern {
            res.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.step);
        let analytic = grads.get(&name).map_or(0.0, |g| g.as_slice()[k]);
        res.errors.push(relative_error(analytic, numeric));
    }
    Ok(res)
}

fn names_with_prefix(store: &ParamStore, prefixes: &[&str]) -> Vec<String> {
    store
        .iter()
        .filter(|(n, p)| p.trainable && prefixes.iter().any(|pre| n.starts_with(pre)))
        .map(|(n, _)| n.clone())
        .collect()
}

/// Central-difference steps compared by the step sweep.
pub const STEP_SWEEP: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// Median relative error over all cases and `seeds` for each step in [`STEP_SWEEP`].
pub fn step_sweep(seeds: impl IntoIterator<Item = u64> + Clone) -> Result<Vec<(f64, f64)>> {
    STEP_SWEEP
        .iter()
        .map(|&step| {
            let opts = GradcheckOptions { step, ..Default::default() };
            let mut all = CaseResult::empty(GradCase::TotalLoss);
            for r in run_gradcheck(seeds.clone(), &opts)? {
                all.merge(r);
            }
            Ok((step, all.median_rel_err()))
        })
        .collect()
}

/// Runs one case on the instance drawn from `seed`.
pub fn check_case(case: GradCase, seed: u64, opts: &GradcheckOptions) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(case as u64));
    let cfg = tiny_config();
    let model = Model::init(cfg.clone(), rng.random())?;
    let mut store = model.params.clone();
    // nudge BN affine parameters and biases away from their neutral initial values
    for (name, p) in store.iter_mut() {
        if p.trainable && name != TEMPERATURE && !name.ends_with(".weight") {
            for v in p.value.as_mut_slice() {
                *v += 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
        }
    }
    let d = cfg.desc_dim;
    let put = |store: &mut ParamStore, name: &str, m: Matrix| store.insert(name, m, true);
    let weights = gaussian(K, d, 1.0, &mut rng);
    match case {
        GradCase::MatchabilityHead => {
            put(&mut store, "x.desc", gaussian(K, d, 0.5, &mut rng));
            let w = gaussian(K, 1, 1.0, &mut rng);
            let names = names_with_prefix(&store, &["match.", "x.desc"]);
            compare(case, &store, &names, &[], Mode::Train, opts, &mut rng, |f| {
                let x = f.param("x.desc")?;
                let h = model.head.scores(f, x)?;
                let t = f.graph.tanh(h);
                f.graph.weighted_sum(t, w.clone())
            })
        }
        GradCase::GeometricEncoder => {
            put(&mut store, "x.coords", uniform(K, 2, -1.0, 1.0, &mut rng));
            put(&mut store, "x.m", uniform(K, 1, -0.9, 0.9, &mut rng));
            let names = names_with_prefix(&store, &["geo.", "x."]);
            compare(case, &store, &names, &[], Mode::Train, opts, &mut rng, |f| {
                let (c, m) = (f.param("x.coords")?, f.param("x.m")?);
                let y = model.geo.forward(f, c, m)?;
                f.graph.weighted_sum(y, weights.clone())
            })
        }
        GradCase::VisualEncoder => {
            put(&mut store, "x.regional", gaussian(K, cfg.regional_depth, 1.0, &mut rng));
            put(&mut store, "x.local", gaussian(K, d, 0.4, &mut rng));
            let names = names_with_prefix(&store, &["vis.", "x."]);
            compare(case, &store, &names, &[], Mode::Train, opts, &mut rng, |f| {
                let (r, l) = (f.param("x.regional")?, f.param("x.local")?);
                let y = model.vis.forward(f, r, l)?;
                f.graph.weighted_sum(y, weights.clone())
            })
        }
        GradCase::Aggregate => {
            for n in ["x.raw", "x.geo", "x.vis"] {
                put(&mut store, n, gaussian(K, d, 0.5, &mut rng));
            }
            let names = names_with_prefix(&store, &["x."]);
            compare(case, &store, &names, &[], Mode::Train, opts, &mut rng, |f| {
                let (r, g, v) = (f.param("x.raw")?, f.param("x.geo")?, f.param("x.vis")?);
                let y = aggregate_node(&mut f.graph, r, Some(g), Some(v))?;
                f.graph.weighted_sum(y, weights.clone())
            })
        }
        GradCase::QuadLoss => {
            let base = gaussian(K, d, 0.5, &mut rng);
            let noise = gaussian(K, d, 0.1, &mut rng);
            put(&mut store, "x.desc1", base.clone());
            put(&mut store, "x.desc2", base.add(&noise)?);
            let names = names_with_prefix(&store, &["match.", "x."]);
            let mask: Vec<usize> = (0..K).collect();
            compare(case, &store, &names, &[], Mode::Train, opts, &mut rng, |f| {
                let (a, b) = (f.param("x.desc1")?, f.param("x.desc2")?);
                let ha = model.head.scores(f, a)?;
                let hb = model.head.scores(f, b)?;
                f.graph.quad_hinge(ha, hb, &mask)
            })
        }
        GradCase::NpairLoss => {
            put(&mut store, "x.f1", gaussian(K, d, 1.0, &mut rng));
            put(&mut store, "x.f2", gaussian(K, d, 1.0, &mut rng));
            store.insert(TEMPERATURE, Matrix::scalar(rng.random_range(0.5..3.0)), true);
            let mask = CorrespondenceMask::new(vec![0, 2, 3, 5], vec![1, 4])?;
            let names = names_with_prefix(&store, &["x.", TEMPERATURE]);
            compare(case, &store, &names, &[TEMPERATURE], Mode::Train, opts, &mut rng, |f| {
                let (a, b, t) = (f.param("x.f1")?, f.param("x.f2")?, f.param(TEMPERATURE)?);
                let (a, b) = (f.graph.l2_normalize_rows(a), f.graph.l2_normalize_rows(b));
                npair_node(&mut f.graph, a, b, t, &mask)
            })
        }
        GradCase::TotalLoss => {
            store.insert(TEMPERATURE, Matrix::scalar(rng.random_range(0.5..3.0)), true);
            let view = |rng: &mut ChaCha8Rng| ViewInput {
                descriptors: crate::numerics::l2_normalize_rows(&gaussian(K, d, 1.0, rng)),
                coords: uniform(K, 2, -1.0, 1.0, rng),
                regional: gaussian(K, cfg.regional_depth, 1.0, rng),
            };
            let (va, vb) = (view(&mut rng), view(&mut rng));
            let mask = CorrespondenceMask::new(vec![0, 1, 2, 4], vec![3, 5])?;
            let names = names_with_prefix(&store, &[""]);
            let lambda = 1.0;
            compare(case, &store, &names, &[TEMPERATURE], Mode::Train, opts, &mut rng, |f| {
                let t = f.param(TEMPERATURE)?;
                let oa = forward_view(&model, f, &va, Streams::BOTH, true)?;
                let ob = forward_view(&model, f, &vb, Streams::BOTH, true)?;
                let np = npair_node(&mut f.graph, oa.features, ob.features, t, &mask)?;
                let q = f.graph.quad_hinge(
                    oa.scores.expect("requested"),
                    ob.scores.expect("requested"),
                    mask.matchable(),
                )?;
                let q = f.graph.affine(q, lambda, 0.0);
                f.graph.add(np, q)
            })
        }
    }
}

/// Worst case over `seeds` for every case.
pub fn run_gradcheck(seeds: impl IntoIterator<Item = u64> + Clone, opts: &GradcheckOptions) -> Result<Vec<CaseResult>> {
    let mut out = Vec::with_capacity(GradCase::ALL.len());
    for case in GradCase::ALL {
        let mut acc = CaseResult::empty(case);
        for seed in seeds.clone() {
            acc.merge(check_case(case, seed, opts)?);
        }
        out.push(acc);
    }
    Ok(out)
}
