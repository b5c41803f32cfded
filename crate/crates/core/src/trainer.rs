//! SGD training with momentum, weight decay and an exponentially decaying
//! learning rate, over batches of sampled matchable and noisy keypoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{homography_from_4pt, warp_point, FourPointOffsets};
use crate::keypoints::Category;
use crate::losses::{npair_node, CorrespondenceMask, Streams, Temperature};
use crate::model::{Model, TEMPERATURE};
use crate::numerics::{Forward, Matrix, Mode, ParamStore, Var};
use crate::pipeline::{forward_view, ViewInput};
use crate::synthetic::Scene;

/// Redraws allowed when a random homography turns out degenerate.
pub const MAX_AUGMENT_REDRAWS: usize = 10;

/// How the N-pair sum over matchable keypoints enters the optimized objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpairReduction {
    Sum,
    /// Divided by the number of matchable keypoints.
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_pairs: usize,
    pub keypoints_per_pair: usize,
    pub lambda: f64,
    pub seed: u64,
    pub max_steps: usize,
    /// Bound on the corner offsets of the augmenting homographies.
    pub augment_offset: f64,
    pub train_temperature: bool,
    pub npair_reduction: NpairReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 2000,
            batch_pairs: 2,
            keypoints_per_pair: 128,
            lambda: 1.0,
            seed: 0,
            max_steps: 500,
            augment_offset: 0.5,
            train_temperature: true,
            npair_reduction: NpairReduction::Mean,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 13] = [
        "base_lr",
        "momentum",
        "weight_decay",
        "lr_decay_factor",
        "lr_decay_every",
        "batch_pairs",
        "keypoints_per_pair",
        "lambda",
        "seed",
        "max_steps",
        "augment_offset",
        "train_temperature",
        "npair_reduction",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0 && self.lr_decay_factor > 0.0) {
            return bad("base_lr and lr_decay_factor must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda >= 0.0) {
            return bad("weight_decay and lambda must be non-negative");
        }
        if self.lr_decay_every == 0 || self.batch_pairs == 0 {
            return bad("lr_decay_every and batch_pairs must be positive");
        }
        if self.keypoints_per_pair < 4 {
            return bad("keypoints_per_pair must be at least 4");
        }
        if !(0.0..=0.5).contains(&self.augment_offset) {
            return bad("augment_offset must lie in [0, 0.5]");
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base_lr", self.base_lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("lr_decay_every", self.lr_decay_every.to_string()),
            ("batch_pairs", self.batch_pairs.to_string()),
            ("keypoints_per_pair", self.keypoints_per_pair.to_string()),
            ("lambda", self.lambda.to_string()),
            ("seed", self.seed.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("augment_offset", self.augment_offset.to_string()),
            ("train_temperature", self.train_temperature.to_string()),
            (
                "npair_reduction",
                match self.npair_reduction {
                    NpairReduction::Sum => "sum",
                    NpairReduction::Mean => "mean",
                }
                .to_string(),
            ),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for key `{key}`")))
        }
        match key {
            "base_lr" => self.base_lr = p(key, value)?,
            "momentum" => self.momentum = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = p(key, value)?,
            "lr_decay_every" => self.lr_decay_every = p(key, value)?,
            "batch_pairs" => self.batch_pairs = p(key, value)?,
            "keypoints_per_pair" => self.keypoints_per_pair = p(key, value)?,
            "lambda" => self.lambda = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "max_steps" => self.max_steps = p(key, value)?,
            "augment_offset" => self.augment_offset = p(key, value)?,
            "train_temperature" => self.train_temperature = p(key, value)?,
            "npair_reduction" => {
                self.npair_reduction = match value.trim() {
                    "sum" => NpairReduction::Sum,
                    "mean" => NpairReduction::Mean,
                    v => return Err(Error::Config(format!("bad value `{v}` for key `{key}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// `base_lr · factor^(step / every)` with a real-valued exponent.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    cfg.base_lr * cfg.lr_decay_factor.powf(step as f64 / cfg.lr_decay_every as f64)
}

/// Momentum buffers keyed by parameter name.
pub type Velocity = BTreeMap<String, Matrix>;

/// `v ← μ·v + g + λ_wd·p; p ← p − lr·v` on every trainable parameter not named in `frozen`.
///
/// Trainable parameters without a gradient are treated as having a zero gradient.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Matrix>,
    velocity: &mut Velocity,
    frozen: &[&str],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    for (name, p) in params.iter_mut().filter(|(n, p)| p.trainable && !frozen.contains(&n.as_str())) {
        let v = velocity
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(p.value.rows(), p.value.cols()));
        if let Some(g) = grads.get(name) {
            g.check_same_shape(&p.value, name)?;
        }
        let g = grads.get(name).map(Matrix::as_slice);
        let pv = p.value.as_mut_slice();
        for (k, (vk, pk)) in v.as_mut_slice().iter_mut().zip(pv.iter_mut()).enumerate() {
            let gk = g.map_or(0.0, |g| g[k]);
            *vk = momentum * *vk + gk + weight_decay * *pk;
            *pk -= lr * *vk;
        }
    }
    Ok(())
}

/// Warps every coordinate row through the homography of the given corner offsets.
pub fn apply_offsets(coords: &Matrix, offsets: &FourPointOffsets) -> Result<Matrix> {
    let h = homography_from_4pt(offsets)?;
    let mut out = Matrix::zeros(coords.rows(), 2);
    for (i, r) in coords.iter_rows().enumerate() {
        let (x, y) = warp_point(&h, (r[0], r[1]))?;
        out.row_mut(i).copy_from_slice(&[x, y]);
    }
    Ok(out)
}

/// Random-homography perturbation of normalized coordinates with corner offsets in `(-m, m)`.
pub fn augment_keypoints<R: Rng>(coords: &Matrix, magnitude: f64, rng: &mut R) -> Result<Matrix> {
    let mut last = None;
    for _ in 0..=MAX_AUGMENT_REDRAWS {
        let offsets = FourPointOffsets::random(magnitude, rng);
        match apply_offsets(coords, &offsets) {
            Ok(m) => return Ok(m),
            Err(e @ (Error::Singular(_) | Error::PointAtInfinity(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one draw"))
}

/// Full per-view inputs of one scene, with keypoint rows grouped by category.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub view_a: ViewInput,
    pub view_b: ViewInput,
    /// Matchable pairs `(row in A, row in B)`.
    pub matches: Vec<(usize, usize)>,
    pub undiscovered_a: Vec<usize>,
    pub undiscovered_b: Vec<usize>,
    pub unrepeatable_a: Vec<usize>,
    pub unrepeatable_b: Vec<usize>,
}

impl PreparedScene {
    pub fn new(scene: &Scene) -> Result<Self> {
        let rows = |kp: &crate::keypoints::KeypointSet, c: Category| -> Vec<usize> {
            kp.points
                .iter()
                .enumerate()
                .filter(|(_, p)| p.category == c)
                .map(|(i, _)| i)
                .collect()
        };
        Ok(Self {
            view_a: ViewInput::from_view(&scene.keypoints_a, &scene.desc_a, &scene.grid_a)?,
            view_b: ViewInput::from_view(&scene.keypoints_b, &scene.desc_b, &scene.grid_b)?,
            matches: scene.matches(),
            undiscovered_a: rows(&scene.keypoints_a, Category::Undiscovered),
            undiscovered_b: rows(&scene.keypoints_b, Category::Undiscovered),
            unrepeatable_a: rows(&scene.keypoints_a, Category::Unrepeatable),
            unrepeatable_b: rows(&scene.keypoints_b, Category::Unrepeatable),
        })
    }
}

/// One sampled image pair: rows `0..|Cₘ|` are aligned matchable pairs, the rest noisy.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub scene: usize,
    pub rows_a: Vec<usize>,
    pub rows_b: Vec<usize>,
    pub mask: CorrespondenceMask,
}

/// Draws `batch_pairs` image pairs with a random matchable fraction in `[0.5, 1]`.
pub fn sample_batch<R: Rng>(pool: &[PreparedScene], cfg: &TrainConfig, rng: &mut R) -> Result<Vec<PairBatch>> {
    sample_batch_with(pool, cfg, rng, None)
}

/// As [`sample_batch`]; `matchable_fraction` overrides the random draw.
pub fn sample_batch_with<R: Rng>(
    pool: &[PreparedScene],
    cfg: &TrainConfig,
    rng: &mut R,
    matchable_fraction: Option<f64>,
) -> Result<Vec<PairBatch>> {
    if pool.is_empty() {
        return Err(Error::EmptyInput("training pool has no scenes".into()));
    }
    let k = cfg.keypoints_per_pair;
    let mut out = Vec::with_capacity(cfg.batch_pairs);
    for _ in 0..cfg.batch_pairs {
        let si = rng.random_range(0..pool.len());
        let s = &pool[si];
        if s.matches.len() < 4 {
            return Err(Error::Contract(format!(
                "scene {si} has {} matchable keypoints, need at least 4",
                s.matches.len()
            )));
        }
        let frac = matchable_fraction.unwrap_or_else(|| rng.random_range(0.5..=1.0));
        let want_m = ((frac * k as f64).round() as usize).clamp(4.min(k), k);
        let noisy = k - want_m;
        let want_und = rng.random_range(0..=noisy);
        let want_unr = noisy - want_und;
        // shortfalls of a noisy category are refilled with matchable pairs
        let avail_und = s.undiscovered_a.len().min(s.undiscovered_b.len());
        let avail_unr = s.unrepeatable_a.len().min(s.unrepeatable_b.len());
        let n_und = want_und.min(avail_und);
        let n_unr = want_unr.min(avail_unr);
        let n_m = (want_m + (want_und - n_und) + (want_unr - n_unr)).min(s.matches.len());

        let pick = |rows: &[usize], n: usize, rng: &mut R| -> Vec<usize> {
            index::sample(rng, rows.len(), n).into_iter().map(|i| rows[i]).collect()
        };
        let mut chosen: Vec<(usize, usize)> = index::sample(rng, s.matches.len(), n_m)
            .into_iter()
            .map(|i| s.matches[i])
            .collect();
        chosen.shuffle(rng);
        let mut rows_a: Vec<usize> = chosen.iter().map(|m| m.0).collect();
        let mut rows_b: Vec<usize> = chosen.iter().map(|m| m.1).collect();
        rows_a.extend(pick(&s.undiscovered_a, n_und, rng));
        rows_a.extend(pick(&s.unrepeatable_a, n_unr, rng));
        rows_b.extend(pick(&s.undiscovered_b, n_und, rng));
        rows_b.extend(pick(&s.unrepeatable_b, n_unr, rng));
        let total = rows_a.len();
        let mask = CorrespondenceMask::new((0..n_m).collect(), (n_m..total).collect())?;
        out.push(PairBatch {
            scene: si,
            rows_a,
            rows_b,
            mask,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    /// N-pair loss divided by the number of matchable keypoints, averaged over pairs.
    pub npair: f64,
    pub quad: f64,
    /// Temperature used in this step's forward pass.
    pub alpha: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,lr,total,npair,quad,alpha";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{},{}", r.step, r.lr, r.total, r.npair, r.quad, r.alpha)
                .expect("writing to a string");
        }
        s
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.alpha).collect()
    }

    pub fn npairs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.npair).collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total).collect()
    }
}

/// Losses of one step.
pub struct StepLosses {
    /// Value that is differentiated.
    pub objective: Var,
    /// N-pair per matchable keypoint, averaged over pairs.
    pub npair_mean: f64,
    pub quad: f64,
}

/// Builds the joint objective of one batch on `fwd`.
pub fn batch_objective<R: Rng>(
    model: &Model,
    fwd: &mut Forward<'_>,
    pool: &[PreparedScene],
    batch: &[PairBatch],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepLosses> {
    let alpha = fwd.param(TEMPERATURE)?;
    let mut objective: Option<Var> = None;
    let (mut npair_mean, mut quad_sum) = (0.0, 0.0);
    let share = 1.0 / batch.len() as f64;
    for pb in batch {
        let s = &pool[pb.scene];
        let mut va = s.view_a.select(&pb.rows_a);
        let mut vb = s.view_b.select(&pb.rows_b);
        va.coords = augment_keypoints(&va.coords, cfg.augment_offset, rng)?;
        vb.coords = augment_keypoints(&vb.coords, cfg.augment_offset, rng)?;
        let oa = forward_view(model, fwd, &va, Streams::BOTH, true)?;
        let ob = forward_view(model, fwd, &vb, Streams::BOTH, true)?;
        let np = npair_node(&mut fwd.graph, oa.features, ob.features, alpha, &pb.mask)?;
        let km = pb.mask.matchable().len() as f64;
        npair_mean += share * fwd.value(np).item() / km;
        let np_scale = match cfg.npair_reduction {
            NpairReduction::Sum => share,
            NpairReduction::Mean => share / km,
        };
        let mut pair = fwd.graph.affine(np, np_scale, 0.0);
        if cfg.lambda > 0.0 && pb.mask.matchable().len() >= 2 {
            let (ha, hb) = (oa.scores.expect("requested"), ob.scores.expect("requested"));
            let q = fwd.graph.quad_hinge(ha, hb, pb.mask.matchable())?;
            quad_sum += share * fwd.value(q).item();
            let qs = fwd.graph.affine(q, cfg.lambda * share, 0.0);
            pair = fwd.graph.add(pair, qs)?;
        }
        objective = Some(match objective {
            None => pair,
            Some(o) => fwd.graph.add(o, pair)?,
        });
    }
    Ok(StepLosses {
        objective: objective.ok_or_else(|| Error::EmptyInput("empty batch".into()))?,
        npair_mean,
        quad: quad_sum,
    })
}

fn describe_batch(batch: &[PairBatch]) -> String {
    let mut s = String::new();
    for pb in batch {
        let _ = write!(
            s,
            "[scene {} matchable {} noisy {} rows_a {:?} rows_b {:?}] ",
            pb.scene,
            pb.mask.matchable().len(),
            pb.mask.noisy().len(),
            pb.rows_a,
            pb.rows_b
        );
    }
    s
}

/// Runs `cfg.max_steps` SGD steps from `init`; inputs are only read.
pub fn train(cfg: &TrainConfig, pool: &[PreparedScene], init: &Model) -> Result<(Model, TrainLog)> {
    train_with(cfg, pool, init, |_, _| {})
}

/// As [`train`], calling `on_step` after every step.
pub fn train_with(
    cfg: &TrainConfig,
    pool: &[PreparedScene],
    init: &Model,
    mut on_step: impl FnMut(&LogRow, &Model),
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    let mut model = init.clone();
    let mut log = TrainLog::default();
    let mut velocity = Velocity::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for step in 0..cfg.max_steps {
        let lr = lr_at(cfg, step);
        let batch = sample_batch(pool, cfg, &mut rng)?;
        let alpha = model.temperature().value();
        let (grads, bn, losses_row) = {
            let mut fwd = Forward::new(&model.params, Mode::Train);
            if !cfg.train_temperature {
                fwd.freeze(TEMPERATURE);
            }
            let losses = batch_objective(&model, &mut fwd, pool, &batch, cfg, &mut rng)?;
            let objective = fwd.value(losses.objective).item();
            if !objective.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("objective {objective}; batch {}", describe_batch(&batch)),
                });
            }
            let g = fwd.graph.backward(losses.objective)?;
            let grads = fwd.param_gradients(&g);
            if let Some((name, _)) = grads.iter().find(|(_, m)| !m.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("gradient of `{name}`; batch {}", describe_batch(&batch)),
                });
            }
            (grads, fwd.take_bn_updates(), (losses.npair_mean, losses.quad))
        };
        let frozen: &[&str] = if cfg.train_temperature { &[] } else { &[TEMPERATURE] };
        sgd_step(&mut model.params, &grads, &mut velocity, frozen, lr, cfg.momentum, cfg.weight_decay)?;
        model.params.apply_bn_updates(&bn)?;
        if let Some(t) = model.params.get_mut(TEMPERATURE) {
            let a = Temperature::projected(t.value.item()).value();
            t.value = Matrix::scalar(a);
        }
        model.params.snap_f32();
        let (npair, quad) = losses_row;
        let row = LogRow {
            step,
            lr,
            total: npair + cfg.lambda * quad,
            npair,
            quad,
            alpha,
        };
        on_step(&row, &model);
        log.rows.push(row);
    }
    Ok((model, log))
}
