//! Named parameter storage, a forward-pass context that binds parameters
//! onto a [`Graph`], and the perceptron / normalization building blocks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Gradients, Graph, Var};
use super::ops::CN_EPS;
use super::Matrix;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the batch-norm moving average.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub trainable: bool,
}

/// Parameters keyed by dotted name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) {
        self.params.insert(name.into(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalar entries across trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn snap_f32(&mut self) {
        for p in self.params.values_mut() {
            p.value.snap_f32();
        }
    }

    /// Folds batch statistics gathered in training mode into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        for u in updates {
            for (suffix, batch) in [("running_mean", &u.mean), ("running_var", &u.var)] {
                let name = format!("{}.{suffix}", u.prefix);
                let p = self
                    .get_mut(&name)
                    .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
                for (r, b) in p.value.as_mut_slice().iter_mut().zip(batch) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch normalization uses the statistics of the current batch.
    Train,
    /// Batch normalization uses frozen running statistics.
    Infer,
}

/// Batch statistics observed by one batch-norm layer during a training forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// One forward pass: a fresh graph with parameters bound lazily by name.
pub struct Forward<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: BTreeMap<String, Var>,
    mode: Mode,
    frozen: Vec<String>,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: BTreeMap::new(),
            mode,
            frozen: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    /// Treats the named parameter as a constant for this pass even if it is trainable.
    pub fn freeze(&mut self, name: &str) {
        self.frozen.push(name.to_string());
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Node for parameter `name`, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
        let v = if p.trainable && !self.frozen.iter().any(|f| f == name) {
            self.graph.variable(p.value.clone())
        } else {
            self.graph.constant(p.value.clone())
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.graph.constant(m)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.graph.value(v)
    }

    /// Gradients of every bound trainable parameter, by name.
    pub fn param_gradients(&self, grads: &Gradients) -> BTreeMap<String, Matrix> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// `x · W + b` with `W = {prefix}.weight` (in×out) and `b = {prefix}.bias` (1×out).
    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let xw = self.linear_no_bias(prefix, x)?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.graph.add_row(xw, b)
    }

    /// `x · W`; used where a following normalization would cancel any bias.
    pub fn linear_no_bias(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        self.graph.matmul(x, w)
    }

    pub fn context_norm(&mut self, x: Var) -> Var {
        self.graph.column_norm(x, CN_EPS).0
    }

    /// Batch normalization with learned `gamma`/`beta` under `prefix`.
    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let normalized = match self.mode {
            Mode::Train => {
                let (v, mean, var) = self.graph.column_norm(x, BN_EPS);
                self.bn_updates.push(BnUpdate {
                    prefix: prefix.to_string(),
                    mean,
                    var,
                });
                v
            }
            Mode::Infer => {
                let mean = self.store.value(&format!("{prefix}.running_mean"))?;
                let var = self.store.value(&format!("{prefix}.running_var"))?;
                let inv: Vec<f64> = var
                    .as_slice()
                    .iter()
                    .map(|v| 1.0 / (v + BN_EPS).sqrt())
                    .collect();
                self.graph.column_affine(x, mean.as_slice(), &inv)?
            }
        };
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let scaled = self.graph.mul_row(normalized, gamma)?;
        self.graph.add_row(scaled, beta)
    }

    pub fn activate(&mut self, x: Var, act: Activation) -> Var {
        match act {
            Activation::None => x,
            Activation::Relu => self.graph.relu(x),
            Activation::Tanh => self.graph.tanh(x),
        }
    }

    pub fn normalize(&mut self, prefix: &str, x: Var, norm: Norm) -> Result<Var> {
        Ok(match norm {
            Norm::None => x,
            Norm::Context => self.context_norm(x),
            Norm::Batch => self.batch_norm(&format!("{prefix}.bn"), x)?,
            Norm::ContextBatch => {
                let c = self.context_norm(x);
                self.batch_norm(&format!("{prefix}.bn"), c)?
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    None,
    Context,
    Batch,
    ContextBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub norm: Norm,
}

impl LayerSpec {
    pub fn new(width: usize, norm: Norm, activation: Activation) -> Self {
        Self {
            width,
            activation,
            norm,
        }
    }
}

/// Layer widths with per-layer normalization and activation tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    pub fn new(input: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("MLP needs at least one layer".into()));
        }
        if input == 0 || layers.iter().any(|l| l.width == 0) {
            return Err(Error::Contract("MLP widths must be positive".into()));
        }
        Ok(Self { input, layers })
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.width)
    }
}

/// Draws a `fan_in × fan_out` weight with entries `N(0, (gain² / fan_in))` and a zero bias.
pub fn init_linear<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut R,
) {
    init_weight(store, prefix, fan_in, fan_out, gain, rng);
    store.insert(format!("{prefix}.bias"), Matrix::zeros(1, fan_out), true);
}

/// The weight of [`init_linear`] without a bias.
pub fn init_weight<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut R,
) {
    let std = gain / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
    let w = Matrix::from_vec(fan_in, fan_out, data).expect("sized above");
    store.insert(format!("{prefix}.weight"), w, true);
}

pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.gamma"), Matrix::filled(1, width, 1.0), true);
    store.insert(format!("{prefix}.beta"), Matrix::zeros(1, width), true);
    store.insert(format!("{prefix}.running_mean"), Matrix::zeros(1, width), false);
    store.insert(format!("{prefix}.running_var"), Matrix::filled(1, width, 1.0), false);
}

/// A multi-layer perceptron whose parameters live under `prefix.l{i}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub prefix: String,
    pub spec: MlpSpec,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, spec: MlpSpec) -> Self {
        Self {
            prefix: prefix.into(),
            spec,
        }
    }

    pub fn layer_prefix(&self, i: usize) -> String {
        format!("{}.l{i}", self.prefix)
    }

    /// He-style initialization; the last layer's gain is scaled by `last_gain`.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, last_gain: f64, rng: &mut R) {
        let mut fan_in = self.spec.input;
        let n = self.spec.layers.len();
        for (i, l) in self.spec.layers.iter().enumerate() {
            let prefix = self.layer_prefix(i);
            let mut gain = match l.activation {
                Activation::Relu => 2f64.sqrt(),
                _ => 1.0,
            };
            if i + 1 == n {
                gain *= last_gain;
            }
            if l.norm == Norm::None {
                init_linear(store, &prefix, fan_in, l.width, gain, rng);
            } else {
                init_weight(store, &prefix, fan_in, l.width, gain, rng);
            }
            if matches!(l.norm, Norm::Batch | Norm::ContextBatch) {
                init_batch_norm(store, &format!("{prefix}.bn"), l.width);
            }
            fan_in = l.width;
        }
    }

    /// Per layer: affine map, then the normalization tag, then the activation.
    /// Normalized layers carry no bias.
    pub fn forward(&self, fwd: &mut Forward<'_>, x: Var) -> Result<Var> {
        let cols = fwd.value(x).cols();
        if cols != self.spec.input {
            return Err(Error::Dimension(format!(
                "{} expects {} input columns, got {cols}",
                self.prefix, self.spec.input
            )));
        }
        let mut h = x;
        for (i, l) in self.spec.layers.iter().enumerate() {
            let prefix = self.layer_prefix(i);
            h = if l.norm == Norm::None {
                fwd.linear(&prefix, h)?
            } else {
                fwd.linear_no_bias(&prefix, h)?
            };
            h = fwd.normalize(&prefix, h, l.norm)?;
            h = fwd.activate(h, l.activation);
        }
        Ok(h)
    }

    /// Evaluates the MLP on a plain matrix.
    pub fn apply(&self, store: &ParamStore, input: &Matrix, mode: Mode) -> Result<Matrix> {
        let mut fwd = Forward::new(store, mode);
        let x = fwd.input(input.clone());
        let y = self.forward(&mut fwd, x)?;
        Ok(fwd.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(width: usize, act: Activation) -> (Mlp, ParamStore) {
        let spec = MlpSpec::new(width, vec![LayerSpec::new(width, Norm::None, act)]).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut store = ParamStore::new();
        store.insert("m.l0.weight", Matrix::identity(width), true);
        store.insert("m.l0.bias", Matrix::zeros(1, width), true);
        (mlp, store)
    }

    #[test]
    fn identity_layer_passes_input() {
        let (mlp, store) = identity_layer(3, Activation::None);
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, -0.25]]).unwrap();
        assert_eq!(mlp.apply(&store, &x, Mode::Infer).unwrap(), x);
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        let (mlp, store) = identity_layer(1, Activation::Relu);
        let x = Matrix::column(&[-1.0, 2.0]);
        let y = mlp.apply(&store, &x, Mode::Infer).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn input_width_mismatch_is_dimension_error() {
        let (mlp, store) = identity_layer(3, Activation::None);
        let x = Matrix::zeros(2, 4);
        assert!(matches!(
            mlp.apply(&store, &x, Mode::Infer),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mlp_spec_validation() {
        assert!(MlpSpec::new(3, vec![]).is_err());
        assert!(MlpSpec::new(3, vec![LayerSpec::new(0, Norm::None, Activation::None)]).is_err());
    }

    #[test]
    fn bn_running_stats_update_and_inference() {
        let spec = MlpSpec::new(2, vec![LayerSpec::new(2, Norm::Batch, Activation::None)]).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut store = ParamStore::new();
        mlp.init(&mut store, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 6.0]]).unwrap();
        let mut fwd = Forward::new(&store, Mode::Train);
        let xi = fwd.input(x.clone());
        let y = mlp.forward(&mut fwd, xi).unwrap();
        // batch statistics: every column standardized
        let (mean, _) = crate::numerics::ops::column_moments(fwd.value(y));
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
        let updates = fwd.take_bn_updates();
        assert_eq!(updates.len(), 1);
        store.apply_bn_updates(&updates).unwrap();
        let rm = store.value("m.l0.bn.running_mean").unwrap();
        let pre = store
            .value("m.l0.weight")
            .map(|w| x.matmul(w).unwrap())
            .unwrap();
        let (batch_mean, _) = crate::numerics::ops::column_moments(&pre);
        for (r, b) in rm.as_slice().iter().zip(&batch_mean) {
            assert!((r - 0.1 * b).abs() < 1e-12);
        }
        // inference is deterministic and uses the frozen statistics
        let a = mlp.apply(&store, &x, Mode::Infer).unwrap();
        let b = mlp.apply(&store, &x, Mode::Infer).unwrap();
        assert_eq!(a, b);
    }
}
