//! Feed-forward ReLU regressor trained from scratch on the weighted L1 objective.
//!
//! Parameters live in one flat buffer (per layer: row-major weights, then
//! bias) so the optimizer and the finite-difference checks can treat them as a
//! single vector. Features are standardized with training statistics and the
//! network is fit in standardized target space; predictions are mapped back to
//! label units.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binning::BinSpec;
use crate::dataset::{Dataset, LABEL_MAX, LABEL_MIN};
use crate::error::{Error, Result};
use crate::reweight::{focal_weight, lds_weights, FocalConfig, Reweighting};
use crate::scalar::{sign, Scalar};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Clamp predictions to `[0, 100]`. Inference only.
    pub output_clamp: bool,
    pub adam: AdamConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![64, 64],
            activation: Activation::Relu,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            output_clamp: false,
            adam: AdamConfig::default(),
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden_sizes", "layer widths must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", format!("{} must be positive", self.learning_rate)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::invalid("adam", format!("{a:?} out of range")));
        }
        Ok(())
    }
}

/// Layer widths plus a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr<T>", into = "NetworkRepr<T>")]
#[serde(bound = "T: Scalar")]
pub struct Network<T> {
    /// `[input, hidden.., 1]`
    sizes: Vec<usize>,
    params: Vec<T>,
    /// Start of each layer's block in `params`.
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct NetworkRepr<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

impl<T: Scalar> TryFrom<NetworkRepr<T>> for Network<T> {
    type Error = Error;
    fn try_from(r: NetworkRepr<T>) -> Result<Self> {
        let mut net = Network::zeros(&r.sizes)?;
        if r.params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                got: r.params.len(),
            });
        }
        if r.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        net.params = r.params;
        Ok(net)
    }
}

impl<T: Scalar> From<Network<T>> for NetworkRepr<T> {
    fn from(n: Network<T>) -> Self {
        NetworkRepr {
            sizes: n.sizes,
            params: n.params,
        }
    }
}

impl<T: Scalar> Network<T> {
    /// All-zero network with layer widths `sizes` (input first, output last).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid("sizes", format!("{sizes:?} is not a valid layout")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::invalid("sizes", "output layer must have width 1"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut total = 0;
        for w in sizes.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        Ok(Network {
            sizes: sizes.to_vec(),
            params: vec![T::zero(); total],
            offsets,
        })
    }

    /// He-normal weights for ReLU layers, `N(0, 1/fan_in)` for the linear
    /// output layer, zero biases.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut net = Network::zeros(&sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let n_layers = net.n_layers();
        for l in 0..n_layers {
            let fan_in = net.sizes[l] as f64;
            let gain = if l + 1 == n_layers { 1.0 } else { 2.0 };
            let sd = (gain / fan_in).sqrt();
            let (weights, _) = net.layer_mut(l);
            for w in weights {
                let z: f64 = rng.sample(StandardNormal);
                *w = T::lit(sd * z);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// `(weights, bias)` of layer `l`; weights are row-major `out x in`.
    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let block = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out + n_out];
        block.split_at(n_in * n_out)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l];
        let block = &mut self.params[start..start + n_in * n_out + n_out];
        block.split_at_mut(n_in * n_out)
    }

    /// Largest absolute parameter difference; `inf` if the layouts differ.
    pub fn max_abs_diff(&self, other: &Network<T>) -> T {
        if self.sizes != other.sizes {
            return T::infinity();
        }
        self.params
            .iter()
            .zip(&other.params)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Raw network output (standardized units).
    pub fn forward(&self, x: &[T]) -> Result<T> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut ws = Workspace::new(&self.sizes);
        Ok(self.forward_cached(x, &mut ws))
    }

    /// Forward pass recording every layer's activations in `ws`.
    fn forward_cached(&self, x: &[T], ws: &mut Workspace<T>) -> T {
        ws.acts[0].copy_from_slice(x);
        let n_layers = self.n_layers();
        for l in 0..n_layers {
            let (weights, bias) = self.layer(l);
            let n_in = self.sizes[l];
            let (prev, rest) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            for (o, (row, &b)) in out.iter_mut().zip(weights.chunks_exact(n_in).zip(bias)) {
                let z = row.iter().zip(input).fold(b, |acc, (&w, &a)| acc + w * a);
                *o = if l + 1 < n_layers { z.max(T::zero()) } else { z };
            }
        }
        ws.acts[n_layers][0]
    }

    /// Adds `d(output)/d(params) * upstream` into `grad`, using the
    /// activations left in `ws` by the last `forward_cached`.
    fn backward_accumulate(&self, upstream: T, ws: &mut Workspace<T>, grad: &mut [T]) {
        let n_layers = self.n_layers();
        ws.delta[n_layers - 1].clear();
        ws.delta[n_layers - 1].push(upstream);
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = self.offsets[l];
            let (gw, gb) = grad[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let input = &ws.acts[l];
            let (lower, upper) = ws.delta.split_at_mut(l);
            let delta = &upper[0];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                gb[o] = gb[o] + d;
                for (g, &a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g = *g + d * a;
                }
            }
            if l > 0 {
                let (weights, _) = self.layer(l);
                let prev = &mut lower[l - 1];
                prev.clear();
                prev.resize(n_in, T::zero());
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p = *p + d * w;
                    }
                }
                // ReLU derivative; activation > 0 iff pre-activation > 0.
                for (p, &a) in prev.iter_mut().zip(&ws.acts[l]) {
                    if a <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
        }
    }
}

struct Workspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<Vec<T>>,
}

impl<T: Scalar> Workspace<T> {
    fn new(sizes: &[usize]) -> Self {
        Workspace {
            acts: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            delta: sizes[1..].iter().map(|&s| Vec::with_capacity(s)).collect(),
        }
    }
}

/// Per-sample weight source used while accumulating a batch.
struct BatchWeights<'a, T> {
    fixed: Option<&'a [T]>,
    focal: Option<(&'a FocalConfig<T>, T)>,
}

impl<T: Scalar> BatchWeights<'_, T> {
    #[inline]
    fn weight(&self, i: usize, abs_residual: T) -> T {
        let fixed = self.fixed.map_or(T::one(), |w| w[i]);
        match self.focal {
            // Focal weights see the loss in label units and are constants
            // for differentiation.
            Some((cfg, scale)) => fixed * focal_weight(abs_residual * scale, cfg),
            None => fixed,
        }
    }
}

/// Accumulates `(1/B) sum_i w_i |t_i - f(x_i)|` and its subgradient over
/// `batch` into `grad`; returns the weighted loss sum (not divided by `B`).
fn accumulate_batch<T: Scalar>(
    net: &Network<T>,
    inputs: &[Vec<T>],
    targets: &[T],
    batch: &[usize],
    weights: &BatchWeights<'_, T>,
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> T {
    let inv_b = T::one() / T::from_usize_lossy(batch.len());
    let mut loss_sum = T::zero();
    for &i in batch {
        let out = net.forward_cached(&inputs[i], ws);
        let residual = targets[i] - out;
        let w = weights.weight(i, residual.abs());
        loss_sum = loss_sum + w * residual.abs();
        // d/d(out) of w |t - out| = w * sign(out - t)
        let upstream = w * sign(out - targets[i]) * inv_b;
        if upstream != T::zero() {
            net.backward_accumulate(upstream, ws, grad);
        }
    }
    loss_sum
}

/// Weighted L1 loss `(1/N) sum_i w_i |t_i - f(x_i)|` over a batch and its
/// exact subgradient with respect to every parameter (`sign(0) = 0`).
///
/// Inputs and targets are taken as-is (no standardization).
pub fn loss_gradient<T: Scalar>(
    net: &Network<T>,
    inputs: &[Vec<T>],
    targets: &[T],
    weights: &[T],
) -> Result<(T, Vec<T>)> {
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    if inputs.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: weights.len(),
        });
    }
    if inputs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != net.input_dim()) {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    let mut ws = Workspace::new(&net.sizes);
    let mut grad = vec![T::zero(); net.n_params()];
    let batch: Vec<usize> = (0..inputs.len()).collect();
    let bw = BatchWeights {
        fixed: Some(weights),
        focal: None,
    };
    let sum = accumulate_batch(net, inputs, targets, &batch, &bw, &mut ws, &mut grad);
    Ok((sum / T::from_usize_lossy(inputs.len()), grad))
}

struct Adam<T> {
    cfg: AdamConfig,
    lr: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize, lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            lr: T::lit(lr),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let eps = T::lit(self.cfg.eps);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Per-feature and target standardization constants from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardizer<T> {
    pub feature_mean: Vec<T>,
    pub feature_scale: Vec<T>,
    pub target_mean: T,
    pub target_scale: T,
}

fn mean_sd<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let n = T::from_usize_lossy(values.clone().count());
    let mean = values.clone().fold(T::zero(), |a, v| a + v) / n;
    let var = values.fold(T::zero(), |a, v| a + (v - mean) * (v - mean)) / n;
    let sd = var.sqrt();
    // Constant columns pass through unscaled.
    let sd = if sd > T::lit(1e-12) { sd } else { T::one() };
    (mean, sd)
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(data: &Dataset<T>) -> Self {
        let (feature_mean, feature_scale) = (0..data.dim())
            .map(|j| mean_sd(data.samples().iter().map(move |s| s.features[j])))
            .unzip();
        let (target_mean, target_scale) = mean_sd(data.samples().iter().map(|s| s.label));
        Standardizer {
            feature_mean,
            feature_scale,
            target_mean,
            target_scale,
        }
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn target_to_internal(&self, y: T) -> T {
        (y - self.target_mean) / self.target_scale
    }

    pub fn target_from_internal(&self, t: T) -> T {
        self.target_mean + self.target_scale * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedModel<T> {
    pub format_version: u32,
    pub config: MlpConfig,
    pub reweighting: Reweighting<T>,
    pub standardizer: Standardizer<T>,
    pub network: Network<T>,
    /// Mean weighted L1 loss (label units) per epoch.
    pub training_log: Vec<T>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn predict(&self, features: &[T]) -> Result<T> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: features.len(),
            });
        }
        let raw = self.network.forward(&self.standardizer.transform(features))?;
        let y = self.standardizer.target_from_internal(raw);
        Ok(if self.config.output_clamp {
            y.max(T::lit(LABEL_MIN)).min(T::lit(LABEL_MAX))
        } else {
            y
        })
    }

    pub fn predict_dataset(&self, data: &Dataset<T>) -> Result<Vec<T>> {
        data.features().map(|x| self.predict(x)).collect()
    }

    fn check(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelVersion(self.format_version));
        }
        let d = self.dim();
        let s = &self.standardizer;
        for len in [s.feature_mean.len(), s.feature_scale.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, got: len });
            }
        }
        let expected_hidden = &self.network.sizes()[1..self.network.sizes().len() - 1];
        if expected_hidden != self.config.hidden_sizes.as_slice() {
            return Err(Error::invalid(
                "hidden_sizes",
                format!("config says {:?}, network has {expected_hidden:?}", self.config.hidden_sizes),
            ));
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let model: TrainedModel<T> = serde_json::from_reader(r)?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    /// Loads and rejects a model whose input dimension differs from `dim`.
    pub fn load_for_dim(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let model = Self::load(path)?;
        if model.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: model.dim(),
            });
        }
        Ok(model)
    }
}

pub fn train<T: Scalar>(
    data: &Dataset<T>,
    reweighting: &Reweighting<T>,
    cfg: &MlpConfig,
    bins: &BinSpec<T>,
) -> Result<TrainedModel<T>> {
    train_observed(data, reweighting, cfg, bins, |_, _| {})
}

/// Like [`train`], calling `observer(epoch, &network)` after every epoch.
///
/// LDS weights are fixed before the first epoch; Focal weights are
/// recomputed for each batch from the residuals of the current parameters.
pub fn train_observed<T: Scalar, F: FnMut(usize, &Network<T>)>(
    data: &Dataset<T>,
    reweighting: &Reweighting<T>,
    cfg: &MlpConfig,
    bins: &BinSpec<T>,
    mut observer: F,
) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    reweighting.validate()?;
    let standardizer = Standardizer::fit(data);
    let inputs: Vec<Vec<T>> = data.features().map(|x| standardizer.transform(x)).collect();
    let labels = data.labels();
    let targets: Vec<T> = labels.iter().map(|&y| standardizer.target_to_internal(y)).collect();

    let lds = if reweighting.scheme.uses_lds() {
        Some(lds_weights(&labels, bins, &reweighting.kernel)?.into_inner())
    } else {
        None
    };
    let weights = BatchWeights {
        fixed: lds.as_deref(),
        focal: reweighting
            .scheme
            .uses_focal()
            .then_some((&reweighting.focal, standardizer.target_scale)),
    };

    let mut network = Network::init(data.dim(), &cfg.hidden_sizes, cfg.seed)?;
    let mut adam = Adam::new(network.n_params(), cfg.learning_rate, cfg.adam);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut ws = Workspace::new(network.sizes());
    let mut grad = vec![T::zero(); network.n_params()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut training_log = Vec::with_capacity(cfg.epochs);
    let n = T::from_usize_lossy(data.len());

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = T::zero();
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            epoch_loss = epoch_loss
                + accumulate_batch(&network, &inputs, &targets, batch, &weights, &mut ws, &mut grad);
            adam.step(network.params_mut(), &grad);
        }
        let mean_loss = epoch_loss * standardizer.target_scale / n;
        if !mean_loss.is_finite() || network.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        training_log.push(mean_loss);
        observer(epoch, &network);
    }

    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        config: cfg.clone(),
        reweighting: *reweighting,
        standardizer,
        network,
        training_log,
    })
}
