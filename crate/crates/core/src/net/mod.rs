//! Dilated causal convolutional network for one-step residual prediction.
//!
//! Pipeline: normalised window → stack of dilated causal convolutions (ReLU,
//! inverted dropout while training) → features at the last time step →
//! dense ReLU layer(s) → linear output → multiplication by the training
//! residual standard deviation.
//!
//! Only the positions the final output can see are ever evaluated: the top
//! convolution needs one position, each layer below needs the taps of the
//! positions above it. With kernel 2 and dilations 1..128 that is 255
//! positions in total instead of `8 × window`.

mod adam;
mod conv;
mod train;

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState};
pub use conv::{causal_conv_forward, ConvLayer, DenseLayer};
pub use train::{make_windows, predict_residuals, train, EpochRecord, TrainingLog, Window};

pub const NET_FORMAT_VERSION: u32 = 1;

/// What the final scaling layer multiplies the linear output by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    /// Training-residual standard deviation (undoes the input z-scoring).
    ResidualStd,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub window: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub channels: usize,
    /// Widths of the dense head; the last must be 1.
    pub dense_widths: Vec<usize>,
    pub dropout: f64,
    pub output_scale: OutputScale,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the (time-ordered) windows held out at the end.
    pub validation_fraction: f64,
    /// Gradient workers per batch. Results are reproducible for a given
    /// seed and worker count.
    pub workers: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            window: 256,
            kernel_size: 2,
            dilations: vec![1, 2, 4, 8, 16, 32, 64, 128],
            channels: 16,
            dense_widths: vec![64, 1],
            dropout: 0.2,
            output_scale: OutputScale::ResidualStd,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 200,
            validation_fraction: 0.1,
            workers: 1,
            seed: 42,
        }
    }
}

impl NetConfig {
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size.saturating_sub(1)) * self.dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("net config: {m}")));
        if self.kernel_size == 0 || self.channels == 0 || self.window == 0 {
            return fail("window, kernel_size and channels must be >= 1".into());
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return fail("dilations must be non-empty and >= 1".into());
        }
        if self.dense_widths.is_empty() || self.dense_widths.contains(&0) || *self.dense_widths.last().unwrap() != 1 {
            return fail("dense_widths must be >= 1 and end in a single output".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.receptive_field() > self.window {
            return fail(format!(
                "receptive field {} exceeds window {}",
                self.receptive_field(),
                self.window
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return fail("learning_rate and epsilon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1/beta2 must be in [0, 1)".into());
        }
        if self.batch_size == 0 || self.workers == 0 {
            return fail("batch_size and workers must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail("validation_fraction must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// z-score constants of the training residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("no values to normalise".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::InsufficientData("residuals have zero variance".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// All trainable tensors; also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub conv: Vec<ConvLayer>,
    pub dense: Vec<DenseLayer>,
}

impl Params {
    pub fn zeros(config: &NetConfig) -> Self {
        let mut conv = Vec::with_capacity(config.dilations.len());
        let mut in_ch = 1;
        for &d in &config.dilations {
            conv.push(ConvLayer::zeros(in_ch, config.channels, config.kernel_size, d));
            in_ch = config.channels;
        }
        let mut dense = Vec::with_capacity(config.dense_widths.len());
        let mut inputs = config.channels;
        for &w in &config.dense_widths {
            dense.push(DenseLayer::zeros(inputs, w));
            inputs = w;
        }
        Self { conv, dense }
    }

    /// He (fan-in) normal initialisation, zero biases.
    pub fn he_init<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        for l in &mut p.conv {
            let std = (2.0 / (l.in_channels * l.kernel) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            l.weight.iter_mut().for_each(|w| *w = dist.sample(rng));
        }
        for l in &mut p.dense {
            let std = (2.0 / l.inputs as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            l.weight.iter_mut().for_each(|w| *w = dist.sample(rng));
        }
        p
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for l in &self.conv {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for l in &self.dense {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in &mut self.dense {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn count(&self) -> usize {
        self.shapes().iter().sum()
    }

    pub fn fill(&mut self, value: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|x| *x = value));
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|x| *x *= c));
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn matches(&self, config: &NetConfig) -> bool {
        let reference = Params::zeros(config);
        self.shapes() == reference.shapes()
            && self
                .conv
                .iter()
                .zip(&reference.conv)
                .all(|(a, b)| (a.in_channels, a.out_channels, a.kernel, a.dilation) == (b.in_channels, b.out_channels, b.kernel, b.dilation))
            && self
                .dense
                .iter()
                .zip(&reference.dense)
                .all(|(a, b)| (a.inputs, a.outputs) == (b.inputs, b.outputs))
    }
}

/// For every conv layer: the output positions that matter, and for each of
/// them the slot of every tap in the layer below (`None` = zero padding).
#[derive(Debug, Clone, Default)]
struct PositionPlan {
    input_positions: Vec<usize>,
    /// `taps[l][j * kernel + k]`
    taps: Vec<Vec<Option<usize>>>,
    slots: Vec<usize>,
}

impl PositionPlan {
    fn new(config: &NetConfig) -> Self {
        let window = config.window;
        let k = config.kernel_size;
        let n = config.dilations.len();
        let mut needed: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        needed[n] = vec![window - 1];
        for l in (0..n).rev() {
            let d = config.dilations[l];
            let mut below = vec![false; window];
            for &t in &needed[l + 1] {
                for tap in 0..k {
                    if let Some(s) = t.checked_sub(d * (k - 1 - tap)) {
                        below[s] = true;
                    }
                }
            }
            needed[l] = (0..window).filter(|&s| below[s]).collect();
        }
        let mut taps = Vec::with_capacity(n);
        for l in 0..n {
            let d = config.dilations[l];
            let mut index = vec![usize::MAX; window];
            for (slot, &s) in needed[l].iter().enumerate() {
                index[s] = slot;
            }
            let mut table = Vec::with_capacity(needed[l + 1].len() * k);
            for &t in &needed[l + 1] {
                for tap in 0..k {
                    table.push(t.checked_sub(d * (k - 1 - tap)).map(|s| index[s]));
                }
            }
            taps.push(table);
        }
        let slots = needed[1..].iter().map(Vec::len).collect();
        Self {
            input_positions: needed[0].clone(),
            taps,
            slots,
        }
    }
}

#[derive(Debug, Clone)]
struct Cache {
    generation: u64,
    /// Per conv layer, its slot-major input (`slot * channels + c`).
    conv_inputs: Vec<Vec<f64>>,
    conv_pre: Vec<Vec<f64>>,
    /// Dropout multipliers (0 or 1/(1-p)); empty when dropout is off.
    masks: Vec<Vec<f64>>,
    dense_inputs: Vec<Vec<f64>>,
    dense_pre: Vec<Vec<f64>>,
}

/// Result of a forward pass. The cache is only retained in training mode.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: f64,
    /// Input of the scaling layer (the dense head's linear output).
    pub unscaled: f64,
    /// Conv-stack features at the last time step.
    pub features: Vec<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Params,
    /// dLoss / d(scaling-layer input).
    pub unscaled: f64,
}

/// Trained (or freshly initialised) residual network. Serialises as a
/// versioned JSON artifact: config, normalisation constants, parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetArtifact")]
pub struct ResidualNet {
    pub format_version: u32,
    pub config: NetConfig,
    pub normalization: Normalization,
    pub params: Params,
    #[serde(skip)]
    generation: u64,
    #[serde(skip)]
    plan: Arc<PositionPlan>,
}

#[derive(Deserialize)]
struct NetArtifact {
    format_version: u32,
    config: NetConfig,
    normalization: Normalization,
    params: Params,
}

impl TryFrom<NetArtifact> for ResidualNet {
    type Error = Error;

    fn try_from(raw: NetArtifact) -> Result<Self> {
        if raw.format_version != NET_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported residual net version {}", raw.format_version)));
        }
        Self::from_params(raw.config, raw.normalization, raw.params)
    }
}

impl PartialEq for ResidualNet {
    fn eq(&self, other: &Self) -> bool {
        self.format_version == other.format_version
            && self.config == other.config
            && self.normalization == other.normalization
            && self.params == other.params
    }
}

impl ResidualNet {
    pub fn from_params(config: NetConfig, normalization: Normalization, params: Params) -> Result<Self> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(Error::Shape("parameter shapes do not match the net config".into()));
        }
        if !params.all_finite() {
            return Err(Error::InvalidState("non-finite parameters".into()));
        }
        if !(normalization.std > 0.0) || !normalization.mean.is_finite() || !normalization.std.is_finite() {
            return Err(Error::InvalidState("normalisation std must be positive and finite".into()));
        }
        let plan = Arc::new(PositionPlan::new(&config));
        Ok(Self {
            format_version: NET_FORMAT_VERSION,
            config,
            normalization,
            params,
            generation: 0,
            plan,
        })
    }

    /// Freshly initialised network; the seed comes from the config.
    pub fn new(config: NetConfig, normalization: Normalization) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::he_init(&config, &mut rng);
        Self::from_params(config, normalization, params)
    }

    /// All weights and biases zero: predicts 0 for every input.
    pub fn zeros(config: NetConfig, normalization: Normalization) -> Result<Self> {
        let params = Params::zeros(&config);
        Self::from_params(config, normalization, params)
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    pub fn output_scale(&self) -> f64 {
        match self.config.output_scale {
            OutputScale::ResidualStd => self.normalization.std,
            OutputScale::Unit => 1.0,
        }
    }

    fn plan(&self) -> &PositionPlan {
        &self.plan
    }

    /// Replaces the parameters; any cached forward pass becomes stale.
    pub fn set_params(&mut self, params: Params) -> Result<()> {
        if !params.matches(&self.config) {
            return Err(Error::Shape("parameter shapes do not match the net config".into()));
        }
        self.params = params;
        self.generation += 1;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        self.generation += 1;
        &mut self.params
    }

    /// Inference-mode prediction of the next residual from a raw window.
    pub fn predict_one(&self, window: &[f64]) -> Result<f64> {
        Ok(self.forward::<ChaCha8Rng>(window, None)?.output)
    }

    /// Forward pass on a raw (un-normalised) window of length `config.window`.
    /// Passing an RNG switches on training mode: dropout masks are drawn
    /// from it and the activations are cached for [`ResidualNet::backward`].
    pub fn forward<R: Rng + ?Sized>(&self, window: &[f64], rng: Option<&mut R>) -> Result<ForwardPass> {
        if window.len() != self.config.window {
            return Err(Error::Shape(format!(
                "window has length {}, net expects {}",
                window.len(),
                self.config.window
            )));
        }
        let plan = self.plan();
        let training = rng.is_some();
        let mut rng = rng;
        let keep = 1.0 - self.config.dropout;
        let use_dropout = training && self.config.dropout > 0.0;

        let mut current: Vec<f64> = plan
            .input_positions
            .iter()
            .map(|&s| self.normalization.normalize(window[s]))
            .collect();
        let n_layers = self.params.conv.len();
        let mut conv_inputs = Vec::with_capacity(if training { n_layers } else { 0 });
        let mut conv_pre = Vec::with_capacity(if training { n_layers } else { 0 });
        let mut masks = Vec::with_capacity(if use_dropout { n_layers } else { 0 });

        for (l, layer) in self.params.conv.iter().enumerate() {
            let slots = plan.slots[l];
            let (cin, cout, k) = (layer.in_channels, layer.out_channels, layer.kernel);
            let taps = &plan.taps[l];
            let mut pre = vec![0.0; slots * cout];
            for j in 0..slots {
                let out = &mut pre[j * cout..(j + 1) * cout];
                out.copy_from_slice(&layer.bias);
                for tap in 0..k {
                    let Some(src) = taps[j * k + tap] else { continue };
                    let x = &current[src * cin..(src + 1) * cin];
                    for (c, o) in out.iter_mut().enumerate() {
                        let base = c * cin * k + tap;
                        let mut acc = 0.0;
                        for (ci, xv) in x.iter().enumerate() {
                            acc += layer.weight[base + ci * k] * xv;
                        }
                        *o += acc;
                    }
                }
            }
            let mut act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
            if use_dropout {
                let rng = rng.as_deref_mut().expect("training mode");
                let mask: Vec<f64> = (0..act.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                act.iter_mut().zip(&mask).for_each(|(a, m)| *a *= m);
                masks.push(mask);
            }
            if training {
                conv_inputs.push(std::mem::replace(&mut current, act));
                conv_pre.push(pre);
            } else {
                current = act;
            }
        }

        let features = current;
        let mut h = features.clone();
        let mut dense_inputs = Vec::new();
        let mut dense_pre = Vec::new();
        let last = self.params.dense.len() - 1;
        for (i, layer) in self.params.dense.iter().enumerate() {
            let pre = layer.forward(&h);
            let next = if i < last { pre.iter().map(|&z| z.max(0.0)).collect() } else { pre.clone() };
            if training {
                dense_inputs.push(std::mem::replace(&mut h, next));
                dense_pre.push(pre);
            } else {
                h = next;
            }
        }
        let unscaled = h[0];
        let output = unscaled * self.output_scale();
        let cache = training.then(|| Cache {
            generation: self.generation,
            conv_inputs,
            conv_pre,
            masks,
            dense_inputs,
            dense_pre,
        });
        Ok(ForwardPass {
            output,
            unscaled,
            features,
            cache,
        })
    }

    /// Parameter gradients of a loss whose derivative with respect to the
    /// network output is `d_output`.
    pub fn backward(&self, pass: &ForwardPass, d_output: f64) -> Result<Gradients> {
        let mut params = Params::zeros(&self.config);
        let unscaled = self.backward_into(pass, d_output, &mut params)?;
        Ok(Gradients { params, unscaled })
    }

    /// Accumulates gradients into `acc`; returns dLoss/d(unscaled output).
    pub fn backward_into(&self, pass: &ForwardPass, d_output: f64, acc: &mut Params) -> Result<f64> {
        let cache = pass
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidState("no cached activations: run forward in training mode first".into()))?;
        if cache.generation != self.generation {
            return Err(Error::InvalidState("cached activations are stale: parameters changed since forward".into()));
        }
        let plan = self.plan();
        let d_unscaled = d_output * self.output_scale();

        let mut grad = vec![d_unscaled];
        for i in (0..self.params.dense.len()).rev() {
            let layer = &self.params.dense[i];
            let g = &mut acc.dense[i];
            let input = &cache.dense_inputs[i];
            let pre = &cache.dense_pre[i];
            let d_pre: Vec<f64> = if i + 1 == self.params.dense.len() {
                grad.clone()
            } else {
                grad.iter().zip(pre).map(|(d, &z)| if z > 0.0 { *d } else { 0.0 }).collect()
            };
            let mut d_in = vec![0.0; layer.inputs];
            for (o, &dp) in d_pre.iter().enumerate() {
                if dp == 0.0 {
                    continue;
                }
                g.bias[o] += dp;
                let row = o * layer.inputs;
                for j in 0..layer.inputs {
                    g.weight[row + j] += dp * input[j];
                    d_in[j] += dp * layer.weight[row + j];
                }
            }
            grad = d_in;
        }

        // grad is now dLoss/d(features), i.e. the top conv layer's single slot
        for l in (0..self.params.conv.len()).rev() {
            let layer = &self.params.conv[l];
            let g = &mut acc.conv[l];
            let (cin, cout, k) = (layer.in_channels, layer.out_channels, layer.kernel);
            let pre = &cache.conv_pre[l];
            let input = &cache.conv_inputs[l];
            let taps = &plan.taps[l];
            let mut d_pre = grad;
            for (i, d) in d_pre.iter_mut().enumerate() {
                if pre[i] <= 0.0 {
                    *d = 0.0;
                } else if let Some(mask) = cache.masks.get(l) {
                    *d *= mask[i];
                }
            }
            let need_input_grad = l > 0;
            let mut d_in = if need_input_grad { vec![0.0; input.len()] } else { Vec::new() };
            for j in 0..plan.slots[l] {
                let dz = &d_pre[j * cout..(j + 1) * cout];
                for (c, &d) in dz.iter().enumerate() {
                    g.bias[c] += d;
                }
                for tap in 0..k {
                    let Some(src) = taps[j * k + tap] else { continue };
                    let x = &input[src * cin..(src + 1) * cin];
                    for (c, &d) in dz.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let base = c * cin * k + tap;
                        for ci in 0..cin {
                            g.weight[base + ci * k] += d * x[ci];
                        }
                        if need_input_grad {
                            let dx = &mut d_in[src * cin..(src + 1) * cin];
                            for ci in 0..cin {
                                dx[ci] += d * layer.weight[base + ci * k];
                            }
                        }
                    }
                }
            }
            grad = d_in;
        }
        Ok(d_unscaled)
    }

    /// Full-length conv-stack activations (inference mode), one
    /// `channels × window` array per layer.
    pub fn conv_activations(&self, window: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        if window.len() != self.config.window {
            return Err(Error::Shape(format!(
                "window has length {}, net expects {}",
                window.len(),
                self.config.window
            )));
        }
        let mut x = vec![window.iter().map(|&v| self.normalization.normalize(v)).collect::<Vec<_>>()];
        let mut out = Vec::with_capacity(self.params.conv.len());
        for layer in &self.params.conv {
            x = causal_conv_forward(&x, layer)
                .into_iter()
                .map(|row| row.into_iter().map(|z| z.max(0.0)).collect())
                .collect();
            out.push(x.clone());
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("net serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("residual net", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
