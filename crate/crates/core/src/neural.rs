//! Fully connected networks trained on consistent scores to estimate
//! conditional VaR and the conditional (VaR, ES) pair.
//!
//! A net maps the conditioning factors `x_I` to a prediction in three steps:
//! inputs are standardized with constants from a pilot sample, an MLP with
//! SiLU hidden layers produces a raw output, and a fixed affine map
//! `shift + scale * raw` puts it on the response scale. In pair mode a second
//! MLP with a softplus head gives a non-negative gap, and the ES output is
//! `VaR + scale * softplus(gap)`, so `ES >= VaR` holds by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functionals::{empirical_functional, FunctionalSpec, Prediction};
use crate::models::{ModelSpec, Subset};
use crate::scores::{evaluate, gradient, IncreasingGenerator, ScoreSpec};
use crate::simulation::{derive_seed, sample_model, SampleSet};

/// Format tag written into serialized nets.
pub const NET_FORMAT: &str = "scoresens-net";
/// Version of the serialized layout.
pub const NET_FORMAT_VERSION: u32 = 1;

/// Transformation applied to the quantile net's raw output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    #[default]
    Linear,
    /// Softplus, for strictly positive targets.
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub head: OutputHead,
    /// Adds the ES gap network.
    #[serde(default)]
    pub pair: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden_layers() -> usize {
    6
}
fn default_width() -> usize {
    20
}

impl NetConfig {
    pub fn new(input_dim: usize, pair: bool, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_layers: default_hidden_layers(),
            width: default_width(),
            head: OutputHead::Linear,
            pair,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.width == 0 {
            return Err(invalid("input_dim, hidden_layers and width must all be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    /// Draws used for the standardization constants.
    #[serde(default = "default_pilot")]
    pub pilot_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    1000
}
fn default_iterations() -> usize {
    10_000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_pilot() -> usize {
    100_000
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            iterations: default_iterations(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            pilot_size: default_pilot(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.pilot_size < 2 {
            return Err(invalid(
                "batch_size and iterations must be positive, pilot_size at least 2",
            ));
        }
        let positive = [self.learning_rate, self.epsilon];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("learning_rate and epsilon must be positive"));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("Adam decay rates must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// Dense layer `z = W a + b` with `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[inline]
/// `C = A B + beta C` for row-major `C` (m x n); `A` is m x k and `B` is k x n
/// with the given (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
    ldc: usize,
    beta: f64,
) {
    debug_assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1);
    debug_assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1);
    debug_assert!(c.len() >= (m - 1) * ldc + n);
    // SAFETY: the asserted extents keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// SiLU hidden layers followed by a single linear output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

struct Cache {
    /// `act[0]` is the input; `act[l + 1]` the output of layer `l`.
    act: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Sigmoid of the pre-activations of hidden layers, reused by backward.
    sig: Vec<Vec<f64>>,
}

impl Mlp {
    fn init(input_dim: usize, hidden: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden + 1);
        let mut fan_in = input_dim;
        for _ in 0..hidden {
            layers.push(Layer::init(fan_in, width, rng));
            fan_in = width;
        }
        layers.push(Layer::init(fan_in, 1, rng));
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    fn forward_cached(&self, x: &[f64], batch: usize) -> Cache {
        let last = self.layers.len() - 1;
        let mut act = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut sig = Vec::with_capacity(last);
        act.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let (ni, no) = (layer.inputs, layer.outputs);
            let mut z: Vec<f64> = Vec::with_capacity(batch * no);
            for _ in 0..batch {
                z.extend_from_slice(&layer.bias);
            }
            // Z = A W^T + 1 b^T, with W^T read through swapped strides.
            gemm(
                batch,
                ni,
                no,
                &act[l],
                (ni, 1),
                &layer.weights,
                (1, ni),
                &mut z,
                no,
                1.0,
            );
            if l == last {
                act.push(z.clone());
            } else {
                let s: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                act.push(z.iter().zip(&s).map(|(z, s)| z * s).collect());
                sig.push(s);
            }
            pre.push(z);
        }
        Cache { act, pre, sig }
    }

    /// Raw outputs for `batch` standardized rows.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward_cached(x, batch).act.pop().unwrap_or_default()
    }

    /// Accumulates parameter gradients into `grad` given `dL/d(raw output)`.
    fn backward(&self, cache: &Cache, dout: &[f64], batch: usize, grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.n_params();
                Some(o)
            })
            .collect();
        let mut delta = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (ni, no) = (layer.inputs, layer.outputs);
            let (gw, gb) = grad[offsets[l]..offsets[l] + layer.n_params()].split_at_mut(ni * no);
            // dW += D^T A
            gemm(no, batch, ni, &delta, (1, no), &cache.act[l], (ni, 1), gw, ni, 1.0);
            for dr in delta.chunks_exact(no) {
                for (g, d) in gb.iter_mut().zip(dr) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; batch * ni];
                gemm(
                    batch,
                    no,
                    ni,
                    &delta,
                    (no, 1),
                    &layer.weights,
                    (ni, 1),
                    &mut next,
                    ni,
                    0.0,
                );
                let zs = cache.pre[l - 1].iter().zip(&cache.sig[l - 1]);
                for (n, (&z, &s)) in next.iter_mut().zip(zs) {
                    *n *= s * (1.0 + z * (1.0 - s));
                }
                delta = next;
            }
        }
    }

    fn params_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    fn set_params_from(&mut self, p: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
        k
    }
}

/// A network estimating `T(Y | X_I)`; immutable once training ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedNet {
    pub format: String,
    pub version: u32,
    pub config: NetConfig,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: f64,
    pub output_scale: f64,
    pub quantile: Mlp,
    pub gap: Option<Mlp>,
}

impl TrainedNet {
    /// Seeded initialization with identity standardization and output map.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let quantile = Mlp::init(config.input_dim, config.hidden_layers, config.width, &mut rng);
        let gap = config
            .pair
            .then(|| Mlp::init(config.input_dim, config.hidden_layers, config.width, &mut rng));
        Ok(Self {
            format: NET_FORMAT.to_string(),
            version: NET_FORMAT_VERSION,
            input_mean: vec![0.0; config.input_dim],
            input_scale: vec![1.0; config.input_dim],
            output_shift: 0.0,
            output_scale: 1.0,
            config,
            quantile,
            gap,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn is_pair(&self) -> bool {
        self.gap.is_some()
    }

    pub fn n_params(&self) -> usize {
        self.quantile.n_params() + self.gap.as_ref().map_or(0, Mlp::n_params)
    }

    /// All weights and biases, quantile net first, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        self.quantile.params_into(&mut p);
        if let Some(g) = &self.gap {
            g.params_into(&mut p);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: p.len(),
            });
        }
        let k = self.quantile.set_params_from(p);
        if let Some(g) = &mut self.gap {
            g.set_params_from(&p[k..]);
        }
        Ok(())
    }

    fn standardize(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let d = self.input_dim();
        let mut s = Vec::with_capacity(batch * d);
        for r in 0..batch {
            for j in 0..d {
                s.push((x[r * d + j] - self.input_mean[j]) / self.input_scale[j]);
            }
        }
        s
    }

    fn check_batch(&self, x: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if !x.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len() % d,
            });
        }
        Ok(x.len() / d)
    }

    /// Prediction for one conditioning vector `x_I`.
    pub fn forward(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(self.forward_batch(x)?.remove(0))
    }

    /// Predictions for row-major conditioning vectors.
    pub fn forward_batch(&self, x: &[f64]) -> Result<Vec<Prediction>> {
        let batch = self.check_batch(x)?;
        let s = self.standardize(x, batch);
        let q = self.quantile.forward(&s, batch);
        let gap = self.gap.as_ref().map(|g| g.forward(&s, batch));
        Ok((0..batch)
            .map(|r| {
                let z1 = self.output_shift + self.output_scale * self.head(q[r]);
                match &gap {
                    Some(g) => Prediction::pair(z1, z1 + self.output_scale * softplus(g[r])),
                    None => Prediction::scalar(z1),
                }
            })
            .collect())
    }

    fn head(&self, raw: f64) -> f64 {
        match self.config.head {
            OutputHead::Linear => raw,
            OutputHead::Positive => softplus(raw),
        }
    }

    fn head_prime(&self, raw: f64) -> f64 {
        match self.config.head {
            OutputHead::Linear => 1.0,
            OutputHead::Positive => sigmoid(raw),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if net.format != NET_FORMAT || net.version != NET_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "expected {NET_FORMAT} v{NET_FORMAT_VERSION}, found {} v{}",
                net.format, net.version
            )));
        }
        net.config.validate()?;
        let d = net.config.input_dim;
        if net.input_mean.len() != d || net.input_scale.len() != d || net.quantile.input_dim() != d {
            return Err(Error::Serialization("layer dimensions disagree with input_dim".into()));
        }
        if net.gap.is_some() != net.config.pair {
            return Err(Error::Serialization("pair flag disagrees with the gap network".into()));
        }
        Ok(net)
    }
}

fn check_score(net: &TrainedNet, score: &ScoreSpec) -> Result<()> {
    let ok = match score {
        ScoreSpec::Gpl {
            g: IncreasingGenerator::Identity,
            ..
        } => !net.is_pair(),
        ScoreSpec::ZeroHomVarEs { .. } | ScoreSpec::JointVarEs { .. } => net.is_pair(),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(invalid(format!(
            "score {score} is not trainable with a {} net; use the pinball loss for VaR or a joint VaR/ES score in pair mode",
            if net.is_pair() { "pair-mode" } else { "single-output" }
        )))
    }
}

/// Batch-mean score and its gradient with respect to [`TrainedNet::params`].
///
/// `x` holds `y.len()` row-major conditioning vectors.
pub fn loss_and_gradient(net: &TrainedNet, x: &[f64], y: &[f64], score: &ScoreSpec) -> Result<(f64, Vec<f64>)> {
    check_score(net, score)?;
    let batch = net.check_batch(x)?;
    if batch != y.len() {
        return Err(Error::DimensionMismatch {
            expected: batch,
            found: y.len(),
        });
    }
    if batch == 0 {
        return Err(Error::EmptySample);
    }
    let s = net.standardize(x, batch);
    let qc = net.quantile.forward_cached(&s, batch);
    let gc = net.gap.as_ref().map(|g| g.forward_cached(&s, batch));
    let q_raw = qc.act.last().expect("network has layers");
    let scale = net.output_scale;
    let inv = 1.0 / batch as f64;
    let zero_hom = matches!(score, ScoreSpec::ZeroHomVarEs { .. });

    let mut loss = 0.0;
    let mut dq = vec![0.0; batch];
    let mut dg = vec![0.0; batch];
    for r in 0..batch {
        let z1 = net.output_shift + scale * net.head(q_raw[r]);
        let pred = match &gc {
            Some(c) => {
                let raw = c.act.last().expect("network has layers")[r];
                Prediction::pair(z1, z1 + scale * softplus(raw))
            }
            None => Prediction::scalar(z1),
        };
        if zero_hom && (y[r] <= 0.0 || pred.get(1) <= 0.0) {
            return Err(Error::NonPositiveObservation {
                index: r,
                detail: format!("y = {}, ES prediction = {}", y[r], pred.get(1)),
            });
        }
        loss += evaluate(score, &pred, y[r])?;
        let d = gradient(score, &pred, y[r])?;
        let head = scale * net.head_prime(q_raw[r]);
        match &gc {
            Some(c) => {
                let raw = c.act.last().expect("network has layers")[r];
                // z2 = z1 + scale * softplus(gap), so dz2/dz1 = 1.
                dq[r] = (d.get(0) + d.get(1)) * head * inv;
                dg[r] = d.get(1) * scale * sigmoid(raw) * inv;
            }
            None => dq[r] = d.get(0) * head * inv,
        }
    }
    let mut grad = vec![0.0; net.n_params()];
    let nq = net.quantile.n_params();
    net.quantile.backward(&qc, &dq, batch, &mut grad[..nq]);
    if let (Some(g), Some(c)) = (&net.gap, &gc) {
        g.backward(c, &dg, batch, &mut grad[nq..]);
    }
    Ok((loss * inv, grad))
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Trained net with its per-iteration batch losses.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub net: TrainedNet,
    pub losses: Vec<f64>,
}

/// Row-major `x_I` block of a sample.
pub fn project_rows(sample: &SampleSet, subset: &Subset) -> Vec<f64> {
    let mut out = Vec::with_capacity(sample.len() * subset.len());
    for row in sample.factors.row_iter() {
        out.extend(subset.indices().iter().map(|&i| row[i]));
    }
    out
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = crate::sum::neumaier(values.iter().copied()) / n;
    let var = crate::sum::neumaier(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains a net for `T(Y | X_I)` on fresh mini-batches drawn from `model`.
///
/// Iteration `k` uses the batch seeded by `derive_seed(train.seed, k)`; the
/// pilot sample for the standardization constants uses its own stream.
pub fn train(
    model: &ModelSpec,
    subset: &Subset,
    score: &ScoreSpec,
    net_config: &NetConfig,
    train_config: &TrainConfig,
) -> Result<TrainingRun> {
    train_config.validate()?;
    model.validate()?;
    score.validate()?;
    subset.check(model.n_factors())?;
    if subset.is_empty() {
        return Err(invalid("a net needs at least one conditioning factor"));
    }
    if net_config.input_dim != subset.len() {
        return Err(Error::DimensionMismatch {
            expected: subset.len(),
            found: net_config.input_dim,
        });
    }
    let mut net = TrainedNet::new(net_config.clone())?;
    check_score(&net, score)?;

    let pilot = sample_model(model, train_config.pilot_size, derive_seed(train_config.seed, u64::MAX))?;
    let d = subset.len();
    for (j, &i) in subset.indices().iter().enumerate() {
        let (m, s) = mean_sd(&pilot.factors.column(i));
        net.input_mean[j] = m;
        net.input_scale[j] = if s > 0.0 { s } else { 1.0 };
    }
    let (_, sd_y) = mean_sd(&pilot.response);
    let level = match score.target_functional() {
        FunctionalSpec::Var { alpha } | FunctionalSpec::VarEs { alpha } => alpha,
        _ => 0.5,
    };
    net.output_shift = empirical_functional(&FunctionalSpec::Var { alpha: level }, &pilot.response)?.get(0);
    net.output_scale = if sd_y > 0.0 { sd_y } else { 1.0 };
    debug_assert_eq!(net.input_dim(), d);

    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut losses = Vec::with_capacity(train_config.iterations);
    for it in 0..train_config.iterations {
        let batch = sample_model(
            model,
            train_config.batch_size,
            derive_seed(train_config.seed, it as u64),
        )?;
        let x = project_rows(&batch, subset);
        let (loss, grad) = loss_and_gradient(&net, &x, &batch.response, score).map_err(|e| match e {
            Error::NonPositiveObservation { .. } | Error::Domain(_) => Error::NonFiniteLoss {
                iteration: it,
                detail: e.to_string(),
            },
            other => other,
        })?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!("batch loss {loss}"),
            });
        }
        losses.push(loss);
        adam.step(&mut params, &grad, train_config);
        net.set_params(&params)?;
    }
    Ok(TrainingRun { net, losses })
}

/// Trailing moving average with window `w`; the first `w - 1` entries average
/// what is available.
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pair: bool, seed: u64) -> TrainedNet {
        let mut cfg = NetConfig::new(2, pair, seed);
        cfg.hidden_layers = 2;
        cfg.width = 4;
        TrainedNet::new(cfg).unwrap()
    }

    #[test]
    fn zero_final_layer_outputs_bias() {
        let mut net = small(false, 3);
        let last = net.quantile.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias[0] = 1.25;
        for x in [[0.0, 0.0], [3.0, -7.0]] {
            assert_eq!(net.forward(&x).unwrap().get(0), 1.25);
        }
    }

    #[test]
    fn pair_mode_orders_outputs() {
        let net = small(true, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
            let p = net.forward(&x).unwrap();
            assert!(p.get(1) >= p.get(0));
        }
    }

    #[test]
    fn forward_is_deterministic_and_checks_dimension() {
        let a = small(false, 9);
        let b = small(false, 9);
        let x = [0.3, -0.2];
        assert_eq!(
            a.forward(&x).unwrap().get(0).to_bits(),
            b.forward(&x).unwrap().get(0).to_bits()
        );
        assert!(matches!(a.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn pair_loss_vanishes_on_point_predictions() {
        // Zero gap is unreachable through softplus, so check via the score directly.
        let s = ScoreSpec::ZeroHomVarEs { alpha: 0.9 };
        for y in [0.5, 3.0, 100.0] {
            assert_eq!(evaluate(&s, &Prediction::pair(y, y), y).unwrap(), 0.0);
        }
    }

    #[test]
    fn json_round_trip() {
        let net = small(true, 2);
        let back = TrainedNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let bad = net.to_json().unwrap().replace(NET_FORMAT, "other");
        assert!(TrainedNet::from_json(&bad).is_err());
    }

    fn fd_check(net: &mut TrainedNet, score: &ScoreSpec, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(0.5..3.0)).collect();
        let preds = net.forward_batch(&x).unwrap();
        // Skip batches with an observation next to the pinball kink.
        if preds.iter().zip(&y).any(|(p, y)| (p.get(0) - y).abs() < 1e-3) {
            return;
        }
        let (_, g) = loss_and_gradient(net, &x, &y, score).unwrap();
        let p0 = net.params();
        let h = 1e-5;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] = p0[k] + h;
            net.set_params(&p).unwrap();
            let up = loss_and_gradient(net, &x, &y, score).unwrap().0;
            p[k] = p0[k] - h;
            net.set_params(&p).unwrap();
            let down = loss_and_gradient(net, &x, &y, score).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            assert!(err < 1e-4, "param {k}: analytic {} vs fd {fd}", g[k]);
        }
        net.set_params(&p0).unwrap();
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut single = small(false, seed);
            single.output_shift = 1.5;
            fd_check(&mut single, &ScoreSpec::pinball(0.9), 100 + seed);
            let mut pair = small(true, seed);
            pair.output_shift = 2.0;
            pair.output_scale = 0.5;
            fd_check(&mut pair, &ScoreSpec::ZeroHomVarEs { alpha: 0.9 }, 200 + seed);
        }
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn rejects_incompatible_scores() {
        let net = small(false, 1);
        let e = loss_and_gradient(&net, &[0.0, 0.0], &[1.0], &ScoreSpec::ZeroHomVarEs { alpha: 0.9 });
        assert!(e.is_err());
        let pair = small(true, 1);
        assert!(loss_and_gradient(&pair, &[0.0, 0.0], &[1.0], &ScoreSpec::pinball(0.9)).is_err());
    }
}
