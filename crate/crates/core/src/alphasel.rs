//! Choosing the regularization weight after a sweep.
//!
//! A small multilayer perceptron looks at a window of per-weight features
//! and predicts the true RMS error of the profile inverted at that weight;
//! the weight with the lowest prediction wins. The net is trained on
//! synthetic truths drawn from the EOF prior. A discrepancy-principle rule
//! is kept as a deterministic fallback.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eof::{sample_coefficients, EofBasis};
use crate::error::{Error, Result};
use crate::forward::Geometry;
use crate::invert::{sweep, InversionConfig, SweepResult, TIME_UNIT};
use crate::profiles::rms_diff;
use crate::synth::{derive_seed, simulate_measurements};

pub const NET_FORMAT_VERSION: u32 = 1;

/// Per-weight inputs to the selector, in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepFeatures {
    /// `A_i = (a_i, b_i)`: normalized root misfit, then `x_k / sigma_k`.
    pub rows: Vec<Vec<f64>>,
    /// Entry did not converge and carries its nearest converged neighbor's
    /// features.
    pub borrowed: Vec<bool>,
    pub n_obs: usize,
}

impl SweepFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Width of one `A_i`.
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn extract_features(sweep: &SweepResult, basis: &EofBasis) -> Result<SweepFeatures> {
    if sweep.n_eof != basis.n_eof() {
        return Err(Error::DimensionMismatch { expected: basis.n_eof(), got: sweep.n_eof });
    }
    let usable: Vec<usize> = sweep
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.converged && e.misfit.is_finite())
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(Error::NoConvergedEntries);
    }
    let mut roots: Vec<f64> = usable.iter().map(|&i| sweep.entries[i].misfit.sqrt()).collect();
    let med = median(&mut roots);
    let own = |i: usize| -> Vec<f64> {
        let e = &sweep.entries[i];
        let a = if med > 0.0 { e.misfit.sqrt() / med } else { 1.0 };
        std::iter::once(a).chain(e.x.0.iter().zip(basis.sigma()).map(|(x, s)| x / s)).collect()
    };
    let mut rows = Vec::with_capacity(sweep.entries.len());
    let mut borrowed = Vec::with_capacity(sweep.entries.len());
    for i in 0..sweep.entries.len() {
        // ties go to the larger weight, the better-conditioned neighbor
        let nearest = *usable.iter().min_by_key(|&&j| (j.abs_diff(i), std::cmp::Reverse(j))).expect("nonempty");
        rows.push(own(nearest));
        borrowed.push(nearest != i);
    }
    Ok(SweepFeatures { rows, borrowed, n_obs: sweep.n_obs })
}

/// Observation-count input to the net.
pub fn obs_count_input(n_obs: usize) -> f64 {
    (n_obs as f64).log10() / 4.0
}

/// `A_{i-k} .. A_{i+k}` with out-of-range indices clamped to the ends, then
/// the observation-count scalar. `i` is 0-based.
pub fn window_input(features: &SweepFeatures, i: usize, k: usize) -> Result<Vec<f64>> {
    let n = features.len();
    if i >= n {
        return Err(Error::InvalidArgument(format!("window center {i} outside 0..{n}")));
    }
    let mut out = Vec::with_capacity((2 * k + 1) * features.dim() + 1);
    for offset in 0..=2 * k {
        let j = (i + offset).saturating_sub(k).min(n - 1);
        out.extend_from_slice(&features.rows[j]);
    }
    out.push(obs_count_input(features.n_obs));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self { inputs, outputs, weights, biases: vec![0.0; outputs] }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().zip(self.weights.chunks_exact(self.inputs)).map(|(b, row)| {
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// Error-predicting perceptron with its input and output scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaNet {
    pub format_version: u32,
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_mean: f64,
    pub output_scale: f64,
    /// Window half-width `k`.
    pub window: usize,
    pub training_seed: Option<u64>,
}

impl AlphaNet {
    /// Net with the given layer widths, identity scaling and zero weights.
    pub fn zeros(sizes: &[usize], window: usize) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument("need at least input and output widths, all positive".into()));
        }
        let n_in = sizes[0];
        Ok(Self {
            format_version: NET_FORMAT_VERSION,
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            activation: Activation::Tanh,
            input_mean: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
            output_mean: 0.0,
            output_scale: 1.0,
            window,
            training_seed: None,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != NET_FORMAT_VERSION {
            return Err(Error::FormatVersion { found: self.format_version, expected: NET_FORMAT_VERSION });
        }
        let bad = |m: &str| Err(Error::InvalidArgument(format!("malformed net: {m}")));
        if self.layers.is_empty() || self.layers.last().is_some_and(|l| l.outputs != 1) {
            return bad("last layer must have one output");
        }
        if self.layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return bad("consecutive layer sizes differ");
        }
        if self
            .layers
            .iter()
            .any(|l| l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs)
        {
            return bad("weight shapes do not match layer sizes");
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.layers.iter().all(|l| finite(&l.weights) && finite(&l.biases)) {
            return bad("non-finite weights");
        }
        if self.input_mean.len() != self.input_dim() || self.input_scale.len() != self.input_dim() {
            return bad("normalization length differs from input width");
        }
        if self.input_scale.iter().any(|s| !(*s > 0.0)) || !(self.output_scale > 0.0) {
            return bad("scales must be positive");
        }
        Ok(())
    }

    fn normalize(&self, input: &[f64]) -> Vec<f64> {
        input.iter().zip(&self.input_mean).zip(&self.input_scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    /// Output in normalized label units, before clamping.
    fn forward_normalized(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&a, &mut z);
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut a, &mut z);
        }
        a[0]
    }
}

/// Predicted RMS error in m/s, clamped at zero.
pub fn mlp_forward(net: &AlphaNet, input: &[f64]) -> Result<f64> {
    if input.len() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: input.len() });
    }
    let y = net.forward_normalized(&net.normalize(input));
    Ok((y * net.output_scale + net.output_mean).max(0.0))
}

/// Index of the lowest score; exact ties go to the later index.
fn argmin_prefer_last(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| s <= b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Grid weight with the lowest predicted error; ties favor larger weights.
pub fn select_alpha(net: &AlphaNet, features: &SweepFeatures, alpha_grid: &[f64]) -> Result<(f64, usize)> {
    if features.len() != alpha_grid.len() || features.is_empty() {
        return Err(Error::DimensionMismatch { expected: alpha_grid.len(), got: features.len() });
    }
    let scores = (0..features.len())
        .map(|i| mlp_forward(net, &window_input(features, i, net.window)?))
        .collect::<Result<Vec<_>>>()?;
    let i = argmin_prefer_last(scores).expect("nonempty");
    Ok((alpha_grid[i], i))
}

/// Discrepancy principle: the smallest converged weight whose misfit
/// reaches the noise variance, else the largest converged weight.
pub fn baseline_select_alpha(sweep: &SweepResult, sigma_t: f64) -> Result<(f64, usize)> {
    let threshold = (sigma_t / TIME_UNIT).powi(2);
    let converged: Vec<usize> = sweep.converged().map(|(i, _)| i).collect();
    let &last = converged.last().ok_or(Error::NoConvergedEntries)?;
    let i = converged.into_iter().find(|&i| sweep.entries[i].misfit >= threshold).unwrap_or(last);
    Ok((sweep.entries[i].alpha, i))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaTrainingConfig {
    /// Synthetic truths to invert; each contributes one example per weight.
    pub n_truths: usize,
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sigma_t: f64,
    pub n_ping: usize,
    pub inversion: InversionConfig,
}

impl Default for AlphaTrainingConfig {
    fn default() -> Self {
        Self {
            n_truths: 200,
            validation_fraction: 0.2,
            hidden: vec![32, 32],
            window: 2,
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            sigma_t: 2.0 * 0.01 / 1500.0,
            n_ping: 1,
            inversion: InversionConfig::default(),
        }
    }
}

impl AlphaTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must be in (0, 1)");
        }
        if self.hidden.contains(&0) || self.epochs == 0 || self.batch_size == 0 || self.n_ping == 0 {
            return bad("layer widths, epochs, batch size and ping count must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.sigma_t >= 0.0) {
            return bad("learning rate must be positive and sigma_t nonnegative");
        }
        self.inversion.validate()
    }
}

/// One synthetic inversion with its true per-weight errors.
#[derive(Clone, Debug)]
pub struct LabeledSweep {
    pub sweep: SweepResult,
    pub features: SweepFeatures,
    /// True RMS error (m/s) of the profile inverted at each weight.
    pub errors: Vec<f64>,
}

/// Draws a truth from the prior, simulates a survey and inverts it.
pub fn labeled_case(
    basis: &EofBasis,
    geometry: &Geometry,
    sigma_t: f64,
    n_ping: usize,
    inversion: &InversionConfig,
    seed: u64,
) -> Result<LabeledSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_coefficients(basis, &mut rng);
    let truth = crate::eof::reconstruct(basis, &x)?;
    let m = simulate_measurements(&truth, geometry, sigma_t, n_ping, &mut rng)?;
    let sweep = sweep(&m, basis, inversion)?;
    let features = extract_features(&sweep, basis)?;
    let errors = sweep
        .entries
        .iter()
        .map(|e| rms_diff(basis.reconstruct_speeds(&e.x.0)?.as_slice(), truth.speeds()))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSweep { sweep, features, errors })
}

/// Labeled cases for seeds `derive_seed(master, 0..n)`, built in parallel.
/// Truths whose inversion fails outright are skipped.
pub fn labeled_cases(
    basis: &EofBasis,
    geometry: &Geometry,
    sigma_t: f64,
    n_ping: usize,
    inversion: &InversionConfig,
    master: u64,
    n: usize,
) -> Vec<LabeledSweep> {
    (0..n as u64)
        .into_par_iter()
        .filter_map(|i| labeled_case(basis, geometry, sigma_t, n_ping, inversion, derive_seed(master, i)).ok())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_cases: usize,
    pub n_train: usize,
    pub n_validation: usize,
    /// Mean squared error in (m/s)^2 of the selected net.
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Variance of the validation labels, the constant-predictor loss.
    pub label_variance: f64,
    /// Training loss before each epoch and after the last, normalized units.
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedAlphaNet {
    pub net: AlphaNet,
    pub report: TrainingReport,
}

struct Examples {
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

fn examples(cases: &[LabeledSweep], k: usize) -> Result<Examples> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for c in cases {
        for (i, &err) in c.errors.iter().enumerate() {
            inputs.push(window_input(&c.features, i, k)?);
            labels.push(err);
        }
    }
    Ok(Examples { inputs, labels })
}

/// Generates synthetic cases, then fits the net.
pub fn train_alpha_net<R: Rng + ?Sized>(
    basis: &EofBasis,
    geometry: &Geometry,
    config: &AlphaTrainingConfig,
    rng: &mut R,
) -> Result<TrainedAlphaNet> {
    config.validate()?;
    let seed: u64 = rng.random();
    let cases = labeled_cases(basis, geometry, config.sigma_t, config.n_ping, &config.inversion, seed, config.n_truths);
    let mut trained = fit_alpha_net(&cases, config, derive_seed(seed, u64::MAX))?;
    trained.net.training_seed = Some(seed);
    Ok(trained)
}

/// Fits a net to already-labeled cases; validation cases are whole sweeps.
pub fn fit_alpha_net(cases: &[LabeledSweep], config: &AlphaTrainingConfig, seed: u64) -> Result<TrainedAlphaNet> {
    config.validate()?;
    let n_val = ((cases.len() as f64) * config.validation_fraction).round() as usize;
    if cases.len() < 2 || n_val == 0 || n_val == cases.len() {
        return Err(Error::Training(format!("{} synthetic cases are not enough to train and validate", cases.len())));
    }
    let (val_cases, train_cases) = cases.split_at(n_val);
    let train = examples(train_cases, config.window)?;
    let val = examples(val_cases, config.window)?;
    match fit(&train, &val, config, config.learning_rate, seed) {
        Err(Error::Training(_)) => fit(&train, &val, config, config.learning_rate / 10.0, seed),
        other => other,
    }
    .map(|mut t| {
        t.report.n_cases = cases.len();
        t
    })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Forward pass keeping every layer's activations; returns the output.
fn forward_trace(net: &AlphaNet, x: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
    acts.resize(net.layers.len() + 1, Vec::new());
    acts[0].clear();
    acts[0].extend_from_slice(x);
    let last = net.layers.len() - 1;
    for (l, layer) in net.layers.iter().enumerate() {
        let (done, rest) = acts.split_at_mut(l + 1);
        layer.apply(&done[l], &mut rest[0]);
        if l < last {
            rest[0].iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    acts[last + 1][0]
}

/// Adds the gradient of `scale * (y - t)^2` to `grads`.
fn backprop(net: &AlphaNet, acts: &[Vec<f64>], y: f64, t: f64, scale: f64, grads: &mut [Layer]) {
    let mut delta = vec![2.0 * scale * (y - t)];
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let input = &acts[l];
        let g = &mut grads[l];
        for (o, d) in delta.iter().enumerate() {
            g.biases[o] += d;
            for (gw, a) in g.weights[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                *gw += d * a;
            }
        }
        if l > 0 {
            // through W^T, then tanh' = 1 - a^2
            delta = (0..layer.inputs)
                .map(|i| {
                    let s: f64 = delta.iter().enumerate().map(|(o, d)| d * layer.weights[o * layer.inputs + i]).sum();
                    s * (1.0 - input[i] * input[i])
                })
                .collect();
        }
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &AlphaNet) -> Self {
        let z: Vec<Layer> = net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        Self { m: z.clone(), v: z, t: 0 }
    }

    fn step(&mut self, net: &mut AlphaNet, grads: &[Layer], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
    }
}

fn mse(net: &AlphaNet, inputs: &[Vec<f64>], labels: &[f64]) -> f64 {
    inputs.iter().zip(labels).map(|(x, t)| (net.forward_normalized(x) - t).powi(2)).sum::<f64>() / labels.len() as f64
}

fn fit(train: &Examples, val: &Examples, config: &AlphaTrainingConfig, lr: f64, seed: u64) -> Result<TrainedAlphaNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = train.inputs[0].len();
    let mut sizes = vec![n_in];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let mut net = AlphaNet::zeros(&sizes, config.window)?;
    net.layers = sizes.windows(2).map(|w| Layer::glorot(w[0], w[1], &mut rng)).collect();
    for d in 0..n_in {
        let (m, s) = mean_std(train.inputs.iter().map(|x| x[d]));
        net.input_mean[d] = m;
        net.input_scale[d] = if s > 1e-12 { s } else { 1.0 };
    }
    let (m, s) = mean_std(train.labels.iter().copied());
    net.output_mean = m;
    net.output_scale = if s > 1e-12 { s } else { 1.0 };

    let prep = |ex: &Examples| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            ex.inputs.iter().map(|x| net.normalize(x)).collect(),
            ex.labels.iter().map(|t| (t - net.output_mean) / net.output_scale).collect(),
        )
    };
    let (tx, ty) = prep(train);
    let (vx, vy) = prep(val);

    let mut adam = Adam::new(&net);
    let mut grads: Vec<Layer> = net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
    let mut acts = Vec::new();
    let mut order: Vec<usize> = (0..tx.len()).collect();
    let mut epoch_losses = vec![mse(&net, &tx, &ty)];
    let mut best = (mse(&net, &vx, &vy), 0, net.clone());
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| {
                g.weights.fill(0.0);
                g.biases.fill(0.0);
            });
            let scale = 1.0 / batch.len() as f64;
            for &j in batch {
                let y = forward_trace(&net, &tx[j], &mut acts);
                backprop(&net, &acts, y, ty[j], scale, &mut grads);
            }
            adam.step(&mut net, &grads, lr);
        }
        let loss = mse(&net, &tx, &ty);
        if !loss.is_finite() {
            return Err(Error::Training(format!("training loss diverged at epoch {epoch}")));
        }
        epoch_losses.push(loss);
        let v = mse(&net, &vx, &vy);
        if v < best.0 {
            best = (v, epoch, net.clone());
        }
    }
    let (val_loss, best_epoch, net) = best;
    let s2 = net.output_scale * net.output_scale;
    let (_, label_std) = mean_std(val.labels.iter().copied());
    Ok(TrainedAlphaNet {
        report: TrainingReport {
            n_cases: 0,
            n_train: tx.len(),
            n_validation: vx.len(),
            train_loss: mse(&net, &tx, &ty) * s2,
            validation_loss: val_loss * s2,
            label_variance: label_std * label_std,
            epoch_losses,
            best_epoch,
            learning_rate: lr,
        },
        net,
    })
}

pub fn write_net<W: Write>(net: &AlphaNet, out: W) -> Result<()> {
    net.validate()?;
    serde_json::to_writer_pretty(out, net)?;
    Ok(())
}

pub fn read_net<R: Read>(source: R) -> Result<AlphaNet> {
    let net: AlphaNet = serde_json::from_reader(source)?;
    net.validate()?;
    Ok(net)
}
