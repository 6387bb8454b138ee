//! Dense networks whose hidden layer is a bank of FitzHugh–Nagumo units.
//!
//! Two topologies share one type:
//!
//! * [`Topology::Embedded`] takes a trained 784→100→10 classifier and swaps
//!   its sigmoid hidden layer for FHN units. Each unit receives the constant
//!   drive `I = γ·tanh(X·W_in + b_in)`, and at every integration step the raw
//!   `x` vector goes through `W_out`.
//! * [`Topology::Trainable`] squashes pixels with `tanh`, drives the FHN
//!   units through `W¹`, couples them one-to-one (a fixed identity) to a
//!   sigmoid layer and reads out through `W³` and a softmax.
//!
//! In both cases the answer for an image is the class that holds the
//! instantaneous argmax for the most steps of the control window.
//!
//! Training uses the FHN bank in the forward pass but differentiates as if
//! the hidden units were `σ(z)`; see [`surrogate_backward`].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Image, LabeledDataset, IMAGE_LEN, N_CLASSES};
use crate::error::{Error, Result};
use crate::fhn::{FhnBank, FhnParams, FhnState, SimSettings};
use crate::nn::{
    self, argmax_class, one_hot, sigmoid, Activation, DenseLayer, DenseNet, LayerGradient, TrainConfig,
    N_HIDDEN,
};

pub const HYBRID_MAGIC: &[u8; 8] = b"FHNH0001";

/// Lower and upper end of the `x` range mapped onto `[0, 1]` before the
/// sigmoid stage.
pub const X_RESCALE_RANGE: (f64, f64) = (-2.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Embedded,
    Trainable,
}

/// How the trainable network turns its `W¹` pre-activation into drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriveMode {
    /// `I = γ·tanh(z)`, bounded by `|γ|`.
    #[default]
    WrappedTanh,
    /// `I = γ·z`; the pixel-level tanh is the only squashing.
    PixelTanhOnly,
}

impl DriveMode {
    pub fn name(self) -> &'static str {
        match self {
            DriveMode::WrappedTanh => "wrapped-tanh",
            DriveMode::PixelTanhOnly => "pixel-tanh-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wrapped-tanh" => Some(DriveMode::WrappedTanh),
            "pixel-tanh-only" => Some(DriveMode::PixelTanhOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridConfig {
    pub gamma: f64,
    pub fhn: FhnParams,
    pub sim: SimSettings,
    pub n_hidden: usize,
    pub drive_mode: DriveMode,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            gamma: -0.5,
            fhn: FhnParams::default(),
            sim: SimSettings::default(),
            n_hidden: N_HIDDEN,
            drive_mode: DriveMode::default(),
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hidden == 0 {
            return Err(Error::InvalidParameter("n_hidden must be >= 1".into()));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

/// The fixed one-to-one coupling between the FHN layer and the sigmoid
/// layer. It carries no parameters, so nothing can update it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityCoupling {
    n: usize,
}

impl IdentityCoupling {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Dense row-major `n × n` view.
    pub fn matrix(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            m[i * self.n + i] = 1.0;
        }
        m
    }
}

/// `Iⱼ = γ·tanh(zⱼ)`.
pub fn drive_from_preactivation(z: &[f64], gamma: f64) -> Vec<f64> {
    z.iter().map(|&v| gamma * v.tanh()).collect()
}

/// Maps a unit's `x` onto `[0, 1]`: `(x + 2) / 4`, clamped.
#[inline]
pub fn rescale_x(x: f64) -> f64 {
    let (lo, hi) = X_RESCALE_RANGE;
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Per-class winning time over the control window.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutRecord {
    /// Steps during which each class held the argmax.
    pub win_steps: [u64; N_CLASSES],
    /// `win_steps · dt`.
    pub win_time: [f64; N_CLASSES],
    pub answer: usize,
}

impl ReadoutRecord {
    fn from_steps(win_steps: [u64; N_CLASSES], dt: f64) -> Self {
        let mut win_time = [0.0; N_CLASSES];
        for (t, &s) in win_time.iter_mut().zip(&win_steps) {
            *t = s as f64 * dt;
        }
        let mut answer = 0;
        for k in 1..N_CLASSES {
            if win_steps[k] > win_steps[answer] {
                answer = k;
            }
        }
        Self {
            win_steps,
            win_time,
            answer,
        }
    }

    pub fn total_time(&self) -> f64 {
        self.win_time.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub readout: ReadoutRecord,
    /// Time-average of each unit's `x` over the control window.
    pub mean_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridNet {
    topology: Topology,
    /// `W¹` / `W_in`, `784 × n_hidden`.
    input_stage: DenseLayer,
    coupling_w2: IdentityCoupling,
    /// `W³` / `W_out`, `n_hidden × 10`.
    output_stage: DenseLayer,
    config: HybridConfig,
}

impl HybridNet {
    /// Replaces the hidden layer of a trained 784→n→10 classifier with FHN
    /// units. Weights are copied bit-exactly; the sigmoid stage is bypassed.
    pub fn embed(baseline: &DenseNet, cfg: HybridConfig) -> Result<Self> {
        cfg.validate()?;
        let expected = [IMAGE_LEN, cfg.n_hidden, N_CLASSES];
        if baseline.shape() != expected {
            return Err(Error::Dimension(format!(
                "embedding needs a {:?} network, got {:?}",
                expected,
                baseline.shape()
            )));
        }
        let layers = baseline.layers();
        let mut input_stage = layers[0].clone();
        input_stage.set_activation(Activation::Tanh);
        let mut output_stage = layers[1].clone();
        output_stage.set_activation(Activation::Linear);
        Ok(Self {
            topology: Topology::Embedded,
            input_stage,
            coupling_w2: IdentityCoupling::new(cfg.n_hidden),
            output_stage,
            config: cfg,
        })
    }

    /// A freshly initialized trainable network.
    pub fn trainable(cfg: HybridConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_stage = DenseLayer::glorot(IMAGE_LEN, cfg.n_hidden, Activation::Tanh, &mut rng);
        let output_stage = DenseLayer::glorot(cfg.n_hidden, N_CLASSES, Activation::SoftmaxReadout, &mut rng);
        Self::from_stages(Topology::Trainable, input_stage, output_stage, cfg)
    }

    pub fn from_stages(
        topology: Topology,
        input_stage: DenseLayer,
        output_stage: DenseLayer,
        cfg: HybridConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if input_stage.fan_in() != IMAGE_LEN
            || input_stage.fan_out() != cfg.n_hidden
            || output_stage.fan_in() != cfg.n_hidden
            || output_stage.fan_out() != N_CLASSES
        {
            return Err(Error::Dimension(format!(
                "stages {}x{} and {}x{} do not fit {IMAGE_LEN}->{}->{N_CLASSES}",
                input_stage.fan_in(),
                input_stage.fan_out(),
                output_stage.fan_in(),
                output_stage.fan_out(),
                cfg.n_hidden
            )));
        }
        Ok(Self {
            topology,
            input_stage,
            coupling_w2: IdentityCoupling::new(cfg.n_hidden),
            output_stage,
            config: cfg,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn config(&self) -> &HybridConfig {
        &self.config
    }

    pub fn input_stage(&self) -> &DenseLayer {
        &self.input_stage
    }

    pub fn input_stage_mut(&mut self) -> &mut DenseLayer {
        &mut self.input_stage
    }

    pub fn output_stage(&self) -> &DenseLayer {
        &self.output_stage
    }

    pub fn output_stage_mut(&mut self) -> &mut DenseLayer {
        &mut self.output_stage
    }

    pub fn coupling_w2(&self) -> &IdentityCoupling {
        &self.coupling_w2
    }

    pub fn n_hidden(&self) -> usize {
        self.config.n_hidden
    }

    pub fn set_sim(&mut self, sim: SimSettings) {
        self.config.sim = sim;
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.config.gamma = gamma;
    }

    /// The layer-1 output: raw pixels when embedded, `tanh(pixel)` when
    /// trainable.
    pub fn layer1_output(&self, image: &[f64]) -> Vec<f64> {
        match self.topology {
            Topology::Embedded => image.to_vec(),
            Topology::Trainable => image.iter().map(|p| p.tanh()).collect(),
        }
    }

    /// Pre-activation `z` feeding the FHN units.
    pub fn preactivation(&self, image: &[f64]) -> Result<Vec<f64>> {
        check_image(image)?;
        Ok(self.input_stage.affine(&self.layer1_output(image)))
    }

    pub fn drives_for(&self, z: &[f64]) -> Vec<f64> {
        match (self.topology, self.config.drive_mode) {
            (Topology::Trainable, DriveMode::PixelTanhOnly) => {
                z.iter().map(|v| self.config.gamma * v).collect()
            }
            _ => drive_from_preactivation(z, self.config.gamma),
        }
    }

    /// What the output stage sees for a given FHN `x` vector.
    fn readout_features(&self, x: &[f64], out: &mut [f64]) {
        match self.topology {
            Topology::Embedded => out.copy_from_slice(x),
            Topology::Trainable => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = sigmoid(rescale_x(v));
                }
            }
        }
    }

    /// Multiplies every output weight and bias by `factor`.
    pub fn scale_output_stage(&mut self, factor: f64) {
        for w in self.output_stage.weights_mut() {
            *w *= factor;
        }
        for b in self.output_stage.bias_mut() {
            *b *= factor;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = HYBRID_MAGIC.to_vec();
        for v in [
            self.config.gamma,
            self.config.fhn.epsilon(),
            self.config.fhn.a(),
            self.config.sim.dt(),
        ] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        nn::encode_layers(&[self.input_stage.clone(), self.output_stage.clone()], &mut bytes);
        nn::write_file(path, &bytes)
    }

    /// Reads a `FHNH0001` file. γ, ε, a and dt come from the file; the
    /// windows and drive mode from `template`. A linear output layer means
    /// the embedded topology, a softmax one the trainable topology.
    pub fn load(path: &Path, template: HybridConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, template)
    }

    pub fn from_bytes(bytes: &[u8], template: HybridConfig) -> Result<Self> {
        const WHAT: &str = "hybrid weight file";
        let body = nn::strip_magic(bytes, HYBRID_MAGIC, WHAT)?;
        if body.len() < 32 {
            return Err(Error::format(WHAT, "truncated parameter header"));
        }
        let mut params = body[..32]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let (gamma, epsilon, a, dt) = (
            params.next().unwrap(),
            params.next().unwrap(),
            params.next().unwrap(),
            params.next().unwrap(),
        );
        let layers = nn::decode_layers(&body[32..], WHAT)?;
        let [input_stage, output_stage]: [DenseLayer; 2] =
            layers.try_into().map_err(|l: Vec<DenseLayer>| {
                Error::format(WHAT, format!("expected 2 layers, found {}", l.len()))
            })?;
        let topology = match output_stage.activation() {
            Activation::Linear => Topology::Embedded,
            _ => Topology::Trainable,
        };
        let fhn = FhnParams::new(epsilon, a).map_err(|e| Error::format(WHAT, e.to_string()))?;
        let sim = SimSettings::new(dt, template.sim.t_transient(), template.sim.t_control())
            .map_err(|e| Error::format(WHAT, e.to_string()))?;
        let cfg = HybridConfig {
            gamma,
            fhn,
            sim,
            n_hidden: input_stage.fan_out(),
            drive_mode: template.drive_mode,
        };
        Self::from_stages(topology, input_stage, output_stage, cfg)
            .map_err(|e| Error::format(WHAT, e.to_string()))
    }
}

fn check_image(image: &[f64]) -> Result<()> {
    if image.len() != IMAGE_LEN {
        return Err(Error::Dimension(format!(
            "image has {} pixels, expected {IMAGE_LEN}",
            image.len()
        )));
    }
    Ok(())
}

/// Integrates the FHN bank for one image and reads the answer out by
/// temporal majority.
///
/// Every unit starts at `(−1, −2/3)` under its constant drive. The transient
/// window is integrated and dropped; during the control window the `x`
/// vector is pushed through the output stage after each step and the
/// argmax class is credited one step.
pub fn run_hybrid_forward(net: &HybridNet, image: &[f64]) -> Result<HybridOutput> {
    let z = net.preactivation(image)?;
    run_from_drives(net, &net.drives_for(&z))
}

fn run_from_drives(net: &HybridNet, drives: &[f64]) -> Result<HybridOutput> {
    let sim = net.config.sim;
    let dt = sim.dt();
    let mut bank = FhnBank::new(net.config.fhn, drives, FhnState::resting());
    bank.advance(sim.t_transient(), dt)?;

    let n = drives.len();
    let mut features = vec![0.0; n];
    let mut logits = [0.0; N_CLASSES];
    let mut sum_x = vec![0.0; n];
    let mut win_steps = [0u64; N_CLASSES];
    let steps = sim.control_steps();
    for _ in 0..steps {
        bank.step(dt)?;
        for (s, &x) in sum_x.iter_mut().zip(bank.x()) {
            *s += x;
        }
        net.readout_features(bank.x(), &mut features);
        net.output_stage.affine_into(&features, &mut logits);
        win_steps[argmax_class(&logits)] += 1;
    }
    let mean_x = sum_x.iter().map(|s| s / steps as f64).collect();
    Ok(HybridOutput {
        readout: ReadoutRecord::from_steps(win_steps, dt),
        mean_x,
    })
}

/// Anything that maps an image to a digit.
pub trait DigitClassifier: Sync {
    fn classify(&self, image: &Image) -> Result<usize>;
}

impl DigitClassifier for HybridNet {
    fn classify(&self, image: &Image) -> Result<usize> {
        Ok(run_hybrid_forward(self, image)?.readout.answer)
    }
}

impl DigitClassifier for DenseNet {
    fn classify(&self, image: &Image) -> Result<usize> {
        DenseNet::classify(self, image)
    }
}

/// Correct and total counts per digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccuracyReport {
    pub correct: [usize; N_CLASSES],
    pub total: [usize; N_CLASSES],
}

impl AccuracyReport {
    pub fn record(&mut self, label: u8, answer: usize) {
        self.total[label as usize] += 1;
        if answer == label as usize {
            self.correct[label as usize] += 1;
        }
    }

    /// Percent correct per digit; digits with no examples report 0.
    pub fn per_digit_percent(&self) -> [f64; N_CLASSES] {
        std::array::from_fn(|k| {
            if self.total[k] > 0 {
                100.0 * self.correct[k] as f64 / self.total[k] as f64
            } else {
                0.0
            }
        })
    }

    /// Unweighted mean of the per-digit percentages over digits present.
    pub fn average_percent(&self) -> f64 {
        let per = self.per_digit_percent();
        let present: Vec<f64> = (0..N_CLASSES)
            .filter(|&k| self.total[k] > 0)
            .map(|k| per[k])
            .collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    /// Percent correct over all examples.
    pub fn overall_percent(&self) -> f64 {
        let total: usize = self.total.iter().sum();
        if total == 0 {
            0.0
        } else {
            100.0 * self.correct.iter().sum::<usize>() as f64 / total as f64
        }
    }
}

/// Classifies every image (in parallel on the current rayon pool) and tallies
/// per-digit accuracy.
pub fn evaluate<C: DigitClassifier + ?Sized>(net: &C, ds: &LabeledDataset) -> Result<AccuracyReport> {
    let answers: Vec<usize> = ds
        .images()
        .par_iter()
        .map(|img| net.classify(img))
        .collect::<Result<_>>()?;
    let mut report = AccuracyReport::default();
    for (&label, answer) in ds.labels().iter().zip(answers) {
        report.record(label, answer);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub report: AccuracyReport,
}

/// Embeds `baseline` once per γ and evaluates on `ds`. Repeated γ values
/// reuse the first result.
pub fn gamma_sweep(
    baseline: &DenseNet,
    template: HybridConfig,
    gammas: &[f64],
    ds: &LabeledDataset,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("gamma list is empty".into()));
    }
    let mut rows: Vec<SweepRow> = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let row = match rows.iter().find(|r| r.gamma.to_bits() == gamma.to_bits()) {
            Some(done) => done.clone(),
            None => {
                let net = HybridNet::embed(baseline, template.with_gamma(gamma))?;
                SweepRow {
                    gamma,
                    report: evaluate(&net, ds)?,
                }
            }
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// What the hidden layer does in a surrogate forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenPath {
    /// Integrate the FHN bank; the activation is the rescaled mean `x`.
    Fhn,
    /// Use `σ(z)` directly. The backward pass is then exact.
    Sigmoid,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateCache {
    /// `tanh(pixels)`, length 784.
    pub layer1: Vec<f64>,
    /// `layer1 · W¹ + b¹`.
    pub z: Vec<f64>,
    /// Hidden activation: rescaled mean `x`, or `σ(z)` on the sigmoid path.
    pub hidden: Vec<f64>,
    /// `σ(hidden)` through the identity coupling.
    pub sigmoid_stage: Vec<f64>,
    /// Softmax of `sigmoid_stage · W³ + b³`.
    pub output: Vec<f64>,
    /// The temporal-majority readout of the FHN path.
    pub readout: Option<ReadoutRecord>,
}

pub fn surrogate_forward(net: &HybridNet, image: &[f64]) -> Result<SurrogateCache> {
    surrogate_forward_with(net, image, HiddenPath::Fhn)
}

pub fn surrogate_forward_with(net: &HybridNet, image: &[f64], path: HiddenPath) -> Result<SurrogateCache> {
    if net.topology != Topology::Trainable {
        return Err(Error::InvalidParameter(
            "surrogate passes need the trainable topology".into(),
        ));
    }
    check_image(image)?;
    let layer1 = net.layer1_output(image);
    let z = net.input_stage.affine(&layer1);
    let (hidden, readout): (Vec<f64>, _) = match path {
        HiddenPath::Fhn => {
            let out = run_from_drives(net, &net.drives_for(&z))?;
            (
                out.mean_x.iter().map(|&m| rescale_x(m)).collect(),
                Some(out.readout),
            )
        }
        HiddenPath::Sigmoid => (z.iter().map(|&v| sigmoid(v)).collect(), None),
    };
    let sigmoid_stage: Vec<f64> = hidden.iter().map(|&s| sigmoid(s)).collect();
    let logits = net.output_stage.affine(&sigmoid_stage);
    let output = nn::softmax(&logits);
    Ok(SurrogateCache {
        layer1,
        z,
        hidden,
        sigmoid_stage,
        output,
        readout,
    })
}

/// `½ Σ (o − t)²`.
pub fn mse_cost(output: &[f64], target: &[f64]) -> f64 {
    0.5 * output
        .iter()
        .zip(target)
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
}

/// Gradients of the trainable parameters. The identity coupling has none.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridGradients {
    pub w1: LayerGradient,
    pub w3: LayerGradient,
}

impl HybridGradients {
    pub fn zeros_like(net: &HybridNet) -> Self {
        Self {
            w1: LayerGradient::zeros_like(&net.input_stage),
            w3: LayerGradient::zeros_like(&net.output_stage),
        }
    }

    pub fn clear(&mut self) {
        self.w1.clear();
        self.w3.clear();
    }

    pub fn is_zero(&self) -> bool {
        self.w1.is_zero() && self.w3.is_zero()
    }
}

/// MSE gradients with the FHN layer differentiated as `σ(z)`.
pub fn surrogate_backward(
    net: &HybridNet,
    cache: &SurrogateCache,
    target: &[f64],
) -> Result<HybridGradients> {
    let mut grads = HybridGradients::zeros_like(net);
    surrogate_backward_accumulate(net, cache, target, &mut grads)?;
    Ok(grads)
}

pub fn surrogate_backward_accumulate(
    net: &HybridNet,
    cache: &SurrogateCache,
    target: &[f64],
    grads: &mut HybridGradients,
) -> Result<()> {
    let n = net.n_hidden();
    if cache.layer1.len() != IMAGE_LEN
        || cache.z.len() != n
        || cache.hidden.len() != n
        || cache.sigmoid_stage.len() != n
        || cache.output.len() != N_CLASSES
    {
        return Err(Error::Dimension(
            "surrogate cache does not match this network".into(),
        ));
    }
    if target.len() != N_CLASSES {
        return Err(Error::Dimension(format!(
            "target has {} entries, expected {N_CLASSES}",
            target.len()
        )));
    }
    // Output: softmax under MSE.
    let mut delta_out: Vec<f64> = cache.output.iter().zip(target).map(|(o, t)| o - t).collect();
    nn::softmax_backprop(&cache.output, &mut delta_out);
    grads.w3.accumulate(&cache.sigmoid_stage, &delta_out);

    // Sigmoid stage, then the identity coupling, then the stand-in σ(z).
    let mut delta = vec![0.0; n];
    net.output_stage.transpose_mul_into(&delta_out, &mut delta);
    for ((d, &a3), &z) in delta.iter_mut().zip(&cache.sigmoid_stage).zip(&cache.z) {
        let s = sigmoid(z);
        *d *= a3 * (1.0 - a3) * s * (1.0 - s);
    }
    grads.w1.accumulate(&cache.layer1, &delta);
    Ok(())
}

/// Where the trainable weights start.
#[derive(Debug, Clone, PartialEq)]
pub enum HybridInit {
    /// Glorot-uniform from the training seed.
    Fresh,
    /// Copy `W_in`/`W_out` (and biases) from a trained baseline.
    FromBaseline(DenseNet),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridEpoch {
    pub epoch: usize,
    /// Mean MSE over the epoch's updates.
    pub cost: f64,
    /// Class-averaged percentages from the temporal-majority readout.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Mini-batch descent through the surrogate passes.
///
/// Training accuracy is tallied from the readouts of the forward passes made
/// during the epoch; test accuracy is a fresh evaluation after the epoch.
/// Forward passes inside a batch run in parallel and are reduced in index
/// order, so results do not depend on the thread count.
pub fn train_hybrid(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: HybridConfig,
    tcfg: &TrainConfig,
    init: &HybridInit,
    mut on_epoch: impl FnMut(&HybridEpoch),
) -> Result<(HybridNet, Vec<HybridEpoch>)> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(Error::Value(format!("training set `{}` is empty", train.name())));
    }
    let mut net = match init {
        HybridInit::Fresh => HybridNet::trainable(cfg, tcfg.seed)?,
        HybridInit::FromBaseline(base) => {
            let embedded = HybridNet::embed(base, cfg)?;
            let mut out = embedded.output_stage.clone();
            out.set_activation(Activation::SoftmaxReadout);
            HybridNet::from_stages(Topology::Trainable, embedded.input_stage, out, cfg)?
        }
    };
    if !tcfg.use_bias {
        net.input_stage.bias_mut().fill(0.0);
        net.output_stage.bias_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5eed_ba5e);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = HybridGradients::zeros_like(&net);
    let mut history = Vec::with_capacity(tcfg.epochs);
    for epoch in 1..=tcfg.epochs {
        if tcfg.shuffle {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
        }
        let mut cost = 0.0;
        let mut seen = AccuracyReport::default();
        for batch in order.chunks(tcfg.batch_size) {
            let caches: Vec<SurrogateCache> = batch
                .par_iter()
                .map(|&i| surrogate_forward(&net, train.get(i).0))
                .collect::<Result<_>>()?;
            grads.clear();
            for (&i, cache) in batch.iter().zip(&caches) {
                let label = train.get(i).1;
                let target = one_hot(label);
                cost += mse_cost(&cache.output, &target);
                if let Some(r) = &cache.readout {
                    seen.record(label, r.answer);
                }
                surrogate_backward_accumulate(&net, cache, &target, &mut grads)?;
            }
            let scale = tcfg.learning_rate / batch.len() as f64;
            grads.w1.apply_to(&mut net.input_stage, scale, tcfg.use_bias);
            grads.w3.apply_to(&mut net.output_stage, scale, tcfg.use_bias);
        }
        let record = HybridEpoch {
            epoch,
            cost: cost / train.len() as f64,
            train_accuracy: seen.average_percent(),
            test_accuracy: evaluate(&net, test)?.average_percent(),
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok((net, history))
}
