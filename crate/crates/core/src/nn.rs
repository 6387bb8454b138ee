//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Weights are stored row-major as `fan_in × fan_out`, so a forward pass is a
//! sum of weight rows scaled by the inputs. MNIST inputs are mostly zero and
//! those rows are skipped in both directions.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{LabeledDataset, IMAGE_LEN, N_CLASSES};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 8] = b"FHNW0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    /// `1 / (1 + e^−x)`
    Sigmoid,
    Tanh,
    /// Softmax across the whole layer; the class is read out by argmax.
    SoftmaxReadout,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
            Activation::SoftmaxReadout => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Linear,
            1 => Activation::Sigmoid,
            2 => Activation::Tanh,
            3 => Activation::SoftmaxReadout,
            _ => return None,
        })
    }

    pub fn apply(self, pre: &[f64], post: &mut [f64]) {
        match self {
            Activation::Linear => post.copy_from_slice(pre),
            Activation::Sigmoid => {
                for (o, &z) in post.iter_mut().zip(pre) {
                    *o = sigmoid(z);
                }
            }
            Activation::Tanh => {
                for (o, &z) in post.iter_mut().zip(pre) {
                    *o = z.tanh();
                }
            }
            Activation::SoftmaxReadout => softmax_into(pre, post),
        }
    }

    /// Turns `∂L/∂post` into `∂L/∂pre` in place, given the layer output.
    pub fn backprop(self, post: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Sigmoid => {
                for (g, &a) in grad.iter_mut().zip(post) {
                    *g *= a * (1.0 - a);
                }
            }
            Activation::Tanh => {
                for (g, &a) in grad.iter_mut().zip(post) {
                    *g *= 1.0 - a * a;
                }
            }
            Activation::SoftmaxReadout => softmax_backprop(post, grad),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_into(pre: &[f64], post: &mut [f64]) {
    let max = pre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in post.iter_mut().zip(pre) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in post.iter_mut() {
        *o /= total;
    }
}

pub fn softmax(pre: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; pre.len()];
    softmax_into(pre, &mut out);
    out
}

/// Softmax Jacobian-vector product: `g_k ← p_k (g_k − Σ_j p_j g_j)`.
pub fn softmax_backprop(probs: &[f64], grad: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad.iter()).map(|(p, g)| p * g).sum();
    for (g, &p) in grad.iter_mut().zip(probs) {
        *g = p * (*g - dot);
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax_class(output: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in output.iter().enumerate().skip(1) {
        if v > output[best] {
            best = k;
        }
    }
    best
}

pub fn one_hot(label: u8) -> [f64; N_CLASSES] {
    let mut t = [0.0; N_CLASSES];
    t[label as usize] = 1.0;
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    fan_in: usize,
    fan_out: usize,
    /// Row-major, `fan_in × fan_out`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    /// Uniform in `±√(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Self {
            fan_in,
            fan_out,
            weights,
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn from_parts(
        fan_in: usize,
        fan_out: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != fan_in * fan_out || bias.len() != fan_out {
            return Err(Error::Dimension(format!(
                "layer {fan_in}x{fan_out} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Value("layer parameters must be finite".into()));
        }
        Ok(Self {
            fan_in,
            fan_out,
            weights,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn set_activation(&mut self, activation: Activation) {
        self.activation = activation;
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.fan_out + col]
    }

    /// `pre = input · W + b`. Zero inputs are skipped.
    pub fn affine_into(&self, input: &[f64], pre: &mut [f64]) {
        debug_assert_eq!(input.len(), self.fan_in);
        pre.copy_from_slice(&self.bias);
        for (&v, row) in input.iter().zip(self.weights.chunks_exact(self.fan_out)) {
            if v != 0.0 {
                for (p, &w) in pre.iter_mut().zip(row) {
                    *p += v * w;
                }
            }
        }
    }

    pub fn affine(&self, input: &[f64]) -> Vec<f64> {
        let mut pre = vec![0.0; self.fan_out];
        self.affine_into(input, &mut pre);
        pre
    }

    /// `out = W · delta`, the gradient with respect to this layer's input.
    pub fn transpose_mul_into(&self, delta: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.fan_out)) {
            *o = row.iter().zip(delta).map(|(w, d)| w * d).sum();
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.fan_in {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, got {}",
                self.fan_in,
                input.len()
            )));
        }
        Ok(())
    }
}

/// Gradient of one layer, same layout as the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGradient {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    /// Adds `input ⊗ delta` to the weight gradient and `delta` to the bias.
    pub fn accumulate(&mut self, input: &[f64], delta: &[f64]) {
        let fan_out = delta.len();
        for (&v, row) in input.iter().zip(self.weights.chunks_exact_mut(fan_out)) {
            if v != 0.0 {
                for (g, &d) in row.iter_mut().zip(delta) {
                    *g += v * d;
                }
            }
        }
        for (g, &d) in self.bias.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn clear(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|&g| g == 0.0)
    }

    /// `layer −= scale · self`; biases only when `update_bias`.
    pub fn apply_to(&self, layer: &mut DenseLayer, scale: f64, update_bias: bool) {
        for (w, g) in layer.weights.iter_mut().zip(&self.weights) {
            *w -= scale * g;
        }
        if update_bias {
            for (b, g) in layer.bias.iter_mut().zip(&self.bias) {
                *b -= scale * g;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `½ Σ (o − t)²`
    Mse,
    /// `−Σ t ln p`, where `p` is the softmax of a linear output layer or the
    /// output itself for a softmax layer.
    CrossEntropy,
}

impl Loss {
    pub fn value(self, last: Activation, output: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::Mse => {
                0.5 * output
                    .iter()
                    .zip(target)
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
            }
            Loss::CrossEntropy => {
                let probs = match last {
                    Activation::Linear => softmax(output),
                    _ => output.to_vec(),
                };
                -probs
                    .iter()
                    .zip(target)
                    .filter(|(_, &t)| t != 0.0)
                    .map(|(p, t)| t * p.max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>()
            }
        }
    }

    /// `∂L/∂pre` of the last layer.
    pub fn output_delta(self, last: Activation, output: &[f64], target: &[f64]) -> Vec<f64> {
        match (self, last) {
            (Loss::CrossEntropy, Activation::Linear) => {
                let mut p = softmax(output);
                for (d, t) in p.iter_mut().zip(target) {
                    *d -= t;
                }
                p
            }
            (Loss::CrossEntropy, Activation::SoftmaxReadout) => {
                let mass: f64 = target.iter().sum();
                output.iter().zip(target).map(|(o, t)| o * mass - t).collect()
            }
            (Loss::CrossEntropy, act) => {
                let mut g: Vec<f64> = output
                    .iter()
                    .zip(target)
                    .map(|(o, t)| -t / o.max(f64::MIN_POSITIVE))
                    .collect();
                act.backprop(output, &mut g);
                g
            }
            (Loss::Mse, act) => {
                let mut g: Vec<f64> = output.iter().zip(target).map(|(o, t)| o - t).collect();
                act.backprop(output, &mut g);
                g
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    loss: Loss,
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `activations[0]` is the network input, `activations[l + 1]` the output
    /// of layer `l`.
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net.layers.iter().map(LayerGradient::zeros_like).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.layers.iter_mut().for_each(LayerGradient::clear);
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(LayerGradient::is_zero)
    }
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>, loss: Loss) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::Dimension(format!(
                    "layer with {} outputs feeds a layer with {} inputs",
                    pair[0].fan_out, pair[1].fan_in
                )));
            }
        }
        Ok(Self { layers, loss })
    }

    /// The 784 → 100 (sigmoid) → 10 (linear) classifier, Glorot-initialized
    /// and trained with softmax cross-entropy.
    pub fn baseline(seed: u64) -> Self {
        Self::baseline_with_hidden(N_HIDDEN, seed)
    }

    pub fn baseline_with_hidden(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden_layer = DenseLayer::glorot(IMAGE_LEN, hidden, Activation::Sigmoid, &mut rng);
        let output = DenseLayer::glorot(hidden, N_CLASSES, Activation::Linear, &mut rng);
        Self {
            layers: vec![hidden_layer, output],
            loss: Loss::CrossEntropy,
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    /// Layer sizes, input first: `[784, 100, 10]` for the baseline.
    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.input_len())
            .chain(self.layers.iter().map(|l| l.fan_out))
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.layers[0].check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let pre = layer.affine(activations.last().unwrap());
            let mut post = vec![0.0; layer.fan_out];
            layer.activation.apply(&pre, &mut post);
            pre_activations.push(pre);
            activations.push(post);
        }
        let output = activations.last().unwrap().clone();
        Ok((
            output,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Output only, without keeping the cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.layers[0].check_input(input)?;
        let mut current = input.to_vec();
        for layer in &self.layers {
            let pre = layer.affine(&current);
            current = vec![0.0; layer.fan_out];
            layer.activation.apply(&pre, &mut current);
        }
        Ok(current)
    }

    pub fn classify(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax_class(&self.predict(input)?))
    }

    pub fn loss_value(&self, output: &[f64], target: &[f64]) -> f64 {
        self.loss
            .value(self.layers.last().unwrap().activation, output, target)
    }

    pub fn backward(&self, cache: &ForwardCache, target: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(cache, target, &mut grads)?;
        Ok(grads)
    }

    /// Adds this example's gradient into `grads`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        target: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        let n = self.layers.len();
        if cache.activations.len() != n + 1
            || cache.pre_activations.len() != n
            || cache
                .activations
                .iter()
                .zip(self.shape())
                .any(|(a, width)| a.len() != width)
        {
            return Err(Error::Dimension(
                "forward cache does not match this network".into(),
            ));
        }
        if target.len() != self.output_len() {
            return Err(Error::Dimension(format!(
                "target has {} entries, network outputs {}",
                target.len(),
                self.output_len()
            )));
        }
        if grads.layers.len() != n {
            return Err(Error::Dimension(
                "gradient buffer does not match this network".into(),
            ));
        }
        let last = &self.layers[n - 1];
        let mut delta = self.loss.output_delta(last.activation, cache.output(), target);
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            grads.layers[l].accumulate(&cache.activations[l], &delta);
            if l > 0 {
                let mut prev = vec![0.0; layer.fan_in];
                layer.transpose_mul_into(&delta, &mut prev);
                self.layers[l - 1]
                    .activation
                    .backprop(&cache.activations[l], &mut prev);
                delta = prev;
            }
        }
        Ok(())
    }

    /// `self −= scale · grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, scale: f64, update_bias: bool) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            g.apply_to(layer, scale, update_bias);
        }
    }

    pub fn zero_biases(&mut self) {
        for layer in &mut self.layers {
            layer.bias.fill(0.0);
        }
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut bytes = WEIGHT_MAGIC.to_vec();
        encode_layers(&self.layers, &mut bytes);
        write_file(path, &bytes)
    }

    /// Reads a `FHNW0001` file. The loss is not stored: a linear output layer
    /// implies cross-entropy and anything else implies MSE.
    pub fn load_weights(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_weight_bytes(&bytes)
    }

    pub fn from_weight_bytes(bytes: &[u8]) -> Result<Self> {
        let body = strip_magic(bytes, WEIGHT_MAGIC, "weight file")?;
        let layers = decode_layers(body, "weight file")?;
        let loss = match layers.last().map(|l| l.activation) {
            Some(Activation::Linear) => Loss::CrossEntropy,
            _ => Loss::Mse,
        };
        Self::new(layers, loss).map_err(|e| Error::format("weight file", e.to_string()))
    }
}

/// Number of hidden units in the baseline and the hybrid.
pub const N_HIDDEN: usize = 100;

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn strip_magic<'a>(bytes: &'a [u8], magic: &[u8; 8], what: &'static str) -> Result<&'a [u8]> {
    match bytes.strip_prefix(magic.as_slice()) {
        Some(rest) => Ok(rest),
        None => Err(Error::format(
            what,
            format!(
                "expected magic `{}`, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..bytes.len().min(8)])
            ),
        )),
    }
}

/// Per layer: `fan_in: u32 LE`, `fan_out: u32 LE`, activation tag byte, then
/// the row-major weights and the biases as `f64 LE`.
pub(crate) fn encode_layers(layers: &[DenseLayer], out: &mut Vec<u8>) {
    for layer in layers {
        out.extend_from_slice(&(layer.fan_in as u32).to_le_bytes());
        out.extend_from_slice(&(layer.fan_out as u32).to_le_bytes());
        out.push(layer.activation.tag());
        for v in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub(crate) fn decode_layers(mut body: &[u8], what: &'static str) -> Result<Vec<DenseLayer>> {
    let mut layers = Vec::new();
    while !body.is_empty() {
        if body.len() < 9 {
            return Err(Error::format(what, "truncated layer header"));
        }
        let fan_in = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
        let fan_out = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
        let activation = Activation::from_tag(body[8])
            .ok_or_else(|| Error::format(what, format!("unknown activation tag {}", body[8])))?;
        body = &body[9..];
        let count = fan_in
            .checked_mul(fan_out)
            .and_then(|w| w.checked_add(fan_out))
            .ok_or_else(|| Error::format(what, "layer dimensions overflow"))?;
        let needed = count
            .checked_mul(8)
            .ok_or_else(|| Error::format(what, "layer dimensions overflow"))?;
        if body.len() < needed {
            return Err(Error::format(
                what,
                format!(
                    "truncated {fan_in}x{fan_out} layer: {needed} bytes needed, {} left",
                    body.len()
                ),
            ));
        }
        let mut values = body[..needed]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let weights: Vec<f64> = values.by_ref().take(fan_in * fan_out).collect();
        let bias: Vec<f64> = values.collect();
        body = &body[needed..];
        if let Some(prev) = layers.last().map(|l: &DenseLayer| l.fan_out) {
            if prev != fan_in {
                return Err(Error::format(
                    what,
                    format!("dimension mismatch: layer with {prev} outputs feeds {fan_in} inputs"),
                ));
            }
        }
        layers.push(DenseLayer {
            fan_in,
            fan_out,
            weights,
            bias,
            activation,
        });
    }
    if layers.is_empty() {
        return Err(Error::format(what, "no layers"));
    }
    Ok(layers)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Biases stay at zero when false.
    pub use_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 20,
            seed: 42,
            shuffle: true,
            use_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter(
                "batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's updates.
    pub cost: f64,
    /// Fractions in `[0, 1]`.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Fraction of examples whose argmax output matches the label.
pub fn dense_accuracy(net: &DenseNet, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (image, label) in ds.iter() {
        if net.classify(image)? == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Mini-batch gradient descent on the baseline classifier.
pub fn train_baseline(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(DenseNet, Vec<EpochRecord>)> {
    let mut net = DenseNet::baseline(cfg.seed);
    if !cfg.use_bias {
        net.zero_biases();
    }
    let history = train_dense(&mut net, train, test, cfg, |_| {})?;
    Ok((net, history))
}

/// Trains `net` in place. Batch order comes from a ChaCha stream seeded by
/// `cfg.seed`, so identical inputs give bit-identical weights.
pub fn train_dense(
    net: &mut DenseNet,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Value(format!("training set `{}` is empty", train.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba5e);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = Gradients::zeros_like(net);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut cost = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &idx in batch {
                let (image, label) = train.get(idx);
                let target = one_hot(label);
                let (output, cache) = net.forward(image)?;
                cost += net.loss_value(&output, &target);
                net.backward_accumulate(&cache, &target, &mut grads)?;
            }
            net.apply_gradients(&grads, cfg.learning_rate / batch.len() as f64, cfg.use_bias);
        }
        let record = EpochRecord {
            epoch,
            cost: cost / train.len() as f64,
            train_accuracy: dense_accuracy(net, train)?,
            test_accuracy: dense_accuracy(net, test)?,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn linear_identity() -> DenseNet {
        let layer =
            DenseLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2], Activation::Linear).unwrap();
        DenseNet::new(vec![layer], Loss::Mse).unwrap()
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let layer = DenseLayer::zeros(IMAGE_LEN, N_HIDDEN, Activation::Sigmoid);
        let out = DenseLayer::zeros(N_HIDDEN, N_CLASSES, Activation::Linear);
        let net = DenseNet::new(vec![layer, out], Loss::Mse).unwrap();
        let (_, cache) = net.forward(&[0.0; IMAGE_LEN]).unwrap();
        assert!(cache.activations[1].iter().all(|&a| a == 0.5));
    }

    #[test]
    fn identity_linear_layer() {
        let (out, _) = linear_identity().forward(&[0.3, 0.7]).unwrap();
        assert_eq!(out, vec![0.3, 0.7]);
    }

    #[test]
    fn baseline_shapes() {
        let net = DenseNet::baseline(3);
        assert_eq!(net.shape(), vec![784, 100, 10]);
        let input: Vec<f64> = (0..IMAGE_LEN).map(|i| (i % 7) as f64 / 7.0).collect();
        let (out, cache) = net.forward(&input).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        assert_eq!(cache.activations[1].len(), 100);
        assert_eq!(cache.activations[2].len(), 10);
        assert!(matches!(net.forward(&[0.0; 3]), Err(Error::Dimension(_))));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::glorot(784, 100, Activation::Sigmoid, &mut rng);
        let limit = (6.0f64 / 884.0).sqrt();
        assert!(layer.weights().iter().all(|w| w.abs() <= limit));
        assert!(layer.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn argmax_examples() {
        let mut v = [0.0; 10];
        v[2] = 5.0;
        assert_eq!(argmax_class(&v), 2);
        assert_eq!(argmax_class(&[1.0; 10]), 0);
        assert_eq!(
            argmax_class(&[1.0, 3.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            1
        );
    }

    #[test]
    fn zero_error_gives_zero_gradient() {
        let net = linear_identity();
        let (out, cache) = net.forward(&[0.3, 0.7]).unwrap();
        let grads = net.backward(&cache, &out).unwrap();
        assert!(grads.is_zero());
    }

    #[test]
    fn linear_mse_gradient_is_outer_product() {
        let layer = DenseLayer::from_parts(
            3,
            2,
            vec![0.5, -1.0, 0.25, 2.0, -0.75, 0.1],
            vec![0.1, -0.2],
            Activation::Linear,
        )
        .unwrap();
        let net = DenseNet::new(vec![layer], Loss::Mse).unwrap();
        let input = [0.2, 0.9, 0.4];
        let target = [1.0, 0.0];
        let (out, cache) = net.forward(&input).unwrap();
        let g = net.backward(&cache, &target).unwrap();
        for (i, x) in input.iter().enumerate() {
            for j in 0..2 {
                assert_abs_diff_eq!(
                    g.layers[0].weights[i * 2 + j],
                    (out[j] - target[j]) * x,
                    epsilon = 1e-15
                );
            }
        }
        assert_abs_diff_eq!(g.layers[0].bias[1], out[1] - target[1], epsilon = 1e-15);
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let net = DenseNet::baseline(0);
        let other = linear_identity();
        let (_, cache) = other.forward(&[0.1, 0.2]).unwrap();
        assert!(matches!(
            net.backward(&cache, &[0.0; 10]),
            Err(Error::Dimension(_))
        ));
        let (_, cache) = net.forward(&[0.0; IMAGE_LEN]).unwrap();
        assert!(matches!(
            net.backward(&cache, &[0.0; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn softmax_cross_entropy_delta() {
        let out = [1.0, 2.0, 0.5];
        let target = [0.0, 1.0, 0.0];
        let d = Loss::CrossEntropy.output_delta(Activation::Linear, &out, &target);
        let p = softmax(&out);
        for k in 0..3 {
            assert_abs_diff_eq!(d[k], p[k] - target[k], epsilon = 1e-15);
        }
        let d2 = Loss::CrossEntropy.output_delta(Activation::SoftmaxReadout, &p, &target);
        for k in 0..3 {
            assert_abs_diff_eq!(d[k], d2[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn weight_bytes_reject_bad_input() {
        let net = DenseNet::baseline(9);
        let mut bytes = WEIGHT_MAGIC.to_vec();
        encode_layers(net.layers(), &mut bytes);
        assert_eq!(DenseNet::from_weight_bytes(&bytes).unwrap(), net);

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            DenseNet::from_weight_bytes(truncated),
            Err(Error::Format { .. })
        ));

        let mut wrong = bytes.clone();
        wrong[..8].copy_from_slice(b"NOTMAGIC");
        let err = DenseNet::from_weight_bytes(&wrong).unwrap_err();
        assert!(err.to_string().contains("FHNW0001"), "{err}");

        let mut bad_tag = bytes.clone();
        bad_tag[16] = 9;
        assert!(DenseNet::from_weight_bytes(&bad_tag).is_err());

        assert!(DenseNet::from_weight_bytes(WEIGHT_MAGIC).is_err());
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
