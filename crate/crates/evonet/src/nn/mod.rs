//! Trainable feed-forward convolutional networks with hard sparse masks.
//!
//! Weights live in dense per-layer arrays; a congruent binary mask decides
//! which synapses exist. Every operation computes with effective weights
//! `weight ⊙ mask`, gradients at masked positions are forced to zero, and
//! masked weights are re-zeroed after every update, so dead synapses stay
//! dead through any amount of training.

mod engine;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::Dataset;
use crate::genome::NetworkGenome;

/// Channel/height/width extents of one activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn size(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    Tanh,
    Relu,
    /// Pass-through (no nonlinearity).
    Identity,
}

/// One layer of the architecture. Only conv and dense layers carry weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        out_ch: usize,
        in_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool2d {
        win: usize,
        stride: usize,
    },
    Dense {
        out_dim: usize,
        in_dim: usize,
    },
    Activation(ActKind),
}

impl LayerSpec {
    /// Number of maskable weights, if this layer has any.
    pub fn weight_count(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d {
                out_ch,
                in_ch,
                kh,
                kw,
                ..
            } => Some(out_ch * in_ch * kh * kw),
            LayerSpec::Dense { out_dim, in_dim } => Some(out_dim * in_dim),
            _ => None,
        }
    }

    /// Number of bias terms, if this layer has any. Biases are never masked.
    pub fn bias_count(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { out_ch, .. } => Some(out_ch),
            LayerSpec::Dense { out_dim, .. } => Some(out_dim),
            _ => None,
        }
    }

    pub fn is_weighted(&self) -> bool {
        self.weight_count().is_some()
    }
}

/// Weights and biases of one weighted layer, flat row-major:
/// conv `[out_ch][in_ch][kh][kw]`, dense `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Per-weighted-layer parameter arrays, ordered as the weighted layers appear
/// in the architecture.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    pub layers: Vec<LayerParams>,
}

impl WeightStore {
    /// Zero-filled store congruent with `specs`.
    pub fn zeros(specs: &[LayerSpec]) -> Self {
        let layers = specs
            .iter()
            .filter(|s| s.is_weighted())
            .map(|s| LayerParams {
                weights: vec![0.0; s.weight_count().unwrap()],
                biases: vec![0.0; s.bias_count().unwrap()],
            })
            .collect();
        WeightStore { layers }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// Binary existence masks, congruent with [`WeightStore`] weight arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynapseMask {
    pub layers: Vec<Vec<u8>>,
}

impl SynapseMask {
    /// All-ones masks congruent with `specs`.
    pub fn ones(specs: &[LayerSpec]) -> Self {
        let layers = specs
            .iter()
            .filter(|s| s.is_weighted())
            .map(|s| vec![1u8; s.weight_count().unwrap()])
            .collect();
        SynapseMask { layers }
    }

    /// All-zeros masks congruent with `specs`.
    pub fn zeros(specs: &[LayerSpec]) -> Self {
        let layers = specs
            .iter()
            .filter(|s| s.is_weighted())
            .map(|s| vec![0u8; s.weight_count().unwrap()])
            .collect();
        SynapseMask { layers }
    }

    pub fn live_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.iter().map(|&m| u64::from(m)).sum::<u64>())
            .sum()
    }
}

/// A classification batch: images flat `[item][channel][row][col]` plus one
/// integer label per item.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub shape: Shape,
}

impl Batch {
    pub fn new(images: Vec<f64>, labels: Vec<u8>, shape: Shape) -> Self {
        assert_eq!(
            images.len(),
            labels.len() * shape.size(),
            "image payload does not match label count × shape"
        );
        Batch {
            images,
            labels,
            shape,
        }
    }

    /// Gathers the given dataset rows into a contiguous batch.
    pub fn gather(dataset: &Dataset, indices: &[u32]) -> Self {
        let shape = Shape::new(1, crate::dataio::IMAGE_SIDE, crate::dataio::IMAGE_SIDE);
        let mut images = Vec::with_capacity(indices.len() * shape.size());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(dataset.image(i as usize));
            labels.push(dataset.labels[i as usize]);
        }
        Batch::new(images, labels, shape)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Classifier outputs for a batch, `classes` values per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub classes: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.classes.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Epoch/batch/learning-rate schedule for one training run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainBudget {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: u32,
}

impl Default for TrainBudget {
    fn default() -> Self {
        TrainBudget {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            lr_decay: 0.5,
            decay_every: 4,
        }
    }
}

impl TrainBudget {
    pub fn lr_at(&self, epoch: u32) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::BadBudget("batch_size must be ≥ 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NnError::BadBudget("learning_rate must be > 0"));
        }
        if !(self.lr_decay > 0.0) {
            return Err(NnError::BadBudget("lr_decay must be > 0"));
        }
        if self.decay_every == 0 {
            return Err(NnError::BadBudget("decay_every must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("batch shape {found:?} does not match network input {expected:?}")]
    BatchShape { expected: Shape, found: Shape },
    #[error("label {label} out of range for {classes} output classes")]
    LabelRange { label: u8, classes: usize },
    #[error("non-finite gradient in weighted layer {layer} at index {index}")]
    NonFiniteGradient { layer: usize, index: usize },
    #[error("non-finite weight in weighted layer {layer} after update")]
    NonFiniteWeight { layer: usize },
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: u32 },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("invalid training budget: {0}")]
    BadBudget(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Validates layer-to-layer shape compatibility and returns each layer's
/// output shape. Errors name the offending layer index.
pub fn infer_shapes(input: Shape, specs: &[LayerSpec]) -> Result<Vec<Shape>, NnError> {
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = input;
    for (layer, spec) in specs.iter().enumerate() {
        let err = |detail: String| NnError::ShapeMismatch { layer, detail };
        cur = match *spec {
            LayerSpec::Conv2d {
                out_ch,
                in_ch,
                kh,
                kw,
                stride,
                pad,
            } => {
                if kh == 0 || kw == 0 || stride == 0 {
                    return Err(err("kernel dims and stride must be positive".into()));
                }
                if cur.c != in_ch {
                    return Err(err(format!(
                        "expects {in_ch} input channels, got {}",
                        cur.c
                    )));
                }
                if cur.h + 2 * pad < kh || cur.w + 2 * pad < kw {
                    return Err(err(format!(
                        "kernel {kh}x{kw} larger than padded input {}x{}",
                        cur.h + 2 * pad,
                        cur.w + 2 * pad
                    )));
                }
                Shape::new(
                    out_ch,
                    (cur.h + 2 * pad - kh) / stride + 1,
                    (cur.w + 2 * pad - kw) / stride + 1,
                )
            }
            LayerSpec::AvgPool2d { win, stride } => {
                if win == 0 || stride == 0 {
                    return Err(err("window and stride must be positive".into()));
                }
                if cur.h < win || cur.w < win {
                    return Err(err(format!(
                        "window {win} larger than input {}x{}",
                        cur.h, cur.w
                    )));
                }
                Shape::new(cur.c, (cur.h - win) / stride + 1, (cur.w - win) / stride + 1)
            }
            LayerSpec::Dense { out_dim, in_dim } => {
                if cur.size() != in_dim {
                    return Err(err(format!(
                        "expects {in_dim} inputs, got {} ({}x{}x{})",
                        cur.size(),
                        cur.c,
                        cur.h,
                        cur.w
                    )));
                }
                Shape::new(out_dim, 1, 1)
            }
            LayerSpec::Activation(_) => cur,
        };
        shapes.push(cur);
    }
    Ok(shapes)
}

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`, biases zero,
/// drawn layer by layer from one seeded stream.
pub fn init_weights(specs: &[LayerSpec], seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::zeros(specs);
    let mut wl = 0;
    for spec in specs {
        let (fan_in, fan_out) = match *spec {
            LayerSpec::Conv2d {
                out_ch,
                in_ch,
                kh,
                kw,
                ..
            } => (in_ch * kh * kw, out_ch * kh * kw),
            LayerSpec::Dense { out_dim, in_dim } => (in_dim, out_dim),
            _ => continue,
        };
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new(-a, a);
        for w in &mut store.layers[wl].weights {
            *w = dist.sample(&mut rng);
        }
        wl += 1;
    }
    store
}

/// Per-layer activations for one batch.
struct LayerIo {
    shape: Shape,
    data: Vec<f64>,
}

/// Effective weights (`weight ⊙ mask`) for every weighted layer.
fn effective_weights(genome: &NetworkGenome) -> Vec<Vec<f64>> {
    genome
        .weights
        .layers
        .iter()
        .zip(&genome.masks.layers)
        .map(|(params, mask)| {
            params
                .weights
                .iter()
                .zip(mask)
                .map(|(&w, &m)| if m == 0 { 0.0 } else { w })
                .collect()
        })
        .collect()
}

/// Runs the full layer stack, returning every layer's output activations.
fn run_layers(genome: &NetworkGenome, batch: &Batch) -> Result<Vec<LayerIo>, NnError> {
    if batch.shape != genome.input {
        return Err(NnError::BatchShape {
            expected: genome.input,
            found: batch.shape,
        });
    }
    let n = batch.len();
    let shapes = genome.shapes();
    let eff = effective_weights(genome);
    let mut outputs: Vec<LayerIo> = Vec::with_capacity(genome.specs.len());
    let mut wl = 0;
    for (i, spec) in genome.specs.iter().enumerate() {
        let in_shape = if i == 0 { genome.input } else { shapes[i - 1] };
        let out_shape = shapes[i];
        let input: &[f64] = if i == 0 {
            &batch.images
        } else {
            &outputs[i - 1].data
        };
        let mut out = vec![0.0; n * out_shape.size()];
        match *spec {
            LayerSpec::Conv2d {
                out_ch,
                in_ch,
                kh,
                kw,
                stride,
                pad,
            } => {
                let k = in_ch * kh * kw;
                let n_cols = out_shape.h * out_shape.w;
                let mut cols = vec![0.0; k * n_cols];
                let weights = &eff[wl];
                let biases = &genome.weights.layers[wl].biases;
                for item in 0..n {
                    let img = &input[item * in_shape.size()..(item + 1) * in_shape.size()];
                    engine::im2col(
                        img, in_ch, in_shape.h, in_shape.w, kh, kw, stride, pad, out_shape.h,
                        out_shape.w, &mut cols,
                    );
                    let dst = &mut out[item * out_shape.size()..(item + 1) * out_shape.size()];
                    engine::dgemm(
                        out_ch, k, n_cols, 1.0, weights, k as isize, 1, &cols, n_cols as isize,
                        1, 0.0, dst, n_cols as isize, 1,
                    );
                    for oc in 0..out_ch {
                        let b = biases[oc];
                        for v in &mut dst[oc * n_cols..(oc + 1) * n_cols] {
                            *v += b;
                        }
                    }
                }
                wl += 1;
            }
            LayerSpec::AvgPool2d { win, stride } => {
                engine::avgpool_forward(
                    input, n, in_shape.c, in_shape.h, in_shape.w, win, stride, out_shape.h,
                    out_shape.w, &mut out,
                );
            }
            LayerSpec::Dense { out_dim, in_dim } => {
                let weights = &eff[wl];
                let biases = &genome.weights.layers[wl].biases;
                // out(n×out_dim) = input(n×in_dim) · Wᵀ
                engine::dgemm(
                    n,
                    in_dim,
                    out_dim,
                    1.0,
                    input,
                    in_dim as isize,
                    1,
                    weights,
                    1,
                    in_dim as isize,
                    0.0,
                    &mut out,
                    out_dim as isize,
                    1,
                );
                for item in 0..n {
                    for (j, b) in biases.iter().enumerate() {
                        out[item * out_dim + j] += b;
                    }
                }
                wl += 1;
            }
            LayerSpec::Activation(kind) => {
                out.copy_from_slice(input);
                match kind {
                    ActKind::Tanh => engine::tanh_forward(&mut out),
                    ActKind::Relu => engine::relu_forward(&mut out),
                    ActKind::Identity => {}
                }
            }
        }
        outputs.push(LayerIo {
            shape: out_shape,
            data: out,
        });
    }
    Ok(outputs)
}

/// Classifier outputs for a batch, computed with effective weights
/// `weight ⊙ mask`. Deterministic given inputs.
pub fn forward(genome: &NetworkGenome, batch: &Batch) -> Result<Logits, NnError> {
    let outputs = run_layers(genome, batch)?;
    let last = outputs.last().expect("architecture has at least one layer");
    Ok(Logits {
        classes: last.shape.size(),
        data: last.data.clone(),
    })
}

/// Mean softmax cross-entropy over the batch plus its gradient with respect
/// to the logits (already divided by the batch size).
fn softmax_loss(logits: &[f64], labels: &[u8], classes: usize) -> Result<(f64, Vec<f64>), NnError> {
    let n = labels.len();
    let mut dlogits = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(NnError::LabelRange {
                label,
                classes,
            });
        }
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        total += sum.ln() - (row[label as usize] - max);
        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for (c, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / sum;
            drow[c] = (p - if c == label as usize { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, dlogits))
}

/// Cross-entropy loss and parameter gradients for one batch.
///
/// Gradients at masked-out positions are forced to zero; bias gradients are
/// never masked.
pub fn loss_and_grad(
    genome: &NetworkGenome,
    batch: &Batch,
) -> Result<(f64, WeightStore), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let n = batch.len();
    let shapes = genome.shapes();
    let eff = effective_weights(genome);
    let outputs = run_layers(genome, batch)?;
    let last = outputs.last().expect("nonempty architecture");
    let classes = last.shape.size();
    let (loss, dlogits) = softmax_loss(&last.data, &batch.labels, classes)?;

    let mut grads = WeightStore::zeros(&genome.specs);
    let weighted: Vec<usize> = genome
        .specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_weighted())
        .map(|(i, _)| i)
        .collect();

    let mut grad = dlogits;
    for (i, spec) in genome.specs.iter().enumerate().rev() {
        let in_shape = if i == 0 { genome.input } else { shapes[i - 1] };
        let out_shape = shapes[i];
        let input: &[f64] = if i == 0 {
            &batch.images
        } else {
            &outputs[i - 1].data
        };
        let need_input_grad = i > 0;
        match *spec {
            LayerSpec::Activation(kind) => {
                let cached = &outputs[i].data;
                match kind {
                    ActKind::Tanh => engine::tanh_backward(cached, &mut grad),
                    ActKind::Relu => engine::relu_backward(cached, &mut grad),
                    ActKind::Identity => {}
                }
            }
            LayerSpec::AvgPool2d { win, stride } => {
                let mut gin = vec![0.0; n * in_shape.size()];
                engine::avgpool_backward(
                    &grad, n, in_shape.c, in_shape.h, in_shape.w, win, stride, out_shape.h,
                    out_shape.w, &mut gin,
                );
                grad = gin;
            }
            LayerSpec::Dense { out_dim, in_dim } => {
                let wl = weighted.iter().position(|&s| s == i).unwrap();
                // dW(out×in) = gradᵀ(out×n) · input(n×in)
                engine::dgemm(
                    out_dim,
                    n,
                    in_dim,
                    1.0,
                    &grad,
                    1,
                    out_dim as isize,
                    input,
                    in_dim as isize,
                    1,
                    0.0,
                    &mut grads.layers[wl].weights,
                    in_dim as isize,
                    1,
                );
                for item in 0..n {
                    for j in 0..out_dim {
                        grads.layers[wl].biases[j] += grad[item * out_dim + j];
                    }
                }
                if need_input_grad {
                    let mut gin = vec![0.0; n * in_shape.size()];
                    // dX(n×in) = grad(n×out) · W(out×in)
                    engine::dgemm(
                        n,
                        out_dim,
                        in_dim,
                        1.0,
                        &grad,
                        out_dim as isize,
                        1,
                        &eff[wl],
                        in_dim as isize,
                        1,
                        0.0,
                        &mut gin,
                        in_dim as isize,
                        1,
                    );
                    grad = gin;
                }
            }
            LayerSpec::Conv2d {
                out_ch,
                in_ch,
                kh,
                kw,
                stride,
                pad,
            } => {
                let wl = weighted.iter().position(|&s| s == i).unwrap();
                let k = in_ch * kh * kw;
                let n_cols = out_shape.h * out_shape.w;
                let mut cols = vec![0.0; k * n_cols];
                let mut dcols = vec![0.0; k * n_cols];
                let mut gin = if need_input_grad {
                    vec![0.0; n * in_shape.size()]
                } else {
                    Vec::new()
                };
                for item in 0..n {
                    let img = &input[item * in_shape.size()..(item + 1) * in_shape.size()];
                    let dy = &grad[item * out_shape.size()..(item + 1) * out_shape.size()];
                    engine::im2col(
                        img, in_ch, in_shape.h, in_shape.w, kh, kw, stride, pad, out_shape.h,
                        out_shape.w, &mut cols,
                    );
                    // dW(out_ch×k) += dy(out_ch×n_cols) · colsᵀ(n_cols×k)
                    engine::dgemm(
                        out_ch,
                        n_cols,
                        k,
                        1.0,
                        dy,
                        n_cols as isize,
                        1,
                        &cols,
                        1,
                        n_cols as isize,
                        1.0,
                        &mut grads.layers[wl].weights,
                        k as isize,
                        1,
                    );
                    for oc in 0..out_ch {
                        grads.layers[wl].biases[oc] +=
                            dy[oc * n_cols..(oc + 1) * n_cols].iter().sum::<f64>();
                    }
                    if need_input_grad {
                        // dcols(k×n_cols) = Wᵀ(k×out_ch) · dy(out_ch×n_cols)
                        engine::dgemm(
                            k,
                            out_ch,
                            n_cols,
                            1.0,
                            &eff[wl],
                            1,
                            k as isize,
                            dy,
                            n_cols as isize,
                            1,
                            0.0,
                            &mut dcols,
                            n_cols as isize,
                            1,
                        );
                        engine::col2im_add(
                            &dcols,
                            in_ch,
                            in_shape.h,
                            in_shape.w,
                            kh,
                            kw,
                            stride,
                            pad,
                            out_shape.h,
                            out_shape.w,
                            &mut gin[item * in_shape.size()..(item + 1) * in_shape.size()],
                        );
                    }
                }
                if need_input_grad {
                    grad = gin;
                }
            }
        }
    }

    // Dead synapses receive no gradient.
    for (gl, mask) in grads.layers.iter_mut().zip(&genome.masks.layers) {
        for (g, &m) in gl.weights.iter_mut().zip(mask) {
            if m == 0 {
                *g = 0.0;
            }
        }
    }
    Ok((loss, grads))
}

/// One SGD update: `w ← w − lr·g`, after which masks are re-applied so dead
/// synapses remain exactly zero. Rejects non-finite gradients without
/// touching the genome.
pub fn sgd_step(
    genome: &mut NetworkGenome,
    grads: &WeightStore,
    learning_rate: f64,
) -> Result<(), NnError> {
    if !(learning_rate > 0.0) {
        return Err(NnError::BadLearningRate(learning_rate));
    }
    for (layer, gl) in grads.layers.iter().enumerate() {
        if let Some(index) = gl
            .weights
            .iter()
            .chain(&gl.biases)
            .position(|v| !v.is_finite())
        {
            return Err(NnError::NonFiniteGradient { layer, index });
        }
    }
    for ((params, gl), mask) in genome
        .weights
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&genome.masks.layers)
    {
        for ((w, &g), &m) in params.weights.iter_mut().zip(&gl.weights).zip(mask) {
            *w = if m == 0 { 0.0 } else { *w - learning_rate * g };
        }
        for (b, &g) in params.biases.iter_mut().zip(&gl.biases) {
            *b -= learning_rate * g;
        }
    }
    Ok(())
}

/// Mini-batch SGD for `budget.epochs` epochs with seeded shuffling.
///
/// Returns the mean training loss per epoch. Masks are never modified; a
/// zero-epoch budget returns the genome untouched with an empty history.
pub fn train(
    genome: &mut NetworkGenome,
    dataset: &Dataset,
    budget: &TrainBudget,
    seed: u64,
) -> Result<Vec<f64>, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    budget.validate()?;
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<u32> = (0..n as u32).collect();
    let mut history = Vec::with_capacity(budget.epochs as usize);
    for epoch in 0..budget.epochs {
        let lr = budget.lr_at(epoch);
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(budget.batch_size) {
            let batch = Batch::gather(dataset, chunk);
            let (loss, grads) = loss_and_grad(genome, &batch)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            sgd_step(genome, &grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
        }
        history.push(loss_sum / n as f64);
    }
    for (layer, params) in genome.weights.layers.iter().enumerate() {
        if !params.weights.iter().chain(&params.biases).all(|v| v.is_finite()) {
            return Err(NnError::NonFiniteWeight { layer });
        }
    }
    Ok(history)
}

/// Top-1 accuracy under argmax of the classifier outputs; ties broken toward
/// the lowest class index.
pub fn evaluate(genome: &NetworkGenome, dataset: &Dataset) -> Result<f64, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let n = dataset.len();
    let mut correct = 0usize;
    let indices: Vec<u32> = (0..n as u32).collect();
    for chunk in indices.chunks(256) {
        let batch = Batch::gather(dataset, chunk);
        let logits = forward(genome, &batch)?;
        for (i, &label) in batch.labels.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}
