//! Small dense classifier: logistic regression or a ReLU MLP, trained with
//! softmax cross-entropy and momentum SGD. Everything is `f64` and every
//! reduction runs left to right so runs are bitwise reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input at example {example}, feature {feature}")]
    NonFinite { example: usize, feature: usize },
    #[error("label {label} out of range for {classes} classes (example {example})")]
    Label { example: usize, label: usize, classes: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
}

/// One dense layer, `weights` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = self.bias[o];
                for (w, v) in row.iter().zip(x) {
                    acc += w * v;
                }
                acc
            })
            .collect()
    }
}

/// Weights and biases for every layer. Hidden layers use ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

impl ParamSet {
    /// All-zero parameters for layer sizes `[input, hidden.., classes]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self, ModelError> {
        check_sizes(sizes)?;
        Ok(ParamSet {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self, ModelError> {
        let mut params = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every parameter, layer by layer, weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn from_flat(sizes: &[usize], values: &[f64]) -> Result<Self, ModelError> {
        let mut params = Self::zeros(sizes)?;
        if values.len() != params.param_count() {
            return Err(ModelError::Shape(format!(
                "expected {} parameters for layers {:?}, got {}",
                params.param_count(),
                sizes,
                values.len()
            )));
        }
        let mut rest = values;
        for l in &mut params.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(params)
    }

    fn same_shape(&self, other: &ParamSet) -> Result<(), ModelError> {
        if self.sizes() != other.sizes() {
            return Err(ModelError::Shape(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.sizes(),
                other.sizes()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

fn check_sizes(sizes: &[usize]) -> Result<(), ModelError> {
    if sizes.len() < 2 {
        return Err(ModelError::Shape(format!(
            "need at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(ModelError::Shape(format!("layer sizes must be positive: {sizes:?}")));
    }
    Ok(())
}

fn check_inputs(params: &ParamSet, features: &[Vec<f64>]) -> Result<(), ModelError> {
    let d = params.input_dim();
    for (i, x) in features.iter().enumerate() {
        if x.len() != d {
            return Err(ModelError::Shape(format!(
                "example {i} has {} features, model expects {d}",
                x.len()
            )));
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { example: i, feature: j });
        }
    }
    Ok(())
}

/// Per-layer activations for one example; `acts[0]` is the input and the
/// last entry is the logits.
fn forward_one(params: &ParamSet, x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(x.to_vec());
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = layer.apply(acts.last().unwrap());
        if i < last {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        acts.push(z);
    }
    acts
}

pub fn forward(params: &ParamSet, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
    check_inputs(params, features)?;
    Ok(features
        .iter()
        .map(|x| forward_one(params, x).pop().unwrap())
        .collect())
}

/// Activations feeding the output layer (the logits for a single-layer model).
pub fn penultimate(params: &ParamSet, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
    check_inputs(params, features)?;
    Ok(features
        .iter()
        .map(|x| {
            let mut acts = forward_one(params, x);
            if params.layers.len() == 1 {
                acts.pop().unwrap()
            } else {
                acts.swap_remove(params.layers.len() - 1)
            }
        })
        .collect())
}

/// Logits and losses for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub logits: Vec<Vec<f64>>,
    pub per_example_loss: Vec<f64>,
    pub mean_loss: f64,
}

/// Numerically stable softmax probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn xent_one(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    // log-sum-exp >= max >= z[label]; clamp rounding noise.
    (max + sum.ln() - z[label]).max(0.0)
}

pub fn softmax_xent(logits: Vec<Vec<f64>>, labels: &[usize]) -> Result<BatchOutput, ModelError> {
    if logits.len() != labels.len() {
        return Err(ModelError::Shape(format!(
            "{} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut per_example_loss = Vec::with_capacity(labels.len());
    for (i, (z, &y)) in logits.iter().zip(labels).enumerate() {
        if y >= z.len() {
            return Err(ModelError::Label {
                example: i,
                label: y,
                classes: z.len(),
            });
        }
        per_example_loss.push(xent_one(z, y));
    }
    let mean_loss = mean(&per_example_loss);
    Ok(BatchOutput {
        logits,
        per_example_loss,
        mean_loss,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Gradient of `mean(loss) + weight_decay/2 * sum(W^2)` (biases not decayed).
pub fn backward(
    params: &ParamSet,
    features: &[Vec<f64>],
    labels: &[usize],
    weight_decay: f64,
) -> Result<ParamSet, ModelError> {
    loss_and_grad(params, features, labels, None, weight_decay).map(|(_, g)| g)
}

/// Forward and backward in one pass. With `sample_weights`, the objective is
/// `mean(w_i * loss_i)`; the returned losses are always unweighted.
pub fn loss_and_grad(
    params: &ParamSet,
    features: &[Vec<f64>],
    labels: &[usize],
    sample_weights: Option<&[f64]>,
    weight_decay: f64,
) -> Result<(BatchOutput, ParamSet), ModelError> {
    check_inputs(params, features)?;
    if features.len() != labels.len() {
        return Err(ModelError::Shape(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if let Some(w) = sample_weights {
        if w.len() != labels.len() {
            return Err(ModelError::Shape(format!(
                "{} sample weights for {} examples",
                w.len(),
                labels.len()
            )));
        }
    }
    let classes = params.classes();
    let batch = features.len();
    let mut grads = ParamSet {
        layers: params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
    };
    let mut logits = Vec::with_capacity(batch);
    let mut losses = Vec::with_capacity(batch);
    let scale = 1.0 / batch.max(1) as f64;

    for (i, (x, &y)) in features.iter().zip(labels).enumerate() {
        if y >= classes {
            return Err(ModelError::Label {
                example: i,
                label: y,
                classes,
            });
        }
        let acts = forward_one(params, x);
        let z = acts.last().unwrap();
        losses.push(xent_one(z, y));

        let coeff = scale * sample_weights.map_or(1.0, |w| w[i]);
        let mut delta = softmax(z);
        delta[y] -= 1.0;
        for d in &mut delta {
            *d *= coeff;
        }

        for li in (0..params.layers.len()).rev() {
            let layer = &params.layers[li];
            let input = &acts[li];
            let g = &mut grads.layers[li];
            for ((&d, gb), row) in delta.iter().zip(&mut g.bias).zip(g.weights.chunks_mut(layer.inputs)) {
                if d == 0.0 {
                    continue;
                }
                *gb += d;
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (&d, row) in delta.iter().zip(layer.weights.chunks(layer.inputs)) {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU derivative, taken as 0 at the kink.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        logits.push(acts.into_iter().last().unwrap());
    }

    if weight_decay != 0.0 {
        for (g, l) in grads.layers.iter_mut().zip(&params.layers) {
            for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
                *gw += weight_decay * w;
            }
        }
    }

    let mean_loss = mean(&losses);
    Ok((
        BatchOutput {
            logits,
            per_example_loss: losses,
            mean_loss,
        },
        grads,
    ))
}

/// Optimizer hyperparameters with a step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub base_lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Epochs after which the rate is multiplied by `lr_gamma`.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub lr_gamma: f64,
}

fn default_gamma() -> f64 {
    0.1
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_milestones: Vec::new(),
            lr_gamma: 0.1,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self, total_epochs: usize) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Hyper(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma.is_finite()) {
            return bad(format!("lr_gamma must be positive, got {}", self.lr_gamma));
        }
        for w in self.lr_milestones.windows(2) {
            if w[0] >= w[1] {
                return bad(format!("lr_milestones must be increasing: {:?}", self.lr_milestones));
            }
        }
        if let Some(&m) = self.lr_milestones.iter().find(|&&m| m == 0 || m > total_epochs) {
            return bad(format!("lr milestone {m} outside (0, {total_epochs}]"));
        }
        Ok(())
    }
}

/// Learning rate for 1-based `epoch`: milestone `m` affects epochs after `m`.
pub fn lr_at(hyper: &TrainHyper, epoch: usize) -> f64 {
    let passed = hyper.lr_milestones.iter().filter(|&&m| m < epoch).count();
    hyper.base_lr * hyper.lr_gamma.powi(passed as i32)
}

/// Classic momentum SGD: `v = m*v + g; w -= lr*v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub hyper: TrainHyper,
    velocity: ParamSet,
}

impl Sgd {
    pub fn new(hyper: TrainHyper, params: &ParamSet) -> Self {
        let velocity = ParamSet {
            layers: params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        };
        Sgd { hyper, velocity }
    }

    pub fn velocity(&self) -> &ParamSet {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, epoch: usize) -> Result<(), ModelError> {
        let lr = lr_at(&self.hyper, epoch);
        self.step_with_lr(params, grads, lr)
    }

    pub fn step_with_lr(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<(), ModelError> {
        params.same_shape(grads)?;
        params.same_shape(&self.velocity)?;
        let m = self.hyper.momentum;
        for ((p, g), v) in params.layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity.layers) {
            for ((w, gw), vw) in p.weights.iter_mut().zip(&g.weights).zip(&mut v.weights) {
                *vw = m * *vw + gw;
                *w -= lr * *vw;
            }
            for ((b, gb), vb) in p.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
                *vb = m * *vb + gb;
                *b -= lr * *vb;
            }
        }
        Ok(())
    }
}

/// Index of the largest logit; ties go to the lower class.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose argmax logit matches the label.
pub fn accuracy(params: &ParamSet, features: &[Vec<f64>], labels: &[usize]) -> Result<f64, ModelError> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let logits = forward(params, features)?;
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|(z, &y)| argmax(z) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
