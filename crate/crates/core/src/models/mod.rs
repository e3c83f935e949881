//! Small dense classifiers with exact input gradients.
//!
//! A [`ClassifierModel`] is a stack of affine layers with a fixed activation
//! between them and a softmax head. Both the loss gradient with respect to
//! the input (what attacks need) and with respect to the parameters (what
//! training needs) are computed by hand-written backpropagation.

pub mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{load_model, save_model, CheckpointError};
pub use train::{train, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Vector};

/// Loss floor applied to the true-class probability before the log.
pub const PROB_FLOOR: f64 = 1e-30;

/// Deepest supported MLP.
pub const MAX_HIDDEN_LAYERS: usize = 3;

/// Anything that can report a classification loss and its input gradient.
///
/// Attacks and probes only talk to this trait, so toy closed-form losses can
/// stand in for a trained network in tests. Implementations must be safe for
/// concurrent read-only use.
pub trait LossOracle: Sync {
    fn input_dim(&self) -> usize;

    fn loss(&self, x: &[f64], label: usize) -> f64;

    fn loss_and_gradient(&self, x: &[f64], label: usize) -> (f64, Vector);

    fn gradient(&self, x: &[f64], label: usize) -> Vector {
        self.loss_and_gradient(x, label).1
    }
}

/// A flattened input in `[0, 1]^d` and its class.
///
/// The one-hot label is stored as its class index; [`LabeledSample::one_hot`]
/// expands it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    x: Vector,
    label: usize,
    classes: usize,
}

impl LabeledSample {
    pub fn new(x: Vector, label: usize, classes: usize) -> Result<Self> {
        if label >= classes {
            return Err(Error::InvalidSample(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidSample(format!("coordinate {i} = {v} outside [0, 1]")));
        }
        Ok(LabeledSample { x, label, classes })
    }

    pub fn from_one_hot(x: Vector, y: &[f64]) -> Result<Self> {
        let ones: Vec<usize> = y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        if ones.len() != 1 || zeros + 1 != y.len() {
            return Err(Error::InvalidSample("label is not one-hot".into()));
        }
        LabeledSample::new(x, ones[0], y.len())
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn one_hot(&self) -> Vector {
        let mut y = Vector::zeros(self.classes);
        y[self.label] = 1.0;
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative from the pre-activation `z` and output `a`.
    /// The ReLU subgradient at 0 is 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths and activation. No hidden layers means linear softmax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Architecture {
            input_dim,
            hidden: Vec::new(),
            classes,
            activation: Activation::Relu,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, activation: Activation) -> Self {
        Architecture {
            input_dim,
            hidden: hidden.to_vec(),
            classes,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig("need input_dim >= 1 and classes >= 2".into()));
        }
        if self.hidden.len() > MAX_HIDDEN_LAYERS {
            return Err(Error::InvalidConfig(format!(
                "at most {MAX_HIDDEN_LAYERS} hidden layers supported, got {}",
                self.hidden.len()
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Affine map `z = W a + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn apply(&self, a: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| self.row(o).iter().zip(a).fold(self.bias[o], |acc, (w, v)| acc + w * v))
            .collect()
    }

    /// `W^T delta`
    fn backprop(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, w) in out.iter_mut().zip(self.row(o)) {
                *g += w * d;
            }
        }
        out
    }
}

/// Intermediate values of one forward pass.
struct Trace {
    /// Layer inputs: `activations[0]` is x, then each hidden output.
    activations: Vec<Vec<f64>>,
    /// Hidden pre-activations, one per hidden layer.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

/// A trained (or freshly initialized) differentiable classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    arch: Architecture,
    seed: u64,
    layers: Vec<DenseLayer>,
}

impl ClassifierModel {
    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn initialize(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SeededRng::new(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut layer = DenseLayer::zeros(fan_in, fan_out);
                for w in layer.weights.iter_mut() {
                    *w = rng.uniform_symmetric(bound);
                }
                layer
            })
            .collect();
        Ok(ClassifierModel { arch, seed, layers })
    }

    /// Builds a model from explicit layers, checking shapes against `arch`.
    pub fn from_layers(arch: Architecture, seed: u64, layers: Vec<DenseLayer>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::InvalidConfig(format!(
                "architecture has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((fan_in, fan_out), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.inputs != *fan_in
                || layer.outputs != *fan_out
                || layer.weights.len() != fan_in * fan_out
                || layer.bias.len() != *fan_out
            {
                return Err(Error::InvalidConfig(format!("layer {i} has the wrong shape")));
            }
        }
        Ok(ClassifierModel { arch, seed, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.arch.classes {
            return Err(Error::InvalidSample(format!(
                "label {label} out of range for {} classes",
                self.arch.classes
            )));
        }
        Ok(())
    }

    fn run(&self, x: &[f64]) -> Trace {
        let hidden = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        activations.push(x.to_vec());
        for layer in &self.layers[..hidden] {
            let z = layer.apply(activations.last().unwrap());
            let a = z.iter().map(|&v| self.arch.activation.apply(v)).collect();
            pre.push(z);
            activations.push(a);
        }
        let logits = self.layers[hidden].apply(activations.last().unwrap());
        Trace {
            activations,
            pre,
            logits,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vector> {
        self.check_dim(x)?;
        Ok(self.run(x).logits.into())
    }

    /// Softmax class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        self.check_dim(x)?;
        Ok(softmax(&self.run(x).logits).into())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        Ok(argmax(&self.run(x).logits))
    }

    /// `-ln p_true`, with `p_true` floored at [`PROB_FLOOR`].
    pub fn cross_entropy_loss(&self, x: &[f64], label: usize) -> Result<f64> {
        self.check_dim(x)?;
        self.check_label(label)?;
        Ok(cross_entropy_from_logits(&self.run(x).logits, label))
    }

    /// Exact gradient of the cross-entropy loss with respect to `x`.
    ///
    /// Returns the gradient of the unfloored loss; the floor only matters
    /// for probabilities below 1e-30.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vector> {
        self.check_dim(x)?;
        self.check_label(label)?;
        Ok(self.loss_grad_unchecked(x, label).1)
    }

    fn loss_grad_unchecked(&self, x: &[f64], label: usize) -> (f64, Vector) {
        let trace = self.run(x);
        let loss = cross_entropy_from_logits(&trace.logits, label);
        let mut delta = softmax(&trace.logits);
        delta[label] -= 1.0;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mut back = layer.backprop(&delta);
            if l > 0 {
                let z = &trace.pre[l - 1];
                let a = &trace.activations[l];
                for ((g, &zi), &ai) in back.iter_mut().zip(z).zip(a) {
                    *g *= self.arch.activation.derivative(zi, ai);
                }
            }
            delta = back;
        }
        (loss, delta.into())
    }

    /// Accumulates parameter gradients of the loss at `(x, label)` into
    /// `grads` (same shapes as the layers) and returns the loss.
    pub(crate) fn accumulate_param_gradients(&self, x: &[f64], label: usize, grads: &mut [DenseLayer]) -> f64 {
        let trace = self.run(x);
        let loss = cross_entropy_from_logits(&trace.logits, label);
        let mut delta = softmax(&trace.logits);
        delta[label] -= 1.0;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[l];
            let g = &mut grads[l];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if l > 0 {
                let mut back = layer.backprop(&delta);
                let z = &trace.pre[l - 1];
                for ((g, &zi), &ai) in back.iter_mut().zip(z).zip(input) {
                    *g *= self.arch.activation.derivative(zi, ai);
                }
                delta = back;
            }
        }
        loss
    }

    /// Fraction of samples whose predicted class equals the label.
    pub fn accuracy(&self, data: &[LabeledSample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut correct = 0usize;
        for s in data {
            if self.predict(s.x())? == s.label() {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

impl LossOracle for ClassifierModel {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn loss(&self, x: &[f64], label: usize) -> f64 {
        cross_entropy_from_logits(&self.run(x).logits, label)
    }

    fn loss_and_gradient(&self, x: &[f64], label: usize) -> (f64, Vector) {
        self.loss_grad_unchecked(x, label)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln softmax(logits)[label]` via log-sum-exp, capped at `-ln PROB_FLOOR`.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zt = logits[label];
    let loss = if zt == m {
        // ln(1 + sum_{k != label} e^(z_k - z_label)), accurate for p_true near 1
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != label)
            .map(|(_, z)| (z - zt).exp())
            .sum();
        rest.ln_1p()
    } else {
        let total: f64 = logits.iter().map(|z| (z - m).exp()).sum();
        m - zt + total.ln()
    };
    // NaN passes through so divergence stays visible.
    if loss > -PROB_FLOOR.ln() {
        -PROB_FLOOR.ln()
    } else {
        loss
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
