#![allow(dead_code, clippy::needless_range_loop)]

use respa::models::{Activation, ClassifierModel, LossOracle};
use respa::Vector;

/// `J(x) = 0.5 (x - c)^T A (x - c) + b^T x`, label ignored.
pub struct Quadratic {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Quadratic {
    pub fn isotropic(dim: usize) -> Self {
        let a = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Quadratic {
            a,
            b: vec![0.0; dim],
            c: vec![0.0; dim],
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.c).map(|(x, c)| x - c).collect();
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(&d).map(|(a, d)| a * d).sum::<f64>() + b)
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.c).map(|(x, c)| x - c).collect();
        let quad: f64 = self
            .a
            .iter()
            .zip(&d)
            .map(|(row, di)| di * row.iter().zip(&d).map(|(a, dj)| a * dj).sum::<f64>())
            .sum();
        0.5 * quad + self.b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
    }
}

impl LossOracle for Quadratic {
    fn input_dim(&self) -> usize {
        self.b.len()
    }

    fn loss(&self, x: &[f64], _label: usize) -> f64 {
        self.value(x)
    }

    fn loss_and_gradient(&self, x: &[f64], _label: usize) -> (f64, Vector) {
        (self.value(x), Vector::from(self.grad(x)))
    }
}

/// `J(x) = w . x`.
pub struct Linear(pub Vec<f64>);

impl LossOracle for Linear {
    fn input_dim(&self) -> usize {
        self.0.len()
    }

    fn loss(&self, x: &[f64], _label: usize) -> f64 {
        self.0.iter().zip(x).map(|(w, x)| w * x).sum()
    }

    fn loss_and_gradient(&self, x: &[f64], label: usize) -> (f64, Vector) {
        (self.loss(x, label), Vector::from(self.0.clone()))
    }
}

/// `c * J(x)` for a wrapped oracle.
pub struct Scaled<'a, O: LossOracle>(pub &'a O, pub f64);

impl<O: LossOracle> LossOracle for Scaled<'_, O> {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn loss(&self, x: &[f64], label: usize) -> f64 {
        self.1 * self.0.loss(x, label)
    }

    fn loss_and_gradient(&self, x: &[f64], label: usize) -> (f64, Vector) {
        let (l, g) = self.0.loss_and_gradient(x, label);
        (self.1 * l, g.scaled(self.1))
    }
}

/// Straightforward forward pass written against the public layer fields.
/// Returns the probabilities and every hidden pre-activation.
pub fn reference_forward(model: &ClassifierModel, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let act = model.architecture().activation;
    let layers = model.layers();
    let mut a = x.to_vec();
    let mut pre = Vec::new();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = vec![0.0; layer.outputs];
        for o in 0..layer.outputs {
            let mut s = layer.bias[o];
            for i in 0..layer.inputs {
                s += layer.weights[o * layer.inputs + i] * a[i];
            }
            z[o] = s;
        }
        if l + 1 == layers.len() {
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = e.iter().sum();
            return (e.iter().map(|v| v / total).collect(), pre);
        }
        a = z
            .iter()
            .map(|&v| match act {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
            })
            .collect();
        pre.push(z);
    }
    unreachable!("models have at least one layer")
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = respa::tensor::l2_norm(a).max(respa::tensor::l2_norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
