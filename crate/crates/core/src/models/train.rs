use crate::error::{Error, Result};
use crate::tensor::SeededRng;

use super::{Architecture, ClassifierModel, DenseLayer, LabeledSample};

/// Mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 40,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Trains a fresh model with plain mini-batch SGD on the cross-entropy loss.
///
/// Initialization and shuffling both draw from `cfg.seed`, so equal inputs
/// give bit-identical weights. `epochs == 0` returns the initialization.
pub fn train(arch: &Architecture, data: &[LabeledSample], cfg: &TrainConfig) -> Result<(ClassifierModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "learning rate and batch size must be positive".into(),
        ));
    }
    for s in data {
        if s.x().len() != arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim,
                actual: s.x().len(),
            });
        }
        if s.classes() != arch.classes {
            return Err(Error::InvalidSample(format!(
                "sample has {} classes, architecture has {}",
                s.classes(),
                arch.classes
            )));
        }
    }

    let mut model = ClassifierModel::initialize(arch.clone(), cfg.seed)?;
    // Separate stream so the init draws do not depend on the epoch count.
    let mut rng = SeededRng::new(cfg.seed).fork(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads: Vec<DenseLayer> = model
        .layers()
        .iter()
        .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
        .collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.weights.fill(0.0);
                g.bias.fill(0.0);
            }
            for &i in batch {
                total += model.accumulate_param_gradients(data[i].x(), data[i].label(), &mut grads);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (layer, g) in model.layers_mut().iter_mut().zip(&grads) {
                for (w, dw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= step * dw;
                }
                for (b, db) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= step * db;
                }
            }
        }
        let mean = total / data.len() as f64;
        let finite = model
            .layers()
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if !mean.is_finite() || !finite {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }

    let train_accuracy = model.accuracy(data)?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
        },
    ))
}

/// Fisher-Yates.
fn shuffle(order: &mut [usize], rng: &mut SeededRng) {
    for i in (1..order.len()).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
}
