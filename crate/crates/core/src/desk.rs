//! The default desk-scale task.
//!
//! Four Gaussian blobs in 64 dimensions with class means drawn close
//! together (from `[0.42, 0.58]^64`, noise 0.07), a ReLU MLP surrogate and
//! four held-out targets of different shape. Every model classifies
//! well over 95% of fresh samples, and the L-inf budget of 16/255 is large
//! enough to cross most decision boundaries.
//!
//! Seeds are derived by name from one base seed: `means`, `data`, `eval`, and each
//! model id, so adding a model leaves the others untouched.

use crate::data::{generate_synthetic, SyntheticSpec};
use crate::error::Result;
use crate::evaluation::{evaluation_set, NamedModel};
use crate::models::{train, Activation, Architecture, LabeledSample, TrainConfig};
use crate::parallel::{map_indexed, Execution};
use crate::tensor::derive_seed_for;

pub const DIM: usize = 64;
pub const CLASSES: usize = 4;
pub const TRAIN_PER_CLASS: usize = 250;
pub const EVAL_PER_CLASS: usize = 100;
pub const MEAN_RANGE: (f64, f64) = (0.42, 0.58);
pub const SIGMA: f64 = 0.07;

/// Id of the default surrogate (the first zoo entry).
pub const SURROGATE: &str = "mlp_relu_64";

/// Training-set spec. Class means come from the `means` sub-seed, samples
/// from `data`.
pub fn train_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec::with_random_means(
        DIM,
        CLASSES,
        MEAN_RANGE,
        derive_seed_for(seed, "means"),
        SIGMA,
        TRAIN_PER_CLASS,
        derive_seed_for(seed, "data"),
    )
}

/// Held-out pool: same means, fresh noise.
pub fn eval_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        per_class: EVAL_PER_CLASS,
        ..train_spec(seed).reseeded(derive_seed_for(seed, "eval"))
    }
}

/// Model zoo as `(id, architecture, training settings)`; the training seed
/// is filled in per run.
pub fn zoo() -> Vec<(&'static str, Architecture, TrainConfig)> {
    let surrogate = TrainConfig {
        learning_rate: 0.1,
        epochs: 100,
        batch_size: 32,
        seed: 0,
    };
    let target = TrainConfig {
        learning_rate: 0.05,
        ..surrogate.clone()
    };
    vec![
        (
            SURROGATE,
            Architecture::mlp(DIM, &[64], CLASSES, Activation::Relu),
            surrogate,
        ),
        ("linear", Architecture::linear(DIM, CLASSES), target.clone()),
        (
            "mlp_tanh_32",
            Architecture::mlp(DIM, &[32], CLASSES, Activation::Tanh),
            target.clone(),
        ),
        (
            "mlp_relu_32_16",
            Architecture::mlp(DIM, &[32, 16], CLASSES, Activation::Relu),
            target.clone(),
        ),
        (
            "mlp_tanh_48_24_12",
            Architecture::mlp(DIM, &[48, 24, 12], CLASSES, Activation::Tanh),
            target,
        ),
    ]
}

/// A built task: data, trained zoo (surrogate first) and the evaluation set
/// of pool samples every model gets right.
#[derive(Debug, Clone)]
pub struct DeskTask {
    pub seed: u64,
    pub train: Vec<LabeledSample>,
    pub pool: Vec<LabeledSample>,
    pub models: Vec<NamedModel>,
    pub eval: Vec<LabeledSample>,
}

impl DeskTask {
    pub fn surrogate(&self) -> &NamedModel {
        &self.models[0]
    }

    pub fn targets(&self) -> &[NamedModel] {
        &self.models[1..]
    }
}

/// Generates the data and trains the zoo. Models train concurrently under
/// `Execution::Parallel`; each is still trained single-threaded and the
/// result does not depend on `exec`.
pub fn build(seed: u64, exec: Execution) -> Result<DeskTask> {
    let train_set = generate_synthetic(&train_spec(seed))?;
    let pool = generate_synthetic(&eval_spec(seed))?;
    let entries = zoo();
    let models = map_indexed(exec, &entries, |_, (id, arch, cfg)| {
        let cfg = TrainConfig {
            seed: derive_seed_for(seed, id),
            ..cfg.clone()
        };
        train(arch, &train_set, &cfg).map(|(m, _)| NamedModel::new(*id, m))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = models.iter().map(|m| &m.model).collect();
    let eval = evaluation_set(&refs, &pool)?;
    Ok(DeskTask {
        seed,
        train: train_set,
        pool,
        models,
        eval,
    })
}
