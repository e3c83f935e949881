//! Transfer-based adversarial attacks on small differentiable classifiers.
//!
//! The crate centers on the residual perturbation attack (`respa`): a
//! momentum sign-gradient attack that averages gradients over a random
//! neighborhood and regularizes each neighbor's loss with the loss at a
//! perturbed point, where the perturbation follows the residual between the
//! current gradient and a moving average of past gradients. Baselines
//! (`ifgsm`, `mifgsm`, and a current-gradient flatness variant) share the
//! same stepping code.
//!
//! Modules:
//! * [`tensor`]: vectors, norms, seeded randomness.
//! * [`models`]: MLP / linear softmax classifiers with exact gradients,
//!   training and checkpoints.
//! * [`attacks`]: the attack algorithms.
//! * [`evaluation`]: success rates, transfer matrices, loss surfaces.
//! * [`data`]: synthetic blobs and IDX ingestion.
//! * [`desk`]: the default synthetic task and model zoo.
//! * [`parallel`]: batch execution, rayon-backed behind the `parallel` feature.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod desk;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod parallel;
pub mod tensor;

pub use attacks::{run_attack, Algorithm, AttackConfig, AttackOutcome, AttackState, AttackTrace};
pub use error::{Error, Result};
pub use models::{Architecture, ClassifierModel, LabeledSample, LossOracle};
pub use parallel::Execution;
pub use tensor::{SeededRng, Vector};
