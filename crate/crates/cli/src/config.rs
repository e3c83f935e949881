//! Run configuration.
//!
//! Parsing is strict: unknown keys anywhere are errors. Relative paths are
//! resolved against the directory holding the config file. Budgets
//! (`epsilon`, `alpha`, `rho`) are written on the 0-255 pixel scale and
//! divided by 255 on load.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use respa::attacks::{Algorithm, AttackConfig, PerturbNorm, ReferencePoint};
use respa::desk;
use respa::models::{Activation, Architecture, TrainConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "RESPA_OUTPUT_DIR";

pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub models: Vec<ModelConfig>,
    pub attacks: Vec<AttackEntry>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        #[serde(default = "defaults::dim")]
        dim: usize,
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default = "defaults::mean_low")]
        mean_low: f64,
        #[serde(default = "defaults::mean_high")]
        mean_high: f64,
        #[serde(default = "defaults::sigma")]
        sigma: f64,
        #[serde(default = "defaults::train_per_class")]
        train_per_class: usize,
        #[serde(default = "defaults::eval_per_class")]
        eval_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        eval_images: PathBuf,
        eval_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "defaults::activation")]
    pub activation: String,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
}

/// One attack. Omitted hyperparameters take the library defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    pub algorithm: String,
    pub id: Option<String>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub mu: Option<f64>,
    pub samples: Option<usize>,
    pub theta: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub rho: Option<f64>,
    pub norm: Option<NormName>,
    pub reference: Option<ReferenceName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormName {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceName {
    Sample,
    Iterate,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Surrogate ids; empty means the first model.
    #[serde(default)]
    pub surrogates: Vec<String>,
    /// Target ids; empty means every model.
    #[serde(default)]
    pub targets: Vec<String>,
    /// Number of attack seeds averaged in the summary.
    #[serde(default = "defaults::repeats")]
    pub repeats: usize,
    #[serde(default = "defaults::surface_extent")]
    pub surface_extent: f64,
    #[serde(default = "defaults::surface_steps")]
    pub surface_steps: usize,
    #[serde(default = "defaults::surface_samples")]
    pub surface_samples: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            surrogates: Vec::new(),
            targets: Vec::new(),
            repeats: defaults::repeats(),
            surface_extent: defaults::surface_extent(),
            surface_steps: defaults::surface_steps(),
            surface_samples: defaults::surface_samples(),
        }
    }
}

mod defaults {
    use super::*;

    pub fn dim() -> usize {
        desk::DIM
    }
    pub fn classes() -> usize {
        desk::CLASSES
    }
    pub fn mean_low() -> f64 {
        desk::MEAN_RANGE.0
    }
    pub fn mean_high() -> f64 {
        desk::MEAN_RANGE.1
    }
    pub fn sigma() -> f64 {
        desk::SIGMA
    }
    pub fn train_per_class() -> usize {
        desk::TRAIN_PER_CLASS
    }
    pub fn eval_per_class() -> usize {
        desk::EVAL_PER_CLASS
    }
    pub fn activation() -> String {
        "relu".into()
    }
    pub fn learning_rate() -> f64 {
        TrainConfig::default().learning_rate
    }
    pub fn epochs() -> usize {
        TrainConfig::default().epochs
    }
    pub fn batch_size() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn repeats() -> usize {
        1
    }
    pub fn surface_extent() -> f64 {
        0.1
    }
    pub fn surface_steps() -> usize {
        41
    }
    pub fn surface_samples() -> usize {
        50
    }
}

impl RunConfig {
    /// Reads, parses and validates a config file. Relative paths become
    /// relative to the file's directory; `RESPA_OUTPUT_DIR` replaces
    /// `output_dir` when set.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config { message, .. } => CliError::Config {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    /// Parses and validates config text without touching the filesystem.
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        if let DataConfig::Idx {
            train_images,
            train_labels,
            eval_images,
            eval_labels,
        } = &mut self.data
        {
            for p in [train_images, train_labels, eval_images, eval_labels] {
                join(p);
            }
        }
    }

    fn validate(&self) -> CliResult<()> {
        let invalid = |field: &str, message: String| {
            Err(CliError::Invalid {
                field: field.to_string(),
                message,
            })
        };
        if self.models.is_empty() {
            return invalid("models", "at least one model is required".into());
        }
        if self.attacks.is_empty() {
            return invalid("attacks", "at least one attack is required".into());
        }
        let mut ids = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            check_id(&m.id, &format!("models[{i}].id"))?;
            if !ids.insert(m.id.as_str()) {
                return invalid(&format!("models[{i}].id"), format!("duplicate model id `{}`", m.id));
            }
            // Shape-independent checks; dimensions are known once data loads.
            m.activation_kind()
                .and_then(|act| Architecture::mlp(1, &m.hidden, 2, act).validate())
                .map_err(|e| CliError::Invalid {
                    field: format!("models[{i}]"),
                    message: e.to_string(),
                })?;
            if !(m.learning_rate > 0.0) || m.epochs == 0 || m.batch_size == 0 {
                return invalid(
                    &format!("models[{i}]"),
                    "learning_rate, epochs and batch_size must be positive".into(),
                );
            }
        }
        let mut attack_ids = BTreeSet::new();
        for (i, a) in self.attacks.iter().enumerate() {
            let field = format!("attacks[{i}]");
            let (id, _, cfg) = a.resolve(0).map_err(|e| CliError::Invalid {
                field: field.clone(),
                message: e.to_string(),
            })?;
            check_id(&id, &format!("{field}.id"))?;
            cfg.validate().map_err(|e| CliError::Invalid {
                field: field.clone(),
                message: e.to_string(),
            })?;
            if !attack_ids.insert(id.clone()) {
                return invalid(&field, format!("duplicate attack id `{id}`"));
            }
        }
        for (list, field) in [
            (&self.evaluation.surrogates, "evaluation.surrogates"),
            (&self.evaluation.targets, "evaluation.targets"),
        ] {
            if let Some(missing) = list.iter().find(|id| !ids.contains(id.as_str())) {
                return invalid(field, format!("unknown model `{missing}`"));
            }
        }
        let ev = &self.evaluation;
        if ev.repeats == 0 {
            return invalid("evaluation.repeats", "must be at least 1".into());
        }
        if ev.surface_steps < 3 || ev.surface_steps.is_multiple_of(2) {
            return invalid("evaluation.surface_steps", "must be odd and at least 3".into());
        }
        if !(ev.surface_extent >= 0.0) {
            return invalid("evaluation.surface_extent", "must be non-negative".into());
        }
        if let DataConfig::Synthetic {
            dim,
            classes,
            mean_low,
            mean_high,
            sigma,
            train_per_class,
            eval_per_class,
        } = &self.data
        {
            if *dim == 0 || *classes < 2 || *train_per_class == 0 || *eval_per_class == 0 {
                return invalid(
                    "data",
                    "dim, classes and sample counts must be positive (classes >= 2)".into(),
                );
            }
            if !(0.0 <= *mean_low && mean_low < mean_high && *mean_high <= 1.0) {
                return invalid("data", "need 0 <= mean_low < mean_high <= 1".into());
            }
            if !(*sigma > 0.0) {
                return invalid("data.sigma", "must be positive".into());
            }
        }
        Ok(())
    }

    pub fn model(&self, id: &str) -> CliResult<&ModelConfig> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| CliError::UnknownId {
                kind: "model",
                id: id.to_string(),
            })
    }

    pub fn surrogate_ids(&self) -> Vec<String> {
        if self.evaluation.surrogates.is_empty() {
            vec![self.models[0].id.clone()]
        } else {
            self.evaluation.surrogates.clone()
        }
    }

    pub fn target_ids(&self) -> Vec<String> {
        if self.evaluation.targets.is_empty() {
            self.models.iter().map(|m| m.id.clone()).collect()
        } else {
            self.evaluation.targets.clone()
        }
    }

    /// Attacks as `(id, algorithm, config)`, with the seed for `repeat`.
    pub fn attacks(&self, repeat: usize) -> CliResult<Vec<(String, Algorithm, AttackConfig)>> {
        self.attacks
            .iter()
            .map(|a| a.resolve(attack_seed(self.seed, repeat)))
            .collect()
    }
}

/// Base attack seed of repeat `r`. Shared by every attack, so all
/// algorithms see the same neighborhood draws for a given sample.
pub fn attack_seed(global: u64, repeat: usize) -> u64 {
    respa::tensor::derive_seed(respa::tensor::derive_seed_for(global, "attack"), repeat as u64)
}

fn check_id(id: &str, field: &str) -> CliResult<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(CliError::Invalid {
            field: field.to_string(),
            message: format!("`{id}` must be non-empty and use only [A-Za-z0-9_.-]"),
        })
    }
}

impl AttackEntry {
    /// Applies overrides to the defaults and converts pixel units.
    pub fn resolve(&self, seed: u64) -> CliResult<(String, Algorithm, AttackConfig)> {
        let algorithm: Algorithm = self.algorithm.parse().map_err(|_| CliError::UnknownId {
            kind: "attack",
            id: self.algorithm.clone(),
        })?;
        let d = AttackConfig::default();
        let cfg = AttackConfig {
            epsilon: self.epsilon.map_or(d.epsilon, |v| v / PIXEL_SCALE),
            alpha: self.alpha.map_or(d.alpha, |v| v / PIXEL_SCALE),
            iterations: self.iterations.unwrap_or(d.iterations),
            mu: self.mu.unwrap_or(d.mu),
            samples: self.samples.unwrap_or(d.samples),
            theta: self.theta.unwrap_or(d.theta),
            gamma: self.gamma.unwrap_or(d.gamma),
            beta: self.beta.unwrap_or(d.beta),
            rho: self.rho.map(|v| v / PIXEL_SCALE),
            norm: match self.norm {
                Some(NormName::L1) => PerturbNorm::L1,
                Some(NormName::L2) | None => PerturbNorm::L2,
            },
            reference: match self.reference {
                Some(ReferenceName::Iterate) => ReferencePoint::Iterate,
                Some(ReferenceName::Sample) | None => ReferencePoint::PerSample,
            },
            seed,
        };
        let id = self.id.clone().unwrap_or_else(|| algorithm.id().to_string());
        Ok((id, algorithm, cfg))
    }
}

impl ModelConfig {
    pub fn activation_kind(&self) -> respa::Result<Activation> {
        self.activation.parse()
    }

    pub fn architecture(&self, input_dim: usize, classes: usize) -> respa::Result<Architecture> {
        let arch = Architecture::mlp(input_dim, &self.hidden, classes, self.activation_kind()?);
        arch.validate()?;
        Ok(arch)
    }

    pub fn train_config(&self, global_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: respa::tensor::derive_seed_for(global_seed, &self.id),
        }
    }
}
