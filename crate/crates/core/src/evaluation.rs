//! Attack success rates, surrogate-to-target transfer matrices, and
//! two-direction loss-surface probes.

use std::fmt::Write as _;

use crate::attacks::{run_attack, Algorithm, AttackConfig, AttackOutcome};
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, LabeledSample, LossOracle};
use crate::parallel::{map_indexed, map_range, Execution};
use crate::tensor::{derive_seed, derive_seed_for, dot, l2_norm, SeededRng, Vector};

/// Number of pairs whose target prediction differs between the clean and
/// the adversarial input.
pub fn count_flips(target: &ClassifierModel, pairs: &[(Vector, Vector)], exec: Execution) -> Result<usize> {
    let flips = map_indexed(exec, pairs, |_, (x, x_adv)| -> Result<bool> {
        Ok(target.predict(x)? != target.predict(x_adv)?)
    });
    let mut count = 0usize;
    for f in flips {
        count += usize::from(f?);
    }
    Ok(count)
}

/// Fraction of pairs whose target prediction differs between the clean and
/// the adversarial input. Ground-truth labels play no part.
pub fn attack_success_rate(target: &ClassifierModel, pairs: &[(Vector, Vector)], exec: Execution) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list"));
    }
    Ok(count_flips(target, pairs, exec)? as f64 / pairs.len() as f64)
}

/// Samples that every model classifies correctly.
pub fn evaluation_set(models: &[&ClassifierModel], data: &[LabeledSample]) -> Result<Vec<LabeledSample>> {
    let mut kept = Vec::new();
    'samples: for s in data {
        for m in models {
            if m.predict(s.x())? != s.label() {
                continue 'samples;
            }
        }
        kept.push(s.clone());
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedModel {
    pub id: String,
    pub model: ClassifierModel,
}

impl NamedModel {
    pub fn new(id: impl Into<String>, model: ClassifierModel) -> Self {
        NamedModel { id: id.into(), model }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub id: String,
    pub algorithm: Algorithm,
    pub config: AttackConfig,
}

impl AttackSpec {
    pub fn new(algorithm: Algorithm, config: AttackConfig) -> Self {
        AttackSpec {
            id: algorithm.id().to_string(),
            algorithm,
            config,
        }
    }
}

/// Seed of the attack run on sample `index` crafted on `surrogate`.
///
/// Attacks share it, so every algorithm sees the same neighborhood draws
/// for a given sample, and adding models or attacks leaves it unchanged.
pub fn sample_seed(base: u64, surrogate: &str, index: usize) -> u64 {
    derive_seed(derive_seed_for(base, surrogate), index as u64)
}

/// Attacks every sample, in parallel when `exec` allows.
pub fn attack_batch(
    algorithm: Algorithm,
    surrogate: &NamedModel,
    samples: &[LabeledSample],
    cfg: &AttackConfig,
    exec: Execution,
) -> Result<Vec<AttackOutcome>> {
    map_indexed(exec, samples, |i, s| {
        let run_cfg = cfg.with_seed(sample_seed(cfg.seed, &surrogate.id, i));
        run_attack(algorithm, &surrogate.model, s, &run_cfg)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub target: String,
    pub asr: f64,
    pub flipped: usize,
    pub white_box: bool,
}

/// ASR of one (surrogate, attack) pair on every target.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub surrogate: String,
    pub attack: String,
    pub seed: u64,
    pub samples: usize,
    pub cells: Vec<TransferCell>,
}

impl TransferReport {
    pub fn white_box_asr(&self) -> Option<f64> {
        self.cells.iter().find(|c| c.white_box).map(|c| c.asr)
    }

    /// Mean ASR over held-out (non-surrogate) targets.
    pub fn mean_transfer_asr(&self) -> Option<f64> {
        let held: Vec<f64> = self.cells.iter().filter(|c| !c.white_box).map(|c| c.asr).collect();
        (!held.is_empty()).then(|| held.iter().sum::<f64>() / held.len() as f64)
    }

    pub fn asr_on(&self, target: &str) -> Option<f64> {
        self.cells.iter().find(|c| c.target == target).map(|c| c.asr)
    }
}

fn check_compatible(models: &[&NamedModel]) -> Result<()> {
    let first = &models[0].model;
    for m in &models[1..] {
        let (a, b) = (first.architecture(), m.model.architecture());
        if a.input_dim != b.input_dim {
            return Err(Error::DimensionMismatch {
                expected: a.input_dim,
                actual: b.input_dim,
            });
        }
        if a.classes != b.classes {
            return Err(Error::InvalidConfig(format!(
                "model `{}` has {} classes, `{}` has {}",
                models[0].id, a.classes, m.id, b.classes
            )));
        }
    }
    Ok(())
}

/// Scores pre-computed adversarial examples against every target.
pub fn score_transfer(
    surrogate: &str,
    attack: &str,
    seed: u64,
    pairs: &[(Vector, Vector)],
    targets: &[&NamedModel],
    exec: Execution,
) -> Result<TransferReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list"));
    }
    let mut cells = Vec::with_capacity(targets.len());
    for t in targets {
        let flipped = count_flips(&t.model, pairs, exec)?;
        cells.push(TransferCell {
            target: t.id.clone(),
            asr: flipped as f64 / pairs.len() as f64,
            flipped,
            white_box: t.id == surrogate,
        });
    }
    Ok(TransferReport {
        surrogate: surrogate.to_string(),
        attack: attack.to_string(),
        seed,
        samples: pairs.len(),
        cells,
    })
}

/// For each surrogate and attack, crafts adversarial examples once and
/// measures ASR on every target plus the surrogate itself (the white-box
/// cell). `dataset` should already be filtered with [`evaluation_set`].
pub fn transfer_matrix(
    surrogates: &[NamedModel],
    targets: &[NamedModel],
    attacks: &[AttackSpec],
    dataset: &[LabeledSample],
    exec: Execution,
) -> Result<Vec<TransferReport>> {
    if surrogates.is_empty() || dataset.is_empty() {
        return Err(Error::Empty("surrogates or dataset"));
    }
    let all: Vec<&NamedModel> = surrogates.iter().chain(targets).collect();
    check_compatible(&all)?;
    if let Some(s) = dataset
        .iter()
        .find(|s| s.x().len() != all[0].model.architecture().input_dim)
    {
        return Err(Error::DimensionMismatch {
            expected: all[0].model.architecture().input_dim,
            actual: s.x().len(),
        });
    }

    let mut reports = Vec::new();
    for surrogate in surrogates {
        let mut columns: Vec<&NamedModel> = vec![surrogate];
        columns.extend(targets.iter().filter(|t| t.id != surrogate.id));
        for attack in attacks {
            let outcomes = attack_batch(attack.algorithm, surrogate, dataset, &attack.config, exec)?;
            let pairs: Vec<(Vector, Vector)> = dataset
                .iter()
                .zip(outcomes)
                .map(|(s, o)| (s.x().clone(), o.adversarial))
                .collect();
            reports.push(score_transfer(
                &surrogate.id,
                &attack.id,
                attack.config.seed,
                &pairs,
                &columns,
                exec,
            )?);
        }
    }
    Ok(reports)
}

/// CSV with one row per (surrogate, attack) and one column per target.
/// White-box cells carry a trailing `*`.
pub fn transfer_table(reports: &[TransferReport]) -> String {
    let mut targets: Vec<&str> = Vec::new();
    for r in reports {
        for c in &r.cells {
            if !targets.contains(&c.target.as_str()) {
                targets.push(&c.target);
            }
        }
    }
    let mut out = String::from("surrogate,attack");
    for t in &targets {
        write!(out, ",{t}").unwrap();
    }
    out.push_str(",mean_transfer\n");
    for r in reports {
        write!(out, "{},{}", r.surrogate, r.attack).unwrap();
        for t in &targets {
            match r.cells.iter().find(|c| c.target == *t) {
                Some(c) => write!(out, ",{:.4}{}", c.asr, if c.white_box { "*" } else { "" }).unwrap(),
                None => out.push(','),
            }
        }
        match r.mean_transfer_asr() {
            Some(m) => writeln!(out, ",{m:.4}").unwrap(),
            None => out.push_str(",\n"),
        }
    }
    out
}

/// Loss values on a square grid spanned by two orthonormal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub u: Vector,
    pub v: Vector,
    pub extent: f64,
    pub steps: usize,
    /// Row-major: `values[i * steps + j]` is the loss at `x + a_i u + b_j v`.
    pub values: Vec<f64>,
}

impl SurfaceGrid {
    /// Offset of grid index `i` along either axis; exactly 0 at the center.
    pub fn offset(&self, i: usize) -> f64 {
        grid_offset(self.extent, self.steps, i)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.steps + j]
    }

    pub fn center(&self) -> f64 {
        let c = self.steps / 2;
        self.at(c, c)
    }

    /// CSV matrix: header row of `b` offsets, then one row per `a` offset.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("a\\b");
        for j in 0..self.steps {
            write!(out, ",{:?}", self.offset(j)).unwrap();
        }
        out.push('\n');
        for i in 0..self.steps {
            write!(out, "{:?}", self.offset(i)).unwrap();
            for j in 0..self.steps {
                write!(out, ",{:?}", self.at(i, j)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn grid_offset(extent: f64, steps: usize, i: usize) -> f64 {
    let half = (steps / 2) as f64;
    extent * (i as f64 - half) / half
}

/// Maximum number of direction draws before giving up.
pub const MAX_DIRECTION_DRAWS: usize = 16;

fn gaussian_direction(rng: &mut SeededRng, dim: usize) -> Vector {
    (0..dim).map(|_| rng.standard_normal()).collect()
}

fn normalized(v: Vector) -> Option<Vector> {
    let n = l2_norm(&v);
    (n > 1e-8).then(|| v.scaled(1.0 / n))
}

/// Two Gram-Schmidt-orthonormalized Gaussian directions.
pub fn random_directions(rng: &mut SeededRng, dim: usize) -> Result<(Vector, Vector)> {
    for _ in 0..MAX_DIRECTION_DRAWS {
        let Some(u) = normalized(gaussian_direction(rng, dim)) else {
            continue;
        };
        let mut v = gaussian_direction(rng, dim);
        let norm_before = l2_norm(&v);
        // Two projection passes keep u.v at rounding level.
        for _ in 0..2 {
            let p = dot(&u, &v);
            v.add_scaled(-p, &u);
        }
        if l2_norm(&v) <= 1e-6 * norm_before {
            continue;
        }
        if let Some(v) = normalized(v) {
            return Ok((u, v));
        }
    }
    Err(Error::DegenerateDirections(MAX_DIRECTION_DRAWS))
}

/// Evaluates the loss on a `steps x steps` grid over
/// `x_adv + a u + b v`, `a, b` in `[-extent, extent]`.
pub fn loss_surface<O: LossOracle + ?Sized>(
    oracle: &O,
    x_adv: &[f64],
    label: usize,
    extent: f64,
    steps: usize,
    rng: &mut SeededRng,
    exec: Execution,
) -> Result<SurfaceGrid> {
    if steps < 3 || steps.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "surface steps must be odd and at least 3, got {steps}"
        )));
    }
    if !(extent >= 0.0) {
        return Err(Error::InvalidConfig("surface extent must be non-negative".into()));
    }
    if x_adv.len() != oracle.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.input_dim(),
            actual: x_adv.len(),
        });
    }
    let (u, v) = random_directions(rng, x_adv.len())?;
    let center = steps / 2;
    let values = map_range(exec, steps * steps, |k| {
        let (i, j) = (k / steps, k % steps);
        if i == center && j == center {
            return oracle.loss(x_adv, label);
        }
        let a = grid_offset(extent, steps, i);
        let b = grid_offset(extent, steps, j);
        let point: Vec<f64> = x_adv
            .iter()
            .zip(u.iter().zip(v.iter()))
            .map(|(x, (ui, vi))| x + a * ui + b * vi)
            .collect();
        oracle.loss(&point, label)
    });
    Ok(SurfaceGrid {
        u,
        v,
        extent,
        steps,
        values,
    })
}

/// Largest loss increase over the grid relative to the center. Lower means
/// the probed neighborhood is flatter.
pub fn sharpness_score(grid: &SurfaceGrid) -> f64 {
    let c = grid.center();
    grid.values.iter().map(|v| v - c).fold(f64::NEG_INFINITY, f64::max)
}

/// Mean of `J(cell) - J(center)` over the grid.
pub fn mean_gap(grid: &SurfaceGrid) -> f64 {
    let c = grid.center();
    grid.values.iter().map(|v| v - c).sum::<f64>() / grid.values.len() as f64
}
