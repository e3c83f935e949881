//! Subcommand implementations.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! models/<id>.ckpt                          checkpoints
//! models/manifest.sha256                    `<sha256>  <file>` per checkpoint
//! attacks/eval_set.csv                      clean samples every model gets right
//! attacks/<surrogate>/<attack>/r<k>/adversarial.csv
//! attacks/<surrogate>/<attack>/r<k>/traces/<index>.csv
//! eval/transfer_r<k>.csv                    transfer table per attack seed
//! eval/transfer.csv                         seed-averaged table
//! eval/summary.toml
//! sweep/<param>.csv
//! surface/<surrogate>/<attack>/grid_<index>.csv
//! surface/<surrogate>/<attack>/sharpness.csv
//! surface/summary.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use respa::attacks::{check_budget, Algorithm, AttackConfig};
use respa::data::{generate_synthetic, load_idx, SyntheticSpec};
use respa::evaluation::{
    attack_batch, evaluation_set, loss_surface, mean_gap, score_transfer, sharpness_score, transfer_table, NamedModel,
    TransferCell, TransferReport,
};
use respa::models::checkpoint::{from_text, to_text};
use respa::models::train;
use respa::tensor::{derive_seed, derive_seed_for};
use respa::{Execution, LabeledSample, SeededRng, Vector};
use serde::Serialize;

use crate::config::{attack_seed, DataConfig, RunConfig, PIXEL_SCALE};
use crate::error::{CliError, CliResult};
use crate::output::{parse_vectors_csv, read, read_text, samples_to_rows, sha256_hex, vectors_csv, OutputWriter};

pub const MANIFEST: &str = "models/manifest.sha256";
pub const EVAL_SET: &str = "attacks/eval_set.csv";

/// Shared state of one invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub exec: Execution,
    pub out: OutputWriter,
}

impl Context {
    pub fn new(cfg: RunConfig, force: bool, exec: Execution) -> Self {
        let out = OutputWriter::new(cfg.output_dir.clone(), force);
        Context { cfg, exec, out }
    }
}

/// Training and evaluation-pool samples.
pub fn load_data(cfg: &RunConfig) -> CliResult<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    match &cfg.data {
        DataConfig::Synthetic {
            dim,
            classes,
            mean_low,
            mean_high,
            sigma,
            train_per_class,
            eval_per_class,
        } => {
            let spec = SyntheticSpec::with_random_means(
                *dim,
                *classes,
                (*mean_low, *mean_high),
                derive_seed_for(cfg.seed, "means"),
                *sigma,
                *train_per_class,
                derive_seed_for(cfg.seed, "data"),
            );
            let pool_spec = SyntheticSpec {
                per_class: *eval_per_class,
                ..spec.reseeded(derive_seed_for(cfg.seed, "eval"))
            };
            Ok((generate_synthetic(&spec)?, generate_synthetic(&pool_spec)?))
        }
        DataConfig::Idx {
            train_images,
            train_labels,
            eval_images,
            eval_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let pool = load_idx(eval_images, eval_labels)?;
            let shape = |s: &[LabeledSample]| s.first().map(|s| (s.x().len(), s.classes()));
            match (shape(&train), shape(&pool)) {
                (Some(a), Some(b)) if a == b => Ok((train, pool)),
                (Some(_), Some(_)) => Err(CliError::Invalid {
                    field: "data".into(),
                    message: "training and evaluation files differ in dimension or class count".into(),
                }),
                _ => Err(CliError::Invalid {
                    field: "data".into(),
                    message: "IDX files contain no samples".into(),
                }),
            }
        }
    }
}

fn data_shape(train: &[LabeledSample]) -> (usize, usize) {
    (train[0].x().len(), train[0].classes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

fn checkpoint_file(id: &str) -> String {
    format!("{id}.ckpt")
}

/// Trains every configured model and writes checkpoints plus the manifest.
pub fn cmd_train(ctx: &mut Context) -> CliResult<Vec<ManifestEntry>> {
    let (train_set, _) = load_data(&ctx.cfg)?;
    let (dim, classes) = data_shape(&train_set);
    let cfg = &ctx.cfg;
    let jobs = cfg
        .models
        .iter()
        .map(|m| Ok((m, m.architecture(dim, classes)?, m.train_config(cfg.seed))))
        .collect::<respa::Result<Vec<_>>>()?;
    let trained = respa::parallel::map_indexed(ctx.exec, &jobs, |_, (m, arch, tc)| {
        train(arch, &train_set, tc).map(|(model, report)| (m.id.clone(), model, report))
    });

    let mut files = Vec::new();
    for result in trained {
        let (id, model, report) = result?;
        info!("trained {id}: training accuracy {:.4}", report.train_accuracy);
        files.push((checkpoint_file(&id), to_text(&model).into_bytes()));
    }
    let entries: Vec<ManifestEntry> = files
        .iter()
        .map(|(file, bytes)| ManifestEntry {
            file: file.clone(),
            sha256: sha256_hex(bytes),
        })
        .collect();
    let manifest: String = entries.iter().map(|e| format!("{}  {}\n", e.sha256, e.file)).collect();

    let rels: Vec<PathBuf> = files.iter().map(|(f, _)| Path::new("models").join(f)).collect();
    let mut all: Vec<(&Path, &[u8])> = rels
        .iter()
        .map(PathBuf::as_path)
        .zip(files.iter().map(|(_, b)| b.as_slice()))
        .collect();
    all.push((Path::new(MANIFEST), manifest.as_bytes()));
    ctx.out.preflight(all.iter().copied())?;
    for (rel, bytes) in all {
        ctx.out.write(rel, bytes)?;
    }
    Ok(entries)
}

fn read_manifest(ctx: &Context) -> CliResult<BTreeMap<String, String>> {
    let path = ctx.out.path(MANIFEST);
    if !path.exists() {
        return Err(CliError::MissingDependency {
            what: "model manifest",
            step: "train",
            path,
        });
    }
    let text = read_text(&path)?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let (hash, file) = line.split_once("  ").ok_or_else(|| CliError::Malformed {
            path: path.clone(),
            line: n + 1,
            message: "expected `<sha256>  <file>`".into(),
        })?;
        map.insert(file.to_string(), hash.to_string());
    }
    Ok(map)
}

/// Loads every configured model, checking each checkpoint against the
/// manifest.
pub fn load_models(ctx: &Context) -> CliResult<Vec<NamedModel>> {
    let manifest = read_manifest(ctx)?;
    let mut models = Vec::with_capacity(ctx.cfg.models.len());
    for m in &ctx.cfg.models {
        let file = checkpoint_file(&m.id);
        let path = ctx.out.path(Path::new("models").join(&file));
        let Some(expected) = manifest.get(&file) else {
            return Err(CliError::MissingDependency {
                what: "checkpoint",
                step: "train",
                path,
            });
        };
        if !path.exists() {
            return Err(CliError::MissingDependency {
                what: "checkpoint",
                step: "train",
                path,
            });
        }
        let bytes = read(&path)?;
        if &sha256_hex(&bytes) != expected {
            return Err(CliError::StaleCheckpoint { path });
        }
        let text = String::from_utf8(bytes).map_err(|_| CliError::StaleCheckpoint { path: path.clone() })?;
        models.push(NamedModel::new(
            m.id.clone(),
            from_text(&text).map_err(respa::Error::from)?,
        ));
    }
    Ok(models)
}

fn pick<'a>(models: &'a [NamedModel], ids: &[String]) -> CliResult<Vec<&'a NamedModel>> {
    ids.iter()
        .map(|id| {
            models.iter().find(|m| &m.id == id).ok_or_else(|| CliError::UnknownId {
                kind: "model",
                id: id.clone(),
            })
        })
        .collect()
}

fn select<T: Clone>(
    all: Vec<T>,
    wanted: Option<&str>,
    kind: &'static str,
    id_of: impl Fn(&T) -> &str,
) -> CliResult<Vec<T>> {
    match wanted {
        None => Ok(all),
        Some(w) => {
            let found: Vec<T> = all.iter().filter(|x| id_of(x) == w).cloned().collect();
            if found.is_empty() {
                Err(CliError::UnknownId {
                    kind,
                    id: w.to_string(),
                })
            } else {
                Ok(found)
            }
        }
    }
}

fn run_dir(surrogate: &str, attack: &str, repeat: usize) -> PathBuf {
    Path::new("attacks")
        .join(surrogate)
        .join(attack)
        .join(format!("r{repeat}"))
}

/// Summary of one `attack` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRun {
    pub surrogate: String,
    pub attack: String,
    pub repeat: usize,
    pub adversarial: Vec<Vector>,
}

/// Crafts adversarial sets for the selected surrogates and attacks over
/// every repeat. Budgets are re-checked for the whole batch before any
/// file is written.
pub fn cmd_attack(ctx: &mut Context, surrogate: Option<&str>, attack: Option<&str>) -> CliResult<Vec<AttackRun>> {
    let models = load_models(ctx)?;
    let (_, pool) = load_data(&ctx.cfg)?;
    let refs: Vec<_> = models.iter().map(|m| &m.model).collect();
    let eval = evaluation_set(&refs, &pool)?;
    if eval.is_empty() {
        return Err(respa::Error::Empty("evaluation set (no sample is classified correctly by every model)").into());
    }
    info!("evaluation set: {} of {} samples", eval.len(), pool.len());
    let surrogates = select(ctx.cfg.surrogate_ids(), surrogate, "surrogate", |s| s.as_str())?;
    let surrogates = pick(&models, &surrogates)?;

    let mut runs = Vec::new();
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    files.push((
        PathBuf::from(EVAL_SET),
        vectors_csv(samples_to_rows(&eval), eval[0].x().len()).into_bytes(),
    ));
    for repeat in 0..ctx.cfg.evaluation.repeats {
        let attacks = select(ctx.cfg.attacks(repeat)?, attack, "attack", |a| a.0.as_str())?;
        for s in &surrogates {
            for (attack_id, algorithm, acfg) in &attacks {
                let outcomes = attack_batch(*algorithm, s, &eval, acfg, ctx.exec)?;
                for (o, sample) in outcomes.iter().zip(&eval) {
                    check_budget(&o.adversarial, sample.x(), acfg.epsilon, acfg.iterations)?;
                }
                let dir = run_dir(&s.id, attack_id, repeat);
                let rows = outcomes
                    .iter()
                    .zip(&eval)
                    .enumerate()
                    .map(|(i, (o, sample))| (i, sample.label(), o.adversarial.clone()));
                files.push((
                    dir.join("adversarial.csv"),
                    vectors_csv(rows, eval[0].x().len()).into_bytes(),
                ));
                for (i, o) in outcomes.iter().enumerate() {
                    files.push((
                        dir.join("traces").join(format!("{i}.csv")),
                        o.trace.to_delimited().into_bytes(),
                    ));
                }
                info!("attacked {} with {attack_id} (repeat {repeat})", s.id);
                runs.push(AttackRun {
                    surrogate: s.id.clone(),
                    attack: attack_id.clone(),
                    repeat,
                    adversarial: outcomes.into_iter().map(|o| o.adversarial).collect(),
                });
            }
        }
    }
    write_all(&mut ctx.out, &files)?;
    Ok(runs)
}

fn write_all(out: &mut OutputWriter, files: &[(PathBuf, Vec<u8>)]) -> CliResult<()> {
    out.preflight(files.iter().map(|(p, b)| (p.as_path(), b.as_slice())))?;
    for (p, b) in files {
        out.write(p, b)?;
    }
    Ok(())
}

fn read_eval_set(ctx: &Context) -> CliResult<Vec<(usize, usize, Vector)>> {
    let path = ctx.out.path(EVAL_SET);
    if !path.exists() {
        return Err(CliError::MissingDependency {
            what: "evaluation set",
            step: "attack",
            path,
        });
    }
    parse_vectors_csv(&path, &read_text(&path)?)
}

fn read_adversarial(
    ctx: &Context,
    surrogate: &str,
    attack: &str,
    repeat: usize,
    expected: usize,
) -> CliResult<Vec<(usize, usize, Vector)>> {
    let path = ctx.out.path(run_dir(surrogate, attack, repeat).join("adversarial.csv"));
    if !path.exists() {
        return Err(CliError::MissingDependency {
            what: "adversarial set",
            step: "attack",
            path,
        });
    }
    let rows = parse_vectors_csv(&path, &read_text(&path)?)?;
    if rows.len() != expected {
        return Err(CliError::Malformed {
            path,
            line: rows.len() + 1,
            message: format!(
                "expected {expected} rows to match the evaluation set, found {}",
                rows.len()
            ),
        });
    }
    Ok(rows)
}

/// Summary row for one (surrogate, attack), averaged over repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub surrogate: String,
    pub attack: String,
    pub white_box_asr: f64,
    pub mean_transfer_asr: Option<f64>,
    pub targets: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub repeats: usize,
    pub samples: usize,
    /// ASR counts a sample when the target's prediction on the adversarial
    /// input differs from its prediction on the clean input.
    pub metric: String,
    pub rows: Vec<SummaryRow>,
}

/// Reports per repeat plus the repeat-averaged reports.
fn transfer_reports(
    ctx: &Context,
    models: &[NamedModel],
    clean: &[(usize, usize, Vector)],
) -> CliResult<(Vec<Vec<TransferReport>>, Vec<TransferReport>)> {
    let target_ids = ctx.cfg.target_ids();
    let targets = pick(models, &target_ids)?;
    let surrogates = pick(models, &ctx.cfg.surrogate_ids())?;
    let mut per_repeat = Vec::new();
    for repeat in 0..ctx.cfg.evaluation.repeats {
        let mut reports = Vec::new();
        for s in &surrogates {
            let mut columns = vec![*s];
            columns.extend(targets.iter().copied().filter(|t| t.id != s.id));
            for (attack_id, _, acfg) in ctx.cfg.attacks(repeat)? {
                let adv = read_adversarial(ctx, &s.id, &attack_id, repeat, clean.len())?;
                let pairs: Vec<(Vector, Vector)> = clean
                    .iter()
                    .zip(adv)
                    .map(|((_, _, x), (_, _, a))| (x.clone(), a))
                    .collect();
                reports.push(score_transfer(
                    &s.id, &attack_id, acfg.seed, &pairs, &columns, ctx.exec,
                )?);
            }
        }
        per_repeat.push(reports);
    }
    let averaged = average_reports(&per_repeat);
    Ok((per_repeat, averaged))
}

/// Pools flips across repeats; with equal sample counts the pooled rate is
/// the mean of the per-repeat rates.
fn average_reports(per_repeat: &[Vec<TransferReport>]) -> Vec<TransferReport> {
    let mut out = per_repeat[0].clone();
    for (k, report) in out.iter_mut().enumerate() {
        report.samples = per_repeat.iter().map(|r| r[k].samples).sum();
        for (j, cell) in report.cells.iter_mut().enumerate() {
            cell.flipped = per_repeat.iter().map(|r| r[k].cells[j].flipped).sum();
            cell.asr = cell.flipped as f64 / report.samples as f64;
        }
        report.seed = 0;
    }
    out
}

fn summarize(cfg: &RunConfig, reports: &[TransferReport], samples: usize) -> Summary {
    Summary {
        seed: cfg.seed,
        repeats: cfg.evaluation.repeats,
        samples,
        metric: "prediction flip rate (clean vs adversarial) per target".into(),
        rows: reports
            .iter()
            .map(|r| SummaryRow {
                surrogate: r.surrogate.clone(),
                attack: r.attack.clone(),
                white_box_asr: r.white_box_asr().unwrap_or(f64::NAN),
                mean_transfer_asr: r.mean_transfer_asr(),
                targets: r
                    .cells
                    .iter()
                    .map(|c: &TransferCell| (c.target.clone(), c.asr))
                    .collect(),
            })
            .collect(),
    }
}

/// Scores stored adversarial sets on every target and writes the tables and
/// summary.
pub fn cmd_eval(ctx: &mut Context) -> CliResult<Summary> {
    let models = load_models(ctx)?;
    let clean = read_eval_set(ctx)?;
    let (per_repeat, averaged) = transfer_reports(ctx, &models, &clean)?;
    let summary = summarize(&ctx.cfg, &averaged, clean.len());
    let mut files = Vec::new();
    for (k, reports) in per_repeat.iter().enumerate() {
        files.push((
            PathBuf::from(format!("eval/transfer_r{k}.csv")),
            transfer_table(reports).into_bytes(),
        ));
    }
    files.push((
        PathBuf::from("eval/transfer.csv"),
        transfer_table(&averaged).into_bytes(),
    ));
    let toml = toml::to_string(&summary).expect("summary serializes");
    files.push((PathBuf::from("eval/summary.toml"), toml.into_bytes()));
    write_all(&mut ctx.out, &files)?;
    Ok(summary)
}

/// Attack parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Samples,
    Theta,
    Gamma,
    Rho,
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "N" | "n" | "samples" => Ok(SweepParam::Samples),
            "theta" => Ok(SweepParam::Theta),
            "gamma" => Ok(SweepParam::Gamma),
            "rho" => Ok(SweepParam::Rho),
            other => Err(CliError::UnknownId {
                kind: "sweep parameter (expected beta, N, theta, gamma or rho)",
                id: other.to_string(),
            }),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Samples => "N",
            SweepParam::Theta => "theta",
            SweepParam::Gamma => "gamma",
            SweepParam::Rho => "rho",
        }
    }

    /// Sets the parameter; `rho` is given in pixel units.
    pub fn apply(self, cfg: &AttackConfig, value: f64) -> CliResult<AttackConfig> {
        let mut c = cfg.clone();
        match self {
            SweepParam::Beta => c.beta = value,
            SweepParam::Theta => c.theta = value,
            SweepParam::Gamma => c.gamma = value,
            SweepParam::Rho => c.rho = Some(value / PIXEL_SCALE),
            SweepParam::Samples => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(CliError::Invalid {
                        field: "N".into(),
                        message: format!("{value} is not a positive integer"),
                    });
                }
                c.samples = value as usize;
            }
        }
        c.validate().map_err(|e| CliError::Invalid {
            field: self.name().into(),
            message: format!("value {value}: {e}"),
        })?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: TransferReport,
}

/// Re-runs the transfer protocol for each value of one ResPA parameter.
/// Every `respa` attack in the config is swept (the default one if none is
/// configured); the result has one row per value, surrogate and attack.
pub fn cmd_sweep(ctx: &mut Context, param: SweepParam, values: &[f64]) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Invalid {
            field: "values".into(),
            message: "at least one value is required".into(),
        });
    }
    let models = load_models(ctx)?;
    let (_, pool) = load_data(&ctx.cfg)?;
    let refs: Vec<_> = models.iter().map(|m| &m.model).collect();
    let eval = evaluation_set(&refs, &pool)?;
    if eval.is_empty() {
        return Err(respa::Error::Empty("evaluation set").into());
    }
    let targets = pick(&models, &ctx.cfg.target_ids())?;
    let surrogates = pick(&models, &ctx.cfg.surrogate_ids())?;

    let respa_attacks = |repeat: usize| -> CliResult<Vec<(String, AttackConfig)>> {
        let mut found: Vec<(String, AttackConfig)> = ctx
            .cfg
            .attacks(repeat)?
            .into_iter()
            .filter(|(_, alg, _)| *alg == Algorithm::Respa)
            .map(|(id, _, c)| (id, c))
            .collect();
        if found.is_empty() {
            found.push((
                "respa".into(),
                AttackConfig::default().with_seed(attack_seed(ctx.cfg.seed, repeat)),
            ));
        }
        Ok(found)
    };
    // Validate every value before spending time on attacks.
    for (_, c) in respa_attacks(0)? {
        for &v in values {
            param.apply(&c, v)?;
        }
    }

    let mut rows = Vec::new();
    for &value in values {
        let mut per_repeat = Vec::new();
        for repeat in 0..ctx.cfg.evaluation.repeats {
            let mut reports = Vec::new();
            for s in &surrogates {
                let mut columns = vec![*s];
                columns.extend(targets.iter().copied().filter(|t| t.id != s.id));
                for (attack_id, base) in respa_attacks(repeat)? {
                    let acfg = param.apply(&base, value)?;
                    let outcomes = attack_batch(Algorithm::Respa, s, &eval, &acfg, ctx.exec)?;
                    let pairs: Vec<(Vector, Vector)> = eval
                        .iter()
                        .zip(outcomes)
                        .map(|(x, o)| (x.x().clone(), o.adversarial))
                        .collect();
                    reports.push(score_transfer(
                        &s.id, &attack_id, acfg.seed, &pairs, &columns, ctx.exec,
                    )?);
                }
            }
            per_repeat.push(reports);
        }
        info!("swept {} = {value}", param.name());
        rows.extend(
            average_reports(&per_repeat)
                .into_iter()
                .map(|report| SweepRow { value, report }),
        );
    }
    let table = sweep_table(param, &rows);
    write_all(
        &mut ctx.out,
        &[(PathBuf::from(format!("sweep/{}.csv", param.name())), table.into_bytes())],
    )?;
    Ok(rows)
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut targets: Vec<&str> = Vec::new();
    for r in rows {
        for c in &r.report.cells {
            if !targets.contains(&c.target.as_str()) {
                targets.push(&c.target);
            }
        }
    }
    let mut out = String::from("param,value,surrogate,attack,white_box_asr,mean_transfer_asr");
    for t in &targets {
        write!(out, ",{t}").unwrap();
    }
    out.push('\n');
    for r in rows {
        let rep = &r.report;
        write!(
            out,
            "{},{:?},{},{},{:.4}",
            param.name(),
            r.value,
            rep.surrogate,
            rep.attack,
            rep.white_box_asr().unwrap_or(f64::NAN)
        )
        .unwrap();
        match rep.mean_transfer_asr() {
            Some(m) => write!(out, ",{m:.4}").unwrap(),
            None => out.push(','),
        }
        for t in &targets {
            match rep.asr_on(t) {
                Some(a) => write!(out, ",{a:.4}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    pub surrogate: String,
    pub attack: String,
    pub samples: usize,
    pub mean_sharpness: f64,
    pub mean_gap: f64,
    pub sharpness: Vec<f64>,
}

/// Seed of the probe directions for sample `index`; shared by all attacks so
/// their grids use the same directions.
pub fn surface_seed(global: u64, index: usize) -> u64 {
    derive_seed(derive_seed_for(global, "surface"), index as u64)
}

/// Loss-surface grids around the first `k` adversarial examples (repeat 0)
/// of each surrogate and selected attack.
pub fn cmd_surface(ctx: &mut Context, attack: Option<&str>, k: Option<usize>) -> CliResult<Vec<SurfaceSummary>> {
    let models = load_models(ctx)?;
    let clean = read_eval_set(ctx)?;
    let surrogates = pick(&models, &ctx.cfg.surrogate_ids())?;
    let attacks = select(ctx.cfg.attacks(0)?, attack, "attack", |a| a.0.as_str())?;
    let ev = &ctx.cfg.evaluation;
    let mut k = k.unwrap_or(ev.surface_samples);
    if k > clean.len() {
        warn!(
            "requested {k} surface samples but only {} are available; using {}",
            clean.len(),
            clean.len()
        );
        k = clean.len();
    }

    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for s in &surrogates {
        for (attack_id, _, _) in &attacks {
            let adv = read_adversarial(ctx, &s.id, attack_id, 0, clean.len())?;
            let dir = Path::new("surface").join(&s.id).join(attack_id);
            let mut table = String::from("index,sharpness,mean_gap\n");
            let (mut sharp, mut gaps) = (Vec::with_capacity(k), 0.0);
            for (i, (_, label, x_adv)) in adv.iter().take(k).enumerate() {
                let mut rng = SeededRng::new(surface_seed(ctx.cfg.seed, i));
                let grid = loss_surface(
                    &s.model,
                    x_adv,
                    *label,
                    ev.surface_extent,
                    ev.surface_steps,
                    &mut rng,
                    ctx.exec,
                )?;
                let (sh, gap) = (sharpness_score(&grid), mean_gap(&grid));
                writeln!(table, "{i},{sh:?},{gap:?}").unwrap();
                files.push((dir.join(format!("grid_{i}.csv")), grid.to_delimited().into_bytes()));
                sharp.push(sh);
                gaps += gap;
            }
            let denom = k.max(1) as f64;
            let mean_sharpness = sharp.iter().sum::<f64>() / denom;
            let mean_gap = gaps / denom;
            writeln!(table, "mean,{mean_sharpness:?},{mean_gap:?}").unwrap();
            files.push((dir.join("sharpness.csv"), table.into_bytes()));
            summaries.push(SurfaceSummary {
                surrogate: s.id.clone(),
                attack: attack_id.clone(),
                samples: k,
                mean_sharpness,
                mean_gap,
                sharpness: sharp,
            });
        }
    }
    // Sharpness here is the largest loss rise over the probed grid relative
    // to the center: an operational scalar, lower meaning flatter.
    let mut summary = String::from("surrogate,attack,samples,mean_sharpness,mean_gap\n");
    for s in &summaries {
        writeln!(
            summary,
            "{},{},{},{:?},{:?}",
            s.surrogate, s.attack, s.samples, s.mean_sharpness, s.mean_gap
        )
        .unwrap();
    }
    let summary_name = match attack {
        None => "surface/summary.csv".to_string(),
        Some(a) => format!("surface/summary_{a}.csv"),
    };
    files.push((PathBuf::from(summary_name), summary.into_bytes()));
    write_all(&mut ctx.out, &files)?;
    Ok(summaries)
}

/// Everything except sweeps: train, attack, eval, surface.
pub fn cmd_run(ctx: &mut Context) -> CliResult<(Summary, Vec<SurfaceSummary>)> {
    cmd_train(ctx)?;
    cmd_attack(ctx, None, None)?;
    let summary = cmd_eval(ctx)?;
    let surfaces = cmd_surface(ctx, None, None)?;
    Ok((summary, surfaces))
}
