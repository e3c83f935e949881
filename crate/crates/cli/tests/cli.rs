use std::fs;
use std::path::Path;

use respa::attacks::{Algorithm, AttackConfig};
use respa::models::checkpoint::from_text;
use respa::Execution;
use respa_cli::commands::{cmd_attack, cmd_eval, cmd_surface, cmd_sweep, cmd_train, SweepParam, EVAL_SET, MANIFEST};
use respa_cli::output::parse_vectors_csv;
use respa_cli::{CliError, Context, RunConfig};
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 11
output_dir = "out"

[data]
kind = "synthetic"
dim = 8
classes = 3
mean_low = 0.2
mean_high = 0.8
sigma = 0.05
train_per_class = 40
eval_per_class = 10

[[models]]
id = "surrogate"
hidden = [8]
epochs = 30

[[models]]
id = "target"
activation = "tanh"
hidden = [6]
epochs = 30

[[attacks]]
algorithm = "mifgsm"

[[attacks]]
algorithm = "respa"
samples = 3
"#;

fn ctx_in(dir: &Path, text: &str, force: bool) -> Context {
    let mut cfg = RunConfig::parse(text).unwrap();
    cfg.output_dir = dir.join("out");
    Context::new(cfg, force, Execution::default())
}

#[test]
fn strict_parsing() {
    let err = RunConfig::parse(&format!("{SMALL}\nsurprise = 1\n")).unwrap_err();
    assert!(matches!(err, CliError::Config { .. }), "{err}");
    assert!(err.to_string().contains("surprise"), "{err}");

    let typo = SMALL.replace("samples = 3", "sample = 3");
    let err = RunConfig::parse(&typo).unwrap_err();
    assert!(err.to_string().contains("sample"), "{err}");

    let typo = SMALL.replace("sigma = 0.05", "sigma = 0.05\nsgima = 0.1");
    assert!(RunConfig::parse(&typo).is_err());

    let start = SMALL.find("[data]").unwrap();
    let end = SMALL.find("[[models]]").unwrap();
    let no_data = format!("{}{}", &SMALL[..start], &SMALL[end..]);
    let err = RunConfig::parse(&no_data).unwrap_err().to_string();
    assert!(err.contains("data"), "{err}");
}

#[test]
fn parse_errors_carry_a_line() {
    let bad = SMALL.replace("epochs = 30\n\n[[models]]", "epochs = \"thirty\"\n\n[[models]]");
    let err = RunConfig::parse(&bad).unwrap_err().to_string();
    assert!(err.contains("line"), "{err}");
}

#[test]
fn invalid_values_rejected() {
    for (from, to) in [
        ("algorithm = \"mifgsm\"", "algorithm = \"pgd\""),
        ("samples = 3", "samples = 0"),
        ("id = \"target\"", "id = \"surrogate\""),
        ("id = \"target\"", "id = \"../escape\""),
        ("activation = \"tanh\"", "activation = \"gelu\""),
        ("sigma = 0.05", "sigma = -1.0"),
    ] {
        assert!(RunConfig::parse(&SMALL.replace(from, to)).is_err(), "{to}");
    }
    let unknown_target = format!("{SMALL}\n[evaluation]\ntargets = [\"nobody\"]\n");
    assert!(RunConfig::parse(&unknown_target).is_err());
}

#[test]
fn omitted_hyperparameters_take_defaults() {
    let cfg = RunConfig::parse(SMALL).unwrap();
    let attacks = cfg.attacks(0).unwrap();
    let (id, alg, c) = &attacks[0];
    assert_eq!((id.as_str(), *alg), ("mifgsm", Algorithm::Mifgsm));
    let d = AttackConfig::default();
    assert_eq!(c.epsilon, 16.0 / 255.0);
    assert_eq!(c.alpha, 1.6 / 255.0);
    assert_eq!((c.iterations, c.mu, c.samples), (10, 1.0, 5));
    assert_eq!((c.theta, c.gamma, c.beta), (0.6, 0.6, 1.5));
    assert_eq!(c.rho(), c.epsilon);
    assert_eq!((c.norm, c.reference), (d.norm, d.reference));
    assert_eq!(attacks[1].2.samples, 3);
    // Every attack shares the repeat's seed; repeats differ.
    assert_eq!(attacks[0].2.seed, attacks[1].2.seed);
    assert_ne!(cfg.attacks(1).unwrap()[0].2.seed, attacks[0].2.seed);
}

#[test]
fn two_models_two_checkpoints() {
    let dir = TempDir::new().unwrap();
    let mut ctx = ctx_in(dir.path(), SMALL, false);
    let entries = cmd_train(&mut ctx).unwrap();
    assert_eq!(entries.len(), 2);
    let manifest = fs::read_to_string(ctx.out.path(MANIFEST)).unwrap();
    assert_eq!(manifest.lines().count(), 2);
    for e in &entries {
        let text = fs::read_to_string(ctx.out.path("models").join(&e.file)).unwrap();
        from_text(&text).unwrap();
        assert!(manifest.contains(&format!("{}  {}", e.sha256, e.file)));
    }
}

#[test]
fn training_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let ha = cmd_train(&mut ctx_in(a.path(), SMALL, false)).unwrap();
    let hb = cmd_train(&mut ctx_in(b.path(), SMALL, false)).unwrap();
    assert_eq!(ha, hb);
    let other_seed = cmd_train(&mut ctx_in(b.path(), &SMALL.replace("seed = 11", "seed = 12"), true)).unwrap();
    assert_ne!(ha, other_seed);
}

#[test]
fn adding_a_model_keeps_the_others() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let base = cmd_train(&mut ctx_in(a.path(), SMALL, false)).unwrap();
    let more = format!("{SMALL}\n[[models]]\nid = \"extra\"\nepochs = 5\n");
    let grown = cmd_train(&mut ctx_in(b.path(), &more, false)).unwrap();
    assert_eq!(&grown[..2], &base[..]);
}

#[test]
fn overwrite_needs_force() {
    let dir = TempDir::new().unwrap();
    cmd_train(&mut ctx_in(dir.path(), SMALL, false)).unwrap();
    // Identical rerun is a no-op.
    let mut again = ctx_in(dir.path(), SMALL, false);
    cmd_train(&mut again).unwrap();
    assert_eq!(again.out.counts().0, 0);

    let changed = SMALL.replace("epochs = 30\n\n[[models]]", "epochs = 31\n\n[[models]]");
    let before = fs::read(dir.path().join("out").join(MANIFEST)).unwrap();
    let err = cmd_train(&mut ctx_in(dir.path(), &changed, false)).unwrap_err();
    assert!(matches!(err, CliError::WouldOverwrite { .. }), "{err}");
    // Preflight refused before anything changed.
    assert_eq!(fs::read(dir.path().join("out").join(MANIFEST)).unwrap(), before);
    cmd_train(&mut ctx_in(dir.path(), &changed, true)).unwrap();
    assert_ne!(fs::read(dir.path().join("out").join(MANIFEST)).unwrap(), before);
}

#[test]
fn dependencies_are_checked() {
    let dir = TempDir::new().unwrap();
    let mut ctx = ctx_in(dir.path(), SMALL, false);
    let err = cmd_attack(&mut ctx, None, None).unwrap_err();
    assert!(
        matches!(err, CliError::MissingDependency { step: "train", .. }),
        "{err}"
    );
    cmd_train(&mut ctx).unwrap();
    let err = cmd_eval(&mut ctx).unwrap_err();
    assert!(
        matches!(err, CliError::MissingDependency { step: "attack", .. }),
        "{err}"
    );
    let err = cmd_surface(&mut ctx, None, Some(2)).unwrap_err();
    assert!(matches!(err, CliError::MissingDependency { .. }), "{err}");

    let ckpt = ctx.out.path("models/target.ckpt");
    let mut text = fs::read_to_string(&ckpt).unwrap();
    text.push('\n');
    fs::write(&ckpt, text).unwrap();
    let err = cmd_attack(&mut ctx, None, None).unwrap_err();
    assert!(matches!(err, CliError::StaleCheckpoint { .. }), "{err}");
}

#[test]
fn unknown_ids_rejected() {
    let dir = TempDir::new().unwrap();
    let mut ctx = ctx_in(dir.path(), SMALL, false);
    cmd_train(&mut ctx).unwrap();
    let err = cmd_attack(&mut ctx, None, Some("pgd")).unwrap_err();
    assert!(matches!(err, CliError::UnknownId { .. }), "{err}");
    let err = cmd_attack(&mut ctx, Some("target"), None).unwrap_err();
    assert!(matches!(err, CliError::UnknownId { .. }), "{err}");
    assert!("delta".parse::<SweepParam>().is_err());
}

#[test]
fn single_step_ifgsm_is_fgsm() {
    let text = SMALL.replace(
        "[[attacks]]\nalgorithm = \"mifgsm\"",
        "[[attacks]]\nid = \"fgsm\"\nalgorithm = \"ifgsm\"\niterations = 1\nepsilon = 8\nalpha = 8",
    );
    let dir = TempDir::new().unwrap();
    let mut ctx = ctx_in(dir.path(), &text, false);
    cmd_train(&mut ctx).unwrap();
    cmd_attack(&mut ctx, None, Some("fgsm")).unwrap();
    let surrogate = from_text(&fs::read_to_string(ctx.out.path("models/surrogate.ckpt")).unwrap()).unwrap();
    let clean = parse_vectors_csv(Path::new("clean"), &fs::read_to_string(ctx.out.path(EVAL_SET)).unwrap()).unwrap();
    let adv_path = ctx.out.path("attacks/surrogate/fgsm/r0/adversarial.csv");
    let adv = parse_vectors_csv(&adv_path, &fs::read_to_string(&adv_path).unwrap()).unwrap();
    assert!(!clean.is_empty());
    let eps = 8.0 / 255.0;
    for ((_, label, x), (_, _, a)) in clean.iter().zip(&adv) {
        let g = surrogate.input_gradient(x, *label).unwrap();
        for ((xi, gi), ai) in x.iter().zip(g.iter()).zip(a.iter()) {
            let step = if *gi > 0.0 {
                eps
            } else if *gi < 0.0 {
                -eps
            } else {
                0.0
            };
            let want = (xi + step).clamp(xi - eps, xi + eps).clamp(0.0, 1.0);
            assert_eq!(*ai, want);
        }
    }
}

#[test]
fn attack_eval_surface_outputs() {
    let dir = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[evaluation]\nrepeats = 2\nsurface_steps = 5\n");
    let mut ctx = ctx_in(dir.path(), &text, false);
    cmd_train(&mut ctx).unwrap();
    let runs = cmd_attack(&mut ctx, None, None).unwrap();
    assert_eq!(runs.len(), 4);
    let n = runs[0].adversarial.len();
    for r in 0..2 {
        for a in ["mifgsm", "respa"] {
            let d = ctx.out.path(format!("attacks/surrogate/{a}/r{r}"));
            assert!(d.join("adversarial.csv").exists());
            assert_eq!(fs::read_dir(d.join("traces")).unwrap().count(), n);
        }
    }
    let trace = fs::read_to_string(ctx.out.path("attacks/surrogate/respa/r0/traces/0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);

    let summary = cmd_eval(&mut ctx).unwrap();
    assert_eq!(summary.rows.len(), 2);
    assert_eq!(summary.samples, n);
    let table = fs::read_to_string(ctx.out.path("eval/transfer.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().skip(1).all(|l| l.matches('*').count() == 1));
    for r in 0..2 {
        assert!(ctx.out.path(format!("eval/transfer_r{r}.csv")).exists());
    }
    let toml_text = fs::read_to_string(ctx.out.path("eval/summary.toml")).unwrap();
    assert!(toml_text.contains("repeats = 2"));

    // More samples than exist: clamped, not an error.
    let surfaces = cmd_surface(&mut ctx, Some("respa"), Some(n + 10)).unwrap();
    assert_eq!(surfaces.len(), 1);
    assert_eq!(surfaces[0].samples, n);
    let grids = fs::read_dir(ctx.out.path("surface/surrogate/respa")).unwrap().count();
    assert_eq!(grids, n + 1);
    let sharp = fs::read_to_string(ctx.out.path("surface/surrogate/respa/sharpness.csv")).unwrap();
    assert_eq!(sharp.lines().count(), n + 2);
    assert!(sharp.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn sweeps_emit_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let mut ctx = ctx_in(dir.path(), SMALL, false);
    cmd_train(&mut ctx).unwrap();
    let values = [0.0, 0.2, 0.6, 0.9];
    let rows = cmd_sweep(&mut ctx, SweepParam::Theta, &values).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), values);
    let table = fs::read_to_string(ctx.out.path("sweep/theta.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + values.len());

    let rows = cmd_sweep(&mut ctx, SweepParam::Samples, &[1.0, 2.0]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(cmd_sweep(&mut ctx, SweepParam::Samples, &[1.5]).is_err());
    assert!(cmd_sweep(&mut ctx, SweepParam::Theta, &[1.0]).is_err());
    assert!(cmd_sweep(&mut ctx, SweepParam::Gamma, &[]).is_err());
}
