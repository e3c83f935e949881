use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use respa::Execution;
use respa_cli::commands::{self, SweepParam};
use respa_cli::{CliResult, Context, RunConfig};

#[derive(Parser)]
#[command(
    name = "respa",
    version,
    about = "Train classifiers, craft transfer attacks, and score them"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "respa.toml")]
    config: PathBuf,

    /// Overwrite output files whose contents would change.
    #[arg(long, global = true)]
    force: bool,

    /// Disable data-parallel batches.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured model and write checkpoints.
    Train,
    /// Craft adversarial examples on the surrogates.
    Attack {
        /// Only this surrogate id.
        #[arg(long)]
        surrogate: Option<String>,
        /// Only this attack id.
        #[arg(long)]
        attack: Option<String>,
    },
    /// Score stored adversarial examples on every target.
    Eval,
    /// Vary one ResPA parameter and re-run the transfer protocol.
    Sweep {
        /// beta, N, theta, gamma or rho (rho in pixel units).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Loss-surface grids and sharpness around adversarial examples.
    Surface {
        #[arg(long)]
        attack: Option<String>,
        /// Number of samples (defaults to the config value).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// train, attack, eval and surface in sequence.
    Run,
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load(&cli.config)?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let mut ctx = Context::new(cfg, cli.force, exec);
    match cli.command {
        Command::Train => {
            for e in commands::cmd_train(&mut ctx)? {
                println!("{}  {}", e.sha256, e.file);
            }
        }
        Command::Attack { surrogate, attack } => {
            let runs = commands::cmd_attack(&mut ctx, surrogate.as_deref(), attack.as_deref())?;
            println!("{} adversarial sets written", runs.len());
        }
        Command::Eval => {
            commands::cmd_eval(&mut ctx)?;
            print!(
                "{}",
                std::fs::read_to_string(ctx.out.path("eval/transfer.csv")).unwrap_or_default()
            );
        }
        Command::Sweep { param, values } => {
            let param: SweepParam = param.parse()?;
            let rows = commands::cmd_sweep(&mut ctx, param, &values)?;
            print!("{}", commands::sweep_table(param, &rows));
        }
        Command::Surface { attack, samples } => {
            for s in commands::cmd_surface(&mut ctx, attack.as_deref(), samples)? {
                println!(
                    "{} {} sharpness {:.6} over {} samples",
                    s.surrogate, s.attack, s.mean_sharpness, s.samples
                );
            }
        }
        Command::Run => {
            let (summary, surfaces) = commands::cmd_run(&mut ctx)?;
            for r in &summary.rows {
                println!(
                    "{} {} white-box {:.4} transfer {:.4}",
                    r.surrogate,
                    r.attack,
                    r.white_box_asr,
                    r.mean_transfer_asr.unwrap_or(f64::NAN)
                );
            }
            for s in &surfaces {
                println!("{} {} sharpness {:.6}", s.surrogate, s.attack, s.mean_sharpness);
            }
        }
    }
    let (written, unchanged) = ctx.out.counts();
    log::info!("{written} files written, {unchanged} unchanged");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
