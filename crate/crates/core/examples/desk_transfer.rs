//! Transfer table and mean sharpness on the default desk task.
//!
//! cargo run --release -p respa --example desk_transfer -- [seed]

use respa::attacks::{Algorithm, AttackConfig};
use respa::desk;
use respa::evaluation::{attack_batch, loss_surface, sharpness_score, transfer_matrix, transfer_table, AttackSpec};
use respa::tensor::{derive_seed, derive_seed_for};
use respa::{Execution, SeededRng};

fn main() -> respa::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed must be an integer"));
    let exec = Execution::default();
    let task = desk::build(seed, exec)?;
    for m in &task.models {
        println!("{}: pool accuracy {:.4}", m.id, m.model.accuracy(&task.pool)?);
    }
    println!("evaluation set: {} of {}", task.eval.len(), task.pool.len());

    let cfg = AttackConfig::default().with_seed(derive_seed_for(seed, "attack"));
    let algorithms = [
        Algorithm::Ifgsm,
        Algorithm::Mifgsm,
        Algorithm::FlatCurrentGrad,
        Algorithm::Respa,
    ];
    let specs: Vec<AttackSpec> = algorithms.iter().map(|a| AttackSpec::new(*a, cfg.clone())).collect();
    let reports = transfer_matrix(&task.models[..1], task.targets(), &specs, &task.eval, exec)?;
    print!("{}", transfer_table(&reports));

    let probe = &task.eval[..50.min(task.eval.len())];
    for alg in algorithms {
        let outcomes = attack_batch(alg, task.surrogate(), probe, &cfg, exec)?;
        let mut total = 0.0;
        for (i, (o, s)) in outcomes.iter().zip(probe).enumerate() {
            let mut rng = SeededRng::new(derive_seed(seed, i as u64));
            let grid = loss_surface(
                &task.surrogate().model,
                &o.adversarial,
                s.label(),
                0.1,
                21,
                &mut rng,
                exec,
            )?;
            total += sharpness_score(&grid);
        }
        println!("{alg}: mean sharpness {:.4}", total / probe.len() as f64);
    }
    Ok(())
}
