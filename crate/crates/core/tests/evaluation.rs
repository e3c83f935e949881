use respa::attacks::{Algorithm, AttackConfig};
use respa::data::{generate_synthetic, SyntheticSpec};
use respa::evaluation::{
    attack_batch, attack_success_rate, evaluation_set, loss_surface, sharpness_score, transfer_matrix, transfer_table,
    AttackSpec, NamedModel,
};
use respa::models::{train, Activation, Architecture, TrainConfig};
use respa::{Execution, LabeledSample, LossOracle, SeededRng, Vector};

struct Zoo {
    models: Vec<NamedModel>,
    eval: Vec<LabeledSample>,
}

fn zoo() -> Zoo {
    let spec = SyntheticSpec::with_random_means(12, 3, (0.35, 0.65), 1, 0.06, 60, 2);
    let data = generate_synthetic(&spec).unwrap();
    let pool = generate_synthetic(&SyntheticSpec {
        per_class: 20,
        ..spec.reseeded(3)
    })
    .unwrap();
    let archs = [
        ("s", Architecture::mlp(12, &[16], 3, Activation::Relu)),
        ("lin", Architecture::linear(12, 3)),
        ("tanh", Architecture::mlp(12, &[8], 3, Activation::Tanh)),
    ];
    let models: Vec<NamedModel> = archs
        .into_iter()
        .enumerate()
        .map(|(i, (id, arch))| {
            let cfg = TrainConfig {
                learning_rate: 0.1,
                epochs: 30,
                batch_size: 16,
                seed: i as u64,
            };
            NamedModel::new(id, train(&arch, &data, &cfg).unwrap().0)
        })
        .collect();
    let refs: Vec<_> = models.iter().map(|m| &m.model).collect();
    let eval = evaluation_set(&refs, &pool).unwrap();
    Zoo { models, eval }
}

fn attacks() -> Vec<AttackSpec> {
    [
        Algorithm::Identity,
        Algorithm::Ifgsm,
        Algorithm::Mifgsm,
        Algorithm::Respa,
    ]
    .into_iter()
    .map(|a| AttackSpec::new(a, AttackConfig::default()))
    .collect()
}

#[test]
fn evaluation_set_is_correct_for_all_models() {
    let z = zoo();
    assert!(z.eval.len() >= 30, "{}", z.eval.len());
    for s in &z.eval {
        for m in &z.models {
            assert_eq!(m.model.predict(s.x()).unwrap(), s.label());
        }
    }
}

#[test]
fn transfer_matrix_protocol() {
    let z = zoo();
    let reports = transfer_matrix(&z.models[..1], &z.models[1..], &attacks(), &z.eval, Execution::Parallel).unwrap();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        assert_eq!(r.surrogate, "s");
        assert_eq!(r.samples, z.eval.len());
        assert_eq!(r.cells.len(), 3);
        assert!(r.cells[0].white_box && r.cells[0].target == "s");
        assert!(r.cells.iter().all(|c| (0.0..=1.0).contains(&c.asr)));
        assert!(r.cells.iter().all(|c| c.asr == c.flipped as f64 / r.samples as f64));
    }
    let identity = &reports[0];
    assert_eq!(identity.attack, "none");
    assert!(identity.cells.iter().all(|c| c.asr == 0.0));

    // The white-box cell is the surrogate's own success rate.
    let cfg = AttackConfig::default();
    let outs = attack_batch(Algorithm::Respa, &z.models[0], &z.eval, &cfg, Execution::Sequential).unwrap();
    let pairs: Vec<(Vector, Vector)> = z
        .eval
        .iter()
        .zip(outs)
        .map(|(s, o)| (s.x().clone(), o.adversarial))
        .collect();
    let own = attack_success_rate(&z.models[0].model, &pairs, Execution::Sequential).unwrap();
    assert_eq!(reports[3].white_box_asr(), Some(own));

    let table = transfer_table(&reports);
    assert_eq!(table.lines().count(), 5);
    assert!(table
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("s,none,0.0000*,0.0000,0.0000"));
}

#[test]
fn sequential_and_parallel_reports_agree() {
    let z = zoo();
    let a = transfer_matrix(&z.models[..2], &z.models, &attacks(), &z.eval, Execution::Sequential).unwrap();
    let b = transfer_matrix(&z.models[..2], &z.models, &attacks(), &z.eval, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    // The second surrogate gets its own white-box column first.
    assert_eq!(a[4].cells[0].target, "lin");
    assert!(a[4].cells[0].white_box);
    assert_eq!(a[4].cells.len(), 3);
}

#[test]
fn mismatched_models_rejected() {
    let z = zoo();
    let other = NamedModel::new(
        "wide",
        respa::ClassifierModel::initialize(Architecture::linear(13, 3), 0).unwrap(),
    );
    assert!(transfer_matrix(&z.models[..1], &[other], &attacks(), &z.eval, Execution::Parallel).is_err());
    assert!(transfer_matrix(&z.models[..1], &z.models[1..], &attacks(), &[], Execution::Parallel).is_err());
}

#[test]
fn surface_center_is_the_direct_loss() {
    let z = zoo();
    let model = &z.models[0].model;
    for (i, s) in z.eval.iter().take(5).enumerate() {
        let mut rng = SeededRng::new(i as u64);
        let g = loss_surface(model, s.x(), s.label(), 0.1, 41, &mut rng, Execution::Parallel).unwrap();
        assert_eq!(g.values.len(), 41 * 41);
        assert_eq!(g.center().to_bits(), model.loss(s.x(), s.label()).to_bits());
        assert!(sharpness_score(&g) >= 0.0);
        let mut again = SeededRng::new(i as u64);
        let h = loss_surface(model, s.x(), s.label(), 0.1, 41, &mut again, Execution::Sequential).unwrap();
        assert_eq!(g, h);
        let csv = g.to_delimited();
        assert_eq!(csv.lines().count(), 42);
    }
}
