mod common;

use expabs_lm::data::{prepare, SplitData, SplitSpec};
use expabs_lm::trainer::{evaluate, Branch, Mode, Speedups, StopReason, TrainOutcome};
use expabs_lm::{init_network, train, NetworkSpec, Tau, TrainerConfig};

fn iris(seed: u64) -> SplitData {
    let (_, raw) = common::load("iris");
    prepare(&raw, SplitSpec::default(), seed).unwrap()
}

fn run(data: &SplitData, cfg: &TrainerConfig, seed: u64) -> TrainOutcome {
    let net = init_network(NetworkSpec::new(vec![4, 7, 3], seed)).unwrap();
    train(net, &data.train, &data.validation, cfg).unwrap()
}

fn csv(out: &TrainOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    out.log.write_csv(&mut buf).unwrap();
    buf
}

fn cfg(tau: f64, max_iterations: usize) -> TrainerConfig {
    TrainerConfig {
        tau_init: tau,
        max_iterations,
        ..TrainerConfig::default()
    }
}

#[test]
fn seeded_runs_are_bit_reproducible() {
    let c = cfg(1.0, 150);
    let a = run(&iris(5), &c, 11);
    let b = run(&iris(5), &c, 11);
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.network.flatten(), b.network.flatten());
    assert_eq!(a.tau.value().to_bits(), b.tau.value().to_bits());
    let other = run(&iris(5), &c, 12);
    assert_ne!(csv(&a), csv(&other));
}

#[test]
fn fixed_mode_keeps_tau_constant() {
    let c = TrainerConfig {
        mode: Mode::Fixed,
        ..cfg(3.0, 100)
    };
    let out = run(&iris(1), &c, 2);
    assert!(out.log.rows.iter().all(|r| r.tau == 3.0));
    assert_eq!(out.tau.value(), 3.0);
}

#[test]
fn frozen_dynamic_mode_reproduces_fixed_mode() {
    let data = iris(3);
    let fixed = run(
        &data,
        &TrainerConfig {
            mode: Mode::Fixed,
            ..cfg(0.5, 120)
        },
        4,
    );
    let frozen = run(
        &data,
        &TrainerConfig {
            mode: Mode::Dynamic,
            speedups: Speedups::None,
            alpha: 0.0,
            eta_init: 1.0,
            freeze_tau: true,
            ..cfg(0.5, 120)
        },
        4,
    );
    assert_eq!(csv(&fixed), csv(&frozen));
    assert_eq!(fixed.network.flatten(), frozen.network.flatten());
}

#[test]
fn returned_snapshot_has_the_best_validation_error() {
    let data = iris(7);
    for (tau, mode) in [
        (0.2, Mode::Dynamic),
        (50.0, Mode::Dynamic),
        (2.0, Mode::Fixed),
    ] {
        let c = TrainerConfig {
            mode,
            patience: 30,
            ..cfg(tau, 400)
        };
        let out = run(&data, &c, 8);
        let best = out
            .log
            .rows
            .iter()
            .map(|r| r.val_e_expabs)
            .fold(f64::INFINITY, f64::min);
        let got = evaluate(&out.network, out.tau, &data.validation)
            .unwrap()
            .e_expabs;
        assert!(
            (got - best).abs() <= 1e-12 * best.abs(),
            "τ {tau}: snapshot {got} vs logged best {best}"
        );
        let row = &out.log.rows[out.log.best_iteration - 1];
        assert_eq!(row.val_e_expabs, best);
        assert_eq!(row.tau, out.tau.value());
    }
}

#[test]
fn accepted_steps_never_increase_training_error() {
    let data = iris(9);
    for tau in [0.05, 1.0, 1000.0] {
        let out = run(&data, &cfg(tau, 300), 10);
        for w in out.log.rows.windows(2) {
            if w[1].branch != Branch::ForcedAccept {
                assert!(
                    w[1].e_expabs <= w[0].e_expabs,
                    "τ {tau}, iteration {}: {} > {}",
                    w[1].iteration,
                    w[1].e_expabs,
                    w[0].e_expabs
                );
            }
        }
    }
}

#[test]
fn training_stops_at_the_cap() {
    let c = TrainerConfig {
        patience: 10_000,
        ..cfg(1.0, 25)
    };
    let out = run(&iris(2), &c, 3);
    assert_eq!(out.log.iterations(), 25);
    assert_eq!(out.log.stop_reason, StopReason::IterationCap);
    let ks: Vec<usize> = out.log.rows.iter().map(|r| r.iteration).collect();
    assert_eq!(ks, (1..=25).collect::<Vec<_>>());
}

#[test]
fn mu_stays_inside_its_bounds() {
    let c = cfg(0.05, 200);
    let out = run(&iris(4), &c, 6);
    assert!(out
        .log
        .rows
        .iter()
        .all(|r| r.mu >= c.mu_min && r.mu <= c.mu_max && r.mu > 0.0));
}

#[test]
fn regression_targets_train() {
    let (_, raw) = common::load("diabetes");
    let data = prepare(&raw, SplitSpec::default(), 1).unwrap();
    let sizes = vec![data.train.inputs.ncols(), 5, data.train.targets.ncols()];
    let net = init_network(NetworkSpec::new(sizes, 1)).unwrap();
    let before = evaluate(&net, Tau::new(1.0).unwrap(), &data.test).unwrap();
    let out = train(net, &data.train, &data.validation, &cfg(1.0, 200)).unwrap();
    let after = evaluate(&out.network, out.tau, &data.test).unwrap();
    assert!(after.mse < before.mse, "{} !< {}", after.mse, before.mse);
}
