//! Acceptance suite: one test per exit criterion, each printing a
//! PASS/FAIL line with the measured value and its pinned tolerance
//! (visible under `cargo test --test acceptance -- --nocapture`).

use abmil::data::{build_bags, make_synthetic_pool, BagSpec};
use abmil::eval::evaluate;
use abmil::rng::substream;
use abmil::train::{train, Strategy, TrainConfig};
use abmil::verify::{
    alpha100_trajectory_check, auc_oracle_check, bn_discrepancy_checks, decomposition_check,
    equivalence_check, finite_difference_check, forward_count_check, memory_scaling_checks,
    protocol_fidelity_check, timing_direction_check, Check, Scale,
};

fn report(criterion: &str, check: &Check) {
    println!(
        "{} criterion {criterion}: {} measured={:.3e} tolerance={:.1e} ({})",
        if check.passed { "PASS" } else { "FAIL" },
        check.name,
        check.measured,
        check.tolerance,
        check.detail
    );
    assert!(check.passed, "criterion {criterion}: {check}");
}

#[test]
fn criterion_1_gradient_equivalence() {
    let check = equivalence_check(Scale::Full, 1).expect("equivalence suite");
    report("1", &check);
}

#[test]
fn criterion_2_per_instance_decomposition() {
    let check = decomposition_check(Scale::Full).expect("decomposition suite");
    report("2", &check);
}

#[test]
fn criterion_3_finite_difference_oracle() {
    let check = finite_difference_check(3);
    report("3", &check);
}

#[test]
fn criterion_4_bn_discrepancy() {
    for check in bn_discrepancy_checks(4).expect("bn suite") {
        report("4", &check);
    }
}

#[test]
fn criterion_5_memory_scaling() {
    for check in memory_scaling_checks(5).expect("memory suite") {
        report("5", &check);
    }
}

#[test]
fn criterion_6_forward_count_and_time() {
    let check = forward_count_check(6).expect("forward counts");
    report("6", &check);
    let check = timing_direction_check(6).expect("timing");
    report("6", &check);
}

#[test]
fn criterion_7_solution_quality() {
    // Desk-scale dataset: 40/12/20 bags, 50 instances, 10% key fraction.
    // Both strategies must reach 0.9 bag accuracy and 0.8 instance AUC
    // within the default 300 epochs on three seeds.
    for seed in [1u64, 2, 3] {
        let pool = make_synthetic_pool(seed, 4, 16, 500).expect("pool");
        let spec = BagSpec {
            key_class: 1,
            seed,
            ..BagSpec::default()
        };
        assert_eq!(spec.n_train_bags, 40);
        assert_eq!(spec.instances_per_bag, 50);
        assert_eq!(spec.key_fraction, 0.1);
        let dataset = build_bags(&pool, &spec).expect("bags");

        for strategy in [Strategy::FullBag, Strategy::Accumulate] {
            let config = TrainConfig {
                strategy,
                alpha_percent: 25.0,
                seed,
                ..TrainConfig::default()
            };
            assert_eq!(config.epochs, 300);
            let outcome = train(&dataset, &config).expect("training");
            let mut rng = substream(seed, "acceptance-eval", 0);
            let eval = evaluate(&outcome.best, &dataset.test, 100.0, &mut rng).expect("evaluation");
            let auc = eval.instance_auc.expect("both instance classes present");
            let passed = eval.bag_accuracy >= 0.9 && auc >= 0.8;
            println!(
                "{} criterion 7: solution_quality seed={seed} strategy={} acc={:.3} (>=0.9) auc={:.3} (>=0.8)",
                if passed { "PASS" } else { "FAIL" },
                strategy.name(),
                eval.bag_accuracy,
                auc
            );
            assert!(
                passed,
                "seed {seed} {}: accuracy {:.3}, instance AUC {:.3}",
                strategy.name(),
                eval.bag_accuracy,
                auc
            );
        }
    }
}

#[test]
fn criterion_8_alpha100_path_equivalence() {
    let check = alpha100_trajectory_check(Scale::Full, 8).expect("alpha100 suite");
    report("8", &check);
}

#[test]
fn criterion_9_auc_oracle() {
    let check = auc_oracle_check(Scale::Full);
    report("9", &check);
}

#[test]
fn criterion_10_protocol_fidelity() {
    let check = protocol_fidelity_check(10).expect("protocol suite");
    report("10", &check);
}
