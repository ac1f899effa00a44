mod common;

use std::fs;

use paud::eval::{
    auc, run_sweep, run_sweep_to_csv, summarize, AuditOutcome, Axis, AxisValue, ExperimentConfig, ModelCache,
    SweepSpec,
};
use proptest::prelude::*;

fn outcome(label: bool, score: f64) -> AuditOutcome {
    AuditOutcome { user_id: String::new(), label, decision: score >= 0.0, score }
}

fn pairwise_auc(o: &[AuditOutcome]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for m in o.iter().filter(|o| o.label) {
        for n in o.iter().filter(|o| !o.label) {
            pairs += 1.0;
            wins += if m.score > n.score {
                1.0
            } else if m.score == n.score {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn auc_matches_pair_counting_and_ignores_monotone_maps(
        scored in prop::collection::vec((any::<bool>(), -8i32..8), 2..40),
    ) {
        let mut o: Vec<AuditOutcome> = scored.iter().map(|&(l, s)| outcome(l, f64::from(s))).collect();
        prop_assume!(o.iter().any(|x| x.label) && o.iter().any(|x| !x.label));
        let a = auc(&o).unwrap();
        prop_assert!((a - pairwise_auc(&o)).abs() < 1e-12);
        for x in &mut o {
            x.score = 1.0 / (1.0 + (-x.score).exp());
        }
        prop_assert!((auc(&o).unwrap() - a).abs() < 1e-12);
    }
}

/// Seconds-scale experiment for bookkeeping tests.
fn tiny_experiment() -> ExperimentConfig {
    let mut cfg = common::toy_experiment();
    cfg.corpus.sentences_per_user = 4;
    cfg.n_train_users = 3;
    cfg.n_test_users = 3;
    cfg.n_shadow_users = 6;
    cfg.target_model.emb_dim = 4;
    cfg.target_model.hidden_dim = 4;
    cfg.target_train.epochs = 1;
    cfg.k_shadows = 2;
    cfg.audit.d = 10;
    cfg
}

#[test]
fn one_row_per_value_and_repetition() {
    let spec = SweepSpec {
        axis: Axis::NQueries,
        values: vec![AxisValue::Int(1), AxisValue::Int(8)],
        repetitions: 3,
        base: tiny_experiment(),
    };
    let rows = run_sweep(&spec, &ModelCache::new()).unwrap();
    assert_eq!(rows.len(), 6);
    for rep in 0..3 {
        let values: Vec<&str> = rows.iter().filter(|r| r.repetition == rep).map(|r| r.axis_value.as_str()).collect();
        assert_eq!(values, ["1", "8"]);
    }
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|s| s.runs + s.failures == 3));
}

#[test]
fn sweep_resumes_without_recomputing_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let spec = SweepSpec {
        axis: Axis::NQueries,
        values: vec![AxisValue::Int(1), AxisValue::Int(8)],
        repetitions: 2,
        base: tiny_experiment(),
    };
    let first = ModelCache::new();
    run_sweep_to_csv(&spec, &path, &first).unwrap();
    let complete = fs::read_to_string(&path).unwrap();
    assert_eq!(complete.lines().count(), 5);

    let partial: Vec<&str> = complete.lines().take(4).collect();
    fs::write(&path, partial.join("\n") + "\n").unwrap();
    let second = ModelCache::new();
    run_sweep_to_csv(&spec, &path, &second).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), complete);
    // Only the missing cell's target and shadows were trained.
    assert_eq!(second.len(), 1 + spec.base.k_shadows);
    assert!(first.len() > second.len());

    let mut changed = spec.clone();
    changed.repetitions = 3;
    assert!(run_sweep_to_csv(&changed, &path, &ModelCache::new()).is_err());
}

#[test]
fn full_output_audits_at_least_as_well_as_top_one() {
    let mut base = common::toy_experiment();
    base.n_train_users = 8;
    base.n_test_users = 8;
    base.n_shadow_users = 16;
    base.k_shadows = 4;
    base.target_model.hidden_dim = 24;
    base.audit.d = 50;
    let spec = SweepSpec {
        axis: Axis::OutputK,
        values: vec![AxisValue::Text("full".into()), AxisValue::Int(1)],
        repetitions: 5,
        base,
    };
    let rows = run_sweep(&spec, &ModelCache::new()).unwrap();
    let summary = summarize(&rows);
    assert!(summary.iter().all(|s| s.failures == 0));
    let (full, top1) = (&summary[0], &summary[1]);
    assert!(full.auc >= top1.auc, "AUC with full output {} < top-1 {}", full.auc, top1.auc);
}
