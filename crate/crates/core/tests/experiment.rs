use std::collections::BTreeSet;

use featsample::classifier::TrainConfig;
use featsample::experiment::{results_csv, run_experiment, Arm, DataSource, ExperimentConfig};
use featsample::synthgen::{ClusterClass, ClusterSpec};

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    let spec = ClusterSpec {
        dim: 4,
        seed: 11,
        classes: vec![
            ClusterClass { count: 150, mean: vec![0.0; 4], sigma: 1.0 },
            ClusterClass { count: 25, mean: vec![3.0, 0.0, 3.0, 0.0], sigma: 1.0 },
            ClusterClass { count: 12, mean: vec![0.0, 3.0, 0.0, 3.0], sigma: 1.0 },
        ],
    };
    let mut cfg = ExperimentConfig::default_scenario(4, dir);
    cfg.source = DataSource::Scenario(spec);
    cfg.oversample.minority_value = 60;
    cfg.oversample.distance_threshold = 0.05;
    cfg.oversample.similarity_threshold = 0.3;
    cfg.train = TrainConfig { epochs: 3, hidden_size: 16, ..cfg.train };
    cfg.repetitions = 3;
    cfg
}

#[test]
fn synthetic_sources_never_touch_the_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_config(dir.path())).unwrap();
    let mut checked = 0;
    for run in &report.runs {
        let test: BTreeSet<usize> = run.test_indices.iter().copied().collect();
        assert!(run.synthetic_sources.iter().all(|i| !test.contains(i)), "{} rep {}", run.arm, run.repetition);
        checked += run.synthetic_sources.len();
    }
    assert!(checked > 0);
}

#[test]
fn arms_share_split_and_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), cfg.arms.len() * cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let runs: Vec<_> = report.runs.iter().filter(|r| r.repetition == rep).collect();
        assert_eq!(runs.len(), cfg.arms.len());
        assert!(runs.iter().all(|r| r.test_indices == runs[0].test_indices));
        let baseline = runs.iter().find(|r| r.arm == Arm::Baseline).unwrap();
        let orig = runs.iter().find(|r| r.arm == Arm::M2mOrig).unwrap();
        assert_eq!(baseline.train_size, orig.train_size);
        for r in runs.iter().filter(|r| matches!(r.arm, Arm::M2mF | Arm::M2mU)) {
            assert_eq!(r.train_size, baseline.train_size + r.synthetic);
        }
    }
    // repetitions resplit the data
    assert_ne!(report.runs[0].test_indices, report.runs[cfg.arms.len()].test_indices);
}

#[test]
fn baseline_only_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.arms = vec![Arm::Baseline];
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summaries.len(), 1);
    assert_eq!(report.summaries[0].delta, Some(0.0));
}

#[test]
fn in_process_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(results_csv(&a), results_csv(&b));
}
