//! End-to-end experiment runner: split, oversample the training part, train
//! one classifier per arm and score every arm on the same held-out test set.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{train_with, Sampling, TrainConfig};
use crate::config::{self, KvConfig, OVERSAMPLE_KEYS, TRAIN_KEYS};
use crate::error::{Error, Result};
use crate::feature_store::{load_features_csv, write_atomic, FeatureDataset};
use crate::metrics::{ConfusionMatrix, EvalReport, F1Average};
use crate::oversampling::{oversample_m2mf, oversample_m2mu, OversampleConfig};
use crate::synthgen::{default_imbalanced_scenario, gen_clusters, ClusterSpec};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "FEATSAMPLE_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    /// Raw training set.
    Baseline,
    /// Class-balanced resampling with replacement.
    M2mOrig,
    M2mF,
    M2mU,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::M2mOrig, Arm::M2mF, Arm::M2mU];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::M2mOrig => "m2m_orig",
            Arm::M2mF => "m2m_f",
            Arm::M2mU => "m2m_u",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown arm {s:?} (expected baseline, m2m_orig, m2m_f or m2m_u)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Scenario(ClusterSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<FeatureDataset<f64>> {
        match self {
            DataSource::Csv(path) => load_features_csv(path),
            DataSource::Scenario(spec) => gen_clusters(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Fraction of each class assigned to training, in `(0, 1)`.
    pub split_fraction: f64,
    pub split_seed: u64,
    pub arms: Vec<Arm>,
    pub oversample: OversampleConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    pub f1_average: F1Average,
}

pub const EXPERIMENT_KEYS: &[&str] = &[
    "data",
    "scenario",
    "scenario_seed",
    "split_fraction",
    "split_seed",
    "arms",
    "repetitions",
    "output_dir",
    "f1_average",
    "model_seed",
];

/// Resolves a `scenario` value: `default` or a path to a scenario file.
pub fn scenario_from_value(value: &str, seed: u64) -> Result<(ClusterSpec, Option<OversampleConfig>)> {
    if value == "default" {
        let (spec, cfg) = default_imbalanced_scenario(seed);
        return Ok((spec, Some(cfg)));
    }
    let kv = KvConfig::load(value)?;
    kv.check_known(&["dim", "seed", "counts", "sigma", "mean."])?;
    Ok((ClusterSpec::from_kv(&kv)?, None))
}

impl ExperimentConfig {
    /// The acceptance-scale default: default scenario, every arm, 5 repetitions.
    pub fn default_scenario(seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        let (spec, oversample) = default_imbalanced_scenario(seed);
        Self {
            source: DataSource::Scenario(spec),
            split_fraction: 0.8,
            split_seed: seed,
            arms: Arm::ALL.to_vec(),
            oversample,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            model_seed: seed,
            repetitions: 5,
            output_dir: output_dir.into(),
            f1_average: F1Average::Macro,
        }
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let allowed: Vec<&str> = EXPERIMENT_KEYS
            .iter()
            .chain(OVERSAMPLE_KEYS)
            .chain(TRAIN_KEYS)
            .copied()
            .collect();
        kv.check_known(&allowed)?;

        let (source, scenario_oversample) = match (kv.raw("data"), kv.raw("scenario")) {
            (Some(_), Some(_)) => return Err(Error::Config("set only one of data and scenario".into())),
            (Some(path), None) => (DataSource::Csv(PathBuf::from(path)), None),
            (None, Some(s)) => {
                let (spec, cfg) = scenario_from_value(s, kv.get_or("scenario_seed", 0)?)?;
                (DataSource::Scenario(spec), cfg)
            }
            (None, None) => return Err(Error::Config("one of data or scenario is required".into())),
        };

        let oversample = match scenario_oversample {
            Some(defaults) if !kv.contains("m_v") => {
                let mut kv = kv.clone();
                kv.set("m_v", defaults.minority_value.to_string());
                config::oversample_config(&kv)?
            }
            _ => config::oversample_config(kv)?,
        };

        let arms: Vec<Arm> = kv
            .get_list("arms")?
            .unwrap_or_else(|| Arm::ALL.to_vec());
        let cfg = Self {
            source,
            split_fraction: kv.get_or("split_fraction", 0.8)?,
            split_seed: kv.get_or("split_seed", 0)?,
            arms,
            oversample,
            train: config::train_config(kv)?,
            model_seed: kv.get_or("model_seed", 0)?,
            repetitions: kv.get_or("repetitions", 5)?,
            output_dir: PathBuf::from(kv.raw("output_dir").unwrap_or("results")),
            f1_average: config::f1_average(kv)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("at least one arm is required".into()));
        }
        let mut seen = self.arms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.arms.len() {
            return Err(Error::Config("arms must not repeat".into()));
        }
        self.oversample.validate()?;
        self.train.validate()
    }
}

/// Stratified train/test index split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Classes with a single sample, which appear in train only.
    pub train_only_classes: Vec<usize>,
}

/// Each class contributes `floor(fraction * count)` samples (at least one
/// when it has two or more) to the training side. Indices come back sorted.
pub fn split<T: crate::Scalar>(dataset: &FeatureDataset<T>, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut train_only_classes = Vec::new();
    for (class, members) in dataset.partition_by_class().iter() {
        let n = members.len();
        if n == 0 {
            continue;
        }
        let mut shuffled = members.to_vec();
        shuffled.shuffle(&mut rng);
        let n_train = if n == 1 {
            warn!(
                "class {:?} has a single sample; it goes to train and the test set lacks the class",
                dataset.classes()[class]
            );
            train_only_classes.push(class);
            1
        } else {
            ((fraction * n as f64).floor() as usize).max(1)
        };
        train.extend_from_slice(&shuffled[..n_train]);
        test.extend_from_slice(&shuffled[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        test,
        train_only_classes,
    })
}

/// Outcome of one arm in one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub arm: Arm,
    pub repetition: usize,
    /// Averaged F1 (macro by default), percent.
    pub f1: f64,
    /// Per-class F1, percent.
    pub per_class_f1: Vec<f64>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Number of training samples the classifier saw per epoch.
    pub train_size: usize,
    pub synthetic: usize,
    /// Original dataset indices the synthetic vectors were translated from.
    pub synthetic_sources: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: Arm,
    pub mean: f64,
    /// Sample standard deviation over repetitions (0 for a single run).
    pub std_dev: f64,
    /// Mean minus baseline mean; `None` when the baseline arm was not run.
    pub delta: Option<f64>,
    pub per_class_mean: Vec<f64>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub labels: Vec<String>,
    pub f1_average: F1Average,
    pub repetitions: usize,
    pub runs: Vec<RunResult>,
    pub summaries: Vec<ArmSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, arm: Arm) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm)
    }

    pub fn runs_for(&self, arm: Arm) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.arm == arm)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_arm(
    arm: Arm,
    repetition: usize,
    cfg: &ExperimentConfig,
    train_set: &FeatureDataset<f64>,
    train_indices: &[usize],
    test_set: &FeatureDataset<f64>,
    test_indices: &[usize],
) -> Result<RunResult> {
    let started = Instant::now();
    let r = repetition as u64;
    let train_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(r),
        ..cfg.train.clone()
    };
    let model_seed = cfg.model_seed.wrapping_add(r);
    let oversample_cfg = OversampleConfig {
        seed: cfg.oversample.seed.wrapping_add(r),
        ..cfg.oversample.clone()
    };

    let (data, sampling, synth) = match arm {
        Arm::Baseline => (None, Sampling::Epoch, None),
        Arm::M2mOrig => (None, Sampling::Balanced, None),
        Arm::M2mF | Arm::M2mU => {
            let s = if arm == Arm::M2mF {
                oversample_m2mf(train_set, &oversample_cfg)?
            } else {
                oversample_m2mu(train_set, &oversample_cfg)?
            };
            (Some(train_set.merge(&s)?), Sampling::Epoch, Some(s))
        }
    };
    let data = data.as_ref().unwrap_or(train_set);
    let outcome = train_with(data, model_seed, &train_cfg, sampling)?;
    let predictions = outcome.model.predict_dataset(test_set)?;
    let report = EvalReport::from_predictions(train_set.classes().to_vec(), test_set.labels(), &predictions, cfg.f1_average)?;

    let synthetic_sources: Vec<usize> = synth
        .iter()
        .flat_map(|s| s.iter().flat_map(|(_, c)| c.sources().iter().map(|&i| train_indices[i])))
        .collect();
    Ok(RunResult {
        arm,
        repetition,
        f1: report.f1,
        per_class_f1: report.per_class.iter().map(|s| s.f1).collect(),
        accuracy: 100.0 * report.confusion.accuracy(),
        confusion: report.confusion,
        train_size: data.len(),
        synthetic: synthetic_sources.len(),
        synthetic_sources,
        test_indices: test_indices.to_vec(),
        wall_time: started.elapsed(),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dataset = cfg.source.load()?;
    if dataset.num_classes() < 2 {
        return Err(Error::Config("experiments need at least two classes".into()));
    }
    let mut runs = Vec::with_capacity(cfg.arms.len() * cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let parts = split(&dataset, cfg.split_fraction, cfg.split_seed.wrapping_add(rep as u64))?;
        let train_set = dataset.subset(&parts.train);
        let test_set = dataset.subset(&parts.test);
        for &arm in &cfg.arms {
            let run = run_arm(arm, rep, cfg, &train_set, &parts.train, &test_set, &parts.test)
                .map_err(|e| e.context(format!("arm {arm}, repetition {rep}")))?;
            info!("{arm} rep {rep}: F1 {:.2} ({} synthetic)", run.f1, run.synthetic);
            runs.push(run);
        }
    }

    let baseline_mean = runs
        .iter()
        .any(|r| r.arm == Arm::Baseline)
        .then(|| mean_std(&runs.iter().filter(|r| r.arm == Arm::Baseline).map(|r| r.f1).collect::<Vec<_>>()).0);
    let k = dataset.num_classes();
    let summaries = cfg
        .arms
        .iter()
        .map(|&arm| {
            let arm_runs: Vec<&RunResult> = runs.iter().filter(|r| r.arm == arm).collect();
            let (mean, std_dev) = mean_std(&arm_runs.iter().map(|r| r.f1).collect::<Vec<_>>());
            let per_class_mean = (0..k)
                .map(|c| arm_runs.iter().map(|r| r.per_class_f1[c]).sum::<f64>() / arm_runs.len() as f64)
                .collect();
            ArmSummary {
                arm,
                mean,
                std_dev,
                delta: baseline_mean.map(|b| mean - b),
                per_class_mean,
                wall_time: arm_runs.iter().map(|r| r.wall_time).sum(),
            }
        })
        .collect();

    Ok(ExperimentReport {
        labels: dataset.classes().to_vec(),
        f1_average: cfg.f1_average,
        repetitions: cfg.repetitions,
        runs,
        summaries,
    })
}

/// `arm,rep,<avg>_f1,accuracy,train_size,synthetic,f1_<label>...`
pub fn results_csv(report: &ExperimentReport) -> String {
    let mut out = format!("arm,rep,{}_f1,accuracy,train_size,synthetic", report.f1_average);
    for l in &report.labels {
        let _ = write!(out, ",f1_{l}");
    }
    out.push('\n');
    for r in &report.runs {
        let _ = write!(
            out,
            "{},{},{:.4},{:.4},{},{}",
            r.arm, r.repetition, r.f1, r.accuracy, r.train_size, r.synthetic
        );
        for f in &r.per_class_f1 {
            let _ = write!(out, ",{f:.4}");
        }
        out.push('\n');
    }
    out
}

/// Arms as rows, mean ± std, delta vs. baseline and per-class mean F1.
pub fn summary_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} F1 (%) over {} repetition(s)\n",
        match report.f1_average {
            F1Average::Macro => "Macro",
            F1Average::Weighted => "Weighted",
        },
        report.repetitions
    );
    let _ = write!(out, "{:<10} {:>8} {:>7} {:>8}", "arm", "mean", "std", "delta");
    for l in &report.labels {
        let _ = write!(out, " {:>9}", truncate(l, 9));
    }
    let _ = writeln!(out, " {:>10}", "time (s)");
    for s in &report.summaries {
        let delta = s.delta.map_or_else(|| "-".to_string(), |d| format!("{d:+.2}"));
        let _ = write!(out, "{:<10} {:>8.2} {:>7.2} {:>8}", s.arm.name(), s.mean, s.std_dev, delta);
        for f in &s.per_class_mean {
            let _ = write!(out, " {f:>9.2}");
        }
        let _ = writeln!(out, " {:>10.2}", s.wall_time.as_secs_f64());
    }
    out
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Writes `results.csv`, `summary.txt` and one `confusion_<arm>_<rep>.csv`
/// per run, each atomically.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let results = dir.join("results.csv");
    let body = results_csv(report);
    write_atomic(&results, |w| w.write_all(body.as_bytes()))?;
    written.push(results);

    let summary = dir.join("summary.txt");
    let body = summary_table(report);
    write_atomic(&summary, |w| w.write_all(body.as_bytes()))?;
    written.push(summary);

    for r in &report.runs {
        let p = dir.join(format!("confusion_{}_{}.csv", r.arm, r.repetition));
        r.confusion.save_csv(&report.labels, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn counts_dataset(counts: &[usize]) -> FeatureDataset<f64> {
        let classes: Vec<String> = (0..counts.len()).map(|c| format!("k{c}")).collect();
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
        let data = (0..labels.len()).map(|i| i as f64).collect();
        FeatureDataset::new(1, classes, labels, data).unwrap()
    }

    #[test]
    fn split_floor_arithmetic() {
        let ds = counts_dataset(&[10, 5]);
        let s = split(&ds, 0.8, 1).unwrap();
        let train = ds.subset(&s.train).class_counts();
        let test = ds.subset(&s.test).class_counts();
        assert_eq!(train, vec![8, 4]);
        assert_eq!(test, vec![2, 1]);
        assert_eq!(s, split(&ds, 0.8, 1).unwrap());
    }

    #[test]
    fn split_small_classes() {
        let ds = counts_dataset(&[1, 2, 20]);
        let s = split(&ds, 0.3, 4).unwrap();
        assert_eq!(ds.subset(&s.train).class_counts(), vec![1, 1, 6]);
        assert_eq!(s.train_only_classes, vec![0]);
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }

    #[test]
    fn split_partitions_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let counts: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(1..40)).collect();
            let ds = counts_dataset(&counts);
            let s = split(&ds, rng.gen_range(0.05..0.95), rng.gen()).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn arm_names_round_trip() {
        for arm in Arm::ALL {
            assert_eq!(arm.name().parse::<Arm>().unwrap(), arm);
        }
        assert!("smote".parse::<Arm>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default_scenario(0, "out");
        assert!(cfg.validate().is_ok());
        cfg.split_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg.split_fraction = 0.8;
        cfg.arms.clear();
        assert!(cfg.validate().is_err());
        cfg.arms = vec![Arm::Baseline, Arm::Baseline];
        assert!(cfg.validate().is_err());
        cfg.arms = vec![Arm::Baseline];
        cfg.repetitions = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_from_kv() {
        let kv = KvConfig::parse(
            "scenario=default\nscenario_seed=3\narms=baseline,m2m_f\nrepetitions=2\nepochs=4\noutput_dir=/tmp/x",
            "t",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.arms, vec![Arm::Baseline, Arm::M2mF]);
        assert_eq!(cfg.oversample.minority_value, 200);
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.repetitions, 2);
        assert!(matches!(cfg.source, DataSource::Scenario(ref s) if s.seed == 3));

        let both = KvConfig::parse("scenario=default\ndata=x.csv", "t").unwrap();
        assert!(ExperimentConfig::from_kv(&both).is_err());
        let csv_without_mv = KvConfig::parse("data=x.csv", "t").unwrap();
        assert!(ExperimentConfig::from_kv(&csv_without_mv).is_err());
        let unknown = KvConfig::parse("scenario=default\ncolour=red", "t").unwrap();
        assert!(ExperimentConfig::from_kv(&unknown).is_err());
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
