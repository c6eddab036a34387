use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use featsample::classifier::{load_checkpoint, save_checkpoint, train_with, Sampling};
use featsample::config::{self, KvConfig, OVERSAMPLE_KEYS, TRAIN_KEYS};
use featsample::error::{Error, Result};
use featsample::experiment::{emit_report, run_experiment, scenario_from_value, summary_table, ExperimentConfig, OUTPUT_DIR_ENV};
use featsample::feature_store::{load_features_csv, save_features_csv, FeatureDataset};
use featsample::metrics::EvalReport;
use featsample::oversampling::{oversample_m2mf, oversample_m2mu, save_synthetic_csv};
use featsample::synthgen::gen_clusters;

/// Feature-space oversampling, MLP head training and F1 evaluation.
#[derive(Parser)]
#[command(name = "featsample", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian cluster dataset and write it as CSV.
    Gen(GenArgs),
    /// Generate synthetic minority features for a CSV dataset.
    Oversample(OversampleArgs),
    /// Train the MLP head on a CSV dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a CSV dataset.
    Eval(EvalArgs),
    /// Run the split / oversample / train / evaluate comparison.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// key=value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Default)]
struct OversampleFlags {
    #[arg(long = "m-v")]
    m_v: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long = "d-t")]
    d_t: Option<String>,
    #[arg(long = "sim-t")]
    sim_t: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// mean or max
    #[arg(long)]
    aggregation: Option<String>,
    /// true or false
    #[arg(long)]
    shuffle: Option<String>,
    /// Visit majority samples in dataset order (same as --shuffle false).
    #[arg(long = "no-shuffle")]
    no_shuffle: bool,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    #[arg(long = "learning-rate")]
    learning_rate: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long = "hidden-size")]
    hidden_size: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long = "train-seed")]
    train_seed: Option<String>,
    #[arg(long = "shuffle-each-epoch")]
    shuffle_each_epoch: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// `default` or a scenario file.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long = "scenario-seed")]
    scenario_seed: Option<String>,
    #[arg(long)]
    output: Option<String>,
}

#[derive(Args)]
struct OversampleArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    output: Option<String>,
    /// Also write original + synthetic samples to this CSV.
    #[arg(long)]
    merged: Option<String>,
    /// m2m_f or m2m_u
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    flags: OversampleFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    input: Option<String>,
    /// Checkpoint path to write.
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "model-seed")]
    model_seed: Option<String>,
    /// epoch or balanced
    #[arg(long)]
    sampling: Option<String>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    input: Option<String>,
    /// Write the per-class report CSV here.
    #[arg(long)]
    output: Option<String>,
    /// macro or weighted
    #[arg(long = "f1-average")]
    f1_average: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long = "scenario-seed")]
    scenario_seed: Option<String>,
    #[arg(long = "split-fraction")]
    split_fraction: Option<String>,
    #[arg(long = "split-seed")]
    split_seed: Option<String>,
    /// Comma-separated subset of baseline,m2m_orig,m2m_f,m2m_u.
    #[arg(long)]
    arms: Option<String>,
    #[arg(long)]
    repetitions: Option<String>,
    #[arg(long = "output-dir")]
    output_dir: Option<String>,
    #[arg(long = "f1-average")]
    f1_average: Option<String>,
    #[arg(long = "model-seed")]
    model_seed: Option<String>,
    #[command(flatten)]
    oversample: OversampleFlags,
    #[command(flatten)]
    train: TrainFlags,
}

fn load_config(arg: &ConfigArg) -> Result<KvConfig> {
    arg.config.as_ref().map_or_else(|| Ok(KvConfig::new()), KvConfig::load)
}

fn apply(kv: &mut KvConfig, pairs: &[(&str, &Option<String>)]) {
    for (key, value) in pairs {
        if let Some(v) = value {
            kv.set(*key, v.clone());
        }
    }
}

impl OversampleFlags {
    fn apply(&self, kv: &mut KvConfig) {
        apply(
            kv,
            &[
                ("m_v", &self.m_v),
                ("lambda", &self.lambda),
                ("d_t", &self.d_t),
                ("sim_t", &self.sim_t),
                ("seed", &self.seed),
                ("aggregation", &self.aggregation),
                ("shuffle", &self.shuffle),
            ],
        );
        if self.no_shuffle {
            kv.set("shuffle", "false");
        }
    }
}

impl TrainFlags {
    fn apply(&self, kv: &mut KvConfig) {
        apply(
            kv,
            &[
                ("epochs", &self.epochs),
                ("batch_size", &self.batch_size),
                ("learning_rate", &self.learning_rate),
                ("beta1", &self.beta1),
                ("beta2", &self.beta2),
                ("epsilon", &self.epsilon),
                ("hidden_size", &self.hidden_size),
                ("dropout", &self.dropout),
                ("train_seed", &self.train_seed),
                ("shuffle_each_epoch", &self.shuffle_each_epoch),
            ],
        );
    }
}

fn required(kv: &KvConfig, key: &str) -> Result<String> {
    kv.raw(key)
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("missing required key {key}")))
}

fn allowed<'a>(own: &[&'a str], groups: &[&[&'a str]]) -> Vec<&'a str> {
    own.iter().chain(groups.iter().flat_map(|g| g.iter())).copied().collect()
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut kv = load_config(&args.config)?;
    apply(
        &mut kv,
        &[
            ("scenario", &args.scenario),
            ("scenario_seed", &args.scenario_seed),
            ("output", &args.output),
        ],
    );
    kv.check_known(&["scenario", "scenario_seed", "output"])?;
    let scenario = kv.raw("scenario").unwrap_or("default").to_string();
    let (spec, _) = scenario_from_value(&scenario, kv.get_or("scenario_seed", 0)?)?;
    let output = required(&kv, "output")?;
    let ds: FeatureDataset<f64> = gen_clusters(&spec)?;
    save_features_csv(&ds, &output)?;
    info!("wrote {} samples to {output}", ds.len());
    Ok(())
}

fn cmd_oversample(args: OversampleArgs) -> Result<()> {
    let mut kv = load_config(&args.config)?;
    apply(
        &mut kv,
        &[
            ("input", &args.input),
            ("output", &args.output),
            ("merged", &args.merged),
            ("method", &args.method),
        ],
    );
    args.flags.apply(&mut kv);
    kv.check_known(&allowed(&["input", "output", "merged", "method"], &[OVERSAMPLE_KEYS]))?;
    let cfg = config::oversample_config(&kv)?;
    let ds: FeatureDataset<f64> = load_features_csv(required(&kv, "input")?)?;
    let synth = match kv.raw("method").unwrap_or("m2m_f") {
        "m2m_f" => oversample_m2mf(&ds, &cfg)?,
        "m2m_u" => oversample_m2mu(&ds, &cfg)?,
        other => return Err(Error::Config(format!("method must be m2m_f or m2m_u, got {other:?}"))),
    };
    for s in synth.shortfalls() {
        warn!(
            "class {:?}: generated {} of {} synthetic features",
            ds.classes()[s.class],
            s.achieved,
            s.target
        );
    }
    save_synthetic_csv(&synth, required(&kv, "output")?)?;
    if let Some(path) = kv.raw("merged") {
        save_features_csv(&ds.merge(&synth)?, path)?;
    }
    for (class, set) in synth.iter() {
        println!("{}\t{}", ds.classes()[class], set.len());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut kv = load_config(&args.config)?;
    apply(
        &mut kv,
        &[
            ("input", &args.input),
            ("model", &args.model),
            ("model_seed", &args.model_seed),
            ("sampling", &args.sampling),
        ],
    );
    args.flags.apply(&mut kv);
    kv.check_known(&allowed(&["input", "model", "model_seed", "sampling"], &[TRAIN_KEYS]))?;
    let cfg = config::train_config(&kv)?;
    let sampling = match kv.raw("sampling").unwrap_or("epoch") {
        "epoch" => Sampling::Epoch,
        "balanced" => Sampling::Balanced,
        other => return Err(Error::Config(format!("sampling must be epoch or balanced, got {other:?}"))),
    };
    let ds: FeatureDataset<f64> = load_features_csv(required(&kv, "input")?)?;
    let outcome = train_with(&ds, kv.get_or("model_seed", 0)?, &cfg, sampling)?;
    save_checkpoint(&outcome.model, required(&kv, "model")?)?;
    if let Some(last) = outcome.losses.last() {
        println!("final batch loss {last:.6}");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut kv = load_config(&args.config)?;
    apply(
        &mut kv,
        &[
            ("model", &args.model),
            ("input", &args.input),
            ("output", &args.output),
            ("f1_average", &args.f1_average),
        ],
    );
    kv.check_known(&["model", "input", "output", "f1_average"])?;
    let model = load_checkpoint::<f64>(required(&kv, "model")?)?;
    let ds: FeatureDataset<f64> = load_features_csv(required(&kv, "input")?)?;
    // Map the file's labels onto the model's class indices.
    let mut truth = Vec::with_capacity(ds.len());
    for (label, _) in ds.rows() {
        let name = &ds.classes()[label];
        let idx = model
            .labels()
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Config(format!("label {name:?} is not known to the model")))?;
        truth.push(idx);
    }
    let predictions = model.predict_dataset(&ds)?;
    let report = EvalReport::from_predictions(model.labels().to_vec(), &truth, &predictions, config::f1_average(&kv)?)?;
    println!("{report}");
    if let Some(path) = kv.raw("output") {
        report.save_csv(path)?;
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut kv = load_config(&args.config)?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        kv.set("output_dir", dir);
    }
    apply(
        &mut kv,
        &[
            ("data", &args.data),
            ("scenario", &args.scenario),
            ("scenario_seed", &args.scenario_seed),
            ("split_fraction", &args.split_fraction),
            ("split_seed", &args.split_seed),
            ("arms", &args.arms),
            ("repetitions", &args.repetitions),
            ("output_dir", &args.output_dir),
            ("f1_average", &args.f1_average),
            ("model_seed", &args.model_seed),
        ],
    );
    args.oversample.apply(&mut kv);
    args.train.apply(&mut kv);
    let cfg = ExperimentConfig::from_kv(&kv)?;
    let report = run_experiment(&cfg)?;
    emit_report(&report, &cfg.output_dir)?;
    print!("{}", summary_table(&report));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Oversample(a) => cmd_oversample(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
