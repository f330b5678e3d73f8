//! `hashednets` command-line front end.
//!
//! Precedence: flags, then `--config` JSON, then defaults. The effective
//! configuration is echoed as one JSON line on stdout before any work.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use hashednets::budget::{solve_shrinkage, Architecture};
use hashednets::data::{default_data_dir, load_mnist, synth_blobs_split, Dataset};
use hashednets::experiment::{
    run_sweep, sweep_csv, teacher_targets, Axis, Method, NetworkPlan, RunSeeds, SweepConfig,
};
use hashednets::feature_hash::run_equivalence_suite;
use hashednets::layers::IndexMode;
use hashednets::math::{Activation, Target};
use hashednets::model_io;
use hashednets::training::{grad_check, train, TrainConfig};
use hashednets::{Error, Result};

#[derive(Parser)]
#[command(name = "hashednets", version, about = "Train and compare hashed neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its log and checkpoint.
    Train(Flags),
    /// Evaluate a checkpoint on the test split.
    Eval(Flags),
    /// Train every method at every axis value; write a CSV of test errors.
    Sweep(Flags),
    /// Compare analytic and finite-difference gradients (JSON).
    Gradcheck(Flags),
    /// Solve for the width shrinkage matching a hashed budget (JSON).
    Shrink(Flags),
    /// Check hashed layers against the feature-hashing reference (JSON).
    Equivtest(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// JSON file with any of the configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated widths, input first, e.g. 784,1000,10.
    #[arg(long, value_delimiter = ',')]
    arch: Option<Vec<usize>>,
    /// hashed, hashed_dk, standard, standard_dk (or dk), edge_removed, low_rank.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, visible_alias = "c", allow_negative_numbers = true)]
    compression: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    expansion: Option<f64>,
    /// One bucket per connection for hashed layers (needs a full budget).
    #[arg(long)]
    injective: bool,
    /// Uniform bucket count per hashed layer, overriding the budget.
    #[arg(long = "K")]
    buckets: Option<usize>,
    /// relu, tanh or sigmoid.
    #[arg(long)]
    activation: Option<String>,
    /// Recompute hash indices on every pass instead of tabulating them.
    #[arg(long)]
    on_the_fly: bool,

    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dk_temperature: Option<f64>,
    #[arg(long)]
    dk_mix: Option<f64>,
    /// Master seed; every other seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,

    /// mnist or blobs.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory with the four MNIST IDX files (default: $HASHEDNETS_DATA_DIR or data/mnist).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    blob_classes: Option<usize>,
    #[arg(long)]
    blob_dim: Option<usize>,
    #[arg(long)]
    blob_train_per_class: Option<usize>,
    #[arg(long)]
    blob_test_per_class: Option<usize>,
    #[arg(long)]
    blob_noise: Option<f64>,

    /// Training log CSV (train) or sweep CSV (sweep); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to write (train) or read (eval).
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// compression or expansion.
    #[arg(long)]
    axis: Option<String>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Number of paired seeds per sweep point.
    #[arg(long)]
    seeds: Option<usize>,

    /// Samples per gradient check.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    /// Random layers in the equivalence suite.
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    arch: Vec<usize>,
    kind: Method,
    compression: f64,
    expansion: f64,
    injective: bool,
    buckets: Option<usize>,
    activation: Activation,
    index_mode: IndexMode,
    seed: u64,
    train: TrainConfig,
    dataset: DataSource,
    data_dir: Option<PathBuf>,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
    blobs: BlobConfig,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    axis: Axis,
    values: Vec<f64>,
    methods: Vec<Method>,
    seeds: usize,
    samples: usize,
    eps: f64,
    layers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DataSource {
    Mnist,
    Blobs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BlobConfig {
    classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self { classes: 2, dim: 20, train_per_class: 200, test_per_class: 100, noise: 0.1 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: vec![784, 1000, 10],
            kind: Method::Hashed,
            compression: 1.0,
            expansion: 1.0,
            injective: false,
            buckets: None,
            activation: Activation::Relu,
            index_mode: IndexMode::Precomputed,
            seed: 0,
            train: TrainConfig::default(),
            dataset: DataSource::Mnist,
            data_dir: None,
            train_limit: None,
            test_limit: None,
            blobs: BlobConfig::default(),
            out: None,
            checkpoint: None,
            axis: Axis::Compression,
            values: Vec::new(),
            methods: vec![Method::Hashed, Method::Standard],
            seeds: 1,
            samples: 5,
            eps: 1e-5,
            layers: 50,
        }
    }
}

/// What ran, with every seed spelled out.
#[derive(Serialize)]
struct Echo<'a> {
    command: &'a str,
    config: &'a RunConfig,
    seeds: RunSeeds,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn resolve(flags: Flags) -> Result<RunConfig> {
    let mut c: RunConfig = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("config file {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(flags.arch => c.arch);
    if let Some(k) = flags.kind {
        c.kind = k.parse()?;
    }
    set!(flags.compression => c.compression);
    set!(flags.expansion => c.expansion);
    c.injective |= flags.injective;
    if flags.buckets.is_some() {
        c.buckets = flags.buckets;
    }
    if let Some(a) = flags.activation {
        c.activation = a.parse()?;
    }
    if flags.on_the_fly {
        c.index_mode = IndexMode::OnTheFly;
    }
    set!(flags.lr => c.train.learning_rate);
    set!(flags.momentum => c.train.momentum);
    set!(flags.dropout => c.train.dropout_rate);
    set!(flags.batch_size => c.train.batch_size);
    set!(flags.epochs => c.train.epochs);
    set!(flags.dk_temperature => c.train.dk_temperature);
    set!(flags.dk_mix => c.train.dk_mix);
    set!(flags.seed => c.seed);
    if let Some(d) = flags.dataset {
        c.dataset = match d.as_str() {
            "mnist" => DataSource::Mnist,
            "blobs" => DataSource::Blobs,
            other => return Err(usage(format!("unknown dataset `{other}` (expected mnist or blobs)"))),
        };
    }
    if flags.data_dir.is_some() {
        c.data_dir = flags.data_dir;
    }
    if flags.train_limit.is_some() {
        c.train_limit = flags.train_limit;
    }
    if flags.test_limit.is_some() {
        c.test_limit = flags.test_limit;
    }
    set!(flags.blob_classes => c.blobs.classes);
    set!(flags.blob_dim => c.blobs.dim);
    set!(flags.blob_train_per_class => c.blobs.train_per_class);
    set!(flags.blob_test_per_class => c.blobs.test_per_class);
    set!(flags.blob_noise => c.blobs.noise);
    if flags.out.is_some() {
        c.out = flags.out;
    }
    if flags.checkpoint.is_some() {
        c.checkpoint = flags.checkpoint;
    }
    if let Some(a) = flags.axis {
        c.axis = a.parse()?;
    }
    set!(flags.values => c.values);
    if let Some(ms) = flags.methods {
        c.methods = ms.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    set!(flags.seeds => c.seeds);
    set!(flags.samples => c.samples);
    set!(flags.eps => c.eps);
    set!(flags.layers => c.layers);

    c.train.rng_seed = RunSeeds::derive(c.seed, 0).train;
    c.train.validate()?;
    if c.arch.len() < 2 {
        return Err(usage("--arch needs at least an input and an output width, e.g. 784,100,10"));
    }
    if c.arch.contains(&0) {
        return Err(usage("--arch widths must be positive"));
    }
    Ok(c)
}

fn echo(command: &str, c: &RunConfig) -> Result<()> {
    let e = Echo { command, config: c, seeds: RunSeeds::derive(c.seed, 0) };
    println!("{}", serde_json::to_string(&e)?);
    Ok(())
}

fn load_data(c: &RunConfig) -> Result<(Dataset, Dataset)> {
    match c.dataset {
        DataSource::Mnist => {
            let dir = c.data_dir.clone().unwrap_or_else(default_data_dir);
            load_mnist(&dir, c.train_limit, c.test_limit)
        }
        DataSource::Blobs => {
            let b = &c.blobs;
            let (train, test) =
                synth_blobs_split(b.train_per_class, b.test_per_class, b.classes, b.dim, c.seed, b.noise)?;
            Ok((
                train.take(c.train_limit.unwrap_or(usize::MAX)),
                test.take(c.test_limit.unwrap_or(usize::MAX)),
            ))
        }
    }
}

fn check_data_fits(c: &RunConfig, data: &Dataset) -> Result<()> {
    let (n_in, n_out) = (c.arch[0], *c.arch.last().expect("validated"));
    if n_in != data.dim() || n_out < data.n_classes {
        return Err(usage(format!(
            "--arch {:?} does not fit the data: inputs must be {} and outputs at least {}",
            c.arch,
            data.dim(),
            data.n_classes
        )));
    }
    Ok(())
}

/// Axis and value implied by `--compression` / `--expansion`.
fn single_point(c: &RunConfig) -> Result<(Axis, f64)> {
    match (c.compression != 1.0, c.expansion != 1.0) {
        (true, true) => Err(usage("use either --compression or --expansion, not both")),
        (_, true) => {
            if matches!(c.kind, Method::Standard | Method::StandardDk) {
                return Err(usage("--expansion applies to hashed, edge_removed and low_rank networks"));
            }
            Ok((Axis::Expansion, c.expansion))
        }
        _ => Ok((Axis::Compression, c.compression)),
    }
}

fn plan(c: &RunConfig, seeds: RunSeeds) -> Result<NetworkPlan> {
    let (axis, value) = single_point(c)?;
    let mut p = NetworkPlan::new(c.kind, axis, value, c.arch.clone());
    p.activation = c.activation;
    p.injective = c.injective;
    p.index_mode = c.index_mode;
    p.buckets = c.buckets;
    p.structure_seed = seeds.structure;
    Ok(p)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_train(c: &RunConfig) -> Result<()> {
    let seeds = RunSeeds::derive(c.seed, 0);
    let p = plan(c, seeds)?;
    let mut net = p.build(seeds.init)?;
    let (data, test) = load_data(c)?;
    check_data_fits(c, &data)?;
    let data = if c.kind.uses_teacher() {
        teacher_targets(&c.arch, c.activation, seeds, &c.train, &data)?
    } else {
        data
    };
    eprintln!("trainable parameters: {}", net.trainable_count());
    let log = train(&mut net, &data, Some(&test), &c.train)?;
    write_or_print(c.out.as_deref(), &log.to_csv())?;
    if let Some(path) = &c.checkpoint {
        model_io::save(&net, path)?;
    }
    let err = log.final_test_error().unwrap_or(f64::NAN);
    println!(
        "{}",
        serde_json::json!({ "test_error": err, "param_count": net.trainable_count(), "widths": net.widths() })
    );
    Ok(())
}

fn cmd_eval(c: &RunConfig) -> Result<()> {
    let path = c.checkpoint.as_ref().ok_or_else(|| usage("eval needs --checkpoint"))?;
    let net = model_io::load(path)?;
    let (_, test) = load_data(c)?;
    if net.n_inputs() != test.dim() {
        return Err(usage(format!("checkpoint expects {} inputs, data has {}", net.n_inputs(), test.dim())));
    }
    let err = net.error_rate(&test.samples, &test.labels)?;
    println!(
        "{}",
        serde_json::json!({ "test_error": err, "samples": test.len(), "param_count": net.trainable_count(), "widths": net.widths() })
    );
    Ok(())
}

fn cmd_sweep(c: &RunConfig) -> Result<()> {
    if c.values.is_empty() {
        return Err(usage("sweep needs --values, e.g. --values 1,0.5,0.125"));
    }
    if c.values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(usage("sweep values must be positive"));
    }
    let (data, test) = load_data(c)?;
    check_data_fits(c, &data)?;
    let cfg = SweepConfig {
        axis: c.axis,
        values: c.values.clone(),
        methods: c.methods.clone(),
        widths: c.arch.clone(),
        activation: c.activation,
        injective: c.injective,
        seeds: c.seeds,
        master_seed: c.seed,
        train: c.train.clone(),
    };
    let rows = run_sweep(&cfg, &data, &test, |r| match (&r.test_error, &r.note) {
        (Some(e), _) => eprintln!("{} {} {}: {e:.4}", r.axis_value, r.method, r.seed),
        (None, note) => eprintln!("{} {} {}: infeasible ({})", r.axis_value, r.method, r.seed, note.as_deref().unwrap_or("")),
    })?;
    write_or_print(c.out.as_deref(), &sweep_csv(&rows))
}

fn cmd_gradcheck(c: &RunConfig) -> Result<()> {
    if c.activation == Activation::Relu {
        eprintln!("gradient check uses tanh hidden units");
    }
    let seeds = RunSeeds::derive(c.seed, 0);
    let mut p = plan(c, seeds)?;
    p.activation = Activation::Tanh;
    let net = p.build(seeds.init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.train);
    let n_classes = net.n_classes();
    let mut worst: f64 = 0.0;
    for _ in 0..c.samples {
        let x: Vec<f64> = (0..net.n_inputs()).map(|_| rng.random::<f64>()).collect();
        let y = rng.random_range(0..n_classes);
        worst = worst.max(grad_check(&net, &x, Target::Class(y), c.eps)?);
    }
    println!(
        "{}",
        serde_json::json!({
            "max_rel_error": worst,
            "samples": c.samples,
            "eps": c.eps,
            "param_count": net.trainable_count(),
            "widths": net.widths(),
            "passed": worst < 1e-6,
        })
    );
    Ok(())
}

fn cmd_shrink(c: &RunConfig) -> Result<()> {
    let arch = Architecture::new(c.arch.clone(), c.compression)?;
    println!("{}", serde_json::to_string(&solve_shrinkage(&arch)?)?);
    Ok(())
}

fn cmd_equivtest(c: &RunConfig) -> Result<bool> {
    let report = run_equivalence_suite(c.layers, c.seed)?;
    let passed = report.passes(1e-12);
    let mut v = serde_json::to_value(&report)?;
    v["passed"] = passed.into();
    println!("{v}");
    Ok(passed)
}

fn run(cli: Cli) -> Result<bool> {
    let (name, flags) = match cli.command {
        Command::Train(f) => ("train", f),
        Command::Eval(f) => ("eval", f),
        Command::Sweep(f) => ("sweep", f),
        Command::Gradcheck(f) => ("gradcheck", f),
        Command::Shrink(f) => ("shrink", f),
        Command::Equivtest(f) => ("equivtest", f),
    };
    let config = resolve(flags)?;
    echo(name, &config)?;
    match name {
        "train" => cmd_train(&config)?,
        "eval" => cmd_eval(&config)?,
        "sweep" => cmd_sweep(&config)?,
        "gradcheck" => cmd_gradcheck(&config)?,
        "shrink" => cmd_shrink(&config)?,
        _ => return cmd_equivtest(&config),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidCompression(_) | Error::DegenerateArchitecture(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
