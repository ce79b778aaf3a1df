//! `rrff`: generate benchmark data, train and evaluate random feature
//! operators, sweep the penalty and check the concentration bound.
//!
//! Every command exits with status 0 on success and 1 on any error; usage
//! errors exit with status 2.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rrff_core::experiment::{
    alpha_sweep, evaluate_trial, generate_data, train_trial, ExperimentConfig, ExperimentData, TrialReport,
};
use rrff_core::io::{model_from_bundle, read_bundle, write_model};
use rrff_core::sampling::Dof;
use rrff_core::theory::{concentration_experiment, kappa_for_eta, separated_points, theorem_conditions, DEFAULT_C};
use rrff_core::{RngState, StudentTParams};

#[derive(Parser, Debug)]
#[command(name = "rrff", version, about = "Regularized random Fourier feature operator learning")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train, test and recovery datasets.
    GenData(Common),
    /// Train the baseline and the regularized model for every trial.
    Train(Common),
    /// Score trained models on the test and recovery sets.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
    },
    /// Mean test error of the regularized model over a grid of penalties.
    AlphaSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated penalties; defaults to the configured `alpha_grid`.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Empirical check of the random feature matrix concentration bound.
    TheoryCheck(TheoryArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory written by `gen-data`; generated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// Number of points `m`.
    #[arg(long, default_value_t = 32)]
    m: usize,
    /// Point dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Degrees of freedom, a positive number or `inf`.
    #[arg(long, default_value = "3")]
    nu: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Target `eta = m phi(kappa)`; the separation `kappa` is solved for.
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Feature counts; `min` stands for the count the bound prescribes.
    #[arg(long, value_delimiter = ',', default_value = "512,2048,8192,min")]
    features: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Accepted for uniformity with the other commands; the bound needs no configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&common.config)
        .with_context(|| format!("reading configuration {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(common: &Common, cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let data = match &common.data {
        Some(dir) => ExperimentData::read(dir).with_context(|| format!("reading datasets from {}", dir.display()))?,
        None => generate_data(cfg)?,
    };
    data.check(cfg)?;
    Ok(data)
}

fn write_config_snapshot(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    fs::write(out.join("config_hash.txt"), format!("{}\n", cfg.hash()))?;
    Ok(())
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let data = generate_data(&cfg)?;
    data.write(&common.out)?;
    write_config_snapshot(&common.out, &cfg)?;
    println!("wrote {} train, {} test, {} recovery samples to {}", data.train.len(), data.test.len(), data.recovery.as_ref().map_or(0, |r| r.len()), common.out.display());
    Ok(())
}

fn model_dir(out: &Path, trial: usize, alpha: f64) -> PathBuf {
    let kind = if alpha == 0.0 { "rff" } else { "rrff" };
    out.join("models").join(format!("trial-{trial:03}")).join(kind)
}

fn train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_data(common, &cfg)?;
    let mut rows = String::from("config_hash,problem,method,alpha,trial,route,jitter,train_seconds\n");
    for trial in 0..cfg.trials {
        for op in train_trial(&cfg, &data, trial)? {
            let alpha = op.config.reg.alpha;
            let meta = BTreeMap::from([
                ("config_hash".to_string(), cfg.hash()),
                ("trial".to_string(), trial.to_string()),
                ("method".to_string(), cfg.method_label(alpha)),
            ]);
            write_model(&model_dir(&common.out, trial, alpha), &op, &meta)?;
            rows += &format!(
                "{},{},{},{},{},{},{},{}\n",
                cfg.hash(),
                cfg.problem,
                cfg.method_label(alpha),
                alpha,
                trial,
                op.report.route,
                op.report.jitter,
                op.train_time.as_secs_f64()
            );
        }
    }
    write_config_snapshot(&common.out, &cfg)?;
    fs::write(common.out.join("train.csv"), rows)?;
    println!("trained {} trials into {}", cfg.trials, common.out.display());
    Ok(())
}

fn eval(common: &Common, models: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_data(common, &cfg)?;
    let mut records = Vec::new();
    for trial in 0..cfg.trials {
        for alpha in cfg.methods() {
            let dir = model_dir(models, trial, alpha);
            let bundle = read_bundle(&dir).with_context(|| format!("reading model {}", dir.display()))?;
            let hash = bundle.meta("config_hash")?;
            if hash != cfg.hash() {
                bail!("model {} was trained under configuration {hash}, not {}", dir.display(), cfg.hash());
            }
            let op = model_from_bundle(&bundle)?;
            records.push(evaluate_trial(&cfg, &data, trial, &op)?);
        }
    }
    let report = TrialReport { config_hash: cfg.hash(), problem: cfg.problem, records };
    report.write(&common.out)?;
    write_config_snapshot(&common.out, &cfg)?;
    print!("{}", report.summary_csv());
    Ok(())
}

fn sweep(common: &Common, alphas: Option<&[f64]>) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_data(common, &cfg)?;
    let grid = alphas.unwrap_or(&cfg.alpha_grid);
    let report = alpha_sweep(&cfg, &data, grid)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("alpha_sweep.csv"), report.to_csv())?;
    write_config_snapshot(&common.out, &cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn theory(args: &TheoryArgs) -> Result<()> {
    let params = StudentTParams::new(Dof::parse(&args.nu)?, args.sigma)?;
    let kappa = kappa_for_eta(args.m, &params, args.eta)?;
    let cond = theorem_conditions(args.m, kappa, &params, args.delta, args.c)?;
    let points = separated_points(args.m, args.dim, kappa, &RngState::new(args.seed, 0))?;
    let canonical = format!(
        "m = {}\ndim = {}\nnu = {}\nsigma = {}\neta = {}\nfeatures = {}\ndelta = {}\nc = {}\nseed = {}\ntrials = {}\n",
        args.m,
        args.dim,
        params.nu,
        args.sigma,
        args.eta,
        args.features.join(","),
        args.delta,
        args.c,
        args.seed,
        args.trials
    );
    let hash = rrff_core::experiment::text_hash(&canonical);
    let mut csv = String::new();
    for (i, spec) in args.features.iter().enumerate() {
        let n = match spec.trim() {
            "min" => cond.n_min.with_context(|| format!("eta = {} >= 1 leaves the bound vacuous", cond.eta))? as usize,
            other => other.parse().with_context(|| format!("feature count {other:?}"))?,
        };
        let report = concentration_experiment(&points, kappa, n, &params, args.trials, &RngState::new(args.seed, 1).child(i as u64))?;
        for (j, line) in report.to_csv().lines().enumerate() {
            if j == 0 && !csv.is_empty() {
                continue;
            }
            let prefix = if j == 0 { "config_hash" } else { hash.as_str() };
            csv += &format!("{prefix},{line}\n");
        }
        println!("N = {n}: median deviation {:.4}, failure fraction {}", report.median_deviation(), report.failure_fraction);
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("concentration.csv"), csv)?;
    fs::write(args.out.join("config.txt"), canonical)?;
    fs::write(args.out.join("config_hash.txt"), format!("{hash}\n"))?;
    println!("kappa = {kappa}, eta = {}, N_min = {:?}", cond.eta, cond.n_min);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match &cli.command {
        Command::GenData(common) => gen_data(common),
        Command::Train(common) => train(common),
        Command::Eval { common, models } => eval(common, models),
        Command::AlphaSweep { common, alphas } => sweep(common, alphas.as_deref()),
        Command::TheoryCheck(args) => theory(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
