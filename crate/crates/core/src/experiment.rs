//! Experiment configuration, dataset generation, seeded trial runners and
//! CSV reports.
//!
//! A configuration is flat `key = value` text; `#` starts a comment and
//! unknown keys are rejected. The `problem` key selects a preset that the
//! remaining keys override, so a file holding only `problem = burgers`
//! describes the reference Burgers experiment.
//!
//! Every trial `t` draws its feature weights, grid split and noise from
//! streams derived from `(seed, t)`, and all methods of one trial share the
//! same weights, split and noisy training data. Reports carry the SHA-256 of
//! the canonical configuration text; error reports are deterministic given
//! the configuration, while wall times are written to a separate file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, FeatureModel, FeatureWeights};
use crate::fem::Mesh;
use crate::io::{read_dataset, write_dataset};
use crate::pde_data::{
    gen_advection_1, gen_advection_2, gen_advection_3, gen_burgers, gen_darcy, jittered_subgrid, select_columns, BurgersConfig,
    DarcyConfig, Dataset, Grid,
};
use crate::pipeline::{evaluate, split_grid, train_with_features, ErrorNorm, EvalConfig, GridSplit, QueryMode, TrainConfig, TrainedOperator};
use crate::sampling::{streams, Dof, RngState, StudentTParams};
use crate::solver::{fit, CoefficientField, FitOptions, LossScaling, RegularizationPath, RegularizationSpec, SolveStrategy};

/// Benchmark problems with a built-in generator, plus externally supplied data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Advection1,
    Advection2,
    Advection3,
    Burgers,
    Darcy,
    /// Data read from disk; no generator.
    External,
}

impl Problem {
    pub const ALL: [Problem; 6] =
        [Problem::Advection1, Problem::Advection2, Problem::Advection3, Problem::Burgers, Problem::Darcy, Problem::External];

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Advection1 => "advection1",
            Problem::Advection2 => "advection2",
            Problem::Advection3 => "advection3",
            Problem::Burgers => "burgers",
            Problem::Darcy => "darcy",
            Problem::External => "external",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Problem::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown problem {:?}", s.trim())))
    }
}

fn query_name(mode: QueryMode) -> &'static str {
    match mode {
        QueryMode::TrainingNodes => "training",
        QueryMode::ValidationNodes => "validation",
        QueryMode::AllNodes => "all",
    }
}

fn parse_query(s: &str) -> Result<QueryMode> {
    match s {
        "training" => Ok(QueryMode::TrainingNodes),
        "validation" => Ok(QueryMode::ValidationNodes),
        "all" => Ok(QueryMode::AllNodes),
        other => Err(Error::Config(format!("unknown query mode {other:?}"))),
    }
}

fn norm_name(norm: ErrorNorm) -> &'static str {
    match norm {
        ErrorNorm::Prediction => "prediction",
        ErrorNorm::Truth => "truth",
    }
}

fn parse_norm(s: &str) -> Result<ErrorNorm> {
    match s {
        "prediction" => Ok(ErrorNorm::Prediction),
        "truth" => Ok(ErrorNorm::Truth),
        other => Err(Error::Config(format!("unknown error norm {other:?}"))),
    }
}

/// Everything that determines an experiment's data, models and reports.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub nu: Dof,
    pub sigma: f64,
    /// Number of random features `N`.
    pub features: usize,
    /// Penalty of the regularized method; the unregularized baseline always uses 0.
    pub alpha: f64,
    pub p: f64,
    pub noise_train_input: f64,
    pub noise_train_output: f64,
    pub noise_test_input: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Held-out samples scored at every output node through the recovery map; 0 disables.
    pub n_recovery: usize,
    /// Points of the uniform grid, or the interior side length for Darcy.
    pub grid: usize,
    /// Size of a seeded nonuniform subset of the grid; 0 keeps the full grid.
    pub coarse_grid: usize,
    /// Hold out a third of the output nodes as validation nodes.
    pub split: bool,
    pub seed: u64,
    pub trials: usize,
    pub scaling: LossScaling,
    pub field: CoefficientField,
    pub strategy: SolveStrategy,
    pub query: QueryMode,
    pub norm: ErrorNorm,
    pub quadrature: bool,
    pub alpha_grid: Vec<f64>,
    pub burgers_dt: f64,
    pub burgers_modes: usize,
    pub viscosity: f64,
    /// Constant Darcy source.
    pub darcy_source: f64,
}

const KEYS: [&str; 28] = [
    "problem",
    "nu",
    "sigma",
    "features",
    "alpha",
    "p",
    "noise_train_input",
    "noise_train_output",
    "noise_test_input",
    "n_train",
    "n_test",
    "n_recovery",
    "grid",
    "coarse_grid",
    "split",
    "seed",
    "trials",
    "scaling",
    "field",
    "strategy",
    "query",
    "norm",
    "quadrature",
    "alpha_grid",
    "burgers_dt",
    "burgers_modes",
    "viscosity",
    "darcy_source",
];

impl ExperimentConfig {
    /// The reference configuration of `problem` with Gaussian features.
    pub fn preset(problem: Problem) -> Self {
        let base = Self {
            problem,
            nu: Dof::Infinite,
            sigma: 0.2,
            features: 5000,
            alpha: 0.01,
            p: 2.0,
            noise_train_input: 0.05,
            noise_train_output: 0.05,
            noise_test_input: 0.05,
            n_train: 1000,
            n_test: 1000,
            n_recovery: 0,
            grid: 40,
            coarse_grid: 0,
            split: true,
            seed: 0,
            trials: 20,
            scaling: LossScaling::Mean,
            field: CoefficientField::Complex,
            strategy: SolveStrategy::Auto,
            query: QueryMode::TrainingNodes,
            norm: ErrorNorm::Prediction,
            quadrature: false,
            alpha_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            burgers_dt: 1e-4,
            burgers_modes: 256,
            viscosity: 0.1,
            darcy_source: 1.0,
        };
        match problem {
            Problem::Advection1 | Problem::Advection2 | Problem::External => base,
            Problem::Advection3 => Self { grid: 200, sigma: 2e-3f64.sqrt(), alpha: 0.1, ..base },
            Problem::Burgers => Self { grid: 128, features: 10_000, alpha: 0.1, n_train: 1800, n_test: 200, ..base },
            Problem::Darcy => {
                Self { grid: 15, features: 20_000, sigma: 2e-5f64.sqrt(), alpha: 0.1, n_train: 1000, n_test: 200, ..base }
            }
        }
    }

    /// Parses configuration text; the preset of `problem` supplies unset keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
        }
        let problem: Problem =
            entries.get("problem").ok_or_else(|| Error::Config("missing key \"problem\"".into()))?.parse()?;
        let mut cfg = Self::preset(problem);
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("{key} must be true or false, got {value:?}"))),
            }
        }
        let config_err = |e: Error| Error::Config(format!("{key}: {e}"));
        match key {
            "problem" => self.problem = value.parse()?,
            "nu" => self.nu = Dof::parse(value).map_err(config_err)?,
            "sigma" => self.sigma = num(key, value)?,
            "features" => self.features = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "noise_train_input" => self.noise_train_input = num(key, value)?,
            "noise_train_output" => self.noise_train_output = num(key, value)?,
            "noise_test_input" => self.noise_test_input = num(key, value)?,
            "n_train" => self.n_train = num(key, value)?,
            "n_test" => self.n_test = num(key, value)?,
            "n_recovery" => self.n_recovery = num(key, value)?,
            "grid" => self.grid = num(key, value)?,
            "coarse_grid" => self.coarse_grid = num(key, value)?,
            "split" => self.split = flag(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "scaling" => self.scaling = value.parse().map_err(config_err)?,
            "field" => self.field = value.parse().map_err(config_err)?,
            "strategy" => self.strategy = value.parse().map_err(config_err)?,
            "query" => self.query = parse_query(value)?,
            "norm" => self.norm = parse_norm(value)?,
            "quadrature" => self.quadrature = flag(key, value)?,
            "alpha_grid" => {
                self.alpha_grid = value.split(',').map(|a| num(key, a.trim())).collect::<Result<Vec<f64>>>()?;
            }
            "burgers_dt" => self.burgers_dt = num(key, value)?,
            "burgers_modes" => self.burgers_modes = num(key, value)?,
            "viscosity" => self.viscosity = num(key, value)?,
            "darcy_source" => self.darcy_source = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Checks counts, noise levels and the derived distribution and penalty.
    pub fn validate(&self) -> Result<()> {
        let counts = [("features", self.features), ("n_train", self.n_train), ("n_test", self.n_test), ("trials", self.trials)];
        if let Some((name, _)) = counts.iter().find(|(_, c)| *c == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        for (name, level) in [
            ("noise_train_input", self.noise_train_input),
            ("noise_train_output", self.noise_train_output),
            ("noise_test_input", self.noise_test_input),
        ] {
            if !(0.0..1.0).contains(&level) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {level}")));
            }
        }
        if self.grid < 3 {
            return Err(Error::Config(format!("grid must be at least 3, got {}", self.grid)));
        }
        if self.coarse_grid != 0 && (self.coarse_grid < 3 || self.coarse_grid > self.fine_nodes()) {
            return Err(Error::Config(format!("coarse_grid must be 0 or in [3, {}], got {}", self.fine_nodes(), self.coarse_grid)));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Config("alpha_grid must be a nonempty list of nonnegative numbers".into()));
        }
        self.distribution().map_err(|e| Error::Config(e.to_string()))?;
        RegularizationSpec::new(self.alpha, self.p).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Canonical text: every key in a fixed order, numbers in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let alphas: Vec<String> = self.alpha_grid.iter().map(|a| a.to_string()).collect();
        let values = [
            self.problem.to_string(),
            self.nu.to_string(),
            self.sigma.to_string(),
            self.features.to_string(),
            self.alpha.to_string(),
            self.p.to_string(),
            self.noise_train_input.to_string(),
            self.noise_train_output.to_string(),
            self.noise_test_input.to_string(),
            self.n_train.to_string(),
            self.n_test.to_string(),
            self.n_recovery.to_string(),
            self.grid.to_string(),
            self.coarse_grid.to_string(),
            self.split.to_string(),
            self.seed.to_string(),
            self.trials.to_string(),
            self.scaling.to_string(),
            self.field.to_string(),
            self.strategy.to_string(),
            query_name(self.query).to_string(),
            norm_name(self.norm).to_string(),
            self.quadrature.to_string(),
            alphas.join(","),
            self.burgers_dt.to_string(),
            self.burgers_modes.to_string(),
            self.viscosity.to_string(),
            self.darcy_source.to_string(),
        ];
        KEYS.iter().zip(values.iter()).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Lowercase hex SHA-256 of [`ExperimentConfig::to_text`].
    pub fn hash(&self) -> String {
        text_hash(&self.to_text())
    }

    pub fn distribution(&self) -> Result<StudentTParams> {
        StudentTParams::new(self.nu, self.sigma)
    }

    /// Training settings for penalty `alpha`.
    pub fn train_config(&self, alpha: f64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            features: self.features,
            distribution: self.distribution()?,
            reg: RegularizationSpec::new(alpha, self.p)?.with_scaling(self.scaling),
            options: FitOptions { field: self.field, strategy: self.strategy },
        })
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { mode: self.query, input_noise: self.noise_test_input, norm: self.norm, quadrature: self.quadrature }
    }

    /// Penalties compared in every trial: the unregularized baseline and `alpha`.
    pub fn methods(&self) -> Vec<f64> {
        if self.alpha == 0.0 {
            vec![0.0]
        } else {
            vec![0.0, self.alpha]
        }
    }

    /// `RFF-<nu>` for `alpha = 0`, `RRFF-<nu>` otherwise, with a `-FEM` infix on coarse grids.
    pub fn method_label(&self, alpha: f64) -> String {
        let base = if alpha == 0.0 { "RFF" } else { "RRFF" };
        let fem = if self.coarse_grid > 0 { "-FEM" } else { "" };
        format!("{base}{fem}-{}", self.nu)
    }

    fn fine_nodes(&self) -> usize {
        match self.problem {
            Problem::Darcy => self.grid * self.grid,
            _ => self.grid,
        }
    }

    /// Output nodes a dataset for this configuration must have.
    pub fn expected_nodes(&self) -> Option<usize> {
        match self.problem {
            Problem::External => None,
            _ if self.coarse_grid > 0 => Some(self.coarse_grid),
            _ => Some(self.fine_nodes()),
        }
    }

    fn trial_rng(&self, trial: usize) -> RngState {
        RngState::new(self.seed, streams::TRIALS).child(trial as u64)
    }
}

/// Lowercase hex SHA-256 of `text`.
pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Training, test and recovery datasets of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    /// Clean training pairs; noise is added per trial.
    pub train: Dataset,
    pub test: Dataset,
    pub recovery: Option<Dataset>,
}

impl ExperimentData {
    /// Writes `train/`, `test/` and optionally `recovery/` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_dataset(&dir.join("train"), &self.train)?;
        write_dataset(&dir.join("test"), &self.test)?;
        if let Some(r) = &self.recovery {
            write_dataset(&dir.join("recovery"), r)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let recovery_dir = dir.join("recovery");
        Ok(Self {
            train: read_dataset(&dir.join("train"))?,
            test: read_dataset(&dir.join("test"))?,
            recovery: if recovery_dir.exists() { Some(read_dataset(&recovery_dir)?) } else { None },
        })
    }

    /// Errors unless all datasets share grids and match the configured node count.
    pub fn check(&self, cfg: &ExperimentConfig) -> Result<()> {
        for ds in std::iter::once(&self.test).chain(&self.recovery) {
            if ds.input_grid != self.train.input_grid || ds.output_grid != self.train.output_grid {
                return Err(Error::Data("datasets of one experiment must share their grids".into()));
            }
        }
        if let Some(n) = cfg.expected_nodes() {
            if self.train.output_grid.len() != n || self.train.input_grid.len() != n {
                return Err(Error::Data(format!(
                    "configuration expects {n} grid points, the dataset has {} input and {} output points",
                    self.train.input_grid.len(),
                    self.train.output_grid.len()
                )));
            }
            if self.train.problem() != cfg.problem.name() {
                return Err(Error::Data(format!("dataset is {:?}, configuration is {}", self.train.problem(), cfg.problem)));
            }
        }
        Ok(())
    }
}

/// Generates `n_train + n_test + n_recovery` pairs in one seeded draw and
/// splits them in that order, restricting to the coarse grid if configured.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    cfg.validate()?;
    let total = cfg.n_train + cfg.n_test + cfg.n_recovery;
    let rng = RngState::new(cfg.seed, streams::SAMPLES);
    let line = || Grid::uniform_periodic(cfg.grid);
    let mut all = match cfg.problem {
        Problem::Advection1 => gen_advection_1(total, &line(), &rng)?,
        Problem::Advection2 => gen_advection_2(total, &line(), &rng)?,
        Problem::Advection3 => gen_advection_3(total, &line(), &rng)?,
        Problem::Burgers => {
            let bc = BurgersConfig { viscosity: cfg.viscosity, modes: cfg.burgers_modes, dt: cfg.burgers_dt, ..Default::default() };
            gen_burgers(total, &bc, &line(), &rng)?
        }
        Problem::Darcy => {
            let mut dc = DarcyConfig::new(cfg.grid);
            dc.source = vec![cfg.darcy_source; cfg.grid * cfg.grid];
            gen_darcy(total, &dc, &rng)?
        }
        Problem::External => return Err(Error::Config("external problems have no generator".into())),
    };
    if cfg.coarse_grid > 0 {
        let nodes = jittered_subgrid(&all.output_grid, cfg.coarse_grid, &RngState::new(cfg.seed, streams::GRID))?;
        let mut restricted = all.restrict(&nodes, &nodes);
        let list: Vec<String> = nodes.iter().map(|i| i.to_string()).collect();
        restricted.metadata.insert("coarse_nodes".into(), list.join(","));
        all = restricted;
    }
    all.metadata.insert("config_hash".into(), cfg.hash());
    let part = |start: usize, end: usize, role: &str| -> Result<Dataset> {
        let mut ds = all.rows(start, end)?;
        ds.metadata.insert("role".into(), role.into());
        Ok(ds)
    };
    let (a, b) = (cfg.n_train, cfg.n_train + cfg.n_test);
    Ok(ExperimentData {
        train: part(0, a, "train")?,
        test: part(a, b, "test")?,
        recovery: if cfg.n_recovery > 0 { Some(part(b, total, "recovery")?) } else { None },
    })
}

/// Split, noisy training data and feature weights of one trial.
struct TrialSetup {
    split: GridSplit,
    noisy: Dataset,
    weights: FeatureWeights,
}

fn trial_setup(cfg: &ExperimentConfig, data: &ExperimentData, trial: usize) -> Result<TrialSetup> {
    let rng = cfg.trial_rng(trial);
    let grid = &data.train.output_grid;
    let split = if cfg.split { split_grid(grid, &rng.child(streams::GRID))? } else { GridSplit::all(grid.len()) };
    let noisy = data.train.with_noise(
        cfg.noise_train_input,
        cfg.noise_train_output,
        &rng.child(streams::TRAIN_INPUT_NOISE),
        &rng.child(streams::TRAIN_OUTPUT_NOISE),
    )?;
    let weights = FeatureWeights::sample(&cfg.distribution()?, data.train.input_grid.len(), cfg.features, &rng.child(streams::WEIGHTS))?;
    Ok(TrialSetup { split, noisy, weights })
}

/// Trains one operator per entry of [`ExperimentConfig::methods`] for `trial`.
pub fn train_trial(cfg: &ExperimentConfig, data: &ExperimentData, trial: usize) -> Result<Vec<TrainedOperator>> {
    let setup = trial_setup(cfg, data, trial)?;
    let start = Instant::now();
    let a = build_feature_matrix(&setup.weights, &setup.noisy.inputs)?;
    let shared = start.elapsed();
    cfg.methods()
        .into_iter()
        .map(|alpha| {
            let mut op = train_with_features(&setup.noisy, &setup.split, setup.weights.clone(), &a, &cfg.train_config(alpha)?)?;
            op.train_time += shared;
            Ok(op)
        })
        .collect()
}

/// Errors of one trained operator in one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: String,
    pub alpha: f64,
    pub test_error: f64,
    /// Mean error under the other denominator.
    pub test_error_alt: f64,
    /// Mean error over the recovery samples at every output node.
    pub recovery_error: Option<f64>,
    pub train_time: Duration,
    pub inference_time: Duration,
}

/// Scores `op`, trained in `trial`, on the test and recovery sets.
pub fn evaluate_trial(cfg: &ExperimentConfig, data: &ExperimentData, trial: usize, op: &TrainedOperator) -> Result<TrialRecord> {
    let rng = cfg.trial_rng(trial).child(streams::TEST_INPUT_NOISE);
    let eval = cfg.eval_config();
    let test = evaluate(op, &data.test, &eval, &rng)?;
    let recovery = match &data.recovery {
        Some(r) => Some(evaluate(op, r, &EvalConfig { mode: QueryMode::AllNodes, ..eval }, &rng.child(1))?.mean_error),
        None => None,
    };
    let alpha = op.config.reg.alpha;
    Ok(TrialRecord {
        trial,
        method: cfg.method_label(alpha),
        alpha,
        test_error: test.mean_error,
        test_error_alt: test.mean_error_alt,
        recovery_error: recovery,
        train_time: test.train_time,
        inference_time: test.inference_time,
    })
}

/// Per-trial records of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialReport {
    pub config_hash: String,
    pub problem: Problem,
    pub records: Vec<TrialRecord>,
}

/// Aggregate of one method over all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub alpha: f64,
    pub trials: usize,
    pub mean_error: f64,
    /// Sample standard deviation of the per-trial errors (0 for one trial).
    pub std_error: f64,
    pub mean_error_alt: f64,
    pub mean_recovery_error: Option<f64>,
    pub mean_train_seconds: f64,
    pub mean_inference_seconds: f64,
}

/// Header of [`TrialReport::to_csv`].
pub const TRIAL_HEADER: &str = "config_hash,problem,method,alpha,trial,test_error,test_error_alt,recovery_error";
/// Header of [`TrialReport::summary_csv`].
pub const SUMMARY_HEADER: &str = "config_hash,problem,method,alpha,trials,mean_error,std_error,mean_error_alt,mean_recovery_error";
/// Header of [`TrialReport::timing_csv`].
pub const TIMING_HEADER: &str = "config_hash,problem,method,alpha,trial,train_seconds,inference_seconds";
/// Header of [`SweepReport::to_csv`].
pub const SWEEP_HEADER: &str = "config_hash,problem,method,alpha,trials,mean_error,std_error";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

impl TrialReport {
    /// One summary per method in order of first appearance.
    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut methods: Vec<(String, f64)> = Vec::new();
        for r in &self.records {
            if !methods.iter().any(|(m, a)| *m == r.method && *a == r.alpha) {
                methods.push((r.method.clone(), r.alpha));
            }
        }
        methods
            .into_iter()
            .map(|(method, alpha)| {
                let rs: Vec<&TrialRecord> = self.records.iter().filter(|r| r.method == method && r.alpha == alpha).collect();
                let errors: Vec<f64> = rs.iter().map(|r| r.test_error).collect();
                let (mean_error, std_error) = mean_std(&errors);
                let n = rs.len() as f64;
                let recovery: Option<Vec<f64>> = rs.iter().map(|r| r.recovery_error).collect();
                MethodSummary {
                    method,
                    alpha,
                    trials: rs.len(),
                    mean_error,
                    std_error,
                    mean_error_alt: rs.iter().map(|r| r.test_error_alt).sum::<f64>() / n,
                    mean_recovery_error: recovery.map(|v| v.iter().sum::<f64>() / n),
                    mean_train_seconds: rs.iter().map(|r| r.train_time.as_secs_f64()).sum::<f64>() / n,
                    mean_inference_seconds: rs.iter().map(|r| r.inference_time.as_secs_f64()).sum::<f64>() / n,
                }
            })
            .collect()
    }

    /// Summary of the method with penalty `alpha`.
    pub fn method(&self, alpha: f64) -> Option<MethodSummary> {
        self.summary().into_iter().find(|s| s.alpha == alpha)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRIAL_HEADER}\n");
        for r in &self.records {
            out += &format!(
                "{},{},{},{},{},{},{},{}\n",
                self.config_hash,
                self.problem,
                r.method,
                r.alpha,
                r.trial,
                r.test_error,
                r.test_error_alt,
                opt(r.recovery_error)
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for s in self.summary() {
            out += &format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.config_hash,
                self.problem,
                s.method,
                s.alpha,
                s.trials,
                s.mean_error,
                s.std_error,
                s.mean_error_alt,
                opt(s.mean_recovery_error)
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = format!("{TIMING_HEADER}\n");
        for r in &self.records {
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                self.config_hash,
                self.problem,
                r.method,
                r.alpha,
                r.trial,
                r.train_time.as_secs_f64(),
                r.inference_time.as_secs_f64()
            );
        }
        out
    }

    /// Writes `trials.csv`, `summary.csv` and `timings.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trials.csv"), self.to_csv())?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("timings.csv"), self.timing_csv())?;
        Ok(())
    }
}

/// Trains and scores every method for every trial.
pub fn run_trials(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<TrialReport> {
    cfg.validate()?;
    data.check(cfg)?;
    let mut records = Vec::new();
    for trial in 0..cfg.trials {
        for op in train_trial(cfg, data, trial)? {
            records.push(evaluate_trial(cfg, data, trial, &op)?);
        }
    }
    Ok(TrialReport { config_hash: cfg.hash(), problem: cfg.problem, records })
}

/// Mean test error per penalty over all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub config_hash: String,
    pub problem: Problem,
    pub method: String,
    pub alphas: Vec<f64>,
    /// `errors[i][t]` is the error at `alphas[i]` in trial `t`.
    pub errors: Vec<Vec<f64>>,
}

impl SweepReport {
    pub fn means(&self) -> Vec<f64> {
        self.errors.iter().map(|e| mean_std(e).0).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for (alpha, errors) in self.alphas.iter().zip(&self.errors) {
            let (mean, std) = mean_std(errors);
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                self.config_hash,
                self.problem,
                self.method,
                alpha,
                errors.len(),
                mean,
                std
            );
        }
        out
    }
}

/// Scores the regularized method over `alphas` with weights, split and noisy
/// data shared across the grid within each trial.
///
/// Positive penalties reuse one kernel per trial; `alpha = 0` is fitted directly.
pub fn alpha_sweep(cfg: &ExperimentConfig, data: &ExperimentData, alphas: &[f64]) -> Result<SweepReport> {
    cfg.validate()?;
    data.check(cfg)?;
    if alphas.is_empty() || alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::Config("the alpha grid must be a nonempty list of nonnegative numbers".into()));
    }
    let mut errors = vec![Vec::with_capacity(cfg.trials); alphas.len()];
    for trial in 0..cfg.trials {
        let setup = trial_setup(cfg, data, trial)?;
        let start = Instant::now();
        let a = build_feature_matrix(&setup.weights, &setup.noisy.inputs)?;
        let targets = select_columns(&setup.noisy.outputs, &setup.split.train);
        let mesh = Mesh::from_grid(&setup.noisy.output_grid.subset(&setup.split.train))?;
        let path = if alphas.iter().any(|&x| x > 0.0) {
            Some(RegularizationPath::new(&a, &targets, &setup.weights, cfg.p, cfg.scaling, cfg.field)?)
        } else {
            None
        };
        let shared = start.elapsed();
        for (i, &alpha) in alphas.iter().enumerate() {
            let start = Instant::now();
            let config = cfg.train_config(alpha)?;
            let (coefficients, report) = match &path {
                Some(path) if alpha > 0.0 => path.solve(alpha)?,
                _ => fit(&a, &targets, &setup.weights, &config.reg, &config.options)?,
            };
            let op = TrainedOperator {
                model: FeatureModel::new(setup.weights.clone(), coefficients, config.reg, cfg.field)?,
                mesh: mesh.clone(),
                input_grid: setup.noisy.input_grid.clone(),
                output_grid: setup.noisy.output_grid.clone(),
                split: setup.split.clone(),
                config,
                report,
                train_time: shared + start.elapsed(),
            };
            errors[i].push(evaluate_trial(cfg, data, trial, &op)?.test_error);
        }
    }
    Ok(SweepReport {
        config_hash: cfg.hash(),
        problem: cfg.problem,
        method: cfg.method_label(1.0),
        alphas: alphas.to_vec(),
        errors,
    })
}
