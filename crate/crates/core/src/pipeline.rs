//! Operator learning end to end: grid splitting, training, inference through
//! the finite element recovery map, and the relative test error.
//!
//! The learned operator is `R[f(S(u))]`: `S` samples the input function on
//! its grid, `f` is a random feature model predicting the output at the
//! training nodes, and `R` interpolates those predictions with hat functions
//! on a mesh over the training nodes.

use std::time::{Duration, Instant};

use faer::Mat;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, predict, FeatureMatrix, FeatureModel, FeatureWeights};
use crate::fem::{convex_hull, Mesh};
use crate::pde_data::{select_columns, Dataset, Grid};
use crate::sampling::{add_relative_noise_rows, RngState, StudentTParams};
use crate::solver::{fit, FitOptions, RegularizationSpec, SolveReport};

/// A partition of the output grid into training and validation nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSplit {
    /// Sorted training node indices.
    pub train: Vec<usize>,
    /// Sorted validation node indices.
    pub validation: Vec<usize>,
    pub seed: u64,
}

impl GridSplit {
    /// Every node is a training node.
    pub fn all(nodes: usize) -> Self {
        Self { train: (0..nodes).collect(), validation: Vec::new(), seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nodes that must be training nodes so every validation node lies in the
/// region covered by the training mesh: the two ends of a 1D grid, the convex
/// hull vertices of a 2D grid.
fn extreme_nodes(grid: &Grid) -> Result<Vec<usize>> {
    match grid.dim() {
        1 => {
            let x = grid.coords();
            let lo = (0..x.len()).min_by(|&a, &b| x[a].total_cmp(&x[b])).expect("nonempty grid");
            let hi = (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b])).expect("nonempty grid");
            Ok(vec![lo, hi])
        }
        2 => Ok(convex_hull(&grid.points_2d()?)),
        d => Err(Error::Dimension(format!("grids split in 1 or 2 dimensions, not {d}"))),
    }
}

/// Seeded split with `round(2n/3)` training nodes, extremes always included.
pub fn split_grid(grid: &Grid, rng: &RngState) -> Result<GridSplit> {
    let n = grid.len();
    if n < 3 {
        return Err(Error::Parameter(format!("splitting needs at least 3 nodes, got {n}")));
    }
    let target = (2 * n + 1) / 3;
    let mut forced = extreme_nodes(grid)?;
    forced.sort_unstable();
    forced.dedup();
    let mut is_train = vec![false; n];
    forced.iter().for_each(|&i| is_train[i] = true);
    let mut rest: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();
    rest.shuffle(&mut rng.rng());
    for &i in rest.iter().take(target.saturating_sub(forced.len())) {
        is_train[i] = true;
    }
    let (train, validation): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_train[i]);
    Ok(GridSplit { train, validation, seed: rng.seed })
}

/// Feature distribution, feature count, penalty and solver options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub features: usize,
    pub distribution: StudentTParams,
    pub reg: RegularizationSpec,
    pub options: FitOptions,
}

/// A learned operator: the feature model on the training nodes and the
/// recovery mesh over them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedOperator {
    pub model: FeatureModel,
    /// Mesh over the training nodes; node `j` is `split.train[j]`.
    pub mesh: Mesh,
    pub input_grid: Grid,
    /// The full output grid the split refers to.
    pub output_grid: Grid,
    pub split: GridSplit,
    pub config: TrainConfig,
    pub report: SolveReport,
    pub train_time: Duration,
}

/// Samples `config.features` weights from `rng` and trains on `dataset`.
///
/// `alpha = 0` gives the unregularized random feature baseline.
pub fn train(dataset: &Dataset, split: &GridSplit, config: &TrainConfig, rng: &RngState) -> Result<TrainedOperator> {
    let weights = FeatureWeights::sample(&config.distribution, dataset.input_grid.len(), config.features, rng)?;
    train_with_weights(dataset, split, weights, config)
}

fn check_training_inputs(dataset: &Dataset, split: &GridSplit, weights: &FeatureWeights, config: &TrainConfig) -> Result<()> {
    dataset.validate()?;
    if split.len() != dataset.output_grid.len() || split.train.iter().chain(&split.validation).any(|&i| i >= split.len()) {
        return Err(Error::Dimension(format!(
            "split covers {} nodes but the output grid has {}",
            split.len(),
            dataset.output_grid.len()
        )));
    }
    if weights.count() != config.features {
        return Err(Error::Dimension(format!("{} weights but {} features configured", weights.count(), config.features)));
    }
    Ok(())
}

/// Trains with given feature weights; all training-node columns share one factorization.
pub fn train_with_weights(dataset: &Dataset, split: &GridSplit, weights: FeatureWeights, config: &TrainConfig) -> Result<TrainedOperator> {
    let start = Instant::now();
    check_training_inputs(dataset, split, &weights, config)?;
    let a = build_feature_matrix(&weights, &dataset.inputs)?;
    let mut op = train_with_features(dataset, split, weights, &a, config)?;
    op.train_time = start.elapsed();
    Ok(op)
}

/// Trains with given weights and their precomputed feature matrix on `dataset.inputs`.
pub fn train_with_features(
    dataset: &Dataset,
    split: &GridSplit,
    weights: FeatureWeights,
    features: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<TrainedOperator> {
    let start = Instant::now();
    check_training_inputs(dataset, split, &weights, config)?;
    if features.nrows() != dataset.len() || features.ncols() != weights.count() {
        return Err(Error::Dimension(format!(
            "feature matrix is {}x{} for {} samples and {} weights",
            features.nrows(),
            features.ncols(),
            dataset.len(),
            weights.count()
        )));
    }
    let targets = select_columns(&dataset.outputs, &split.train);
    let (coefficients, report) = fit(features, &targets, &weights, &config.reg, &config.options)?;
    let model = FeatureModel::new(weights, coefficients, config.reg, config.options.field)?;
    let mesh = Mesh::from_grid(&dataset.output_grid.subset(&split.train))?;
    Ok(TrainedOperator {
        model,
        mesh,
        input_grid: dataset.input_grid.clone(),
        output_grid: dataset.output_grid.clone(),
        split: split.clone(),
        config: *config,
        report,
        train_time: start.elapsed(),
    })
}

/// `R[f(u)]` at `queries` for every row `u` of `inputs`.
pub fn infer(op: &TrainedOperator, inputs: &Mat<f64>, queries: &Grid) -> Result<Mat<f64>> {
    if inputs.ncols() != op.input_grid.len() {
        return Err(Error::Dimension(format!("inputs have {} values, the input grid has {}", inputs.ncols(), op.input_grid.len())));
    }
    let basis = op.mesh.basis_weights(queries)?;
    let nodal = predict(&op.model, inputs)?;
    Ok(Mat::from_fn(inputs.nrows(), basis.len(), |i, q| {
        let b = &basis[q];
        (0..3).map(|s| b.weights[s] * nodal[(i, b.nodes[s])]).sum()
    }))
}

/// Which norm divides the error of each sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    /// `|truth - prediction| / |prediction|`.
    #[default]
    Prediction,
    /// `|truth - prediction| / |truth|`.
    Truth,
}

/// Per-sample relative errors and their mean.
///
/// Rows are samples. With `weights` the norms are `sqrt(sum_j w_j x_j^2)`,
/// otherwise plain Euclidean norms.
pub fn relative_test_error(
    predictions: &Mat<f64>,
    truths: &Mat<f64>,
    norm: ErrorNorm,
    weights: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    if predictions.nrows() != truths.nrows() || predictions.ncols() != truths.ncols() {
        return Err(Error::Dimension(format!(
            "predictions are {}x{} but truths are {}x{}",
            predictions.nrows(),
            predictions.ncols(),
            truths.nrows(),
            truths.ncols()
        )));
    }
    if predictions.nrows() == 0 {
        return Err(Error::Parameter("no samples to evaluate".into()));
    }
    if let Some(w) = weights {
        if w.len() != predictions.ncols() {
            return Err(Error::Dimension(format!("{} norm weights for {} points", w.len(), predictions.ncols())));
        }
    }
    let w = |j: usize| weights.map_or(1.0, |w| w[j]);
    let errors = (0..predictions.nrows())
        .map(|i| {
            let (mut diff, mut den) = (0.0, 0.0);
            for j in 0..predictions.ncols() {
                let (p, t) = (predictions[(i, j)], truths[(i, j)]);
                diff += w(j) * (t - p) * (t - p);
                den += w(j) * match norm {
                    ErrorNorm::Prediction => p * p,
                    ErrorNorm::Truth => t * t,
                };
            }
            if den > 0.0 {
                Ok((diff / den).sqrt())
            } else {
                Err(Error::Degenerate(format!("sample {i} has a zero {} norm", match norm {
                    ErrorNorm::Prediction => "prediction",
                    ErrorNorm::Truth => "truth",
                })))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok((errors, mean))
}

/// Output nodes at which a trained operator is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QueryMode {
    /// The training nodes, where `R[f]` equals the model prediction.
    #[default]
    TrainingNodes,
    /// The held-out nodes, reached only through interpolation.
    ValidationNodes,
    /// The whole output grid.
    AllNodes,
}

/// How test predictions are scored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub mode: QueryMode,
    /// Relative noise level applied to test inputs only.
    pub input_noise: f64,
    pub norm: ErrorNorm,
    /// Weight the norms by lumped finite element quadrature over the query nodes.
    pub quadrature: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mode: QueryMode::TrainingNodes, input_noise: 0.05, norm: ErrorNorm::Prediction, quadrature: false }
    }
}

/// Scores of a trained operator on a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub errors: Vec<f64>,
    pub mean_error: f64,
    /// Mean error under the other choice of denominator.
    pub mean_error_alt: f64,
    pub train_time: Duration,
    pub inference_time: Duration,
}

/// Output node indices scored under `mode`.
pub fn query_nodes(split: &GridSplit, mode: QueryMode) -> Vec<usize> {
    match mode {
        QueryMode::TrainingNodes => split.train.clone(),
        QueryMode::ValidationNodes => split.validation.clone(),
        QueryMode::AllNodes => (0..split.len()).collect(),
    }
}

/// Corrupts the test inputs, infers, and scores against the clean test outputs.
pub fn evaluate(op: &TrainedOperator, test: &Dataset, config: &EvalConfig, noise_rng: &RngState) -> Result<EvalReport> {
    test.validate()?;
    if test.input_grid != op.input_grid || test.output_grid != op.output_grid {
        return Err(Error::Data("test grids differ from the training grids".into()));
    }
    let nodes = query_nodes(&op.split, config.mode);
    if nodes.is_empty() {
        return Err(Error::Parameter(format!("no nodes to score in mode {:?}", config.mode)));
    }
    let queries = op.output_grid.subset(&nodes);
    let start = Instant::now();
    let inputs = add_relative_noise_rows(&test.inputs, config.input_noise, noise_rng)?;
    let predictions = infer_parallel(op, &inputs, &queries)?;
    let inference_time = start.elapsed();
    let truths = select_columns(&test.outputs, &nodes);
    let weights = if config.quadrature { Some(Mesh::from_grid(&queries)?.lumped_weights()) } else { None };
    let (errors, mean_error) = relative_test_error(&predictions, &truths, config.norm, weights.as_deref())?;
    let other = match config.norm {
        ErrorNorm::Prediction => ErrorNorm::Truth,
        ErrorNorm::Truth => ErrorNorm::Prediction,
    };
    let mean_error_alt = relative_test_error(&predictions, &truths, other, weights.as_deref()).map_or(f64::NAN, |r| r.1);
    Ok(EvalReport { errors, mean_error, mean_error_alt, train_time: op.train_time, inference_time })
}

/// [`infer`] over blocks of samples in parallel.
fn infer_parallel(op: &TrainedOperator, inputs: &Mat<f64>, queries: &Grid) -> Result<Mat<f64>> {
    const BLOCK: usize = 256;
    let m = inputs.nrows();
    let blocks: Vec<Mat<f64>> = (0..m.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let (s, e) = (b * BLOCK, ((b + 1) * BLOCK).min(m));
            infer(op, &inputs.subrows(s, e - s).to_owned(), queries)
        })
        .collect::<Result<_>>()?;
    let mut out = Mat::zeros(m, queries.len());
    for (b, block) in blocks.iter().enumerate() {
        for j in 0..block.ncols() {
            for i in 0..block.nrows() {
                out[(b * BLOCK + i, j)] = block[(i, j)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde_data::gen_advection_1;
    use crate::solver::CoefficientField;
    use proptest::prelude::*;

    fn config(features: usize, alpha: f64) -> TrainConfig {
        TrainConfig {
            features,
            distribution: StudentTParams::gaussian(0.2).unwrap(),
            reg: RegularizationSpec::new(alpha, 2.0).unwrap(),
            options: FitOptions::default(),
        }
    }

    fn advection(count: usize, seed: u64) -> Dataset {
        gen_advection_1(count, &Grid::uniform_periodic(40), &RngState::new(seed, 0)).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let g = Grid::from_points_1d((0..27).map(|i| (i as f64 / 26.0).powi(2)).collect()).unwrap();
        let s = split_grid(&g, &RngState::new(4, 0)).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (18, 9));
        assert!(s.train.contains(&0) && s.train.contains(&26));
        assert_eq!(s, split_grid(&g, &RngState::new(4, 0)).unwrap());
        let three = split_grid(&Grid::from_points_1d(vec![0.5, 0.0, 1.0]).unwrap(), &RngState::new(1, 0)).unwrap();
        assert_eq!((three.train.clone(), three.validation.clone()), (vec![1, 2], vec![0]));
        assert!(split_grid(&Grid::from_points_1d(vec![0.0, 1.0]).unwrap(), &RngState::new(1, 0)).is_err());
    }

    #[test]
    fn split_keeps_hull_in_training() {
        let g = Grid::interior_square(6);
        let s = split_grid(&g, &RngState::new(9, 0)).unwrap();
        assert_eq!(s.train.len(), 24);
        for corner in [0, 5, 30, 35] {
            assert!(s.train.contains(&corner));
        }
        let mesh = Mesh::from_grid(&g.subset(&s.train)).unwrap();
        assert!(mesh.basis_weights(&g.subset(&s.validation)).is_ok());
    }

    #[test]
    fn error_metric_examples() {
        let p = Mat::from_fn(1, 2, |_, j| [1.0, 2.0][j]);
        assert_eq!(relative_test_error(&p, &p, ErrorNorm::Prediction, None).unwrap().1, 0.0);
        let z = Mat::zeros(1, 2);
        assert!((relative_test_error(&p, &z, ErrorNorm::Prediction, None).unwrap().1 - 1.0).abs() < 1e-15);
        assert!(matches!(relative_test_error(&z, &p, ErrorNorm::Prediction, None), Err(Error::Degenerate(_))));
        assert!(relative_test_error(&p, &Mat::zeros(1, 3), ErrorNorm::Prediction, None).is_err());
    }

    #[test]
    fn two_sample_error_by_direct_evaluation() {
        let pred = Mat::from_fn(2, 2, |i, j| [[1.0, 0.0], [0.0, 2.0]][i][j]);
        let truth = Mat::from_fn(2, 2, |i, j| [[1.0, 0.0], [0.0, 1.0]][i][j]);
        let (e, mean) = relative_test_error(&pred, &truth, ErrorNorm::Prediction, None).unwrap();
        assert_eq!(e, vec![0.0, 0.5]);
        assert_eq!(mean, 0.25);
        let (e, _) = relative_test_error(&pred, &truth, ErrorNorm::Truth, None).unwrap();
        assert_eq!(e, vec![0.0, 1.0]);
        let w = [3.0, 1.0];
        let (e, _) = relative_test_error(&pred, &truth, ErrorNorm::Prediction, Some(&w)).unwrap();
        assert_eq!(e[1], 0.5);
    }

    #[test]
    fn interpolation_regime_fits_training_nodes() {
        let ds = advection(60, 1);
        let split = split_grid(&ds.output_grid, &RngState::new(2, 0)).unwrap();
        let op = train(&ds, &split, &config(600, 0.0), &RngState::new(3, 0)).unwrap();
        assert_eq!(op.report.factorizations, 1);
        assert_eq!(op.model.output_dim(), split.train.len());
        let pred = predict(&op.model, &ds.inputs).unwrap();
        let truth = select_columns(&ds.outputs, &split.train);
        let (_, err) = relative_test_error(&pred, &truth, ErrorNorm::Truth, None).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn inference_at_training_nodes_equals_prediction() {
        let ds = advection(30, 5);
        let split = split_grid(&ds.output_grid, &RngState::new(6, 0)).unwrap();
        let op = train(&ds, &split, &config(200, 0.01), &RngState::new(7, 0)).unwrap();
        let at_nodes = infer(&op, &ds.inputs, &ds.output_grid.subset(&split.train)).unwrap();
        assert_eq!(at_nodes, predict(&op.model, &ds.inputs).unwrap());
        let par = infer_parallel(&op, &ds.inputs, &ds.output_grid).unwrap();
        assert_eq!(par, infer(&op, &ds.inputs, &ds.output_grid).unwrap());
    }

    #[test]
    fn midpoint_is_average_and_constants_stay_constant() {
        let ds = advection(10, 8);
        let split = GridSplit::all(40);
        let mut op = train(&ds, &split, &config(50, 0.1), &RngState::new(9, 0)).unwrap();
        let mid = Grid::from_points_1d(vec![0.5 / 40.0]).unwrap();
        let nodal = predict(&op.model, &ds.inputs).unwrap();
        let out = infer(&op, &ds.inputs, &mid).unwrap();
        for i in 0..10 {
            assert!((out[(i, 0)] - 0.5 * (nodal[(i, 0)] + nodal[(i, 1)])).abs() < 1e-12);
        }
        op.model.weights.omega = Mat::zeros(50, 40);
        op.model.coefficients = Mat::from_fn(50, 40, |k, _| faer::c64::new(if k == 0 { 2.5 } else { 0.0 }, 0.0));
        let q = Grid::from_points_1d(vec![0.1, 0.333, 0.9]).unwrap();
        let out = infer(&op, &ds.inputs, &q).unwrap();
        assert!((0..10).all(|i| (0..3).all(|j| (out[(i, j)] - 2.5).abs() < 1e-14)));
    }

    #[test]
    fn evaluate_modes_and_noise() {
        let train_ds = advection(80, 10);
        let test_ds = advection(20, 11);
        let split = split_grid(&train_ds.output_grid, &RngState::new(12, 0)).unwrap();
        let op = train(&train_ds, &split, &config(400, 0.01), &RngState::new(13, 0)).unwrap();
        for mode in [QueryMode::TrainingNodes, QueryMode::ValidationNodes, QueryMode::AllNodes] {
            let cfg = EvalConfig { mode, ..Default::default() };
            let r = evaluate(&op, &test_ds, &cfg, &RngState::new(14, 0)).unwrap();
            assert_eq!(r.errors.len(), 20);
            assert!((r.mean_error - r.errors.iter().sum::<f64>() / 20.0).abs() < 1e-15);
            assert!(r.errors.iter().all(|&e| e >= 0.0) && r.mean_error_alt.is_finite());
        }
        let quad = EvalConfig { quadrature: true, ..Default::default() };
        assert!(evaluate(&op, &test_ds, &quad, &RngState::new(14, 0)).unwrap().mean_error.is_finite());
        let other_grid = gen_advection_1(5, &Grid::uniform_periodic(20), &RngState::new(1, 0)).unwrap();
        assert!(evaluate(&op, &other_grid, &EvalConfig::default(), &RngState::new(14, 0)).is_err());
    }

    #[test]
    fn noiseless_perfect_model_scores_zero() {
        let ds = advection(40, 15);
        let op = train(&ds, &GridSplit::all(40), &config(800, 0.0), &RngState::new(16, 0)).unwrap();
        let cfg = EvalConfig { input_noise: 0.0, mode: QueryMode::TrainingNodes, ..Default::default() };
        let r = evaluate(&op, &ds, &cfg, &RngState::new(17, 0)).unwrap();
        assert!(r.mean_error < 1e-4, "{}", r.mean_error);
    }

    #[test]
    fn real_field_training() {
        let ds = advection(20, 18);
        let mut cfg = config(100, 0.01);
        cfg.options.field = CoefficientField::Real;
        let op = train(&ds, &GridSplit::all(40), &cfg, &RngState::new(19, 0)).unwrap();
        assert!((0..100).all(|k| (0..40).all(|j| op.model.coefficients[(k, j)].im == 0.0)));
    }

    proptest! {
        #[test]
        fn error_is_scale_invariant(c in 0.01f64..100.0, seed in 0u64..100) {
            let p = Mat::from_fn(3, 5, |i, j| ((seed + 1) as f64 * (i * 5 + j + 1) as f64).sin() + 1.5);
            let t = Mat::from_fn(3, 5, |i, j| ((seed + 2) as f64 * (i + 2 * j) as f64).cos());
            let (_, e1) = relative_test_error(&p, &t, ErrorNorm::Prediction, None).unwrap();
            let (_, e2) = relative_test_error(&(&p * faer::Scale(c)), &(&t * faer::Scale(c)), ErrorNorm::Prediction, None).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-12 * e1.max(1.0));
        }

        #[test]
        fn split_is_a_partition(n in 3usize..200, seed in 0u64..1000) {
            let g = Grid::from_points_1d((0..n).map(|i| ((i * 7919) % 1009) as f64).collect()).unwrap_or_else(|_| Grid::uniform_periodic(n));
            let s = split_grid(&g, &RngState::new(seed, 0)).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!((s.train.len() as f64 - 2.0 * n as f64 / 3.0).abs() <= 1.0);
        }
    }
}
