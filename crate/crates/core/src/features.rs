//! Random Fourier feature matrices and feature expansions.
//!
//! For weights `w_1..w_N` in `R^n` and inputs `u_1..u_M` the feature matrix is
//! `A[l, k] = exp(i <w_k, u_l>)`. A trained model holds one coefficient
//! column per output component and predicts `Re(A' C)`.

use faer::{c64, Mat};

use crate::error::{Error, Result};
use crate::sampling::{sample_student_t, RngState, StudentTParams};
use crate::solver::{CoefficientField, RegularizationSpec};

/// Default number of feature columns assembled at once.
pub const DEFAULT_BLOCK_WIDTH: usize = 1024;

/// Feature weights `w_k` as the rows of an `N x n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWeights {
    pub omega: Mat<f64>,
    pub params: StudentTParams,
    /// Stream the weights were drawn from, if they were sampled.
    pub source: Option<RngState>,
}

impl FeatureWeights {
    /// Draws `count` weights in `R^input_dim`.
    pub fn sample(params: &StudentTParams, input_dim: usize, count: usize, rng: &RngState) -> Result<Self> {
        Ok(Self { omega: sample_student_t(params, input_dim, count, rng)?, params: *params, source: Some(*rng) })
    }

    /// Wraps explicit weights.
    pub fn from_omega(omega: Mat<f64>, params: StudentTParams) -> Result<Self> {
        if omega.nrows() == 0 || omega.ncols() == 0 {
            return Err(Error::Parameter("feature weights must be a nonempty matrix".into()));
        }
        for j in 0..omega.ncols() {
            for i in 0..omega.nrows() {
                if !omega[(i, j)].is_finite() {
                    return Err(Error::Data(format!("feature weight ({i}, {j}) is not finite")));
                }
            }
        }
        Ok(Self { omega, params, source: None })
    }

    /// Number of features `N`.
    pub fn count(&self) -> usize {
        self.omega.nrows()
    }

    /// Input dimension `n`.
    pub fn dim(&self) -> usize {
        self.omega.ncols()
    }

    /// Euclidean norms `|w_k|`.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.count())
            .map(|k| (0..self.dim()).map(|j| self.omega[(k, j)].powi(2)).sum::<f64>().sqrt())
            .collect()
    }
}

/// The complex `M x N` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub entries: Mat<c64>,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }
}

/// `A[l, k] = exp(i <w_k, u_l>)` for the rows `u_l` of `inputs`.
pub fn build_feature_matrix(weights: &FeatureWeights, inputs: &Mat<f64>) -> Result<FeatureMatrix> {
    build_feature_matrix_blocked(weights, inputs, DEFAULT_BLOCK_WIDTH)
}

/// [`build_feature_matrix`] assembling `block_width` feature columns at a time.
pub fn build_feature_matrix_blocked(weights: &FeatureWeights, inputs: &Mat<f64>, block_width: usize) -> Result<FeatureMatrix> {
    if inputs.ncols() != weights.dim() {
        return Err(Error::Dimension(format!(
            "inputs have {} columns but weights have dimension {}",
            inputs.ncols(),
            weights.dim()
        )));
    }
    let (m, n) = (inputs.nrows(), weights.count());
    let width = block_width.max(1);
    let mut entries = Mat::<c64>::zeros(m, n);
    let mut start = 0;
    while start < n {
        let end = (start + width).min(n);
        let block = weights.omega.subrows(start, end - start);
        let theta = inputs * block.transpose();
        for k in 0..end - start {
            for l in 0..m {
                let (s, c) = theta[(l, k)].sin_cos();
                entries[(l, start + k)] = c64::new(c, s);
            }
        }
        start = end;
    }
    Ok(FeatureMatrix { entries })
}

/// A trained feature expansion `f_j(u) = Re sum_k C[k, j] exp(i <w_k, u>)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureModel {
    pub weights: FeatureWeights,
    /// `N x m` coefficients; purely real when `field` is [`CoefficientField::Real`].
    pub coefficients: Mat<c64>,
    pub reg: RegularizationSpec,
    pub field: CoefficientField,
}

impl FeatureModel {
    pub fn new(weights: FeatureWeights, coefficients: Mat<c64>, reg: RegularizationSpec, field: CoefficientField) -> Result<Self> {
        if coefficients.nrows() != weights.count() {
            return Err(Error::Dimension(format!(
                "{} coefficient rows but {} features",
                coefficients.nrows(),
                weights.count()
            )));
        }
        for j in 0..coefficients.ncols() {
            for k in 0..coefficients.nrows() {
                let c = coefficients[(k, j)];
                if !(c.re.is_finite() && c.im.is_finite()) {
                    return Err(Error::Data(format!("coefficient ({k}, {j}) is not finite")));
                }
            }
        }
        Ok(Self { weights, coefficients, reg, field })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.coefficients.ncols()
    }
}

/// Predictions `Re(A' C)` for the rows of `inputs`, one column per output component.
pub fn predict(model: &FeatureModel, inputs: &Mat<f64>) -> Result<Mat<f64>> {
    if inputs.ncols() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "inputs have {} columns but the model expects {}",
            inputs.ncols(),
            model.input_dim()
        )));
    }
    let (m, n) = (inputs.nrows(), model.weights.count());
    let mut out = Mat::<f64>::zeros(m, model.output_dim());
    let mut start = 0;
    while start < n {
        let end = (start + DEFAULT_BLOCK_WIDTH).min(n);
        let sub = FeatureWeights {
            omega: model.weights.omega.subrows(start, end - start).to_owned(),
            params: model.weights.params,
            source: None,
        };
        let a = build_feature_matrix(&sub, inputs)?;
        let part = &a.entries * model.coefficients.subrows(start, end - start);
        for j in 0..out.ncols() {
            for i in 0..m {
                out[(i, j)] += part[(i, j)].re;
            }
        }
        start = end;
    }
    Ok(out)
}
