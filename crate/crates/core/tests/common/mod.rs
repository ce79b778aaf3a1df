//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrff_core::features::{build_feature_matrix, FeatureMatrix, FeatureWeights};
use rrff_core::solver::{regularizer_diagonal, CoefficientField, RegularizationSpec};
use rrff_core::{c64, Mat, RngState, StudentTParams};

/// Least squares through Householder QR: the unique minimizer when `b` has
/// full column rank, the minimum-norm solution when it has full row rank.
pub fn qr_least_squares(b: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if b.nrows() >= b.ncols() {
        let qr = b.clone().qr();
        let qtb = qr.q().transpose() * rhs;
        qr.r().solve_upper_triangular(&qtb).expect("full column rank")
    } else {
        let qr = b.transpose().qr();
        let y = qr.r().transpose().solve_lower_triangular(rhs).expect("full row rank");
        qr.q() * y
    }
}

/// The stacked real matrix; unknowns are `[Re x; Im x]` for the complex field.
pub fn stacked_matrix(a: &FeatureMatrix, d: &[f64], scale: f64, field: CoefficientField) -> DMatrix<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    let re = |i: usize, k: usize| a.entries[(i, k)].re;
    let im = |i: usize, k: usize| a.entries[(i, k)].im;
    let pen: Vec<f64> = d.iter().map(|x| (scale * x).sqrt()).collect();
    let with_penalty = pen.iter().any(|&x| x > 0.0);
    match field {
        CoefficientField::Complex => {
            let rows = 2 * m + if with_penalty { 2 * n } else { 0 };
            let mut b = DMatrix::zeros(rows, 2 * n);
            for i in 0..m {
                for k in 0..n {
                    b[(i, k)] = re(i, k);
                    b[(i, n + k)] = -im(i, k);
                    b[(m + i, k)] = im(i, k);
                    b[(m + i, n + k)] = re(i, k);
                }
            }
            if with_penalty {
                for k in 0..n {
                    b[(2 * m + k, k)] = pen[k];
                    b[(2 * m + n + k, n + k)] = pen[k];
                }
            }
            b
        }
        CoefficientField::Real => {
            let rows = 2 * m + if with_penalty { n } else { 0 };
            let mut b = DMatrix::zeros(rows, n);
            for i in 0..m {
                for k in 0..n {
                    b[(i, k)] = re(i, k);
                    b[(m + i, k)] = im(i, k);
                }
            }
            if with_penalty {
                for k in 0..n {
                    b[(2 * m + k, k)] = pen[k];
                }
            }
            b
        }
    }
}

/// Coefficients minimizing `|A x - v|^2 + s sum d_k |x_k|^2` over `C^N` or
/// `R^N`, column by column, from the stacked real system
/// `[Re A, -Im A; Im A, Re A; sqrt(s d), 0; 0, sqrt(s d)]`.
pub fn stacked_oracle(a: &FeatureMatrix, targets: &Mat<f64>, d: &[f64], scale: f64, field: CoefficientField) -> Mat<c64> {
    let n = a.ncols();
    let m = a.nrows();
    let b = stacked_matrix(a, d, scale, field);
    let unknowns = b.ncols();
    let mut out = Mat::zeros(n, targets.ncols());
    for j in 0..targets.ncols() {
        let mut rhs = DVector::zeros(b.nrows());
        for i in 0..m {
            rhs[i] = targets[(i, j)];
        }
        let x = qr_least_squares(&b, &rhs);
        for k in 0..n {
            let imag = if unknowns == 2 * n { x[n + k] } else { 0.0 };
            out[(k, j)] = c64::new(x[k], imag);
        }
    }
    out
}

/// A random least squares instance for the solver comparison.
pub struct Instance {
    pub a: FeatureMatrix,
    pub targets: Mat<f64>,
    pub weights: FeatureWeights,
    pub reg: RegularizationSpec,
    pub field: CoefficientField,
}

/// Largest condition number of the stacked system admitted into the family.
/// Normal-equation solvers lose accuracy like the squared condition number,
/// so this bound keeps the expected agreement with the QR oracle near 1e-8.
pub const MAX_CONDITION: f64 = 1e4;

/// Instance `index` of the seeded family with `M <= 30`, `N <= 60`,
/// `alpha` in `{0, 1e-3, 1}` and `p` in `{0, 2, 4}`. Draws whose stacked
/// system has condition number above [`MAX_CONDITION`] are redrawn.
pub fn instance(index: u64) -> Instance {
    (0u64..)
        .map(|attempt| draw(index, attempt))
        .find(|inst| inst.condition() <= MAX_CONDITION)
        .expect("an admissible draw")
}

fn draw(index: u64, attempt: u64) -> Instance {
    let seed = 1000 + index + 1_000_000 * attempt;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = r.gen_range(2..=30);
    let n = r.gen_range(2..=60);
    let dim = r.gen_range(1..=4);
    let alpha = [0.0, 1e-3, 1.0][(index % 3) as usize];
    let p = [0.0, 2.0, 4.0][((index / 3) % 3) as usize];
    let field = if index % 2 == 0 { CoefficientField::Complex } else { CoefficientField::Real };
    let weights = FeatureWeights::sample(&StudentTParams::gaussian(1.0).unwrap(), dim, n, &RngState::new(seed, 7)).unwrap();
    let inputs = Mat::from_fn(m, dim, |_, _| r.gen_range(-3.0..3.0));
    let targets = Mat::from_fn(m, 3, |_, _| r.gen_range(-1.0..1.0));
    let a = build_feature_matrix(&weights, &inputs).unwrap();
    Instance { a, targets, weights, reg: RegularizationSpec::new(alpha, p).unwrap(), field }
}

impl Instance {
    /// Condition number of the stacked system the oracle solves.
    pub fn condition(&self) -> f64 {
        let d = regularizer_diagonal(&self.weights, &self.reg);
        stacked_condition(&self.a, &d, self.reg.diagonal_scale(self.a.nrows()), self.field)
    }

    /// Number of real-coefficient equations per complex unknown: `M` for the
    /// complex field and `2 M` for the real field.
    pub fn equations(&self) -> usize {
        match self.field {
            CoefficientField::Complex => self.a.nrows(),
            CoefficientField::Real => 2 * self.a.nrows(),
        }
    }

    /// Oracle coefficients from the stacked QR solve.
    pub fn oracle(&self) -> Mat<c64> {
        let d = regularizer_diagonal(&self.weights, &self.reg);
        stacked_oracle(&self.a, &self.targets, &d, self.reg.diagonal_scale(self.a.nrows()), self.field)
    }
}

/// Frobenius norm of `x - y` relative to that of `y`.
pub fn relative_difference(x: &Mat<c64>, y: &Mat<c64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            num += (x[(i, j)] - y[(i, j)]).norm_sqr();
            den += y[(i, j)].norm_sqr();
        }
    }
    (num / den).sqrt()
}

/// Ratio of extreme singular values of the stacked system [`stacked_oracle`] solves.
pub fn stacked_condition(a: &FeatureMatrix, d: &[f64], scale: f64, field: CoefficientField) -> f64 {
    let b = stacked_matrix(a, d, scale, field);
    let s = b.singular_values();
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}
