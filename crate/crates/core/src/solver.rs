//! Frequency-weighted Tikhonov least squares for random feature coefficients.
//!
//! For each output component `j` the coefficients solve
//!
//! ```text
//! min_x  s * |A x - v_j|^2 + sum_k d_k |x_k|^2,   d_k = alpha |w_k|^p,
//! ```
//!
//! where `s = 1` for [`LossScaling::Sum`] and `s = 1 / M` for
//! [`LossScaling::Mean`]. All `m` right-hand sides share one Cholesky
//! factorization. Two mathematically equivalent routes exist:
//!
//! * primal: `(B^H B + D) x = B^H v` with an `N x N` Gram matrix;
//! * dual: `x = D^-1 B^H (B D^-1 B^H + I)^-1 v` with an `M x M` kernel matrix,
//!   which is far cheaper when `N > M`.
//!
//! With `alpha = 0` the dual route returns the minimum-norm least squares
//! solution `B^H (B B^H)^-1 v`. Coefficients are complex by default; the real
//! field minimizes over `x` in `R^N`, which is the complex problem for the
//! stacked real matrix `B = [Re A; Im A]` with targets `[v; 0]`.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::{c64, Mat, Side};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureWeights};

/// Normalization of the data-fit term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossScaling {
    /// `|A x - v|^2`.
    Sum,
    /// `|A x - v|^2 / M`, so `alpha` is independent of the sample count.
    Mean,
}

/// Penalty parameters `alpha`, `p` and the data-fit normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationSpec {
    pub alpha: f64,
    pub p: f64,
    pub scaling: LossScaling,
}

impl Default for RegularizationSpec {
    fn default() -> Self {
        Self { alpha: 0.0, p: 2.0, scaling: LossScaling::Mean }
    }
}

impl RegularizationSpec {
    pub fn new(alpha: f64, p: f64) -> Result<Self> {
        let spec = Self { alpha, p, scaling: LossScaling::Mean };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_scaling(self, scaling: LossScaling) -> Self {
        Self { scaling, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(Error::Parameter(format!("p must be nonnegative, got {}", self.p)));
        }
        Ok(())
    }

    /// Multiplier turning `d_k` into the diagonal of the normal equations.
    pub fn diagonal_scale(&self, samples: usize) -> f64 {
        match self.scaling {
            LossScaling::Sum => 1.0,
            LossScaling::Mean => samples as f64,
        }
    }
}

/// Whether coefficients range over `C^N` or `R^N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoefficientField {
    Real,
    Complex,
}

/// Choice between the primal and the dual normal equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStrategy {
    /// Dual when `N` exceeds the number of equations and the penalty is
    /// either strictly positive or identically zero, primal otherwise.
    Auto,
    Primal,
    Dual,
}

/// The route actually taken by a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveRoute {
    Primal,
    Dual,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Parameter(format!(concat!("unknown ", stringify!($ty), " {:?}"), other))),
                }
            }
        }
    };
}

keyword_enum!(LossScaling { Sum => "sum", Mean => "mean" });
keyword_enum!(CoefficientField { Real => "real", Complex => "complex" });
keyword_enum!(SolveStrategy { Auto => "auto", Primal => "primal", Dual => "dual" });
keyword_enum!(SolveRoute { Primal => "primal", Dual => "dual" });

/// Options of [`fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub field: CoefficientField,
    pub strategy: SolveStrategy,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { field: CoefficientField::Complex, strategy: SolveStrategy::Auto }
    }
}

/// Diagnostics of a solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// `|B c_j - t_j|` for every output component.
    pub residual_norms: Vec<f64>,
    /// Diagonal jitter added before the successful factorization.
    pub jitter: f64,
    pub jitter_retries: usize,
    /// Successful Cholesky factorizations (one per solve).
    pub factorizations: usize,
    pub route: SolveRoute,
    pub wall_time: Duration,
}

/// Initial jitter relative to the infinity norm of the factored matrix.
pub const JITTER_START: f64 = 1e-10;
/// Jitter growth factor per retry.
pub const JITTER_GROWTH: f64 = 10.0;
/// Maximum number of jittered retries.
pub const JITTER_RETRIES: usize = 4;

/// `d_k = alpha |w_k|^p` with `0^0 = 1`.
pub fn regularizer_diagonal(weights: &FeatureWeights, reg: &RegularizationSpec) -> Vec<f64> {
    weights.norms().into_iter().map(|r| reg.alpha * penalty_power(r, reg.p)).collect()
}

fn penalty_power(r: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        r.powf(p)
    }
}

fn inf_norm(m: &Mat<c64>) -> f64 {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
}

struct Factorization {
    llt: faer::linalg::solvers::Llt<c64>,
    jitter: f64,
    retries: usize,
}

/// Cholesky of a Hermitian matrix; on failure retries with growing diagonal jitter.
fn factor_with_jitter(mut m: Mat<c64>) -> Result<Factorization> {
    if let Ok(llt) = m.llt(Side::Lower) {
        return Ok(Factorization { llt, jitter: 0.0, retries: 0 });
    }
    let mut jitter = JITTER_START * inf_norm(&m);
    if jitter == 0.0 {
        jitter = JITTER_START;
    }
    let mut added = 0.0;
    for retry in 1..=JITTER_RETRIES {
        for i in 0..m.nrows() {
            m[(i, i)] += c64::new(jitter - added, 0.0);
        }
        added = jitter;
        if let Ok(llt) = m.llt(Side::Lower) {
            return Ok(Factorization { llt, jitter, retries: retry });
        }
        jitter *= JITTER_GROWTH;
    }
    Err(Error::Singular { retries: JITTER_RETRIES, jitter: added })
}

fn check_finite(m: &Mat<f64>, what: &str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::Data(format!("{what} entry ({i}, {j}) is not finite")));
            }
        }
    }
    Ok(())
}

/// The system matrix and targets in the requested field.
fn system<'a>(a: &'a FeatureMatrix, targets: &Mat<f64>, field: CoefficientField) -> (Cow<'a, Mat<c64>>, Mat<c64>) {
    let (m, n) = (a.nrows(), a.ncols());
    match field {
        CoefficientField::Complex => {
            let t = Mat::from_fn(m, targets.ncols(), |i, j| c64::new(targets[(i, j)], 0.0));
            (Cow::Borrowed(&a.entries), t)
        }
        CoefficientField::Real => {
            let b = Mat::from_fn(2 * m, n, |i, k| {
                let e = a.entries[(i % m, k)];
                c64::new(if i < m { e.re } else { e.im }, 0.0)
            });
            let t = Mat::from_fn(2 * m, targets.ncols(), |i, j| c64::new(if i < m { targets[(i, j)] } else { 0.0 }, 0.0));
            (Cow::Owned(b), t)
        }
    }
}

fn residual_norms(b: &Mat<c64>, c: &Mat<c64>, t: &Mat<c64>) -> Vec<f64> {
    let r = b * c - t;
    (0..r.ncols()).map(|j| (0..r.nrows()).map(|i| r[(i, j)].norm_sqr()).sum::<f64>().sqrt()).collect()
}

fn scale_rows(m: &mut Mat<c64>, s: &[f64]) {
    for j in 0..m.ncols() {
        for (i, &si) in s.iter().enumerate() {
            m[(i, j)] *= si;
        }
    }
}

/// Fits coefficients for every target column with one shared factorization.
///
/// Returns the `N x m` coefficients and a report. A failed factorization is
/// retried with diagonal jitter `1e-10 |K|_inf`, growing tenfold, at most
/// four times.
pub fn fit(
    a: &FeatureMatrix,
    targets: &Mat<f64>,
    weights: &FeatureWeights,
    reg: &RegularizationSpec,
    options: &FitOptions,
) -> Result<(Mat<c64>, SolveReport)> {
    let start = Instant::now();
    reg.validate()?;
    if targets.nrows() != a.nrows() {
        return Err(Error::Dimension(format!("{} target rows but {} feature rows", targets.nrows(), a.nrows())));
    }
    if weights.count() != a.ncols() {
        return Err(Error::Dimension(format!("{} weights but {} feature columns", weights.count(), a.ncols())));
    }
    check_finite(targets, "target")?;
    let scale = reg.diagonal_scale(a.nrows());
    let d: Vec<f64> = regularizer_diagonal(weights, reg).into_iter().map(|x| scale * x).collect();
    let (b, t) = system(a, targets, options.field);
    let (rows, n) = (b.nrows(), b.ncols());
    let all_positive = d.iter().all(|&x| x > 0.0);
    let all_zero = d.iter().all(|&x| x == 0.0);
    let route = match options.strategy {
        SolveStrategy::Primal => SolveRoute::Primal,
        SolveStrategy::Dual => {
            if !(all_positive || all_zero) {
                return Err(Error::Parameter("the dual route needs a penalty that is strictly positive or identically zero".into()));
            }
            SolveRoute::Dual
        }
        SolveStrategy::Auto if n > rows && (all_positive || all_zero) => SolveRoute::Dual,
        SolveStrategy::Auto => SolveRoute::Primal,
    };
    let (coefficients, fact) = match route {
        SolveRoute::Primal => {
            let mut gram = b.adjoint() * b.as_ref();
            for (k, &dk) in d.iter().enumerate() {
                gram[(k, k)] += c64::new(dk, 0.0);
            }
            let rhs = b.adjoint() * &t;
            let fact = factor_with_jitter(gram)?;
            (fact.llt.solve(&rhs), fact)
        }
        SolveRoute::Dual if all_zero => {
            let kernel = b.as_ref() * b.adjoint();
            let fact = factor_with_jitter(kernel)?;
            let y = fact.llt.solve(&t);
            (b.adjoint() * &y, fact)
        }
        SolveRoute::Dual => {
            let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
            let mut bd = b.adjoint().to_owned();
            scale_rows(&mut bd, &inv);
            let mut kernel = b.as_ref() * &bd;
            for i in 0..rows {
                kernel[(i, i)] += c64::new(1.0, 0.0);
            }
            let fact = factor_with_jitter(kernel)?;
            let y = fact.llt.solve(&t);
            let mut c = &bd * &y;
            if fact.jitter == 0.0 {
                // One step of iterative refinement on B^H (t - B c) = D c.
                let mut r = b.adjoint() * (&t - b.as_ref() * &c);
                for j in 0..r.ncols() {
                    for k in 0..n {
                        r[(k, j)] = (r[(k, j)] - c[(k, j)] * d[k]) * inv[k];
                    }
                }
                let z = fact.llt.solve(b.as_ref() * &r);
                c += r - &bd * &z;
            }
            (c, fact)
        }
    };
    let report = SolveReport {
        residual_norms: residual_norms(&b, &coefficients, &t),
        jitter: fact.jitter,
        jitter_retries: fact.retries,
        factorizations: 1,
        route,
        wall_time: start.elapsed(),
    };
    Ok((coefficients, report))
}

/// Solves for many values of `alpha > 0` with fixed data, weights and `p`.
///
/// The kernel `K = B W B^H` with `W = diag(|w_k|^-p)` is formed once; each
/// `alpha` then costs one `M x M` factorization, since the coefficients are
/// `W B^H (K + lambda I)^-1 t` with `lambda = alpha` times the loss scale.
pub struct RegularizationPath<'a> {
    b: Cow<'a, Mat<c64>>,
    t: Mat<c64>,
    weighted_adjoint: Mat<c64>,
    kernel: Mat<c64>,
    scale: f64,
    p: f64,
    scaling: LossScaling,
}

impl<'a> RegularizationPath<'a> {
    pub fn new(
        a: &'a FeatureMatrix,
        targets: &Mat<f64>,
        weights: &FeatureWeights,
        p: f64,
        scaling: LossScaling,
        field: CoefficientField,
    ) -> Result<Self> {
        RegularizationSpec { alpha: 1.0, p, scaling }.validate()?;
        if targets.nrows() != a.nrows() || weights.count() != a.ncols() {
            return Err(Error::Dimension("targets, features and weights disagree".into()));
        }
        check_finite(targets, "target")?;
        let w: Vec<f64> = weights.norms().into_iter().map(|r| 1.0 / penalty_power(r, p)).collect();
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("a zero-frequency feature makes the penalty singular".into()));
        }
        let (b, t) = system(a, targets, field);
        let mut weighted_adjoint = b.adjoint().to_owned();
        scale_rows(&mut weighted_adjoint, &w);
        let kernel = b.as_ref() * &weighted_adjoint;
        let scale = match scaling {
            LossScaling::Sum => 1.0,
            LossScaling::Mean => a.nrows() as f64,
        };
        Ok(Self { b, t, weighted_adjoint, kernel, scale, p, scaling })
    }

    pub fn spec(&self, alpha: f64) -> RegularizationSpec {
        RegularizationSpec { alpha, p: self.p, scaling: self.scaling }
    }

    /// Coefficients and report for one `alpha > 0`.
    pub fn solve(&self, alpha: f64) -> Result<(Mat<c64>, SolveReport)> {
        let start = Instant::now();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!("path solves need alpha > 0, got {alpha}")));
        }
        let lambda = alpha * self.scale;
        let mut k = self.kernel.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += c64::new(lambda, 0.0);
        }
        let fact = factor_with_jitter(k)?;
        let y = fact.llt.solve(&self.t);
        let coefficients = &self.weighted_adjoint * &y;
        let report = SolveReport {
            residual_norms: residual_norms(&self.b, &coefficients, &self.t),
            jitter: fact.jitter,
            jitter_retries: fact.retries,
            factorizations: 1,
            route: SolveRoute::Dual,
            wall_time: start.elapsed(),
        };
        Ok((coefficients, report))
    }
}
