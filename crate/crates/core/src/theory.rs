//! Kernel values and concentration of random feature matrices.
//!
//! The characteristic function of the multivariate Student's t distribution
//! with `nu` degrees of freedom and scale `sigma` is the Matern kernel
//! `phi(t) = x^(nu/2) K_(nu/2)(x) / (2^(nu/2 - 1) Gamma(nu/2))` with
//! `x = sigma sqrt(nu) |t|`. For points separated by `kappa` and
//! `eta = m phi(kappa)`, enough features `N >= C eta^-2 m ln(2m / delta)`
//! give `|A A^* / N - I| <= 2 eta` with probability at least `1 - delta`.
//! This module evaluates `phi`, those conditions, and the empirical deviation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::{c64, Mat};
use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, FeatureWeights};
use crate::sampling::{Dof, RngState, StudentTParams};

/// Orders at or above this use the uniform large-order expansion.
pub const DEBYE_ORDER: f64 = 60.0;

/// Power iteration stops when the Rayleigh quotient changes by less than this, relatively.
pub const POWER_TOLERANCE: f64 = 1e-8;

/// Power iteration gives up after this many steps.
pub const POWER_MAX_ITER: usize = 10_000;

/// Default theorem constant.
pub const DEFAULT_C: f64 = 6.0;

/// Taylor coefficients of `1/Gamma(z) = sum_k c_k z^k`, `k = 1..=26`.
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
];

/// `(gam1, gam2, 1/Gamma(1+f), 1/Gamma(1-f))` for `|f| <= 1/2`, where
/// `gam1 = (1/Gamma(1-f) - 1/Gamma(1+f)) / (2f)` and
/// `gam2 = (1/Gamma(1-f) + 1/Gamma(1+f)) / 2`, without cancellation at `f = 0`.
fn temme_gammas(f: f64) -> (f64, f64, f64, f64) {
    let f2 = f * f;
    let (mut gam1, mut gam2, mut pow) = (0.0, 0.0, 1.0);
    for pair in RECIP_GAMMA.chunks(2) {
        gam2 += pair[0] * pow;
        gam1 -= pair[1] * pow;
        pow *= f2;
    }
    (gam1, gam2, gam2 - f * gam1, gam2 + f * gam1)
}

/// `ln K_f(x)` and `K_(f+1)(x) / K_f(x)` for `|f| <= 1/2`.
fn bessel_k_low(f: f64, x: f64) -> (f64, f64) {
    const EPS: f64 = 1e-16;
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * f;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = f * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(f);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..10_000 {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - f * f);
            c *= dd / fi;
            p /= fi - f;
            q /= fi + f;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum.ln(), sum1 * 2.0 / x / sum)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let (mut q1, mut q2) = (0.0, 1.0);
        let a1 = 0.25 - f * f;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..10_000 {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        (0.5 * (PI / (2.0 * x)).ln() - x - s.ln(), (f + x + 0.5 - h) / x)
    }
}

/// `sum_k (-1)^k u_k(p) / mu^k` for `k <= 4`, the Debye series of `K_mu(mu z)`.
fn debye_series(p: f64, mu: f64) -> f64 {
    let p2 = p * p;
    let u1 = p * (3.0 - 5.0 * p2) / 24.0;
    let u2 = p2 * (81.0 + p2 * (-462.0 + p2 * 385.0)) / 1152.0;
    let u3 = p * p2 * (30375.0 + p2 * (-369603.0 + p2 * (765765.0 - p2 * 425425.0))) / 414720.0;
    let u4 = p2 * p2 * (4465125.0 + p2 * (-94121676.0 + p2 * (349922430.0 + p2 * (-446185740.0 + p2 * 185910725.0)))) / 39813120.0;
    let r = 1.0 / mu;
    1.0 + r * (-u1 + r * (u2 + r * (-u3 + r * u4)))
}

/// `(w - 1, ln S)` pieces shared by the large-order forms, with `w = sqrt(1 + z^2)`.
fn debye_parts(mu: f64, x: f64) -> (f64, f64, f64) {
    let z = x / mu;
    let w = (1.0 + z * z).sqrt();
    let wm1 = z * z / (w + 1.0);
    (z, wm1, debye_series(1.0 / w, mu).ln())
}

/// `ln K_mu(x)` for real order `mu` and `x > 0`.
///
/// Orders with `|mu| < 60` use Temme's series (`x < 2`) or Steed's continued
/// fraction (`x >= 2`) at the fractional order followed by upward recurrence
/// in ratio form; larger orders use the uniform asymptotic expansion.
pub fn ln_bessel_k(mu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() || !mu.is_finite() {
        return Err(Error::Parameter(format!("Bessel K needs finite order and x > 0, got mu = {mu}, x = {x}")));
    }
    let mu = mu.abs();
    if mu >= DEBYE_ORDER {
        let (z, wm1, ln_s) = debye_parts(mu, x);
        let eta = 1.0 + wm1 + (z / (2.0 + wm1)).ln();
        return Ok(0.5 * (PI / (2.0 * mu)).ln() - mu * eta - 0.25 * (1.0 + z * z).ln() + ln_s);
    }
    let n = (mu + 0.5).floor();
    let f = mu - n;
    let (mut ln_k, mut ratio) = bessel_k_low(f, x);
    for i in 0..n as usize {
        ln_k += ratio.ln();
        ratio = 2.0 * (f + i as f64 + 1.0) / x + 1.0 / ratio;
    }
    Ok(ln_k)
}

/// `K_mu(x)`; overflows to infinity and underflows to zero like `exp(ln_bessel_k)`.
pub fn bessel_k(mu: f64, x: f64) -> Result<f64> {
    ln_bessel_k(mu, x).map(f64::exp)
}

/// Stirling correction `ln Gamma(mu) - ((mu - 1/2) ln mu - mu + ln(2 pi) / 2)`.
fn stirling_correction(mu: f64) -> f64 {
    let r = 1.0 / mu;
    let r2 = r * r;
    r * (1.0 / 12.0 + r2 * (-1.0 / 360.0 + r2 * (1.0 / 1260.0 - r2 / 1680.0)))
}

/// Characteristic function at radius `r = |t|` through the Bessel function,
/// for any finite `nu > 0`.
pub fn characteristic_fn_bessel(nu: f64, sigma: f64, r: f64) -> Result<f64> {
    if !(nu > 0.0 && nu.is_finite() && sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("need finite nu > 0 and sigma > 0, got nu = {nu}, sigma = {sigma}")));
    }
    if r.is_nan() || r < 0.0 {
        return Err(Error::Parameter(format!("radius must be nonnegative, got {r}")));
    }
    if r == 0.0 {
        return Ok(1.0);
    }
    let x = sigma * nu.sqrt() * r;
    if x.is_infinite() {
        return Ok(0.0);
    }
    let mu = 0.5 * nu;
    let ln_phi = if mu >= DEBYE_ORDER {
        let (z, wm1, ln_s) = debye_parts(mu, x);
        let g = -wm1 + (0.5 * wm1).ln_1p();
        mu * g - 0.25 * (z * z).ln_1p() + ln_s - stirling_correction(mu)
    } else {
        mu * x.ln() + ln_bessel_k(mu, x)? - (mu - 1.0) * std::f64::consts::LN_2 - ln_gamma(mu)
    };
    Ok(ln_phi.exp().min(1.0))
}

/// Characteristic function at radius `r`, with elementary forms for
/// `nu = 1`, `nu = 3` and the Gaussian limit.
pub fn characteristic_fn_radial(params: &StudentTParams, r: f64) -> f64 {
    let s = params.sigma;
    match params.nu {
        Dof::Infinite => (-0.5 * s * s * r * r).exp(),
        Dof::Finite(nu) if nu == 1.0 => (-s * r).exp(),
        Dof::Finite(nu) if nu == 3.0 => {
            let y = s * 3f64.sqrt() * r;
            (1.0 + y) * (-y).exp()
        }
        Dof::Finite(nu) => characteristic_fn_bessel(nu, s, r).unwrap_or(f64::NAN),
    }
}

/// `phi(t) = E exp(i <w, t>)` for `w` Student's t with the given parameters.
pub fn characteristic_fn(params: &StudentTParams, t: &[f64]) -> f64 {
    characteristic_fn_radial(params, t.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum pairwise Euclidean distance.
pub fn min_separation(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Parameter(format!("separation needs at least 2 points, got {}", points.len())));
    }
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = distance(&points[i], &points[j]);
            if d == 0.0 {
                return Err(Error::DuplicatePoints(i, j));
            }
            best = best.min(d);
        }
    }
    Ok(best)
}

/// The two conditions of the concentration bound for given `m`, `kappa`, `delta` and `C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremConditions {
    pub m: usize,
    pub kappa: f64,
    pub delta: f64,
    pub c: f64,
    /// `m phi(kappa)`.
    pub eta: f64,
    /// `ceil(C eta^-2 m ln(2m / delta))`, absent when `eta >= 1`.
    pub n_min: Option<u64>,
    /// The bound is informative only for `eta < 1`.
    pub satisfiable: bool,
    /// The constant `C = 6` is established only for `m >= 9`.
    pub small_m: bool,
}

/// `eta = m phi(kappa)` and the feature count that makes the bound hold.
pub fn theorem_conditions(m: usize, kappa: f64, params: &StudentTParams, delta: f64, c: f64) -> Result<TheoremConditions> {
    params.validate()?;
    if m == 0 || !(kappa > 0.0) || !(delta > 0.0 && delta < 1.0) || !(c > 0.0) {
        return Err(Error::Parameter(format!("need m >= 1, kappa > 0, 0 < delta < 1, C > 0; got {m}, {kappa}, {delta}, {c}")));
    }
    let eta = m as f64 * characteristic_fn_radial(params, kappa);
    let satisfiable = eta < 1.0;
    let n_min = satisfiable.then(|| (c * m as f64 * (2.0 * m as f64 / delta).ln() / (eta * eta)).ceil() as u64);
    Ok(TheoremConditions { m, kappa, delta, c, eta, n_min, satisfiable, small_m: m < 9 })
}

/// Separation `kappa` with `m phi(kappa) = eta`, by bisection.
pub fn kappa_for_eta(m: usize, params: &StudentTParams, eta: f64) -> Result<f64> {
    params.validate()?;
    if m == 0 || !(eta > 0.0 && eta < m as f64) {
        return Err(Error::Parameter(format!("need 0 < eta < m, got eta = {eta}, m = {m}")));
    }
    let g = |r: f64| m as f64 * characteristic_fn_radial(params, r) - eta;
    let mut hi = 1.0 / params.sigma;
    while g(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Degenerate("characteristic function does not decay".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(hi)
}

/// `m` points in `R^dim` pairwise at least `kappa` apart: a lattice with
/// spacing `1.5 kappa` whose points are jittered by up to `kappa / 4` per axis.
pub fn separated_points(m: usize, dim: usize, kappa: f64, rng: &RngState) -> Result<Vec<Vec<f64>>> {
    if m == 0 || dim == 0 || !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Parameter(format!("need m >= 1, dim >= 1, kappa > 0; got {m}, {dim}, {kappa}")));
    }
    let side = (1..).find(|&s: &usize| s.checked_pow(dim as u32).map_or(true, |v| v >= m)).expect("side exists");
    let mut r = rng.rng();
    Ok((0..m)
        .map(|i| {
            let mut cell = i;
            (0..dim)
                .map(|_| {
                    let c = (cell % side) as f64;
                    cell /= side;
                    1.5 * kappa * c + r.gen_range(-0.25..=0.25) * kappa
                })
                .collect()
        })
        .collect())
}

/// `(1/N) A A^* - I` for an `m x N` feature matrix, with the diagonal set to
/// its exact value zero.
pub fn gram_deviation(a: &Mat<c64>) -> Mat<c64> {
    let n = a.ncols() as f64;
    let mut g = a * a.adjoint();
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            g[(i, j)] = if i == j { c64::new(0.0, 0.0) } else { g[(i, j)] / n };
        }
    }
    g
}

/// Spectral norm of a Hermitian matrix by power iteration on its square.
pub fn hermitian_norm(h: &Mat<c64>) -> Result<f64> {
    let m = h.nrows();
    if m != h.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}, not square", m, h.ncols())));
    }
    if m == 0 {
        return Ok(0.0);
    }
    let h2 = h * h;
    let mut v = Mat::from_fn(m, 1, |i, _| c64::new(1.0 + i as f64 / m as f64, 0.5 - (i % 3) as f64 * 0.25));
    let mut rayleigh = 0.0;
    for it in 0..POWER_MAX_ITER {
        let nv = v.norm_l2();
        if nv == 0.0 {
            return Ok(0.0);
        }
        v = &v * faer::Scale(c64::new(1.0 / nv, 0.0));
        let w = &h2 * &v;
        let next = (v.adjoint() * &w)[(0, 0)].re.max(0.0);
        if it > 0 && (next - rayleigh).abs() <= POWER_TOLERANCE * next {
            return Ok(next.sqrt());
        }
        if next == 0.0 && w.norm_l2() == 0.0 {
            return Ok(0.0);
        }
        rayleigh = next;
        v = w;
    }
    Err(Error::NotConverged { method: "power iteration", iterations: POWER_MAX_ITER, residual: rayleigh })
}

/// Empirical deviations `|A A^* / N - I|_2` over independent feature draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationReport {
    pub m: usize,
    pub features: usize,
    pub params: StudentTParams,
    /// Minimum pairwise separation of the points.
    pub kappa: f64,
    /// `m phi(kappa)` at the design separation.
    pub eta: f64,
    pub trials: usize,
    pub deviations: Vec<f64>,
    /// Fraction of trials with deviation above `2 eta`.
    pub failure_fraction: f64,
}

impl ConcentrationReport {
    pub fn median_deviation(&self) -> f64 {
        let mut d = self.deviations.clone();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        }
    }

    /// One row per trial, then a summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,m,n_features,nu,sigma,kappa,eta,trial,deviation,exceeds_2eta\n");
        let prefix = format!("{},{},{},{},{},{}", self.m, self.features, self.params.nu, self.params.sigma, self.kappa, self.eta);
        for (t, d) in self.deviations.iter().enumerate() {
            let _ = writeln!(s, "trial,{prefix},{t},{d},{}", u8::from(*d > 2.0 * self.eta));
        }
        let _ = writeln!(s, "median,{prefix},{},{},", self.trials, self.median_deviation());
        let _ = writeln!(s, "failure_fraction,{prefix},{},{},", self.trials, self.failure_fraction);
        s
    }
}

/// Draws `features` weights per trial, builds `A` on `points`, and records
/// the spectral deviation. `kappa` is the design separation the points must respect.
pub fn concentration_experiment(
    points: &[Vec<f64>],
    kappa: f64,
    features: usize,
    params: &StudentTParams,
    trials: usize,
    rng: &RngState,
) -> Result<ConcentrationReport> {
    params.validate()?;
    let m = points.len();
    if m == 0 || features < m || trials == 0 {
        return Err(Error::Parameter(format!("need N >= m >= 1 and trials >= 1; got N = {features}, m = {m}, trials = {trials}")));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points must share a positive dimension".into()));
    }
    let separation = if m >= 2 { min_separation(points)? } else { f64::INFINITY };
    if separation < kappa * (1.0 - 1e-12) {
        return Err(Error::Parameter(format!("points are {separation} apart, less than kappa = {kappa}")));
    }
    let eta = m as f64 * characteristic_fn_radial(params, kappa);
    let u = Mat::from_fn(m, dim, |i, j| points[i][j]);
    let deviations = (0..trials)
        .into_par_iter()
        .map(|t| {
            let w = FeatureWeights::sample(params, dim, features, &rng.child(t as u64))?;
            hermitian_norm(&gram_deviation(&build_feature_matrix(&w, &u)?.entries))
        })
        .collect::<Result<Vec<f64>>>()?;
    let failures = deviations.iter().filter(|&&d| d > 2.0 * eta).count();
    Ok(ConcentrationReport {
        m,
        features,
        params: *params,
        kappa: separation.min(f64::MAX),
        eta,
        trials,
        failure_fraction: failures as f64 / trials as f64,
        deviations,
    })
}
