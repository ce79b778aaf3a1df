//! Seeded random sampling.
//!
//! Three kinds of randomness drive every experiment: feature weights drawn
//! from a multivariate Student's t distribution, Gaussian process draws used
//! as PDE initial conditions and coefficients, and relative Gaussian noise.
//! All of them are driven by an [`RngState`], a `(seed, stream)` pair that
//! reproduces identical draws bit-for-bit. Independent consumers derive their
//! own streams with [`RngState::child`] so that adding one consumer never
//! perturbs the draws of another.

use std::f64::consts::PI;
use std::fmt;

use faer::Mat;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Labels for the logical purposes of random streams.
pub mod streams {
    /// Feature weights.
    pub const WEIGHTS: u64 = 0x5745_4947;
    /// Noise injected into training inputs.
    pub const TRAIN_INPUT_NOISE: u64 = 0x4e49_4e50;
    /// Noise injected into training outputs.
    pub const TRAIN_OUTPUT_NOISE: u64 = 0x4e4f_5554;
    /// Noise injected into test inputs.
    pub const TEST_INPUT_NOISE: u64 = 0x4e54_5354;
    /// Gaussian process draws and other sample parameters.
    pub const SAMPLES: u64 = 0x5341_4d50;
    /// Grid splitting and grid jitter.
    pub const GRID: u64 = 0x4752_4944;
    /// Experiment trials.
    pub const TRIALS: u64 = 0x5452_4941;
    /// Point generators for the concentration experiments.
    pub const POINTS: u64 = 0x504f_4e54;
}

const GAUSSIAN_PART: u64 = 0x5a5a;
const CHI_SQUARED_PART: u64 = 0x4348_4932;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A reproducible random stream identified by a seed and a stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// A generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// A derived stream for a sub-purpose or an item index.
    ///
    /// Children of distinct labels are statistically independent of each
    /// other and of the parent.
    pub fn child(&self, label: u64) -> RngState {
        RngState {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(label)),
        }
    }
}

/// Degrees of freedom of a Student's t distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dof {
    Finite(f64),
    /// The Gaussian limit.
    Infinite,
}

impl Dof {
    /// Parses a positive number or `inf`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Dof::Infinite);
        }
        let nu: f64 = t
            .parse()
            .map_err(|_| Error::Parameter(format!("cannot parse degrees of freedom {t:?}")))?;
        if nu.is_infinite() && nu > 0.0 {
            return Ok(Dof::Infinite);
        }
        Ok(Dof::Finite(nu))
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dof::Finite(nu) => write!(f, "{nu}"),
            Dof::Infinite => write!(f, "inf"),
        }
    }
}

/// Parameters of the centered multivariate Student's t distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentTParams {
    pub nu: Dof,
    pub sigma: f64,
}

impl StudentTParams {
    /// Validated constructor.
    pub fn new(nu: Dof, sigma: f64) -> Result<Self> {
        let params = Self { nu, sigma };
        params.validate()?;
        Ok(params)
    }

    /// The tensor-product Gaussian with standard deviation `sigma`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(Dof::Infinite, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if let Dof::Finite(nu) = self.nu {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::Parameter(format!("nu must be positive, got {nu}")));
            }
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. weight vectors in `R^d` as the rows of an `n x d` matrix.
///
/// A finite `nu` uses the scale mixture `w = sigma * z * sqrt(nu / s)` with
/// `z ~ N(0, I_d)` and `s ~ chi^2(nu)`; `nu = inf` returns `sigma * z`. The
/// Gaussian part and the chi-squared part come from separate child streams,
/// so draws for different `nu` or `sigma` share the same `z`.
pub fn sample_student_t(params: &StudentTParams, d: usize, n: usize, rng: &RngState) -> Result<Mat<f64>> {
    params.validate()?;
    if d == 0 || n == 0 {
        return Err(Error::Parameter(format!("dimension and count must be positive, got d={d}, n={n}")));
    }
    let mut z_rng = rng.child(GAUSSIAN_PART).rng();
    let mut out = Mat::<f64>::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut z_rng);
            out[(i, j)] = params.sigma * z;
        }
    }
    if let Dof::Finite(nu) = params.nu {
        let chi = ChiSquared::new(nu).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut s_rng = rng.child(CHI_SQUARED_PART).rng();
        for i in 0..n {
            let s: f64 = chi.sample(&mut s_rng);
            let factor = (nu / s).sqrt();
            for j in 0..d {
                out[(i, j)] *= factor;
            }
        }
    }
    Ok(out)
}

/// Periodic domain of a Gaussian process draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpDomain {
    /// The periodic interval `[0, 1)`.
    Interval,
    /// The periodic unit square `[0, 1)^2`.
    Square,
}

impl GpDomain {
    pub fn dims(&self) -> usize {
        match self {
            GpDomain::Interval => 1,
            GpDomain::Square => 2,
        }
    }
}

/// A Gaussian process `GP(mean, amplitude^2 (-Laplacian + shift I)^(-power))`
/// on a periodic domain, realized on a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpSpec {
    pub mean: f64,
    pub amplitude: f64,
    pub shift: f64,
    pub power: f64,
    pub domain: GpDomain,
    pub resolution: usize,
    /// Whether the spatially constant Fourier mode is drawn.
    pub include_constant_mode: bool,
}

impl GpSpec {
    /// `GP(0, (-Laplacian + 9 I)^-2)` on the interval, used for the
    /// thresholded advection initial conditions.
    pub fn advection(resolution: usize) -> Self {
        Self {
            mean: 0.0,
            amplitude: 1.0,
            shift: 9.0,
            power: 2.0,
            domain: GpDomain::Interval,
            resolution,
            include_constant_mode: false,
        }
    }

    /// `GP(0, 625 (-Laplacian + 25 I)^-2)` on the interval, the Burgers initial condition.
    pub fn burgers(resolution: usize) -> Self {
        Self {
            mean: 0.0,
            amplitude: 25.0,
            shift: 25.0,
            power: 2.0,
            domain: GpDomain::Interval,
            resolution,
            include_constant_mode: false,
        }
    }

    /// `GP(0, (-Laplacian + 9 I)^-2)` on the square, the Darcy permeability generator.
    pub fn darcy(resolution: usize) -> Self {
        Self {
            domain: GpDomain::Square,
            ..Self::advection(resolution)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shift > 0.0) {
            return Err(Error::Parameter(format!("GP shift must be positive, got {}", self.shift)));
        }
        if !(self.power >= 1.0) {
            return Err(Error::Parameter(format!("GP power must be at least 1, got {}", self.power)));
        }
        if self.resolution < 2 {
            return Err(Error::Parameter(format!("GP resolution must be at least 2, got {}", self.resolution)));
        }
        if !self.mean.is_finite() || !self.amplitude.is_finite() {
            return Err(Error::Parameter("GP mean and amplitude must be finite".into()));
        }
        Ok(())
    }

    /// Standard deviation of the Fourier coefficient with integer wave vector `k`.
    ///
    /// This is the square root of the covariance operator's eigenvalue
    /// `amplitude^2 ((2 pi |k|)^2 + shift)^(-power)`.
    pub fn mode_std(&self, k: &[i64]) -> f64 {
        let k2: f64 = k.iter().map(|&ki| (2.0 * PI * ki as f64).powi(2)).sum();
        self.amplitude.abs() * (k2 + self.shift).powf(-0.5 * self.power)
    }
}

fn signed_frequency(index: usize, n: usize) -> i64 {
    if index <= n / 2 {
        index as i64
    } else {
        index as i64 - n as i64
    }
}

/// Draws the complex grid field before the real part is taken.
///
/// Fourier coefficients satisfy Hermitian symmetry, so the result is real up
/// to rounding.
pub(crate) fn gp_field(spec: &GpSpec, rng: &RngState) -> Result<Vec<Complex64>> {
    spec.validate()?;
    let n = spec.resolution;
    let dims = spec.domain.dims();
    let total = n.pow(dims as u32);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); total];
    let mut r = rng.rng();
    let index_of = |idx: &[usize]| idx.iter().fold(0usize, |acc, &i| acc * n + i);
    let mut idx = vec![0usize; dims];
    for flat in 0..total {
        let mut rem = flat;
        for axis in (0..dims).rev() {
            idx[axis] = rem % n;
            rem /= n;
        }
        let partner_idx: Vec<usize> = idx.iter().map(|&i| (n - i) % n).collect();
        let partner = index_of(&partner_idx);
        if partner < flat {
            continue;
        }
        let k: Vec<i64> = idx.iter().map(|&i| signed_frequency(i, n)).collect();
        let is_constant = k.iter().all(|&ki| ki == 0);
        let std = if is_constant && !spec.include_constant_mode { 0.0 } else { spec.mode_std(&k) };
        if partner == flat {
            let xi: f64 = StandardNormal.sample(&mut r);
            coeffs[flat] = Complex64::new(std * xi, 0.0);
        } else {
            let xi: f64 = StandardNormal.sample(&mut r);
            let eta: f64 = StandardNormal.sample(&mut r);
            let c = Complex64::new(xi, -eta) * (std / std::f64::consts::SQRT_2);
            coeffs[flat] = c;
            coeffs[partner] = c.conj();
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    match dims {
        1 => fft.process(&mut coeffs),
        _ => {
            for row in coeffs.chunks_mut(n) {
                fft.process(row);
            }
            let mut column = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    column[i] = coeffs[i * n + j];
                }
                fft.process(&mut column);
                for i in 0..n {
                    coeffs[i * n + j] = column[i];
                }
            }
        }
    }
    Ok(coeffs)
}

/// Draws a Gaussian process sample on the uniform periodic grid.
///
/// The interval grid is `x_j = j / resolution`. On the square the value at
/// `(x_i, y_j) = (i / resolution, j / resolution)` is stored at index
/// `j * resolution + i`.
pub fn sample_gp_periodic(spec: &GpSpec, rng: &RngState) -> Result<Vec<f64>> {
    let field = gp_field(spec, rng)?;
    Ok(field.into_iter().map(|c| c.re + spec.mean).collect())
}

/// A vector of i.i.d. standard Gaussian values.
pub fn standard_normal_vec(len: usize, rng: &RngState) -> Vec<f64> {
    let mut r = rng.rng();
    (0..len).map(|_| StandardNormal.sample(&mut r)).collect()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Adds Gaussian noise of relative size `p`: `v + p * (|v| / |e|) * e`.
pub fn add_relative_noise(v: &[f64], p: f64, rng: &RngState) -> Result<Vec<f64>> {
    check_noise_level(p)?;
    if p == 0.0 {
        return Ok(v.to_vec());
    }
    let eps = standard_normal_vec(v.len(), rng);
    add_relative_noise_with(v, p, &eps)
}

/// [`add_relative_noise`] with a caller-supplied noise direction `eps`.
pub fn add_relative_noise_with(v: &[f64], p: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_noise_level(p)?;
    if v.len() != eps.len() {
        return Err(Error::Dimension(format!("vector length {} but noise length {}", v.len(), eps.len())));
    }
    if p == 0.0 {
        return Ok(v.to_vec());
    }
    let nv = norm2(v);
    if nv == 0.0 {
        return Err(Error::Degenerate("cannot add relative noise to a zero vector".into()));
    }
    let ne = norm2(eps);
    if ne == 0.0 {
        return Err(Error::Degenerate("noise direction is zero".into()));
    }
    let scale = p * nv / ne;
    Ok(v.iter().zip(eps).map(|(x, e)| x + scale * e).collect())
}

fn check_noise_level(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("noise level must lie in [0, 1), got {p}")))
    }
}

/// Adds independent relative noise to every row of a matrix.
///
/// Row `i` uses the child stream `rng.child(i)`.
pub fn add_relative_noise_rows(mat: &Mat<f64>, p: f64, rng: &RngState) -> Result<Mat<f64>> {
    check_noise_level(p)?;
    let mut out = mat.clone();
    if p == 0.0 {
        return Ok(out);
    }
    let mut row = vec![0.0; mat.ncols()];
    for i in 0..mat.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = mat[(i, j)];
        }
        let noisy = add_relative_noise(&row, p, &rng.child(i as u64))?;
        for (j, x) in noisy.into_iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(m: &Mat<f64>, j: usize) -> Vec<f64> {
        (0..m.nrows()).map(|i| m[(i, j)]).collect()
    }

    #[test]
    fn identical_state_reproduces_draws() {
        let p = StudentTParams::new(Dof::Finite(3.0), 0.7).unwrap();
        let a = sample_student_t(&p, 4, 50, &RngState::new(11, 2)).unwrap();
        let b = sample_student_t(&p, 4, 50, &RngState::new(11, 2)).unwrap();
        let c = sample_student_t(&p, 4, 50, &RngState::new(11, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_limit_moments() {
        let p = StudentTParams::gaussian(1.0).unwrap();
        let n = 100_000;
        let w = column(&sample_student_t(&p, 1, n, &RngState::new(1, 0)).unwrap(), 0);
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (1.0 / n as f64).sqrt();
        let se_var = (2.0 / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se_mean, "mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * se_var, "var {var}");
    }

    #[test]
    fn cauchy_median_is_centered() {
        let p = StudentTParams::new(Dof::Finite(1.0), 1.0).unwrap();
        let n = 100_000;
        let w = sample_student_t(&p, 2, n, &RngState::new(5, 0)).unwrap();
        for j in 0..2 {
            let mut c = column(&w, j);
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = c[n / 2];
            let se = PI / (2.0 * (n as f64).sqrt());
            assert!(median.abs() < 4.0 * se, "median {median}");
        }
    }

    #[test]
    fn sigma_scales_draws_exactly() {
        let rng = RngState::new(9, 4);
        let one = sample_student_t(&StudentTParams::new(Dof::Finite(5.0), 1.0).unwrap(), 3, 200, &rng).unwrap();
        let two = sample_student_t(&StudentTParams::new(Dof::Finite(5.0), 2.0).unwrap(), 3, 200, &rng).unwrap();
        for i in 0..200 {
            for j in 0..3 {
                assert_eq!(two[(i, j)], 2.0 * one[(i, j)]);
            }
        }
    }

    #[test]
    fn infinite_dof_is_scaled_gaussian_path() {
        let rng = RngState::new(21, 0);
        let w = sample_student_t(&StudentTParams::gaussian(0.3).unwrap(), 2, 10, &rng).unwrap();
        let z = standard_normal_vec(20, &rng.child(GAUSSIAN_PART));
        for i in 0..10 {
            for j in 0..2 {
                assert_eq!(w[(i, j)], 0.3 * z[i * 2 + j]);
            }
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(StudentTParams::new(Dof::Finite(0.0), 1.0).is_err());
        assert!(StudentTParams::new(Dof::Finite(2.0), -1.0).is_err());
        let p = StudentTParams { nu: Dof::Infinite, sigma: 0.0 };
        assert!(sample_student_t(&p, 1, 1, &RngState::new(0, 0)).is_err());
        let ok = StudentTParams::gaussian(1.0).unwrap();
        assert!(sample_student_t(&ok, 0, 1, &RngState::new(0, 0)).is_err());
    }

    #[test]
    fn dof_parsing() {
        assert_eq!(Dof::parse("inf").unwrap(), Dof::Infinite);
        assert_eq!(Dof::parse(" 3 ").unwrap(), Dof::Finite(3.0));
        assert!(Dof::parse("x").is_err());
        assert_eq!(Dof::Finite(2.5).to_string(), "2.5");
    }

    #[test]
    fn gp_mode_variance_matches_spectrum() {
        let spec = GpSpec { resolution: 32, ..GpSpec::advection(32) };
        let draws = 10_000;
        let ks = [1usize, 2, 3];
        let mut acc = [0.0; 3];
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(32);
        for t in 0..draws {
            let u = sample_gp_periodic(&spec, &RngState::new(3, t as u64)).unwrap();
            let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            fft.process(&mut buf);
            for (a, &k) in acc.iter_mut().zip(&ks) {
                *a += (buf[k] / 32.0).norm_sqr();
            }
        }
        for (a, &k) in acc.iter().zip(&ks) {
            let empirical = a / draws as f64;
            let expected = ((2.0 * PI * k as f64).powi(2) + 9.0).powi(-2);
            let rel_se = 1.0 / (draws as f64).sqrt();
            assert!(
                (empirical / expected - 1.0).abs() < 5.0 * rel_se,
                "k={k}: {empirical} vs {expected}"
            );
        }
    }

    #[test]
    fn gp_square_mode_variance_matches_spectrum() {
        let spec = GpSpec::darcy(16);
        let draws = 4000;
        let mut acc = 0.0;
        for t in 0..draws {
            let u = sample_gp_periodic(&spec, &RngState::new(8, t as u64)).unwrap();
            let mut coeff = Complex64::new(0.0, 0.0);
            for (idx, &x) in u.iter().enumerate() {
                let (j, i) = (idx / 16, idx % 16);
                let phase = -2.0 * PI * ((i + 2 * j) as f64) / 16.0;
                coeff += Complex64::from_polar(x, phase);
            }
            acc += (coeff / 256.0).norm_sqr();
        }
        let expected = ((2.0 * PI).powi(2) * 5.0 + 9.0).powi(-2);
        let empirical = acc / draws as f64;
        assert!((empirical / expected - 1.0).abs() < 5.0 / (draws as f64).sqrt());
    }

    #[test]
    fn gp_zero_amplitude_is_constant_mean() {
        let spec = GpSpec { amplitude: 0.0, mean: 1.5, include_constant_mode: true, ..GpSpec::advection(16) };
        let u = sample_gp_periodic(&spec, &RngState::new(1, 1)).unwrap();
        assert!(u.iter().all(|&x| x == 1.5));
    }

    #[test]
    fn burgers_spec_spectrum() {
        let spec = GpSpec::burgers(128);
        assert_eq!(spec.amplitude.powi(2), 625.0);
        let expected = 25.0 / ((2.0 * PI).powi(2) + 25.0);
        assert!((spec.mode_std(&[1]) - expected).abs() < 1e-15);
    }

    #[test]
    fn gp_draws_are_real_and_periodic() {
        for spec in [GpSpec::advection(64), GpSpec::burgers(65), GpSpec::darcy(20)] {
            let field = gp_field(&spec, &RngState::new(4, 4)).unwrap();
            let max_im = field.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
            assert!(max_im < 1e-10, "imaginary residue {max_im}");
        }
        let spec = GpSpec::advection(64);
        let u = sample_gp_periodic(&spec, &RngState::new(2, 0)).unwrap();
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        FftPlanner::<f64>::new().plan_fft_forward(64).process(&mut buf);
        let at_one: f64 = buf
            .iter()
            .enumerate()
            .map(|(i, c)| (c * Complex64::from_polar(1.0, 2.0 * PI * signed_frequency(i, 64) as f64)).re / 64.0)
            .sum();
        assert!((at_one - u[0]).abs() < 1e-10);
    }

    #[test]
    fn gp_constant_mode_is_excluded_by_default() {
        let spec = GpSpec::burgers(64);
        let u = sample_gp_periodic(&spec, &RngState::new(7, 7)).unwrap();
        assert!((u.iter().sum::<f64>() / 64.0).abs() < 1e-12);
    }

    #[test]
    fn gp_invalid_spec() {
        assert!(sample_gp_periodic(&GpSpec { shift: 0.0, ..GpSpec::advection(8) }, &RngState::new(0, 0)).is_err());
        assert!(sample_gp_periodic(&GpSpec { power: 0.5, ..GpSpec::advection(8) }, &RngState::new(0, 0)).is_err());
        assert!(sample_gp_periodic(&GpSpec::advection(1), &RngState::new(0, 0)).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = vec![1.0, -2.0, 3.0];
        assert_eq!(add_relative_noise(&v, 0.0, &RngState::new(0, 0)).unwrap(), v);
    }

    #[test]
    fn five_percent_noise_ratio() {
        let v: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let noisy = add_relative_noise(&v, 0.05, &RngState::new(3, 1)).unwrap();
        let diff: Vec<f64> = noisy.iter().zip(&v).map(|(a, b)| a - b).collect();
        assert!((norm2(&diff) / norm2(&v) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn noise_matches_formula_with_logged_direction() {
        let rng = RngState::new(13, 5);
        let v = [1.0, 0.0];
        let noisy = add_relative_noise(&v, 0.5, &rng).unwrap();
        let eps = standard_normal_vec(2, &rng);
        let ne = (eps[0] * eps[0] + eps[1] * eps[1]).sqrt();
        let expected = [1.0 + 0.5 / ne * eps[0], 0.5 / ne * eps[1]];
        assert_eq!(noisy, expected);
    }

    #[test]
    fn noise_on_zero_vector_fails() {
        assert!(matches!(
            add_relative_noise(&[0.0, 0.0], 0.1, &RngState::new(0, 0)),
            Err(Error::Degenerate(_))
        ));
        assert!(add_relative_noise(&[1.0], 1.0, &RngState::new(0, 0)).is_err());
    }

    #[test]
    fn row_noise_uses_independent_streams() {
        let m = Mat::<f64>::from_fn(3, 4, |i, j| (i + j + 1) as f64);
        let rng = RngState::new(1, 2);
        let noisy = add_relative_noise_rows(&m, 0.1, &rng).unwrap();
        let row1: Vec<f64> = (0..4).map(|j| m[(1, j)]).collect();
        let expected = add_relative_noise(&row1, 0.1, &rng.child(1)).unwrap();
        for j in 0..4 {
            assert_eq!(noisy[(1, j)], expected[j]);
        }
    }

    #[test]
    fn child_streams_differ() {
        let r = RngState::new(1, 0);
        assert_ne!(r.child(1), r.child(2));
        assert_eq!(r.child(1), r.child(1));
        assert_eq!(r.child(1).seed, 1);
    }

    proptest! {
        #[test]
        fn noise_ratio_is_exact(v in proptest::collection::vec(-10.0f64..10.0, 1..64), p in 0.0f64..0.99, seed in any::<u64>()) {
            prop_assume!(norm2(&v) > 1e-6);
            let noisy = add_relative_noise(&v, p, &RngState::new(seed, 0)).unwrap();
            let diff: Vec<f64> = noisy.iter().zip(&v).map(|(a, b)| a - b).collect();
            prop_assert!((norm2(&diff) / norm2(&v) - p).abs() < 1e-12);
        }

        #[test]
        fn student_t_rows_are_finite(nu in 0.5f64..50.0, sigma in 0.01f64..5.0, seed in any::<u64>()) {
            let p = StudentTParams::new(Dof::Finite(nu), sigma).unwrap();
            let w = sample_student_t(&p, 3, 20, &RngState::new(seed, 1)).unwrap();
            for i in 0..20 { for j in 0..3 { prop_assert!(w[(i, j)].is_finite()); } }
        }
    }
}
