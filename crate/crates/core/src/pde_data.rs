//! Benchmark input/output function pairs.
//!
//! * Advection I, II and III: periodic transport with unit speed on `[0, 1)`
//!   observed at `t = 0.5`, so the output is the input shifted by half a
//!   period. The exact solution is used directly.
//! * Viscous Burgers on the periodic interval, integrated pseudo-spectrally
//!   from Gaussian process initial conditions.
//! * Darcy flow `-div(e^u grad v) = w` on the unit square with zero boundary
//!   values and a thresholded Gaussian process log-permeability.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::sampling::{sample_gp_periodic, add_relative_noise_rows, GpSpec, RngState};

/// A set of collocation points in `R^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    coords: Vec<f64>,
}

impl Grid {
    /// Builds a grid from flattened coordinates (`len * dim` values).
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Dimension(format!("{} coordinates do not form points of dimension {dim}", coords.len())));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Data("grid coordinates must be finite".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points_1d(points: Vec<f64>) -> Result<Self> {
        Self::new(1, points)
    }

    pub fn from_points_2d(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(2, points.iter().flat_map(|p| p.iter().copied()).collect())
    }

    /// The periodic uniform grid `x_j = j / n`, `j = 0..n`.
    pub fn uniform_periodic(n: usize) -> Self {
        Self { dim: 1, coords: (0..n).map(|j| j as f64 / n as f64).collect() }
    }

    /// The `s x s` interior nodes `(i h, j h)`, `h = 1 / (s + 1)`, with `x` fastest.
    pub fn interior_square(s: usize) -> Self {
        let h = 1.0 / (s + 1) as f64;
        let mut coords = Vec::with_capacity(2 * s * s);
        for j in 1..=s {
            for i in 1..=s {
                coords.push(i as f64 * h);
                coords.push(j as f64 * h);
            }
        }
        Self { dim: 2, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Points of a two-dimensional grid.
    pub fn points_2d(&self) -> Result<Vec<[f64; 2]>> {
        if self.dim != 2 {
            return Err(Error::Dimension(format!("expected a 2D grid, got dimension {}", self.dim)));
        }
        Ok(self.coords.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// The grid restricted to the given point indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Grid {
        let coords = indices.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        Grid { dim: self.dim, coords }
    }

    /// Whether every coordinate lies in `[0, 1]`.
    pub fn in_unit_box(&self) -> bool {
        self.coords.iter().all(|&c| (0.0..=1.0).contains(&c))
    }

    /// The number of points if this is `x_j = j / n` up to rounding.
    fn uniform_periodic_len(&self) -> Option<usize> {
        let n = self.len();
        (self.dim == 1 && n > 0 && self.coords.iter().enumerate().all(|(j, &x)| (x - j as f64 / n as f64).abs() < 1e-12))
            .then_some(n)
    }
}

/// Paired input/output function samples on fixed collocation grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `M x n`: row `l` holds `u_l` at the input grid.
    pub inputs: Mat<f64>,
    /// `M x m`: row `l` holds `v_l` at the output grid.
    pub outputs: Mat<f64>,
    pub input_grid: Grid,
    pub output_grid: Grid,
    /// Problem name, generation parameters and seed.
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Builds and validates a dataset.
    pub fn new(
        inputs: Mat<f64>,
        outputs: Mat<f64>,
        input_grid: Grid,
        output_grid: Grid,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let ds = Self { inputs, outputs, input_grid, output_grid, metadata };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.nrows() != self.outputs.nrows() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} output rows",
                self.inputs.nrows(),
                self.outputs.nrows()
            )));
        }
        if self.inputs.ncols() != self.input_grid.len() {
            return Err(Error::Dimension(format!(
                "{} input columns but {} input grid points",
                self.inputs.ncols(),
                self.input_grid.len()
            )));
        }
        if self.outputs.ncols() != self.output_grid.len() {
            return Err(Error::Dimension(format!(
                "{} output columns but {} output grid points",
                self.outputs.ncols(),
                self.output_grid.len()
            )));
        }
        Ok(())
    }

    /// Number of samples `M`.
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn problem(&self) -> &str {
        self.metadata.get("problem").map(String::as_str).unwrap_or("unknown")
    }

    /// Samples `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> Result<Dataset> {
        if start > end || end > self.len() {
            return Err(Error::Dimension(format!("row range {start}..{end} outside 0..{}", self.len())));
        }
        let take = |m: &Mat<f64>| Mat::from_fn(end - start, m.ncols(), |i, j| m[(start + i, j)]);
        Ok(Dataset {
            inputs: take(&self.inputs),
            outputs: take(&self.outputs),
            input_grid: self.input_grid.clone(),
            output_grid: self.output_grid.clone(),
            metadata: self.metadata.clone(),
        })
    }

    /// The dataset observed only at the given input and output grid indices.
    pub fn restrict(&self, input_idx: &[usize], output_idx: &[usize]) -> Dataset {
        Dataset {
            inputs: select_columns(&self.inputs, input_idx),
            outputs: select_columns(&self.outputs, output_idx),
            input_grid: self.input_grid.subset(input_idx),
            output_grid: self.output_grid.subset(output_idx),
            metadata: self.metadata.clone(),
        }
    }

    /// A copy with relative noise of level `p_in` on every input row and
    /// `p_out` on every output row.
    pub fn with_noise(&self, p_in: f64, p_out: f64, input_rng: &RngState, output_rng: &RngState) -> Result<Dataset> {
        Ok(Dataset {
            inputs: add_relative_noise_rows(&self.inputs, p_in, input_rng)?,
            outputs: add_relative_noise_rows(&self.outputs, p_out, output_rng)?,
            ..self.clone()
        })
    }
}

/// Columns `idx` of `m`, in that order.
pub fn select_columns(m: &Mat<f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

fn rows_to_mat(rows: &[Vec<f64>], ncols: usize) -> Mat<f64> {
    Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

/// The foot of the characteristic through `x` at `t = 0.5`: `(x - 0.5) mod 1`.
pub fn transported(x: f64) -> f64 {
    (x - 0.5).rem_euclid(1.0)
}

/// Square wave parameters: center, width and height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquareWave {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

impl SquareWave {
    /// Uniform on `[0.3, 0.7] x [0.3, 0.6] x [1, 2]`.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            center: rng.gen_range(0.3..=0.7),
            width: rng.gen_range(0.3..=0.6),
            height: rng.gen_range(1.0..=2.0),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let half = 0.5 * self.width;
        if x >= self.center - half && x <= self.center + half {
            self.height
        } else {
            0.0
        }
    }
}

/// A square wave plus a half-ellipse `sqrt(max(h^2 - a^2 (x - c)^2, 0))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveAndEllipse {
    pub wave: SquareWave,
    pub ellipse_height: f64,
    pub ellipse_a: f64,
    pub ellipse_center: f64,
}

impl WaveAndEllipse {
    /// Square wave as for Advection I; `(h, a, c)` uniform on `[0.5, 1] x [5, 10] x [0.3, 0.7]`.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let wave = SquareWave::sample(rng);
        Self {
            wave,
            ellipse_height: rng.gen_range(0.5..=1.0),
            ellipse_a: rng.gen_range(5.0..=10.0),
            ellipse_center: rng.gen_range(0.3..=0.7),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let d = self.ellipse_a * (x - self.ellipse_center);
        self.wave.eval(x) + (self.ellipse_height.powi(2) - d * d).max(0.0).sqrt()
    }
}

fn metadata(problem: &str, rng: &RngState, count: usize, extra: &[(&str, String)]) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("problem".to_string(), problem.to_string());
    meta.insert("seed".to_string(), rng.seed.to_string());
    meta.insert("stream".to_string(), rng.stream.to_string());
    meta.insert("count".to_string(), count.to_string());
    for (k, v) in extra {
        meta.insert((*k).to_string(), v.clone());
    }
    meta
}

fn check_unit_interval(grid: &Grid) -> Result<()> {
    if grid.dim() != 1 || !grid.in_unit_box() {
        return Err(Error::Parameter("advection grids must be 1D points in [0, 1]".into()));
    }
    Ok(())
}

fn transport_dataset<F>(problem: &str, count: usize, grid: &Grid, rng: &RngState, extra: &[(&str, String)], profile: F) -> Result<Dataset>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Box<dyn Fn(f64) -> f64> + Sync,
{
    check_unit_interval(grid)?;
    let xs = grid.coords();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    // Shifted points that land on the grid reuse the input value so that the
    // output is an exact permutation of the input there.
    let source: Vec<Option<usize>> = xs
        .iter()
        .map(|&x| {
            let y = transported(x);
            let pos = order.partition_point(|&i| xs[i] < y - 1e-12);
            order.get(pos).copied().filter(|&i| (xs[i] - y).abs() <= 1e-12)
        })
        .collect();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|l| {
            let mut r = rng.child(l as u64).rng();
            let u = profile(&mut r);
            let input: Vec<f64> = xs.iter().map(|&x| u(x)).collect();
            let output = xs
                .iter()
                .zip(&source)
                .map(|(&x, s)| s.map_or_else(|| u(transported(x)), |i| input[i]))
                .collect();
            (input, output)
        })
        .collect();
    let (ins, outs): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Dataset::new(
        rows_to_mat(&ins, xs.len()),
        rows_to_mat(&outs, xs.len()),
        grid.clone(),
        grid.clone(),
        metadata(problem, rng, count, extra),
    )
}

/// Advection I: square-wave inputs, outputs transported by half a period.
pub fn gen_advection_1(count: usize, grid: &Grid, rng: &RngState) -> Result<Dataset> {
    let ranges = ("ranges", "center=[0.3,0.7] width=[0.3,0.6] height=[1,2]".to_string());
    transport_dataset("advection1", count, grid, rng, &[ranges], |r| {
        let w = SquareWave::sample(r);
        Box::new(move |x| w.eval(x))
    })
}

/// Advection II: square wave plus half-ellipse inputs, transported by half a period.
pub fn gen_advection_2(count: usize, grid: &Grid, rng: &RngState) -> Result<Dataset> {
    let ranges = (
        "ranges",
        "center=[0.3,0.7] width=[0.3,0.6] height=[1,2] ellipse_height=[0.5,1] ellipse_a=[5,10] ellipse_center=[0.3,0.7]"
            .to_string(),
    );
    transport_dataset("advection2", count, grid, rng, &[ranges], |r| {
        let w = WaveAndEllipse::sample(r);
        Box::new(move |x| w.eval(x))
    })
}

/// `-1 + 2 * 1{g >= 0}` pointwise.
pub fn threshold_sign(g: &[f64]) -> Vec<f64> {
    g.iter().map(|&x| if x >= 0.0 { 1.0 } else { -1.0 }).collect()
}

/// Advection III: thresholded Gaussian process inputs on a uniform periodic
/// grid with an even number of points, transported by half a period.
pub fn gen_advection_3(count: usize, grid: &Grid, rng: &RngState) -> Result<Dataset> {
    let n = grid
        .uniform_periodic_len()
        .filter(|n| n % 2 == 0)
        .ok_or_else(|| Error::Parameter("Advection III needs a uniform periodic grid with an even number of points".into()))?;
    let spec = GpSpec::advection(n);
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..count)
        .into_par_iter()
        .map(|l| {
            let u = threshold_sign(&sample_gp_periodic(&spec, &rng.child(l as u64))?);
            let v = (0..n).map(|j| u[(j + n / 2) % n]).collect();
            Ok((u, v))
        })
        .collect();
    let (ins, outs): (Vec<_>, Vec<_>) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Dataset::new(
        rows_to_mat(&ins, n),
        rows_to_mat(&outs, n),
        grid.clone(),
        grid.clone(),
        metadata("advection3", rng, count, &[("gp", "mean=0 amplitude=1 shift=9 power=2".into())]),
    )
}

/// Discretization parameters of the viscous Burgers solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurgersConfig {
    pub viscosity: f64,
    pub final_time: f64,
    /// Number of grid points of the spectral discretization (a power of two).
    pub modes: usize,
    pub dt: f64,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self { viscosity: 0.1, final_time: 1.0, modes: 256, dt: 1e-4 }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity > 0.0 && self.final_time > 0.0 && self.dt > 0.0) {
            return Err(Error::Parameter("viscosity, final time and dt must be positive".into()));
        }
        if !self.modes.is_power_of_two() || self.modes < 4 {
            return Err(Error::Parameter(format!("modes must be a power of two >= 4, got {}", self.modes)));
        }
        Ok(())
    }
}

struct BurgersStepper {
    n: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    /// `2 pi i k` on kept modes, zero on truncated ones.
    dx: Vec<Complex64>,
    keep: Vec<f64>,
    half: Vec<f64>,
    full: Vec<f64>,
    dt: f64,
    scratch: Vec<Complex64>,
}

impl BurgersStepper {
    fn new(cfg: &BurgersConfig, dt: f64) -> Self {
        let n = cfg.modes;
        let mut planner = FftPlanner::<f64>::new();
        let mut dx = vec![Complex64::new(0.0, 0.0); n];
        let mut keep = vec![0.0; n];
        let mut half = vec![0.0; n];
        let mut full = vec![0.0; n];
        for i in 0..n {
            let k = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            if 3.0 * k.abs() < n as f64 {
                keep[i] = 1.0;
                dx[i] = Complex64::new(0.0, 2.0 * PI * k);
            }
            let l = -cfg.viscosity * (2.0 * PI * k).powi(2);
            half[i] = (0.5 * l * dt).exp();
            full[i] = (l * dt).exp();
        }
        Self {
            n,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            dx,
            keep,
            half,
            full,
            dt,
            scratch: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// The de-aliased advective term `-(w^2 / 2)_x` in Fourier space.
    fn nonlinear(&mut self, vh: &[Complex64], out: &mut [Complex64]) {
        let scale = 1.0 / self.n as f64;
        for i in 0..self.n {
            self.scratch[i] = vh[i] * self.keep[i];
        }
        self.ifft.process(&mut self.scratch);
        for s in self.scratch.iter_mut() {
            let v = s.re * scale;
            *s = Complex64::new(v * v, 0.0);
        }
        self.fft.process(&mut self.scratch);
        for i in 0..self.n {
            out[i] = -0.5 * self.dx[i] * self.scratch[i];
        }
    }

    fn step(&mut self, uh: &mut [Complex64], buf: &mut [Vec<Complex64>; 5]) {
        let dt = self.dt;
        let n = self.n;
        let [a, b, c, d, tmp] = buf;
        self.nonlinear(uh, a);
        for i in 0..n {
            tmp[i] = self.half[i] * (uh[i] + 0.5 * dt * a[i]);
        }
        self.nonlinear(tmp, b);
        for i in 0..n {
            tmp[i] = self.half[i] * uh[i] + 0.5 * dt * b[i];
        }
        self.nonlinear(tmp, c);
        for i in 0..n {
            tmp[i] = self.full[i] * uh[i] + dt * self.half[i] * c[i];
        }
        self.nonlinear(tmp, d);
        for i in 0..n {
            uh[i] = self.full[i] * uh[i]
                + dt / 6.0 * (self.full[i] * a[i] + 2.0 * self.half[i] * (b[i] + c[i]) + d[i]);
        }
    }
}

/// Solves `w_t + (w^2 / 2)_x = viscosity * w_xx` on the periodic interval
/// from `w(., 0) = u0` and returns `w(., final_time)` on the same grid.
///
/// Diffusion is integrated exactly by an integrating factor, the advective
/// term explicitly by classical fourth-order Runge-Kutta with 2/3 de-aliasing.
pub fn solve_burgers(u0: &[f64], cfg: &BurgersConfig) -> Result<Vec<f64>> {
    Ok(solve_burgers_snapshots(u0, cfg, 1)?.pop().expect("one snapshot"))
}

/// Solutions at `final_time * k / snapshots` for `k = 1..=snapshots`.
///
/// The step count is the smallest multiple of `snapshots` whose step does not
/// exceed `cfg.dt`.
pub fn solve_burgers_snapshots(u0: &[f64], cfg: &BurgersConfig, snapshots: usize) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if u0.len() != cfg.modes {
        return Err(Error::Dimension(format!("initial condition has {} values, expected {}", u0.len(), cfg.modes)));
    }
    if snapshots == 0 {
        return Err(Error::Parameter("at least one snapshot is required".into()));
    }
    let per_snapshot = ((cfg.final_time / snapshots as f64) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let steps = per_snapshot * snapshots;
    let dt = cfg.final_time / steps as f64;
    let n = cfg.modes;
    let mut stepper = BurgersStepper::new(cfg, dt);
    let mut uh: Vec<Complex64> = u0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    stepper.fft.process(&mut uh);
    let mut buf: [Vec<Complex64>; 5] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); n]);
    let mut out = Vec::with_capacity(snapshots);
    for step in 1..=steps {
        stepper.step(&mut uh, &mut buf);
        if step % 64 == 0 || step == steps {
            if uh.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::Instability(format!("non-finite Fourier coefficients at step {step} of {steps}")));
            }
        }
        if step % per_snapshot == 0 {
            let mut w = uh.clone();
            stepper.ifft.process(&mut w);
            out.push(w.iter().map(|c| c.re / n as f64).collect());
        }
    }
    Ok(out)
}

/// Burgers pairs `(u0, w(., T))` with `u0 ~ GP(0, 625 (-Laplacian + 25 I)^-2)`,
/// observed on a uniform periodic grid whose size divides `cfg.modes`.
pub fn gen_burgers(count: usize, cfg: &BurgersConfig, grid: &Grid, rng: &RngState) -> Result<Dataset> {
    cfg.validate()?;
    let n = grid
        .uniform_periodic_len()
        .filter(|n| cfg.modes % n == 0)
        .ok_or_else(|| Error::Parameter(format!("Burgers grid must be uniform periodic with a size dividing {}", cfg.modes)))?;
    let stride = cfg.modes / n;
    let spec = GpSpec::burgers(cfg.modes);
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..count)
        .into_par_iter()
        .map(|l| {
            let u0 = sample_gp_periodic(&spec, &rng.child(l as u64))?;
            let w = solve_burgers(&u0, cfg)?;
            Ok((u0.iter().step_by(stride).copied().collect(), w.iter().step_by(stride).copied().collect()))
        })
        .collect();
    let (ins, outs): (Vec<_>, Vec<_>) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let extra = [
        ("viscosity", cfg.viscosity.to_string()),
        ("final_time", cfg.final_time.to_string()),
        ("modes", cfg.modes.to_string()),
        ("dt", cfg.dt.to_string()),
        ("gp", "mean=0 amplitude=25 shift=25 power=2".to_string()),
    ];
    Dataset::new(
        rows_to_mat(&ins, n),
        rows_to_mat(&outs, n),
        grid.clone(),
        grid.clone(),
        metadata("burgers", rng, count, &extra),
    )
}

/// Discretization of the Darcy problem on the `s x s` interior grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DarcyConfig {
    pub grid: usize,
    /// Source values at the interior nodes, `x` fastest.
    pub source: Vec<f64>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl DarcyConfig {
    /// Unit source, relative residual tolerance `1e-10`.
    pub fn new(grid: usize) -> Self {
        Self { grid, source: vec![1.0; grid * grid], cg_tol: 1e-10, cg_max_iter: 20 * grid * grid + 100 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 3 {
            return Err(Error::Parameter(format!("Darcy grid must be at least 3, got {}", self.grid)));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return Err(Error::Parameter(format!("cg_tol must lie in (0, 1), got {}", self.cg_tol)));
        }
        if self.source.len() != self.grid * self.grid {
            return Err(Error::Dimension(format!("source has {} values, expected {}", self.source.len(), self.grid * self.grid)));
        }
        Ok(())
    }
}

struct DarcyOperator {
    s: usize,
    /// Face coefficients over `h^2` on the east and north face of every node.
    east: Vec<f64>,
    north: Vec<f64>,
    diag: Vec<f64>,
}

impl DarcyOperator {
    fn new(u: &[f64], s: usize) -> Self {
        let h2 = ((s + 1) as f64).powi(2);
        let a: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        let harmonic = |p: f64, q: f64| 2.0 * p * q / (p + q);
        let mut east = vec![0.0; s * s];
        let mut north = vec![0.0; s * s];
        for j in 0..s {
            for i in 0..s {
                let p = j * s + i;
                east[p] = h2 * if i + 1 < s { harmonic(a[p], a[p + 1]) } else { a[p] };
                north[p] = h2 * if j + 1 < s { harmonic(a[p], a[p + s]) } else { a[p] };
            }
        }
        let mut diag = vec![0.0; s * s];
        for j in 0..s {
            for i in 0..s {
                let p = j * s + i;
                let west = if i > 0 { east[p - 1] } else { h2 * a[p] };
                let south = if j > 0 { north[p - s] } else { h2 * a[p] };
                diag[p] = east[p] + north[p] + west + south;
            }
        }
        Self { s, east, north, diag }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let s = self.s;
        for j in 0..s {
            for i in 0..s {
                let p = j * s + i;
                let mut r = self.diag[p] * v[p];
                if i + 1 < s {
                    r -= self.east[p] * v[p + 1];
                }
                if i > 0 {
                    r -= self.east[p - 1] * v[p - 1];
                }
                if j + 1 < s {
                    r -= self.north[p] * v[p + s];
                }
                if j > 0 {
                    r -= self.north[p - s] * v[p - s];
                }
                out[p] = r;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `-div(e^u grad v) = w` with `v = 0` on the boundary of the unit square.
///
/// Five-point finite volumes with harmonic averages of `e^u` on cell faces;
/// Jacobi-preconditioned conjugate gradients to `cfg.cg_tol` relative residual.
pub fn solve_darcy(u: &[f64], cfg: &DarcyConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let s = cfg.grid;
    if u.len() != s * s {
        return Err(Error::Dimension(format!("log-permeability has {} values, expected {}", u.len(), s * s)));
    }
    let op = DarcyOperator::new(u, s);
    let b = &cfg.source;
    let nb = dot(b, b).sqrt();
    let mut x = vec![0.0; s * s];
    if nb == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; s * s];
    let mut rz = dot(&r, &z);
    for it in 0..cfg.cg_max_iter {
        let res = dot(&r, &r).sqrt() / nb;
        if res <= cfg.cg_tol {
            return Ok(x);
        }
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..z.len() {
            z[k] = r[k] / op.diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..p.len() {
            p[k] = z[k] + beta * p[k];
        }
        if it + 1 == cfg.cg_max_iter {
            break;
        }
    }
    let residual = dot(&r, &r).sqrt() / nb;
    if residual <= cfg.cg_tol {
        return Ok(x);
    }
    Err(Error::NotConverged { method: "conjugate gradients", iterations: cfg.cg_max_iter, residual })
}

/// The log-permeability `log(h(beta))` with `h` mapping positive values to 12
/// and the rest to 3.
pub fn darcy_log_permeability(beta: &[f64]) -> Vec<f64> {
    beta.iter().map(|&b| if b > 0.0 { 12f64.ln() } else { 3f64.ln() }).collect()
}

/// Darcy pairs `(u, v)` with `u = log(h(beta))`, `beta ~ GP(0, (-Laplacian + 9 I)^-2)`
/// on the periodic square restricted to the interior grid.
pub fn gen_darcy(count: usize, cfg: &DarcyConfig, rng: &RngState) -> Result<Dataset> {
    cfg.validate()?;
    let s = cfg.grid;
    let spec = GpSpec::darcy(s + 1);
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..count)
        .into_par_iter()
        .map(|l| {
            let field = sample_gp_periodic(&spec, &rng.child(l as u64))?;
            let beta: Vec<f64> = (1..=s).flat_map(|j| (1..=s).map(move |i| (i, j))).map(|(i, j)| field[j * (s + 1) + i]).collect();
            let u = darcy_log_permeability(&beta);
            let v = solve_darcy(&u, cfg)?;
            Ok((u, v))
        })
        .collect();
    let (ins, outs): (Vec<_>, Vec<_>) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let grid = Grid::interior_square(s);
    let uniform = cfg.source.iter().all(|&w| w == cfg.source[0]);
    let extra = [
        ("grid", s.to_string()),
        ("source", if uniform { format!("constant {}", cfg.source[0]) } else { "field".to_string() }),
        ("cg_tol", cfg.cg_tol.to_string()),
        ("gp", "mean=0 amplitude=1 shift=9 power=2".to_string()),
        ("permeability", "3 and 12".to_string()),
    ];
    Dataset::new(
        rows_to_mat(&ins, s * s),
        rows_to_mat(&outs, s * s),
        grid.clone(),
        grid,
        metadata("darcy", rng, count, &extra),
    )
}

/// A seeded nonuniform subset of `count` points of a fine grid.
///
/// In 1D the extreme points are kept and one point is drawn uniformly from
/// each of `count - 2` consecutive strata of the remaining sorted points. In
/// 2D the points extreme in `x + y` and `x - y` are kept and the rest are
/// drawn without replacement. Returned indices are sorted.
pub fn jittered_subgrid(fine: &Grid, count: usize, rng: &RngState) -> Result<Vec<usize>> {
    let n = fine.len();
    if count < 2 || count > n {
        return Err(Error::Parameter(format!("cannot choose {count} of {n} grid points")));
    }
    let mut r = rng.rng();
    let mut chosen = match fine.dim() {
        1 => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| fine.point(a)[0].total_cmp(&fine.point(b)[0]));
            let mut chosen = vec![order[0], order[n - 1]];
            let interior = &order[1..n - 1];
            let strata = count - 2;
            for k in 0..strata {
                let lo = k * interior.len() / strata;
                let hi = (k + 1) * interior.len() / strata;
                chosen.push(interior[r.gen_range(lo..hi)]);
            }
            chosen
        }
        2 => {
            let key = |i: usize, sx: f64, sy: f64| sx * fine.point(i)[0] + sy * fine.point(i)[1];
            let mut chosen: Vec<usize> = Vec::new();
            for (sx, sy) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
                let best = (0..n).max_by(|&a, &b| key(a, sx, sy).total_cmp(&key(b, sx, sy))).expect("nonempty");
                if !chosen.contains(&best) {
                    chosen.push(best);
                }
            }
            if chosen.len() > count {
                return Err(Error::Parameter(format!("need at least {} points to keep the corners", chosen.len())));
            }
            let mut rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            rest.shuffle(&mut r);
            chosen.extend_from_slice(&rest[..count - chosen.len()]);
            chosen
        }
        d => return Err(Error::Dimension(format!("unsupported grid dimension {d}"))),
    };
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::norm2;

    #[test]
    fn square_wave_transport_example() {
        let w = SquareWave { center: 0.5, width: 0.4, height: 1.0 };
        for j in 0..1000 {
            let x = j as f64 / 1000.0 + 0.0003;
            let y = transported(x);
            let expected = if (0.3..=0.7).contains(&y) { 1.0 } else { 0.0 };
            assert_eq!(w.eval(y), expected);
        }
    }

    #[test]
    fn square_wave_parameter_ranges() {
        let mut r = RngState::new(1, 1).rng();
        for _ in 0..10_000 {
            let w = SquareWave::sample(&mut r);
            assert!((0.3..=0.7).contains(&w.center));
            assert!((0.3..=0.6).contains(&w.width));
            assert!((1.0..=2.0).contains(&w.height));
        }
    }

    #[test]
    fn advection_conserves_mass() {
        let n = 4000;
        let ds = gen_advection_1(5, &Grid::uniform_periodic(n), &RngState::new(2, 0)).unwrap();
        for l in 0..5 {
            let mu: f64 = (0..n).map(|j| ds.inputs[(l, j)].abs()).sum::<f64>() / n as f64;
            let mv: f64 = (0..n).map(|j| ds.outputs[(l, j)].abs()).sum::<f64>() / n as f64;
            assert!((mu - mv).abs() / mu < 2.0 / n as f64);
        }
    }

    #[test]
    fn advection_outputs_are_circular_shifts() {
        let grid = Grid::uniform_periodic(40);
        for ds in [
            gen_advection_1(50, &grid, &RngState::new(3, 0)).unwrap(),
            gen_advection_2(50, &grid, &RngState::new(3, 1)).unwrap(),
            gen_advection_3(50, &grid, &RngState::new(3, 2)).unwrap(),
        ] {
            for l in 0..50 {
                for j in 0..40 {
                    assert_eq!(ds.outputs[(l, j)], ds.inputs[(l, (j + 20) % 40)], "{}", ds.problem());
                }
            }
        }
    }

    #[test]
    fn ellipse_degenerate_cases() {
        let wave = SquareWave { center: 0.5, width: 0.4, height: 1.5 };
        let flat = WaveAndEllipse { wave, ellipse_height: 0.0, ellipse_a: 7.0, ellipse_center: 0.4 };
        let narrow = WaveAndEllipse { ellipse_height: 1.0, ellipse_a: 1e9, ..flat };
        for j in 0..200 {
            let x = j as f64 / 200.0 + 1e-3;
            assert_eq!(flat.eval(x), wave.eval(x));
            if (x - 0.4).abs() > 1e-6 {
                assert_eq!(narrow.eval(x), wave.eval(x));
            }
        }
        assert_eq!(narrow.eval(0.4), wave.eval(0.4) + 1.0);
    }

    #[test]
    fn thresholded_inputs_are_signs() {
        assert_eq!(threshold_sign(&[0.3, 2.0]), vec![1.0, 1.0]);
        let grid = Grid::uniform_periodic(40);
        let ds = gen_advection_3(10_000, &grid, &RngState::new(4, 0)).unwrap();
        let mut positive = 0usize;
        for l in 0..ds.len() {
            for j in 0..40 {
                let u = ds.inputs[(l, j)];
                assert!(u == 1.0 || u == -1.0);
                positive += (u == 1.0) as usize;
            }
        }
        let frac = positive as f64 / (40.0 * 10_000.0);
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn advection_rejects_bad_grids() {
        let rng = RngState::new(0, 0);
        assert!(gen_advection_1(2, &Grid::from_points_1d(vec![0.0, 1.5]).unwrap(), &rng).is_err());
        assert!(gen_advection_3(2, &Grid::uniform_periodic(41), &rng).is_err());
        assert!(gen_advection_3(2, &Grid::from_points_1d(vec![0.0, 0.3]).unwrap(), &rng).is_err());
    }

    fn gp_ic(modes: usize, seed: u64) -> Vec<f64> {
        sample_gp_periodic(&GpSpec::burgers(modes), &RngState::new(seed, 0)).unwrap()
    }

    #[test]
    fn burgers_constant_is_steady() {
        let cfg = BurgersConfig { dt: 1e-3, modes: 64, ..Default::default() };
        let w = solve_burgers(&[0.7; 64], &cfg).unwrap();
        assert!(w.iter().all(|&x| (x - 0.7).abs() < 1e-13));
    }

    #[test]
    fn burgers_conserves_mean() {
        let cfg = BurgersConfig { dt: 1e-3, ..Default::default() };
        let u0: Vec<f64> = gp_ic(256, 3).iter().map(|x| x + 0.4).collect();
        let w = solve_burgers(&u0, &cfg).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&w) - mean(&u0)).abs() < 1e-8);
    }

    #[test]
    fn burgers_energy_decays() {
        let cfg = BurgersConfig { dt: 1e-3, ..Default::default() };
        let u0 = gp_ic(256, 4);
        let snaps = solve_burgers_snapshots(&u0, &cfg, 10).unwrap();
        let mut prev = norm2(&u0);
        for s in &snaps {
            let e = norm2(s);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn burgers_self_convergence_is_fourth_order() {
        let spec = GpSpec { amplitude: 2500.0, power: 4.0, ..GpSpec::burgers(256) };
        let u0 = sample_gp_periodic(&spec, &RngState::new(5, 0)).unwrap();
        let run = |dt: f64| solve_burgers(&u0, &BurgersConfig { dt, ..Default::default() }).unwrap();
        let (a, b, c) = (run(4e-3), run(2e-3), run(1e-3));
        let d1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let d2: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x - y).collect();
        let ratio = norm2(&d1) / norm2(&d2);
        assert!(ratio >= 12.0, "ratio {ratio}");
    }

    #[test]
    fn burgers_rejects_bad_config() {
        assert!(solve_burgers(&[0.0; 48], &BurgersConfig { modes: 48, ..Default::default() }).is_err());
        assert!(solve_burgers(&[0.0; 32], &BurgersConfig::default()).is_err());
        let blowup = BurgersConfig { dt: 0.5, modes: 64, viscosity: 1e-9, final_time: 50.0 };
        let u0: Vec<f64> = (0..64).map(|j| 50.0 * (2.0 * PI * j as f64 / 64.0).sin()).collect();
        assert!(matches!(solve_burgers(&u0, &blowup), Err(Error::Instability(_))));
    }

    #[test]
    fn burgers_dataset_layout() {
        let cfg = BurgersConfig { dt: 2e-3, ..Default::default() };
        let grid = Grid::uniform_periodic(128);
        let ds = gen_burgers(3, &cfg, &grid, &RngState::new(6, 0)).unwrap();
        assert_eq!(ds.inputs.ncols(), 128);
        assert_eq!(ds.metadata["problem"], "burgers");
        let again = gen_burgers(3, &cfg, &grid, &RngState::new(6, 0)).unwrap();
        assert_eq!(ds, again);
        assert!(gen_burgers(1, &cfg, &Grid::uniform_periodic(100), &RngState::new(6, 0)).is_err());
    }

    fn manufactured_error(s: usize) -> f64 {
        let h = 1.0 / (s + 1) as f64;
        let exact: Vec<f64> = (1..=s)
            .flat_map(|j| (1..=s).map(move |i| (PI * i as f64 * h).sin() * (PI * j as f64 * h).sin()))
            .collect();
        let cfg = DarcyConfig { source: exact.iter().map(|v| 2.0 * PI * PI * v).collect(), cg_tol: 1e-13, ..DarcyConfig::new(s) };
        let v = solve_darcy(&vec![0.0; s * s], &cfg).unwrap();
        v.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn darcy_manufactured_solution_is_second_order() {
        let ratio = manufactured_error(15) / manufactured_error(31);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn darcy_zero_source_gives_zero() {
        let cfg = DarcyConfig { source: vec![0.0; 25], ..DarcyConfig::new(5) };
        assert!(solve_darcy(&[0.3; 25], &cfg).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn darcy_dataset_properties() {
        let cfg = DarcyConfig::new(9);
        let ds = gen_darcy(20, &cfg, &RngState::new(7, 0)).unwrap();
        let (l3, l12) = (3f64.ln(), 12f64.ln());
        let mut seen = [false; 2];
        for l in 0..20 {
            for j in 0..81 {
                let u = ds.inputs[(l, j)];
                assert!(u == l3 || u == l12);
                seen[(u == l12) as usize] = true;
                assert!(ds.outputs[(l, j)] >= -1e-10);
            }
        }
        assert!(seen[0] && seen[1]);
        assert_eq!(ds.input_grid, ds.output_grid);
        assert_eq!(ds.metadata["seed"], "7");
        assert_eq!(ds.metadata["grid"], "9");
    }

    #[test]
    fn darcy_reports_non_convergence() {
        let cfg = DarcyConfig { cg_max_iter: 2, cg_tol: 1e-12, ..DarcyConfig::new(12) };
        assert!(matches!(solve_darcy(&[0.0; 144], &cfg), Err(Error::NotConverged { .. })));
        assert!(DarcyConfig::new(2).validate().is_err());
    }

    #[test]
    fn jittered_subgrids() {
        let fine = Grid::uniform_periodic(128);
        let idx = jittered_subgrid(&fine, 27, &RngState::new(1, 0)).unwrap();
        assert_eq!(idx.len(), 27);
        assert_eq!((idx[0], idx[26]), (0, 127));
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let square = Grid::interior_square(15);
        let idx2 = jittered_subgrid(&square, 100, &RngState::new(1, 0)).unwrap();
        assert_eq!(idx2.len(), 100);
        for corner in [0, 14, 210, 224] {
            assert!(idx2.contains(&corner));
        }
        assert!(jittered_subgrid(&fine, 200, &RngState::new(1, 0)).is_err());
    }

    #[test]
    fn dataset_invariants() {
        let grid = Grid::uniform_periodic(4);
        let bad = Dataset::new(Mat::zeros(2, 4), Mat::zeros(3, 4), grid.clone(), grid.clone(), BTreeMap::new());
        assert!(bad.is_err());
        let ds = gen_advection_1(6, &grid, &RngState::new(1, 1)).unwrap();
        let part = ds.rows(2, 5).unwrap();
        assert_eq!(part.len(), 3);
        assert_eq!(part.inputs[(0, 1)], ds.inputs[(2, 1)]);
        let r = ds.restrict(&[0, 2], &[1]);
        assert_eq!(r.output_grid.len(), 1);
        r.validate().unwrap();
    }
}
