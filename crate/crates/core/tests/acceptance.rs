//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary. Failing criteria are reported but the process
//! exits successfully unless `RRFF_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrff_core::experiment::{alpha_sweep, generate_data, run_trials, ExperimentConfig, Problem};
use rrff_core::fem::{build_mesh_1d, triangulate_2d, Interpolant, Mesh};
use rrff_core::pde_data::{solve_burgers, solve_darcy, BurgersConfig, DarcyConfig};
use rrff_core::sampling::{add_relative_noise, sample_gp_periodic, sample_student_t};
use rrff_core::solver::{fit, FitOptions};
use rrff_core::theory::{
    characteristic_fn, characteristic_fn_bessel, characteristic_fn_radial, concentration_experiment, kappa_for_eta,
    separated_points, theorem_conditions, DEFAULT_C,
};
use rrff_core::{Dof, GpSpec, RngState, StudentTParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn advection_reproduction() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig { seed: 1, ..ExperimentConfig::preset(Problem::Advection1) };
    let report = generate_data(&cfg).and_then(|data| run_trials(&cfg, &data));
    let elapsed = start.elapsed();
    let report = match report {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let rff = report.method(0.0).expect("baseline").mean_error;
    let rrff = report.method(cfg.alpha).expect("regularized").mean_error;
    let pass = (0.03..=0.07).contains(&rrff) && (0.06..=0.13).contains(&rff) && rrff < rff && elapsed < Duration::from_secs(120);
    outcome(pass, format!("RRFF-inf {} in [3%,7%], RFF-inf {} in [6%,13%], {} trials, {:.1?}", pct(rrff), pct(rff), cfg.trials, elapsed))
}

fn burgers_config() -> ExperimentConfig {
    ExperimentConfig { seed: 2, ..ExperimentConfig::preset(Problem::Burgers) }
}

fn burgers_and_sweep() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cfg = burgers_config();
    let data = match generate_data(&cfg) {
        Ok(d) => d,
        Err(e) => return (outcome(false, format!("error: {e}")), outcome(false, format!("error: {e}"))),
    };
    let repro = match run_trials(&cfg, &data) {
        Ok(report) => {
            let elapsed = start.elapsed();
            let rff = report.method(0.0).expect("baseline").mean_error;
            let rrff = report.method(cfg.alpha).expect("regularized").mean_error;
            let darcy = darcy_direction();
            let pass = (0.04..=0.08).contains(&rrff)
                && (0.06..=0.12).contains(&rff)
                && elapsed < Duration::from_secs(900)
                && darcy.pass;
            outcome(
                pass,
                format!(
                    "Burgers RRFF-inf {} in [4%,8%], RFF-inf {} in [6%,12%], {} trials, {:.1?}; scaled Darcy: {}",
                    pct(rrff),
                    pct(rff),
                    cfg.trials,
                    elapsed,
                    darcy.detail
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    };
    let sweep = match alpha_sweep(&cfg, &data, &cfg.alpha_grid) {
        Ok(s) => {
            let means = s.means();
            let (imin, min) = means.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
            let last = means.len() - 1;
            let pass = imin > 0 && imin < last && means[0] >= 1.2 * min && means[last] >= 1.2 * min;
            let curve: Vec<String> = s.alphas.iter().zip(&means).map(|(a, e)| format!("{a:e}:{}", pct(*e))).collect();
            outcome(pass, format!("minimum at alpha {:e}; curve {}", s.alphas[imin], curve.join(" ")))
        }
        Err(e) => outcome(false, format!("error: {e}")),
    };
    (repro, sweep)
}

fn darcy_direction() -> Outcome {
    let cfg = ExperimentConfig { seed: 3, trials: 3, ..ExperimentConfig::preset(Problem::Darcy) };
    match generate_data(&cfg).and_then(|data| run_trials(&cfg, &data)) {
        Ok(report) => {
            let rff = report.method(0.0).expect("baseline").mean_error;
            let rrff = report.method(cfg.alpha).expect("regularized").mean_error;
            outcome(rrff < rff, format!("RRFF-inf {} < RFF-inf {} (N = {}, {}x{})", pct(rrff), pct(rff), cfg.features, cfg.grid, cfg.grid))
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn concentration_suite() -> Outcome {
    let start = Instant::now();
    let run = || -> rrff_core::Result<Outcome> {
        let params = StudentTParams::new(Dof::Finite(3.0), 1.0)?;
        let m = 32;
        let kappa = kappa_for_eta(m, &params, 0.1)?;
        let points = separated_points(m, 2, kappa, &RngState::new(4, 0))?;
        let mut medians = Vec::new();
        for (i, n) in [512, 2048, 8192].into_iter().enumerate() {
            let r = concentration_experiment(&points, kappa, n, &params, 20, &RngState::new(40 + i as u64, 0))?;
            medians.push(r.median_deviation());
        }
        let monotone = medians.windows(2).all(|w| w[1] < w[0]);
        let cond = theorem_conditions(m, kappa, &params, 0.1, DEFAULT_C)?;
        let n_min = cond.n_min.expect("eta < 1") as usize;
        let r = concentration_experiment(&points, kappa, n_min, &params, 100, &RngState::new(50, 0))?;
        let elapsed = start.elapsed();
        let pass = monotone && r.failure_fraction <= 0.1 && elapsed < Duration::from_secs(300);
        Ok(outcome(
            pass,
            format!(
                "kappa {kappa:.4}, medians {:.4}/{:.4}/{:.4} at N 512/2048/8192; N_min {n_min}: failure fraction {} (eta {:.3}), {:.1?}",
                medians[0], medians[1], medians[2], r.failure_fraction, cond.eta, elapsed
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

fn solver_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for index in 0..50 {
        let inst = common::instance(index);
        let options = FitOptions { field: inst.field, ..Default::default() };
        match fit(&inst.a, &inst.targets, &inst.weights, &inst.reg, &options) {
            Ok((c, _)) => worst = worst.max(common::relative_difference(&c, &inst.oracle())),
            Err(e) => return outcome(false, format!("instance {index}: {e}")),
        }
    }
    outcome(worst <= 1e-8, format!("50 instances, worst relative coefficient difference {worst:.2e}"))
}

/// Largest deviation from the delta property, partition of unity and affine
/// reproduction on one mesh.
fn fem_deviation(mesh: &Mesh, nodes: &[Vec<f64>], queries: &[Vec<f64>], r: &mut ChaCha8Rng) -> rrff_core::Result<f64> {
    let n = nodes.len();
    let mut worst = 0.0f64;
    for (j, x) in nodes.iter().enumerate() {
        let b = mesh.locate(j, x)?;
        let mut delta = vec![0.0; n];
        delta[j] = 1.0;
        worst = worst.max((b.apply(&delta) - 1.0).abs());
        let others: f64 = (0..3).filter(|&s| b.nodes[s] != j).map(|s| b.weights[s].abs()).sum();
        worst = worst.max(others);
    }
    let (c0, c1, c2) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
    let affine = |x: &[f64]| c0 + c1 * x[0] + if x.len() > 1 { c2 * x[1] } else { 0.0 };
    let interp = Interpolant::new(mesh, nodes.iter().map(|x| affine(x)).collect())?;
    let ones = Interpolant::new(mesh, vec![1.0; n])?;
    for q in queries {
        worst = worst.max((interp.eval(q)? - affine(q)).abs());
        worst = worst.max((ones.eval(q)? - 1.0).abs());
    }
    Ok(worst)
}

fn fem_exactness() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut run = || -> rrff_core::Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let n = r.gen_range(2..=200);
            let pts: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
            let mesh = Mesh::Interval(build_mesh_1d(&pts)?);
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let queries: Vec<Vec<f64>> = (0..50).map(|_| vec![r.gen_range(lo..=hi)]).collect();
            let nodes: Vec<Vec<f64>> = pts.iter().map(|&x| vec![x]).collect();
            worst = worst.max(fem_deviation(&mesh, &nodes, &queries, &mut r)?);
        }
        for _ in 0..100 {
            let n = r.gen_range(3..=200);
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.gen::<f64>(), r.gen::<f64>()]).collect();
            let tri = triangulate_2d(&pts)?;
            let queries: Vec<Vec<f64>> = (0..50)
                .map(|_| {
                    let t = tri.triangles[r.gen_range(0..tri.triangles.len())];
                    let (mut a, mut b) = (r.gen::<f64>(), r.gen::<f64>());
                    if a + b > 1.0 {
                        (a, b) = (1.0 - a, 1.0 - b);
                    }
                    let c = 1.0 - a - b;
                    (0..2).map(|k| a * tri.nodes[t[0]][k] + b * tri.nodes[t[1]][k] + c * tri.nodes[t[2]][k]).collect()
                })
                .collect();
            let nodes: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
            worst = worst.max(fem_deviation(&Mesh::Triangles(tri), &nodes, &queries, &mut r)?);
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(worst <= 1e-10, format!("100 interval meshes and 100 triangulations, worst deviation {worst:.2e}")),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn noise_exactness() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let len = r.gen_range(1..=300);
        let v: Vec<f64> = (0..len).map(|_| r.gen_range(-10.0..10.0)).collect();
        let p = r.gen_range(0.0..1.0);
        match add_relative_noise(&v, p, &RngState::new(i, 3)) {
            Ok(noisy) => {
                let diff = noisy.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                worst = worst.max((diff / norm - p).abs());
            }
            Err(e) => return outcome(false, format!("vector {i}: {e}")),
        }
    }
    outcome(worst <= 1e-12, format!("1000 vectors, worst |ratio - p| {worst:.2e}"))
}

fn characteristic_cross_check() -> Outcome {
    let run = || -> rrff_core::Result<Outcome> {
        let mut worst_closed = 0.0f64;
        for (nu, bessel_nu) in [(Dof::Finite(1.0), 1.0), (Dof::Finite(3.0), 3.0), (Dof::Infinite, 1e9)] {
            let params = StudentTParams::new(nu, 0.8)?;
            for i in 0..50 {
                let r = 0.1 * i as f64;
                let closed = characteristic_fn_radial(&params, r);
                worst_closed = worst_closed.max((closed - characteristic_fn_bessel(bessel_nu, 0.8, r)?).abs());
            }
        }
        let draws = 1_000_000;
        let mut worst_z = 0.0f64;
        for nu in [2.0, 5.0] {
            let params = StudentTParams::new(Dof::Finite(nu), 0.7)?;
            let w = sample_student_t(&params, 3, draws, &RngState::new(nu as u64, 8))?;
            let mut r = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..10 {
                let t: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
                let (mut sum, mut sq) = (0.0, 0.0);
                for k in 0..draws {
                    let c = (0..3).map(|j| w[(k, j)] * t[j]).sum::<f64>().cos();
                    sum += c;
                    sq += c * c;
                }
                let n = draws as f64;
                let mean = sum / n;
                let se = ((sq / n - mean * mean) * n / (n - 1.0) / n).sqrt();
                worst_z = worst_z.max((mean - characteristic_fn(&params, &t)).abs() / se);
            }
        }
        Ok(outcome(
            worst_closed <= 1e-6 && worst_z <= 4.0,
            format!("closed forms vs Bessel path {worst_closed:.2e}; Monte Carlo worst {worst_z:.2} standard errors"),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

fn solver_convergence() -> Outcome {
    let run = || -> rrff_core::Result<Outcome> {
        let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let spec = GpSpec { amplitude: 2500.0, power: 4.0, ..GpSpec::burgers(256) };
        let u0 = sample_gp_periodic(&spec, &RngState::new(5, 0))?;
        let solve = |dt: f64| solve_burgers(&u0, &BurgersConfig { dt, ..Default::default() });
        let (a, b, c) = (solve(4e-3)?, solve(2e-3)?, solve(1e-3)?);
        let burgers = norm(&a, &b) / norm(&b, &c);
        let darcy_error = |s: usize| -> rrff_core::Result<f64> {
            let h = 1.0 / (s + 1) as f64;
            let exact: Vec<f64> =
                (1..=s).flat_map(|j| (1..=s).map(move |i| (PI * i as f64 * h).sin() * (PI * j as f64 * h).sin())).collect();
            let cfg = DarcyConfig { source: exact.iter().map(|v| 2.0 * PI * PI * v).collect(), cg_tol: 1e-13, ..DarcyConfig::new(s) };
            let v = solve_darcy(&vec![0.0; s * s], &cfg)?;
            Ok(v.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        };
        let darcy = darcy_error(15)? / darcy_error(31)?;
        Ok(outcome(
            burgers >= 12.0 && (3.5..=4.5).contains(&darcy),
            format!("Burgers dt-halving ratio {burgers:.2}; Darcy grid-doubling error ratio {darcy:.3}"),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

fn main() {
    let strict = std::env::var("RRFF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "Advection I reproduction", advection_reproduction());
    let (burgers, sweep) = burgers_and_sweep();
    report(2, "Burgers reproduction and scaled Darcy direction", burgers);
    report(3, "alpha sweep shape", sweep);
    report(4, "concentration property suite", concentration_suite());
    report(5, "solver oracle equivalence", solver_oracle());
    report(6, "finite element exactness", fem_exactness());
    report(7, "noise exactness", noise_exactness());
    report(8, "characteristic function cross-check", characteristic_cross_check());
    report(9, "PDE solver self-convergence", solver_convergence());
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {}/{} criteria pass", results.len() - failed, results.len());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
