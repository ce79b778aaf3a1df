//! Fixtures shared by the benchmarks.

use rrff_core::features::FeatureWeights;
use rrff_core::{Mat, RngState, StudentTParams};

/// `n` Gaussian feature weights of dimension `dim` with scale 0.2.
pub fn weights(dim: usize, n: usize) -> FeatureWeights {
    FeatureWeights::sample(&StudentTParams::gaussian(0.2).expect("valid scale"), dim, n, &RngState::new(1, 0)).expect("valid sizes")
}

/// A deterministic `m x dim` input matrix with entries in `[-1, 1]`.
pub fn inputs(m: usize, dim: usize) -> Mat<f64> {
    Mat::from_fn(m, dim, |i, j| ((i * 131 + j * 17) as f64 * 0.618).sin())
}

/// Deterministic pseudo-random points in the unit square.
pub fn cloud(n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|i| [((i as f64) * 0.754_877_666).fract(), ((i as f64) * 0.569_840_291).fract()]).collect()
}
