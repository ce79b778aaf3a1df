//! Operator learning with regularized random Fourier features (RRFF).
//!
//! An operator `G: u -> v` between function spaces is learned from sampled
//! function pairs. Inputs are consumed as vectors of point values, a random
//! Fourier feature model `f(u) = sum_k c_k exp(i <w_k, u>)` is fitted by
//! frequency-weighted Tikhonov least squares, and predictions at the output
//! collocation points are turned back into functions by P1 finite element
//! interpolation.
//!
//! The crate is organised as
//!
//! * [`sampling`]: seeded Student's t feature weights, periodic Gaussian
//!   process draws and relative noise injection;
//! * [`pde_data`]: benchmark data for advection, viscous Burgers and Darcy flow;
//! * [`features`]: feature matrices, trained models and prediction;
//! * [`solver`]: the regularized least squares fit with a shared Cholesky
//!   factorization across output components;
//! * [`fem`]: 1D interval meshes, Delaunay triangulations and interpolation;
//! * [`pipeline`]: grid splitting, training, inference and error metrics;
//! * [`theory`]: the Student's t characteristic function and empirical checks
//!   of the random feature matrix concentration bound;
//! * [`experiment`] and [`io`]: configuration, trial runners, reports and the
//!   on-disk array container.

pub mod error;
pub mod experiment;
pub mod features;
pub mod fem;
pub mod io;
pub mod pde_data;
pub mod pipeline;
pub mod sampling;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use faer;
pub use faer::{c64, Mat, MatRef};

pub use features::{build_feature_matrix, predict, FeatureMatrix, FeatureModel, FeatureWeights};
pub use fem::{build_mesh_1d, triangulate_2d, Interpolant, Mesh, Mesh1D, Mesh2D};
pub use pde_data::{BurgersConfig, Dataset, DarcyConfig, Grid};
pub use experiment::{ExperimentConfig, ExperimentData, Problem};
pub use pipeline::{EvalConfig, EvalReport, GridSplit, TrainConfig, TrainedOperator};
pub use sampling::{Dof, GpDomain, GpSpec, RngState, StudentTParams};
pub use solver::{fit, regularizer_diagonal, FitOptions, RegularizationSpec, SolveReport};
pub use theory::ConcentrationReport;
