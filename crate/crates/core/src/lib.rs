//! Super-Brownian motion as a critical branching Brownian particle system,
//! stochastic integration against its martingale measure, vertical (Dupire)
//! derivatives of path functionals and the Galerkin martingale
//! representation `Y(t) = Y(0) + ∫∫ ∇_M Y dM_X`.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below fix the precision used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::assign_op_pattern)]

pub mod ensemble;
pub mod error;
pub mod functional;
pub mod harness;
pub mod martingale_measure;
pub mod measure;
pub mod path;
pub mod representation;
pub mod scalar;
pub mod simulator;
pub mod test_functions;

pub use ensemble::{Ensemble, EnsembleOutput, SimulatedEnsemble};
pub use error::{Error, Result};
pub use functional::{
    pathwise_representation_error, vderiv, vderiv2, vderiv_fd, vderiv_richardson, ConstantFunctional, FunctionalSpec,
    GammaOnly, LinearPairing, NonAnticipativeFunctional, RichardsonPair, SquaredPairing, UFunctional,
};
pub use harness::config::{Experiment, ExperimentConfig};
pub use harness::run::{run, Gate, RunOutcome};
pub use harness::stats::{Estimate, MomentAccumulator};
pub use martingale_measure::{
    covariation, integrate, integrate_path, integrate_paths, integrate_u_closed_form, l2_norm, quadrature,
    quadrature_matrix, BranchEvent, BranchEventLog, Covariation, IntegrandTerm, L2Norm, PredictableIntegrand,
    PredictableWeight, SpaceFactor,
};
pub use measure::{AtomicMeasure, ConstantField, FnField, Point, ScalarField};
pub use path::{d_infty, MeasurePath, StoppedPath, TimeGrid};
pub use representation::{
    fit, gram_matrix, represent, residual, rhs_vector, solve, Basis, GalerkinSolution, ProjectionSample,
    TargetMartingale, TargetSpec,
};
pub use scalar::{compensated_sum, CompensatedSum, Scalar};
pub use simulator::{simulate, simulate_replicate, simulate_total_mass, verify_martingale_problem, SimParams};
pub use test_functions::{
    gaussian_bump, hermite_function, make_gamma, validate_half_laplacian, BoundedMap, GammaFunctional, GammaSpec,
    SchwartzTestFunction, TestFunction, TestFunctionSpec, UIntegrand, UIntegrandSpec,
};

pub type PointF64 = Point<f64>;
pub type AtomicMeasureF64 = AtomicMeasure<f64>;
pub type TimeGridF64 = TimeGrid<f64>;
pub type MeasurePathF64 = MeasurePath<f64>;
pub type BranchEventLogF64 = BranchEventLog<f64>;
pub type SimParamsF64 = SimParams<f64>;
pub type UIntegrandF64 = UIntegrand<f64>;
pub type BasisF64 = Basis<f64>;
pub type PredictableIntegrandF64 = PredictableIntegrand<f64>;
