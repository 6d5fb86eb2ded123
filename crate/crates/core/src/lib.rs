//! Beamspace channel estimation for lens antenna arrays behind a
//! phase-shifter selection network.

pub mod baselines;
pub mod cosparse;
pub mod error;
pub mod estimators;
pub mod hadamard;
pub mod harness;
pub mod lens;
pub mod operator;
pub mod report;
pub mod rng;
pub mod scampi;
pub mod selection;

pub use baselines::{ls_estimate, omp_estimate, sd_estimate, LsSolution, SupportSet};
pub use cosparse::{augment, build_difference_operator, AugmentedSystem, DifferenceOperator};
pub use error::{Error, Result};
pub use lens::{LensConfig, MultipathChannel, PathParams};
pub use operator::{DenseOperator, LinearOperator};
pub use selection::{build_hadamard_selection, measure, reduce_phase_shifters, Measurement, SelectionNetwork};
pub use estimators::{PosteriorMoments, SnipePrior, SparseGaussianPrior};
pub use report::{compute_nmse, EstimationReport, NoiseSummary};
pub use scampi::{run_em_scampi, run_scampi, PriorKind, ScampiOptions, ScampiState};
pub use harness::{run_experiment, AlgorithmSpec, ExperimentConfig, QRule, ResultRow, ResultTable, RunOptions};
