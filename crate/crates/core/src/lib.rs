//! Bayesian recovery of a conductivity field on a point-cloud manifold from
//! noisy observations of an elliptic PDE solution.

pub mod config;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod map;
pub mod mcmc;
pub mod pointcloud;
pub mod prior;
pub mod seed;
pub mod solver;
pub mod truth;

pub use error::{Error, Result};
pub use kernel::{DiscreteOperator, KernelGeometry};
pub use pointcloud::{Chart, PointCloud};
pub use prior::{GraphLaplacian, GraphPrior};
pub use solver::{ForwardModel, ObservationMap, SolverKind};
pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunMode, RunReport};
