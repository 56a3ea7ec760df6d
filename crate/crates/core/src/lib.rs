//! Data-consistent inversion through optimally reweighted empirical
//! distribution functions.
//!
//! The numerical core (samples, EDFs, the weight-fitting QP, partitions,
//! binning, kernel density estimates) is generic over the scalar type through
//! [`Real`]; the benchmark models and the experiment drivers work in `f64`.
//! The `*64`/`*32` aliases below name the common instantiations.

pub mod binning;
pub mod config;
pub mod density;
pub mod edf;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod models;
pub mod partition;
pub mod qp;
pub mod quadrature;
pub mod real;
pub mod samples;
pub mod target;

pub use binning::{bin_samples, pushforward_binned, solve_binning, solve_naive, BinnedSolution, BinningOptions, FitOptions, NaiveSolution, PartitionSpec};
pub use density::{kde_fit, solve_density, BandwidthRule, DensitySolution, KdeModel};
pub use edf::{edf_eval, l1_distance, l2_distance, sup_distance, wedf_eval, DistributionFunction};
pub use error::{Error, Result};
pub use partition::{make_kmeans, make_regular_grid, Partition};
pub use qp::{solve_qp, verify_kkt, QpProblem, QpSolution, SolverOptions};
pub use real::Real;
pub use samples::{fit_box, scale_to_unit, BoxScaler, Normalization, Region, SampleSet, WeightVector, WeightedEdf};
pub use target::{ExactCdf, TargetDistribution};

pub type SampleSet64 = SampleSet<f64>;
pub type SampleSet32 = SampleSet<f32>;
pub type WeightVector64 = WeightVector<f64>;
pub type WeightedEdf64 = WeightedEdf<f64>;
pub type BoxScaler64 = BoxScaler<f64>;
pub type QpProblem64 = QpProblem<f64>;
pub type Target64 = TargetDistribution<f64>;
pub type Partition64 = Partition<f64>;
