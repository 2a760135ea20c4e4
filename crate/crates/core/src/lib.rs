//! Federated learning simulator with graph-based client sampling under
//! arbitrary client availability.
//!
//! The crate is organised bottom-up:
//!
//! * [`domain`]: client profiles, parameters, participation counts, seeds;
//! * [`datagen`]: the synthetic generator and label-skewed partitions;
//! * [`graph`]: similarity estimation, the client dependency graph and its
//!   shortest-path distances;
//! * [`sspp`]: the secure scalar-product protocol;
//! * [`availability`]: per-round client activity models;
//! * [`sampler`]: the graph-based selector and the baselines;
//! * [`engine`]: local training, aggregation and the round loop;
//! * [`runner`]: configuration files, result files and run matrices.
//!
//! ```no_run
//! use fedsim_core::{run_experiment, DatasetScheme, ExperimentConfig, SamplerConfig};
//!
//! let mut cfg = ExperimentConfig::new(DatasetScheme::Synthetic, SamplerConfig::fedgs(1.0));
//! cfg.rounds = 100;
//! let outcome = run_experiment(&cfg).unwrap();
//! println!("{}", outcome.summary.min_test_loss);
//! ```

pub mod availability;
pub mod config;
pub mod datagen;
pub mod domain;
pub mod engine;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod runner;
pub mod sampler;
pub mod sspp;

pub use availability::{AvailabilityMode, AvailabilityModel, AvailabilitySpec, LognormalScale};
pub use config::{
    Aggregation, AvailabilityConfig, DatasetConfig, DatasetScheme, ExperimentConfig, GraphConfig, GraphMethod,
    OutputConfig, SamplerConfig, SamplerKind, TrainerConfig,
};
pub use datagen::{Example, FederatedDataset};
pub use domain::{
    counts_variance, derive_seed, seeded_rng, z_vector, ClientProfile, ExperimentSeeds, ModelParams, SamplerState,
};
pub use engine::{run_experiment, Experiment, ExperimentOutcome, RoundRecord, RunSummary};
pub use error::{Error, Result};
pub use graph::{Graph3DG, SimilarityMatrix};
pub use matrix::SquareMatrix;
pub use model::LogisticModel;
pub use sampler::{Budget, SelectionProblem, SelectionResult, Solver};
