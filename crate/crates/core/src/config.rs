//! Experiment configuration.
//!
//! Configurations are TOML documents; every table except `dataset` and
//! `sampler` may be omitted, and unknown keys are rejected.
//!
//! ```toml
//! rounds = 1000
//! num_clients = 30
//! participation = 0.2
//!
//! [dataset]
//! scheme = "synthetic"
//! alpha = 0.5
//! beta = 0.5
//!
//! [sampler]
//! kind = "fedgs"
//! alpha = 1.0
//!
//! [availability]
//! mode = "MDF"
//! beta = 0.7
//!
//! [seeds]
//! data = 0
//! train = 0
//! availability = 0
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::availability::{AvailabilityMode, AvailabilitySpec, LognormalScale, DEFAULT_PERIOD};
use crate::domain::ExperimentSeeds;
use crate::error::{Error, Result};
use crate::sampler::Budget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetScheme {
    /// The synthetic generator's own per-client split.
    Synthetic,
    /// Synthetic examples pooled and re-partitioned with Dirichlet label skew.
    Dirichlet,
    /// Synthetic examples pooled and cut into two-label shards.
    TwoLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub scheme: DatasetScheme,
    /// Spread of the clients' model means.
    #[serde(default = "half")]
    pub alpha: f64,
    /// Spread of the clients' input means.
    #[serde(default = "half")]
    pub beta: f64,
    /// Size of the pooled test set relative to the training data.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Share of each client's data used for training; the rest is the
    /// client's validation part.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    /// Load a dataset dump instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    #[serde(alias = "FedGS")]
    Fedgs,
    #[serde(alias = "uniform-sample")]
    Uniform,
    #[serde(alias = "md-sample", alias = "mdsample")]
    Md,
    #[serde(alias = "power-of-choice")]
    Poc,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Fedgs => "fedgs",
            SamplerKind::Uniform => "uniform",
            SamplerKind::Md => "md",
            SamplerKind::Poc => "poc",
        }
    }

    pub fn default_aggregation(self) -> Aggregation {
        match self {
            SamplerKind::Fedgs | SamplerKind::Uniform => Aggregation::Weighted,
            SamplerKind::Md | SamplerKind::Poc => Aggregation::Uniform,
        }
    }
}

/// How selected models are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Weights proportional to the selected clients' data sizes.
    Weighted,
    /// Plain mean over all draws, repeated draws counted repeatedly.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Weight of the diversity term; graph-based sampler only.
    #[serde(default = "one")]
    pub alpha: f64,
    /// Solve each round by enumeration instead of local search.
    #[serde(default)]
    pub exact: bool,
    #[serde(default = "default_budget")]
    pub budget: Budget,
    /// Overrides the sampler's default aggregation rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
    /// Power-of-choice: examples per client used to estimate its loss
    /// (all when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_sample_cap: Option<usize>,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        SamplerConfig {
            kind,
            alpha: 1.0,
            exact: false,
            budget: default_budget(),
            aggregation: None,
            loss_sample_cap: None,
        }
    }

    pub fn fedgs(alpha: f64) -> Self {
        SamplerConfig {
            alpha,
            ..Self::new(SamplerKind::Fedgs)
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation.unwrap_or(self.kind.default_aggregation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMethod {
    /// Dot products of the true client features.
    Oracle,
    /// Cosine similarity of one round of local updates.
    CosineUpdates,
    /// Cosine similarity of output-layer responses to Gaussian probes.
    Functional,
    /// Dot products of the true features through the secure protocol.
    Sspp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default = "default_graph_method")]
    pub method: GraphMethod,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Kernel width of the edge weights.
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_noise_batch")]
    pub noise_batch: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            method: default_graph_method(),
            epsilon: default_epsilon(),
            sigma2: default_sigma2(),
            noise_batch: default_noise_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityConfig {
    #[serde(default = "default_mode")]
    pub mode: AvailabilityMode,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_period")]
    pub period: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_labels: Option<usize>,
    #[serde(default)]
    pub lognormal_scale: LognormalScale,
}

impl Default for AvailabilityConfig {
    fn default() -> Self {
        AvailabilityConfig {
            mode: default_mode(),
            beta: 0.0,
            period: DEFAULT_PERIOD,
            num_labels: None,
            lognormal_scale: LognormalScale::default(),
        }
    }
}

impl AvailabilityConfig {
    pub fn new(mode: AvailabilityMode, beta: f64) -> Self {
        AvailabilityConfig {
            mode,
            beta,
            ..Default::default()
        }
    }

    pub fn spec(&self) -> AvailabilitySpec {
        AvailabilitySpec {
            mode: self.mode,
            beta: self.beta,
            period: self.period,
            num_labels: self.num_labels,
            lognormal_scale: self.lognormal_scale,
        }
    }

    /// Short label such as `MDF0.7`.
    pub fn label(&self) -> String {
        if self.mode == AvailabilityMode::Idl {
            "IDL".to_string()
        } else {
            format!("{}{}", self.mode, self.beta)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Local SGD steps per round.
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Per-round multiplicative learning-rate decay.
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Proximal coefficient; 0 disables the proximal term.
    #[serde(default)]
    pub prox_mu: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            local_steps: default_local_steps(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            decay: default_decay(),
            prox_mu: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub availability_trace: bool,
    #[serde(default = "yes")]
    pub counts_histogram: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    /// Clients sampled per round; derived from `participation` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    #[serde(default = "default_participation")]
    pub participation: f64,
    /// Threads used for local training and evaluation.
    #[serde(default = "one_usize")]
    pub workers: usize,
    pub dataset: DatasetConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub availability: AvailabilityConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub seeds: ExperimentSeeds,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Defaults everywhere, with the given dataset scheme and sampler.
    pub fn new(scheme: DatasetScheme, sampler: SamplerConfig) -> Self {
        ExperimentConfig {
            name: None,
            rounds: default_rounds(),
            num_clients: default_num_clients(),
            clients_per_round: None,
            participation: default_participation(),
            workers: 1,
            dataset: DatasetConfig::new(scheme),
            sampler,
            graph: GraphConfig::default(),
            availability: AvailabilityConfig::default(),
            trainer: TrainerConfig::default(),
            seeds: ExperimentSeeds::default(),
            output: OutputConfig {
                dir: None,
                availability_trace: false,
                counts_histogram: true,
            },
        }
    }

    /// Per-round sample size `M`.
    pub fn max_sample(&self) -> usize {
        self.clients_per_round
            .unwrap_or_else(|| (self.participation * self.num_clients as f64).round().max(1.0) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, msg: impl Into<String>) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        }
        check(self.num_clients >= 2, "num_clients", "must be at least 2")?;
        match self.clients_per_round {
            Some(m) => check(m >= 1, "clients_per_round", "must be at least 1")?,
            None => check(
                self.participation > 0.0 && self.participation <= 1.0,
                "participation",
                format!("must lie in (0, 1], got {}", self.participation),
            )?,
        }
        check(self.workers >= 1, "workers", "must be at least 1")?;

        let d = &self.dataset;
        check(d.alpha >= 0.0, "dataset.alpha", "must be non-negative")?;
        check(d.beta >= 0.0, "dataset.beta", "must be non-negative")?;
        check(d.test_fraction >= 0.0, "dataset.test_fraction", "must be non-negative")?;
        check(
            d.train_fraction > 0.0 && d.train_fraction < 1.0,
            "dataset.train_fraction",
            format!("must lie in (0, 1), got {}", d.train_fraction),
        )?;
        check(d.dirichlet_alpha > 0.0, "dataset.dirichlet_alpha", "must be positive")?;

        let s = &self.sampler;
        check(s.alpha >= 0.0 && s.alpha.is_finite(), "sampler.alpha", "must be non-negative")?;
        if let Some(secs) = s.budget.max_seconds {
            check(secs >= 0.0, "sampler.budget.max_seconds", "must be non-negative")?;
        }
        if let Some(cap) = s.loss_sample_cap {
            check(cap >= 1, "sampler.loss_sample_cap", "must be at least 1")?;
        }

        let g = &self.graph;
        check(g.epsilon > 0.0, "graph.epsilon", "must be positive")?;
        check(g.sigma2 > 0.0, "graph.sigma2", "must be positive")?;
        check(g.noise_batch >= 1, "graph.noise_batch", "must be at least 1")?;

        self.availability.spec().validate()?;

        let t = &self.trainer;
        check(t.local_steps >= 1, "trainer.local_steps", "must be at least 1")?;
        check(t.batch_size >= 1, "trainer.batch_size", "must be at least 1")?;
        check(t.learning_rate > 0.0, "trainer.learning_rate", "must be positive")?;
        check(t.decay > 0.0 && t.decay <= 1.0, "trainer.decay", "must lie in (0, 1]")?;
        check(t.prox_mu >= 0.0, "trainer.prox_mu", "must be non-negative")?;
        Ok(())
    }
}

impl DatasetConfig {
    pub fn new(scheme: DatasetScheme) -> Self {
        DatasetConfig {
            scheme,
            alpha: half(),
            beta: half(),
            test_fraction: default_test_fraction(),
            train_fraction: default_train_fraction(),
            dirichlet_alpha: default_dirichlet_alpha(),
            max_retries: default_max_retries(),
            path: None,
        }
    }
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_dirichlet_alpha() -> f64 {
    1.75
}
fn default_max_retries() -> usize {
    crate::datagen::DEFAULT_MAX_RETRIES
}
fn default_budget() -> Budget {
    Budget::swaps(10_000)
}
fn default_graph_method() -> GraphMethod {
    GraphMethod::Oracle
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_sigma2() -> f64 {
    0.01
}
fn default_noise_batch() -> usize {
    64
}
fn default_mode() -> AvailabilityMode {
    AvailabilityMode::Idl
}
fn default_period() -> usize {
    DEFAULT_PERIOD
}
fn default_local_steps() -> usize {
    10
}
fn default_batch_size() -> usize {
    10
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_decay() -> f64 {
    0.998
}
fn default_rounds() -> usize {
    1000
}
fn default_num_clients() -> usize {
    30
}
fn default_participation() -> f64 {
    0.2
}
