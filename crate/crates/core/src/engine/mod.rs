//! Federated training loop.
//!
//! Each round draws the active set from the availability model, asks the
//! configured sampler for clients, trains every selected client locally from
//! the global model, aggregates, updates the participation counts and
//! evaluates the new global model.

mod dataset;
mod local;

use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{build_dataset, trim_for_shards};
pub use local::{aggregate_uniform, aggregate_weighted, evaluate, local_sgd, LocalSgd};

use crate::availability::AvailabilityModel;
use crate::config::{Aggregation, ExperimentConfig, GraphMethod, SamplerKind};
use crate::datagen::{split_train_validation, Example, FederatedDataset, TrainValidationSplit};
use crate::domain::{counts_variance, derive_seed, z_vector, ClientProfile, ModelParams, SamplerState};
use crate::error::{Error, Result};
use crate::graph::{
    avg_shortest_path_score, build_similarity_cosine_updates, build_similarity_functional,
    build_similarity_oracle, dot_similarity, Graph3DG, NoiseSpec, SimilarityMatrix,
};
use crate::model::{EvalTotals, LogisticModel};
use crate::sampler::{
    select_fedgs_exact, select_fedgs_heuristic, select_md, select_power_of_choice, select_uniform,
    SelectionProblem, SelectionResult,
};
use crate::sspp::build_similarity_via_sspp;

/// Everything logged about one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub num_active: usize,
    /// Distinct selected clients, ascending.
    pub selected: Vec<usize>,
    /// Sampler draws, with repetitions for samplers that draw with
    /// replacement.
    pub draws: Vec<usize>,
    /// Graph-based objective of the selection; `None` for baselines.
    pub objective: Option<f64>,
    /// Average shortest-path distance among the selected clients.
    pub diversity: f64,
    /// Variance of the participation counts after the round.
    pub counts_variance: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// No client was available; the model and counts are unchanged.
    pub skipped: bool,
}

/// A client whose local training produced non-finite values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub client: usize,
    pub round: usize,
}

/// Wall-clock time spent in each phase, summed over rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub graph: Duration,
    pub selection: Duration,
    pub training: Duration,
    pub evaluation: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sampler: String,
    pub alpha: f64,
    pub availability: String,
    pub num_clients: usize,
    pub max_sample: usize,
    pub rounds: usize,
    pub rounds_run: usize,
    pub skipped_rounds: usize,
    pub initial_test_loss: f64,
    /// Smallest test loss seen, the initial model included.
    pub min_test_loss: f64,
    /// Round that reached it; `None` when no round improved on the
    /// initial model.
    pub min_test_loss_round: Option<usize>,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub final_train_loss: f64,
    pub final_counts_variance: f64,
    /// Largest minus smallest participation count.
    pub final_counts_spread: u64,
    pub final_counts: Vec<u64>,
    pub mean_diversity: f64,
    pub graph_edges: usize,
    pub single_example_clients: Vec<usize>,
    pub data_seed: u64,
    pub train_seed: u64,
    pub availability_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged: Option<Divergence>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub final_model: ModelParams,
    pub timings: PhaseTimings,
}

impl ExperimentOutcome {
    /// The divergence as an error, if training diverged.
    pub fn check(&self) -> Result<()> {
        match self.summary.diverged {
            Some(Divergence { client, round }) => Err(Error::Diverged { client, round }),
            None => Ok(()),
        }
    }
}

/// A configured experiment with its data, graph and availability model
/// built, ready to run.
pub struct Experiment {
    config: ExperimentConfig,
    model: LogisticModel,
    data: TrainValidationSplit,
    profiles: Vec<ClientProfile>,
    graph: Graph3DG,
    availability: AvailabilityModel,
    max_sample: usize,
    pool: rayon::ThreadPool,
    graph_time: Duration,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = build_dataset(&config.dataset, config.num_clients, config.seeds.data)?;
        Self::from_dataset(config, &dataset)
    }

    pub fn from_dataset(config: &ExperimentConfig, dataset: &FederatedDataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        if dataset.num_clients() != config.num_clients {
            return Err(Error::config(
                "num_clients",
                format!("dataset has {} clients", dataset.num_clients()),
            ));
        }
        if let Some(k) = dataset.clients.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("client {k} has no examples")));
        }
        let data = split_train_validation(dataset, config.dataset.train_fraction, config.seeds.data)?;
        if !data.single_example_clients.is_empty() {
            warn!(
                "clients {:?} hold a single example and have no validation part",
                data.single_example_clients
            );
        }
        let profiles = data.train.profiles();
        let model = LogisticModel::new(dataset.num_classes, dataset.dim);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        let availability = AvailabilityModel::new(
            config.availability.spec(),
            &profiles,
            dataset.num_classes,
            config.seeds.availability,
        )?;

        let mut exp = Experiment {
            config: config.clone(),
            model,
            data,
            profiles,
            graph: Graph3DG::from_adjacency(crate::matrix::SquareMatrix::zeros(0), 1.0, 1.0),
            availability,
            max_sample: config.max_sample(),
            pool,
            graph_time: Duration::ZERO,
        };
        let start = Instant::now();
        let sim = exp.pool.install(|| exp.similarity())?;
        if sim.is_degenerate() {
            warn!("similarity matrix is degenerate: {:?}", sim.warnings);
        }
        exp.graph = Graph3DG::from_similarity(&sim, config.graph.epsilon, config.graph.sigma2)?;
        exp.graph_time = start.elapsed();
        info!(
            "graph: {} clients, {} edges, built in {:.3}s",
            exp.graph.size(),
            exp.graph.edges().len(),
            exp.graph_time.as_secs_f64()
        );
        Ok(exp)
    }

    fn similarity(&self) -> Result<SimilarityMatrix> {
        let seeds = &self.config.seeds;
        match self.config.graph.method {
            GraphMethod::Oracle => build_similarity_oracle(&self.profiles, dot_similarity),
            GraphMethod::Sspp => build_similarity_via_sspp(&self.profiles, derive_seed(seeds.train, "sspp", &[])),
            GraphMethod::CosineUpdates => {
                let locals = self.pretrain()?;
                build_similarity_cosine_updates(&locals, &self.model.zeros())
            }
            GraphMethod::Functional => {
                let locals = self.pretrain()?;
                let mut probe_source = self.data.pooled_validation();
                if probe_source.is_empty() {
                    probe_source = self.data.train.clients.iter().flatten().cloned().collect();
                }
                let noise = NoiseSpec::from_examples(&probe_source)?;
                build_similarity_functional(&locals, &self.model, &noise, self.config.graph.noise_batch, seeds.train)
            }
        }
    }

    /// One round of local training of every client from the initial model.
    fn pretrain(&self) -> Result<Vec<ModelParams>> {
        let theta0 = self.model.zeros();
        let cfg = self.local_cfg();
        let lr = self.config.trainer.learning_rate;
        self.data
            .train
            .clients
            .par_iter()
            .enumerate()
            .map(|(k, data)| {
                let seed = derive_seed(self.config.seeds.train, "graph-pretrain", &[k as u64]);
                local_sgd(&self.model, &theta0, data, &cfg, lr, seed)
                    .map_err(|_| Error::Diverged { client: k, round: 0 })
            })
            .collect()
    }

    fn local_cfg(&self) -> LocalSgd {
        LocalSgd {
            steps: self.config.trainer.local_steps,
            batch_size: self.config.trainer.batch_size,
            prox_mu: self.config.trainer.prox_mu,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> LogisticModel {
        self.model
    }

    pub fn data(&self) -> &TrainValidationSplit {
        &self.data
    }

    pub fn profiles(&self) -> &[ClientProfile] {
        &self.profiles
    }

    pub fn graph(&self) -> &Graph3DG {
        &self.graph
    }

    pub fn availability(&self) -> &AvailabilityModel {
        &self.availability
    }

    pub fn max_sample(&self) -> usize {
        self.max_sample
    }

    fn train_sizes(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter().map(|&k| self.data.train.clients[k].len()).collect()
    }

    fn select(&self, t: usize, active: &[usize], state: &SamplerState, theta: &ModelParams) -> Result<SelectionResult> {
        let s = &self.config.sampler;
        let round_seed = derive_seed(self.config.seeds.train, "select", &[t as u64]);
        match s.kind {
            SamplerKind::Fedgs => {
                let z = z_vector(state, self.max_sample, self.config.num_clients);
                let problem =
                    SelectionProblem::new(active, &self.graph.distances, &z, s.alpha, self.max_sample, s.budget)?;
                if s.exact {
                    select_fedgs_exact(&problem)
                } else {
                    select_fedgs_heuristic(&problem)
                }
            }
            SamplerKind::Uniform => select_uniform(active, self.max_sample, round_seed),
            SamplerKind::Md => select_md(active, &self.train_sizes(active), self.max_sample, round_seed),
            SamplerKind::Poc => {
                let losses: Vec<f64> = active
                    .par_iter()
                    .map(|&k| {
                        let data = &self.data.train.clients[k];
                        let cap = s.loss_sample_cap.unwrap_or(data.len()).min(data.len());
                        self.model.eval_totals(theta, &data[..cap]).mean_loss()
                    })
                    .collect();
                select_power_of_choice(active, self.max_sample, &losses)
            }
        }
    }

    fn evaluate_global(&self, theta: &ModelParams) -> (EvalTotals, EvalTotals) {
        let test = evaluate(&self.model, theta, &self.data.train.test_set);
        let parts: Vec<EvalTotals> = self
            .data
            .train
            .clients
            .par_iter()
            .map(|c| evaluate(&self.model, theta, c))
            .collect();
        let train = parts.into_iter().fold(EvalTotals::default(), EvalTotals::merge);
        (train, test)
    }

    /// Runs all rounds. Divergence stops the run early; the records up to
    /// that point are kept and the summary names the offending client.
    pub fn run(&self) -> Result<ExperimentOutcome> {
        self.pool.install(|| self.run_inner(|_| {}))
    }

    /// Like [`Experiment::run`], calling `observe` after every round.
    pub fn run_with<F: FnMut(&RoundRecord) + Send>(&self, observe: F) -> Result<ExperimentOutcome> {
        self.pool.install(|| self.run_inner(observe))
    }

    fn run_inner<F: FnMut(&RoundRecord)>(&self, mut observe: F) -> Result<ExperimentOutcome> {
        let cfg = &self.config;
        let n = cfg.num_clients;
        let local_cfg = self.local_cfg();
        let aggregation = cfg.sampler.aggregation();
        let mut timings = PhaseTimings {
            graph: self.graph_time,
            ..Default::default()
        };

        let mut theta = self.model.zeros();
        let (train0, test0) = self.evaluate_global(&theta);
        let initial_test_loss = test0.mean_loss();
        let mut last = (train0.mean_loss(), test0.mean_loss(), test0.accuracy());
        let mut state = SamplerState::new(n);
        let mut records: Vec<RoundRecord> = Vec::with_capacity(cfg.rounds);
        let mut diverged = None;
        let mut eta = cfg.trainer.learning_rate;

        for t in 0..cfg.rounds {
            if t > 0 {
                eta *= cfg.trainer.decay;
            }
            let active = self.availability.sample_active_set(t);
            if active.is_empty() {
                debug!("round {t}: no client available");
                state.skip_round();
                let rec = RoundRecord {
                    round: t,
                    num_active: 0,
                    selected: Vec::new(),
                    draws: Vec::new(),
                    objective: None,
                    diversity: 0.0,
                    counts_variance: counts_variance(state.counts())?,
                    train_loss: last.0,
                    test_loss: last.1,
                    test_accuracy: last.2,
                    skipped: true,
                };
                observe(&rec);
                records.push(rec);
                continue;
            }

            let start = Instant::now();
            let sel = self.select(t, &active, &state, &theta)?;
            timings.selection += start.elapsed();

            let start = Instant::now();
            let trained: Vec<Result<ModelParams>> = sel
                .selected
                .par_iter()
                .map(|&k| {
                    let seed = derive_seed(cfg.seeds.train, "sgd", &[t as u64, k as u64]);
                    local_sgd(&self.model, &theta, &self.data.train.clients[k], &local_cfg, eta, seed)
                })
                .collect();
            let mut locals = Vec::with_capacity(trained.len());
            for (&k, r) in sel.selected.iter().zip(trained) {
                match r {
                    Ok(m) => locals.push(m),
                    Err(_) => {
                        diverged = Some(Divergence { client: k, round: t });
                        break;
                    }
                }
            }
            if diverged.is_some() {
                break;
            }
            let next = match aggregation {
                Aggregation::Weighted => {
                    let sizes = self.train_sizes(&sel.selected);
                    let pairs: Vec<(&ModelParams, usize)> = locals.iter().zip(sizes).collect();
                    aggregate_weighted(&pairs)?
                }
                Aggregation::Uniform => {
                    let mut draws = sel.draws.clone();
                    draws.sort_unstable();
                    let models: Vec<&ModelParams> = draws
                        .iter()
                        .map(|d| &locals[sel.selected.binary_search(d).expect("draws are selected")])
                        .collect();
                    aggregate_uniform(&models)?
                }
            };
            if !next.is_finite() {
                diverged = Some(Divergence {
                    client: sel.selected[0],
                    round: t,
                });
                break;
            }
            theta = next;
            state.record_round(&sel.selected);
            timings.training += start.elapsed();

            let start = Instant::now();
            let (train, test) = self.evaluate_global(&theta);
            timings.evaluation += start.elapsed();
            last = (train.mean_loss(), test.mean_loss(), test.accuracy());

            let rec = RoundRecord {
                round: t,
                num_active: active.len(),
                diversity: avg_shortest_path_score(&sel.selected, &self.graph.distances, n),
                objective: sel.objective,
                selected: sel.selected,
                draws: sel.draws,
                counts_variance: counts_variance(state.counts())?,
                train_loss: last.0,
                test_loss: last.1,
                test_accuracy: last.2,
                skipped: false,
            };
            if t % 100 == 0 || t + 1 == cfg.rounds {
                info!("round {t}: test loss {:.5}, train loss {:.5}", rec.test_loss, rec.train_loss);
            }
            observe(&rec);
            records.push(rec);
        }

        if let Some(d) = diverged {
            warn!("client {} diverged in round {}", d.client, d.round);
        }
        info!(
            "timings: graph {:.3}s, selection {:.3}s, training {:.3}s, evaluation {:.3}s",
            timings.graph.as_secs_f64(),
            timings.selection.as_secs_f64(),
            timings.training.as_secs_f64(),
            timings.evaluation.as_secs_f64()
        );
        let summary = self.summarize(&records, &state, initial_test_loss, last, diverged)?;
        Ok(ExperimentOutcome {
            records,
            summary,
            final_model: theta,
            timings,
        })
    }

    fn summarize(
        &self,
        records: &[RoundRecord],
        state: &SamplerState,
        initial_test_loss: f64,
        last: (f64, f64, f64),
        diverged: Option<Divergence>,
    ) -> Result<RunSummary> {
        let cfg = &self.config;
        let mut min_test_loss = initial_test_loss;
        let mut min_round = None;
        for r in records.iter().filter(|r| !r.skipped) {
            if r.test_loss < min_test_loss {
                min_test_loss = r.test_loss;
                min_round = Some(r.round);
            }
        }
        let active: Vec<&RoundRecord> = records.iter().filter(|r| !r.skipped).collect();
        let mean_diversity = if active.is_empty() {
            0.0
        } else {
            active.iter().map(|r| r.diversity).sum::<f64>() / active.len() as f64
        };
        let counts = state.counts().to_vec();
        let spread = counts.iter().max().unwrap_or(&0) - counts.iter().min().unwrap_or(&0);
        Ok(RunSummary {
            name: cfg.name.clone(),
            sampler: cfg.sampler.kind.name().to_string(),
            alpha: cfg.sampler.alpha,
            availability: cfg.availability.label(),
            num_clients: cfg.num_clients,
            max_sample: self.max_sample,
            rounds: cfg.rounds,
            rounds_run: records.len(),
            skipped_rounds: records.iter().filter(|r| r.skipped).count(),
            initial_test_loss,
            min_test_loss,
            min_test_loss_round: min_round,
            final_test_loss: last.1,
            final_test_accuracy: last.2,
            final_train_loss: last.0,
            final_counts_variance: counts_variance(&counts)?,
            final_counts_spread: spread,
            final_counts: counts,
            mean_diversity,
            graph_edges: self.graph.edges().len(),
            single_example_clients: self.data.single_example_clients.clone(),
            data_seed: cfg.seeds.data,
            train_seed: cfg.seeds.train,
            availability_seed: cfg.seeds.availability,
            diverged,
        })
    }
}

/// Builds and runs the experiment a configuration describes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    Experiment::prepare(config)?.run()
}

/// Pooled examples of every client's training part.
pub fn pooled_training(data: &TrainValidationSplit) -> Vec<Example> {
    data.train.clients.iter().flatten().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::availability::AvailabilityMode;
    use crate::config::{AvailabilityConfig, DatasetScheme, SamplerConfig};

    fn small(sampler: SamplerConfig, n: usize, m: usize, rounds: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(DatasetScheme::Synthetic, sampler);
        c.num_clients = n;
        c.clients_per_round = Some(m);
        c.rounds = rounds;
        c.trainer.local_steps = 2;
        c
    }

    #[test]
    fn zero_rounds_reports_the_initial_model() {
        let out = run_experiment(&small(SamplerConfig::fedgs(1.0), 5, 2, 0)).unwrap();
        assert!(out.records.is_empty());
        let s = &out.summary;
        assert_eq!(s.min_test_loss, s.initial_test_loss);
        assert_eq!(s.min_test_loss_round, None);
        assert!((s.initial_test_loss - 10f64.ln()).abs() < 1e-12);
        assert_eq!(s.final_counts, vec![0; 5]);
    }

    #[test]
    fn round_robin_with_ideal_availability() {
        let out = run_experiment(&small(SamplerConfig::fedgs(0.0), 4, 2, 4)).unwrap();
        assert_eq!(out.summary.final_counts, vec![2, 2, 2, 2]);
        assert_eq!(out.summary.final_counts_variance, 0.0);
        assert_eq!(out.records[0].selected, vec![0, 1]);
        assert_eq!(out.records[1].selected, vec![2, 3]);
    }

    #[test]
    fn every_sampler_runs() {
        for kind in [SamplerKind::Fedgs, SamplerKind::Uniform, SamplerKind::Md, SamplerKind::Poc] {
            let out = run_experiment(&small(SamplerConfig::new(kind), 6, 2, 5)).unwrap();
            assert_eq!(out.records.len(), 5);
            for r in &out.records {
                assert!(!r.selected.is_empty() && r.selected.len() <= 2);
                assert_eq!(r.objective.is_some(), kind == SamplerKind::Fedgs);
                assert!(r.test_loss.is_finite());
            }
            assert_eq!(out.summary.final_counts.iter().sum::<u64>(),
                out.records.iter().map(|r| r.selected.len() as u64).sum::<u64>());
        }
    }

    #[test]
    fn training_reduces_the_test_loss() {
        let out = run_experiment(&small(SamplerConfig::new(SamplerKind::Uniform), 8, 3, 30)).unwrap();
        assert!(out.summary.final_test_loss < out.summary.initial_test_loss);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut c = small(SamplerConfig::fedgs(1.0), 8, 3, 6);
        c.availability = AvailabilityConfig::new(AvailabilityMode::Ln, 0.5);
        let a = run_experiment(&c).unwrap();
        c.workers = 3;
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_model, b.final_model);
    }

    #[test]
    fn empty_rounds_are_skipped() {
        let mut c = small(SamplerConfig::fedgs(1.0), 5, 2, 40);
        c.availability = AvailabilityConfig::new(AvailabilityMode::Sln, 0.9999);
        let out = run_experiment(&c).unwrap();
        let skipped: Vec<&RoundRecord> = out.records.iter().filter(|r| r.skipped).collect();
        assert!(!skipped.is_empty());
        for r in skipped {
            assert!(r.selected.is_empty());
            assert_eq!(r.num_active, 0);
        }
        assert_eq!(out.summary.skipped_rounds, out.records.iter().filter(|r| r.skipped).count());
    }

    #[test]
    fn divergence_keeps_partial_records() {
        let mut c = small(SamplerConfig::new(SamplerKind::Uniform), 4, 2, 10);
        c.trainer.learning_rate = 1e307;
        c.trainer.decay = 1.0;
        let out = run_experiment(&c).unwrap();
        let d = out.summary.diverged.expect("diverges");
        assert_eq!(out.records.len(), d.round);
        assert!(matches!(out.check(), Err(Error::Diverged { .. })));
    }

    #[test]
    fn every_graph_method_builds() {
        for method in [GraphMethod::Oracle, GraphMethod::Sspp, GraphMethod::CosineUpdates, GraphMethod::Functional] {
            let mut c = small(SamplerConfig::fedgs(1.0), 5, 2, 1);
            c.graph.method = method;
            let e = Experiment::prepare(&c).unwrap();
            assert_eq!(e.graph().size(), 5);
            assert!(e.graph().distances.is_symmetric(0.0));
        }
    }
}
