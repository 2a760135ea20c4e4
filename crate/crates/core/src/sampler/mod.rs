//! Client selection.
//!
//! The graph-based selector picks, among the available clients, the set `S`
//! of size `m = min(M, |A_t|)` maximising
//!
//! ```text
//! (alpha / N) * sum_{i != j in S} H_ij  -  sum_{k in S} z_k
//! ```
//!
//! where `H` holds shortest-path distances and `z` penalises clients that
//! have been sampled more often than average. [`select_fedgs_exact`]
//! enumerates all subsets; [`select_fedgs_heuristic`] runs a greedy
//! construction followed by first-improvement 1-swap local search.

mod baselines;
mod exact;
mod heuristic;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use baselines::{select_md, select_power_of_choice, select_uniform};
pub use exact::{select_fedgs_exact, EXACT_SUBSET_LIMIT};
pub use heuristic::{greedy_construction, select_fedgs_heuristic};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

/// Local-search budget. With neither limit set the search runs until no
/// improving swap exists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// Maximum number of improving swaps applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_swaps: Option<usize>,
    /// Wall-clock limit in seconds for the whole selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seconds: Option<f64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub fn swaps(n: usize) -> Self {
        Budget {
            max_swaps: Some(n),
            max_seconds: None,
        }
    }

    pub fn seconds(s: f64) -> Self {
        Budget {
            max_swaps: None,
            max_seconds: Some(s),
        }
    }

    pub(crate) fn time_limit(&self) -> Option<Duration> {
        self.max_seconds.map(Duration::from_secs_f64)
    }
}

/// One selection round restricted to the available clients.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    /// Available client ids, ascending.
    pub available: Vec<usize>,
    /// Distances among the available clients, indexed like `available`.
    pub distances: SquareMatrix,
    /// Count penalty of the available clients, indexed like `available`.
    pub z: Vec<f64>,
    pub alpha: f64,
    pub num_clients: usize,
    pub max_sample: usize,
    pub budget: Budget,
}

impl SelectionProblem {
    /// Restricts the full distance matrix and penalty vector to `available`.
    pub fn new(
        available: &[usize],
        distances: &SquareMatrix,
        z: &[f64],
        alpha: f64,
        max_sample: usize,
        budget: Budget,
    ) -> Result<Self> {
        let num_clients = distances.size();
        if z.len() != num_clients {
            return Err(Error::invalid("penalty vector and distance matrix disagree on N"));
        }
        let mut ids = available.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if let Some(&bad) = ids.iter().find(|&&k| k >= num_clients) {
            return Err(Error::invalid(format!("client {bad} out of range")));
        }
        let p = SelectionProblem {
            distances: distances.submatrix(&ids),
            z: ids.iter().map(|&k| z[k]).collect(),
            available: ids,
            alpha,
            num_clients,
            max_sample,
            budget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.available.len();
        if a == 0 || self.max_sample == 0 {
            return Err(Error::invalid("selection needs at least one available client and M >= 1"));
        }
        if self.distances.size() != a || self.z.len() != a {
            return Err(Error::invalid("problem data does not match the available set"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.num_clients < a {
            return Err(Error::invalid("more available clients than clients"));
        }
        Ok(())
    }

    pub fn target_size(&self) -> usize {
        self.max_sample.min(self.available.len())
    }

    pub(crate) fn pair_weight(&self) -> f64 {
        self.alpha / self.num_clients as f64
    }

    /// Objective of a set given by local indices into `available`.
    pub fn objective_of(&self, local: &[usize]) -> f64 {
        let mut pairs = 0.0;
        for &i in local {
            for &j in local {
                if i != j {
                    pairs += self.distances[(i, j)];
                }
            }
        }
        let linear: f64 = local.iter().map(|&i| self.z[i]).sum();
        self.pair_weight() * pairs - linear
    }

    /// Objective of a binary indicator over `available`.
    pub fn objective(&self, indicator: &[bool]) -> f64 {
        fedgs_objective(indicator, &self.distances, &self.z, self.alpha, self.num_clients)
    }
}

/// `(alpha / N) s^T H s - z^T s` for a binary indicator `s`.
pub fn fedgs_objective(indicator: &[bool], distances: &SquareMatrix, z: &[f64], alpha: f64, num_clients: usize) -> f64 {
    let local: Vec<usize> = indicator
        .iter()
        .enumerate()
        .filter_map(|(i, &on)| on.then_some(i))
        .collect();
    let mut pairs = 0.0;
    for &i in &local {
        for &j in &local {
            pairs += distances[(i, j)];
        }
    }
    let linear: f64 = local.iter().map(|&i| z[i]).sum();
    alpha / num_clients as f64 * pairs - linear
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Exact,
    Heuristic,
    Uniform,
    MdSample,
    PowerOfChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Chosen client ids, ascending and distinct.
    pub selected: Vec<usize>,
    /// Every draw in order, with repetitions; equals `selected` for
    /// samplers without replacement.
    pub draws: Vec<usize>,
    /// Value of the graph-based objective; `None` for baselines.
    pub objective: Option<f64>,
    pub solver: Solver,
    pub iterations: usize,
    pub elapsed: Duration,
}

impl SelectionResult {
    pub(crate) fn without_replacement(mut selected: Vec<usize>, solver: Solver, elapsed: Duration) -> Self {
        selected.sort_unstable();
        SelectionResult {
            draws: selected.clone(),
            selected,
            objective: None,
            solver,
            iterations: 0,
            elapsed,
        }
    }
}
