use std::time::Instant;

use super::{SelectionProblem, SelectionResult, Solver};
use crate::error::Result;

/// Incremental view of a partial selection: `pull[j]` is the summed
/// distance from `j` to the currently selected clients.
struct State<'a> {
    problem: &'a SelectionProblem,
    chosen: Vec<bool>,
    pull: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(problem: &'a SelectionProblem) -> Self {
        let a = problem.available.len();
        State {
            problem,
            chosen: vec![false; a],
            pull: vec![0.0; a],
        }
    }

    /// Objective change from adding `j`.
    fn add_gain(&self, j: usize) -> f64 {
        2.0 * self.problem.pair_weight() * self.pull[j] - self.problem.z[j]
    }

    /// Objective change from replacing selected `out` by unselected `inc`.
    fn swap_gain(&self, out: usize, inc: usize) -> f64 {
        let w = 2.0 * self.problem.pair_weight();
        let removed = w * self.pull[out] - self.problem.z[out];
        let added = w * (self.pull[inc] - self.problem.distances[(out, inc)]) - self.problem.z[inc];
        added - removed
    }

    fn set(&mut self, j: usize, on: bool) {
        self.chosen[j] = on;
        let sign = if on { 1.0 } else { -1.0 };
        let row = self.problem.distances.row(j);
        for (p, d) in self.pull.iter_mut().zip(row) {
            *p += sign * d;
        }
    }

    fn selected_local(&self) -> Vec<usize> {
        (0..self.chosen.len()).filter(|&i| self.chosen[i]).collect()
    }
}

fn greedy(state: &mut State<'_>) {
    let m = state.problem.target_size();
    for _ in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..state.chosen.len() {
            if state.chosen[j] {
                continue;
            }
            let g = state.add_gain(j);
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((j, g));
            }
        }
        let (j, _) = best.expect("target size never exceeds the available set");
        state.set(j, true);
    }
}

/// Greedy construction only: repeatedly add the client with the largest
/// objective gain, lowest id on ties.
pub fn greedy_construction(problem: &SelectionProblem) -> Result<SelectionResult> {
    problem.validate()?;
    let start = Instant::now();
    let mut state = State::new(problem);
    greedy(&mut state);
    let local = state.selected_local();
    let selected: Vec<usize> = local.iter().map(|&i| problem.available[i]).collect();
    Ok(SelectionResult {
        draws: selected.clone(),
        selected,
        objective: Some(problem.objective_of(&local)),
        solver: Solver::Heuristic,
        iterations: 0,
        elapsed: start.elapsed(),
    })
}

/// Greedy construction followed by first-improvement 1-swap local search.
///
/// Swaps are scanned with the outgoing client in ascending id order and the
/// incoming client in ascending id order; the first strictly improving swap
/// is applied and the scan restarts. The search stops at a 1-swap local
/// optimum or when the budget runs out. `iterations` reports the number of
/// swaps applied.
pub fn select_fedgs_heuristic(problem: &SelectionProblem) -> Result<SelectionResult> {
    problem.validate()?;
    let start = Instant::now();
    let deadline = problem.budget.time_limit().map(|d| start + d);
    let max_swaps = problem.budget.max_swaps.unwrap_or(usize::MAX);
    let mut state = State::new(problem);
    greedy(&mut state);

    let a = problem.available.len();
    let mut swaps = 0usize;
    let mut value = problem.objective_of(&state.selected_local());
    'search: while swaps < max_swaps {
        let tol = 1e-12 * (1.0 + value.abs());
        for out in 0..a {
            if !state.chosen[out] {
                continue;
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                break 'search;
            }
            for inc in 0..a {
                if state.chosen[inc] {
                    continue;
                }
                let gain = state.swap_gain(out, inc);
                if gain > tol {
                    state.set(out, false);
                    state.set(inc, true);
                    swaps += 1;
                    value += gain;
                    continue 'search;
                }
            }
        }
        break;
    }

    let local = state.selected_local();
    let selected: Vec<usize> = local.iter().map(|&i| problem.available[i]).collect();
    Ok(SelectionResult {
        draws: selected.clone(),
        selected,
        objective: Some(problem.objective_of(&local)),
        solver: Solver::Heuristic,
        iterations: swaps,
        elapsed: start.elapsed(),
    })
}
