use std::time::Instant;

use super::{SelectionProblem, SelectionResult, Solver};
use crate::error::{Error, Result};

/// Largest number of subsets [`select_fedgs_exact`] will enumerate.
pub const EXACT_SUBSET_LIMIT: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exhaustive maximiser over all `m`-subsets of the available clients.
/// Subsets are visited in lexicographic id order and only a strictly better
/// value replaces the incumbent, so ties go to the lexicographically
/// smallest set.
pub fn select_fedgs_exact(problem: &SelectionProblem) -> Result<SelectionResult> {
    problem.validate()?;
    let start = Instant::now();
    let a = problem.available.len();
    let m = problem.target_size();
    let combinations = binomial(a, m);
    if combinations > EXACT_SUBSET_LIMIT {
        return Err(Error::TooLarge {
            combinations,
            limit: EXACT_SUBSET_LIMIT,
        });
    }
    let mut current: Vec<usize> = (0..m).collect();
    let mut best = current.clone();
    let mut best_value = problem.objective_of(&current);
    let mut visited = 1usize;
    loop {
        // next combination in lexicographic order
        let mut i = m;
        while i > 0 && current[i - 1] == a - m + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        current[i - 1] += 1;
        for j in i..m {
            current[j] = current[j - 1] + 1;
        }
        visited += 1;
        let value = problem.objective_of(&current);
        if value > best_value {
            best_value = value;
            best.clone_from(&current);
        }
    }
    let selected: Vec<usize> = best.iter().map(|&i| problem.available[i]).collect();
    Ok(SelectionResult {
        draws: selected.clone(),
        selected,
        objective: Some(best_value),
        solver: Solver::Exact,
        iterations: visited,
        elapsed: start.elapsed(),
    })
}
