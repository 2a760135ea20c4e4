use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;

use super::{SelectionResult, Solver};
use crate::domain::seeded_rng;
use crate::error::{Error, Result};

fn check(available: &[usize], max_sample: usize) -> Result<()> {
    if available.is_empty() || max_sample == 0 {
        return Err(Error::invalid("selection needs at least one available client and M >= 1"));
    }
    Ok(())
}

/// Uniform `min(M, |A_t|)`-subset of the available clients, without
/// replacement.
pub fn select_uniform(available: &[usize], max_sample: usize, round_seed: u64) -> Result<SelectionResult> {
    check(available, max_sample)?;
    let start = Instant::now();
    let m = max_sample.min(available.len());
    let mut rng = seeded_rng(round_seed, "uniform", &[]);
    let chosen: Vec<usize> = available.choose_multiple(&mut rng, m).copied().collect();
    Ok(SelectionResult::without_replacement(chosen, Solver::Uniform, start.elapsed()))
}

/// `M` independent draws with probability proportional to data size, with
/// replacement. `sizes` is aligned with `available`.
pub fn select_md(available: &[usize], sizes: &[usize], max_sample: usize, round_seed: u64) -> Result<SelectionResult> {
    check(available, max_sample)?;
    if sizes.len() != available.len() {
        return Err(Error::invalid("one data size per available client is required"));
    }
    let start = Instant::now();
    let dist = WeightedIndex::new(sizes).map_err(|e| Error::invalid(format!("data-size weights: {e}")))?;
    let mut rng = seeded_rng(round_seed, "md", &[]);
    let m = max_sample.min(available.len());
    let draws: Vec<usize> = (0..m).map(|_| available[dist.sample(&mut rng)]).collect();
    let mut selected = draws.clone();
    selected.sort_unstable();
    selected.dedup();
    Ok(SelectionResult {
        selected,
        draws,
        objective: None,
        solver: Solver::MdSample,
        iterations: 0,
        elapsed: start.elapsed(),
    })
}

/// The `min(M, |A_t|)` available clients with the highest local loss, lowest
/// id first on ties. `losses` is aligned with `available`.
pub fn select_power_of_choice(available: &[usize], max_sample: usize, losses: &[f64]) -> Result<SelectionResult> {
    check(available, max_sample)?;
    if losses.len() != available.len() {
        return Err(Error::invalid("one loss per available client is required"));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..available.len()).collect();
    order.sort_by(|&a, &b| {
        losses[b]
            .total_cmp(&losses[a])
            .then(available[a].cmp(&available[b]))
    });
    let m = max_sample.min(available.len());
    let chosen = order[..m].iter().map(|&i| available[i]).collect();
    Ok(SelectionResult::without_replacement(chosen, Solver::PowerOfChoice, start.elapsed()))
}
