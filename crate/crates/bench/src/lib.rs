//! Fixtures shared by the benchmarks.

use fedsim_core::domain::{seeded_rng, z_vector, SamplerState};
use fedsim_core::graph::floyd_warshall_par;
use fedsim_core::{Budget, SelectionProblem, SquareMatrix};
use rand::Rng;

/// Random sparse adjacency with weights in `[0.1, 1)`; absent edges are
/// infinite.
pub fn random_adjacency(n: usize, density: f64, seed: u64) -> SquareMatrix {
    let mut rng = seeded_rng(seed, "bench-graph", &[]);
    let mut r = SquareMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { f64::INFINITY });
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(density) {
                let w = rng.random_range(0.1..1.0);
                r[(i, j)] = w;
                r[(j, i)] = w;
            }
        }
    }
    r
}

/// Selection instance over all `n` clients with random past counts.
pub fn random_problem(n: usize, m: usize, alpha: f64, seed: u64) -> SelectionProblem {
    let h = floyd_warshall_par(&random_adjacency(n, 0.3, seed));
    let mut rng = seeded_rng(seed, "bench-counts", &[]);
    let counts: Vec<u64> = (0..n).map(|_| rng.random_range(0..20)).collect();
    let z = z_vector(&SamplerState::from_counts(counts), m, n);
    let all: Vec<usize> = (0..n).collect();
    SelectionProblem::new(&all, &h, &z, alpha, m, Budget::unlimited()).expect("valid instance")
}
