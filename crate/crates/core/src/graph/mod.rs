//! The client dependency graph: edges join clients with similar local data,
//! edge weights shrink as similarity grows, and all-pairs shortest-path
//! distances measure how far apart two clients' data are.

mod io;
mod similarity;

use rayon::prelude::*;

pub use io::{parse_edge_list, read_edge_list, write_edge_list, write_edge_list_file};
pub use similarity::{
    build_similarity_cosine_updates, build_similarity_functional, build_similarity_oracle,
    dot_similarity, functional_similarity_on_batch, min_max_normalize, output_embedding, NoiseSpec,
    SimilarityMatrix, SimilarityWarning,
};
pub(crate) use similarity::profile_features;

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

/// Weighted undirected graph over clients plus its shortest-path distances.
///
/// Absent edges are stored as `f64::INFINITY` in `adjacency`; `distances` is
/// always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph3DG {
    pub adjacency: SquareMatrix,
    pub distances: SquareMatrix,
    pub epsilon: f64,
    pub sigma2: f64,
}

impl Graph3DG {
    pub fn from_similarity(v: &SimilarityMatrix, epsilon: f64, sigma2: f64) -> Result<Self> {
        let adjacency = adjacency_from_similarity(v, epsilon, sigma2)?;
        Ok(Self::from_adjacency(adjacency, epsilon, sigma2))
    }

    pub fn from_adjacency(adjacency: SquareMatrix, epsilon: f64, sigma2: f64) -> Self {
        let distances = floyd_warshall(&adjacency);
        Graph3DG {
            adjacency,
            distances,
            epsilon,
            sigma2,
        }
    }

    pub fn size(&self) -> usize {
        self.adjacency.size()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.adjacency[(i, j)].is_finite()
    }

    /// Undirected edge list `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.size();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.has_edge(i, j) {
                    out.push((i, j, self.adjacency[(i, j)]));
                }
            }
        }
        out
    }
}

/// Thresholded Gaussian-kernel adjacency: `exp(-V_ij / sigma2)` where
/// `V_ij >= epsilon`, absent (infinite) below the threshold, 0 on the
/// diagonal.
pub fn adjacency_from_similarity(v: &SimilarityMatrix, epsilon: f64, sigma2: f64) -> Result<SquareMatrix> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    let n = v.size();
    Ok(SquareMatrix::from_fn(n, |i, j| {
        let s = v.get(i, j);
        if i == j {
            0.0
        } else if s >= epsilon {
            // exp underflows to 0 for very small sigma2; keep weights positive
            (-s / sigma2).exp().max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        }
    }))
}

/// Replaces unreachable (infinite) off-diagonal distances by twice the
/// largest finite one, or by 1 when no pair is connected.
fn cap_unreachable(h: &mut SquareMatrix) {
    let n = h.size();
    let mut max_finite: Option<f64> = None;
    for i in 0..n {
        for j in 0..n {
            let d = h[(i, j)];
            if i != j && d.is_finite() {
                max_finite = Some(max_finite.map_or(d, |m: f64| m.max(d)));
            }
        }
    }
    let cap = max_finite.map_or(1.0, |m| 2.0 * m);
    for i in 0..n {
        for j in 0..n {
            if i != j && !h[(i, j)].is_finite() {
                h[(i, j)] = cap;
            }
        }
    }
}

/// All-pairs shortest paths over the finite edges of `adjacency`, with
/// unreachable pairs capped.
pub fn floyd_warshall(adjacency: &SquareMatrix) -> SquareMatrix {
    let n = adjacency.size();
    let mut h = adjacency.clone();
    for i in 0..n {
        h[(i, i)] = 0.0;
    }
    for k in 0..n {
        for i in 0..n {
            let hik = h[(i, k)];
            if !hik.is_finite() {
                continue;
            }
            for j in 0..n {
                let via = hik + h[(k, j)];
                if via < h[(i, j)] {
                    h[(i, j)] = via;
                }
            }
        }
    }
    cap_unreachable(&mut h);
    h
}

/// Row-parallel variant of [`floyd_warshall`]. Row `k` is fixed during
/// layer `k`, so every row update reads the same values as the sequential
/// loop and the result is identical.
pub fn floyd_warshall_par(adjacency: &SquareMatrix) -> SquareMatrix {
    let n = adjacency.size();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = adjacency.row(i).to_vec();
            r[i] = 0.0;
            r
        })
        .collect();
    for k in 0..n {
        let pivot = rows[k].clone();
        rows.par_iter_mut().for_each(|row| {
            let hik = row[k];
            if !hik.is_finite() {
                return;
            }
            for (hij, hkj) in row.iter_mut().zip(&pivot) {
                let via = hik + hkj;
                if via < *hij {
                    *hij = via;
                }
            }
        });
    }
    let mut h = SquareMatrix::from_rows(&rows);
    cap_unreachable(&mut h);
    h
}

/// Sum of shortest-path distances over ordered pairs of distinct clients in
/// `selected`, divided by `N (N - 1)`.
pub fn avg_shortest_path_score(selected: &[usize], distances: &SquareMatrix, num_clients: usize) -> f64 {
    if num_clients < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for &i in selected {
        for &j in selected {
            if i != j {
                total += distances[(i, j)];
            }
        }
    }
    total / (num_clients * (num_clients - 1)) as f64
}

/// Precision, recall and F1 of a predicted edge set against a reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Compares undirected edge sets. An empty prediction scores 0 on all
/// three metrics.
pub fn edge_prediction_scores(predicted: &Graph3DG, oracle: &Graph3DG) -> Result<EdgeScores> {
    let n = predicted.size();
    if n != oracle.size() {
        return Err(Error::invalid(format!(
            "graphs over {n} and {} clients",
            oracle.size()
        )));
    }
    let (mut tp, mut n_pred, mut n_true) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = predicted.has_edge(i, j);
            let t = oracle.has_edge(i, j);
            n_pred += p as usize;
            n_true += t as usize;
            tp += (p && t) as usize;
        }
    }
    if n_pred == 0 {
        return Ok(EdgeScores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let precision = tp as f64 / n_pred as f64;
    let recall = if n_true == 0 { 0.0 } else { tp as f64 / n_true as f64 };
    // harmonic mean of precision and recall, rounded once
    let f1 = 2.0 * tp as f64 / (n_pred + n_true) as f64;
    Ok(EdgeScores {
        precision,
        recall,
        f1,
    })
}
