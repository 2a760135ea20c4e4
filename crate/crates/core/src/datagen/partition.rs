use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal};

use super::{Example, FederatedDataset};
use crate::domain::seeded_rng;
use crate::error::{Error, Result};

/// Redraw limit for a single client's label distribution.
pub const DEFAULT_MAX_RETRIES: usize = 10_000;

fn label_counts(examples: &[Example], num_classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; num_classes];
    for e in examples {
        if e.y >= num_classes {
            return Err(Error::invalid(format!(
                "label {} outside [0, {num_classes})",
                e.y
            )));
        }
        counts[e.y] += 1;
    }
    Ok(counts)
}

fn dims(examples: &[Example]) -> usize {
    examples.first().map_or(0, |e| e.x.len())
}

/// Client sizes `n_k ~ lognormal(ln(n/N) - 0.5, 1)`, at least 1 each and
/// scaled down proportionally when their sum would exceed `total`.
pub fn draw_dirichlet_sizes(total: usize, num_clients: usize, data_seed: u64) -> Result<Vec<usize>> {
    if num_clients == 0 || total < num_clients {
        return Err(Error::invalid(format!(
            "cannot give {num_clients} clients at least one of {total} examples"
        )));
    }
    let mu = (total as f64 / num_clients as f64).ln() - 0.5;
    let dist = LogNormal::new(mu, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seeded_rng(data_seed, "dirichlet-sizes", &[]);
    let raw: Vec<f64> = (0..num_clients).map(|_| dist.sample(&mut rng).max(1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let scale = if sum > total as f64 { total as f64 / sum } else { 1.0 };
    let mut sizes: Vec<usize> = raw
        .iter()
        .map(|&r| ((r * scale).floor() as usize).max(1))
        .collect();
    // the max(1) clamp can push the sum over by a few examples
    let mut excess = sizes.iter().sum::<usize>().saturating_sub(total);
    while excess > 0 {
        let k = (0..num_clients).max_by_key(|&k| (sizes[k], usize::MAX - k)).unwrap();
        sizes[k] -= 1;
        excess -= 1;
    }
    Ok(sizes)
}

/// Draws from `Dirichlet(conc)` through log-gamma variates, which stays
/// finite for concentrations far below 1.
fn sample_dirichlet<R: Rng>(rng: &mut R, conc: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = conc
        .iter()
        .map(|&a| {
            if a <= 0.0 {
                return f64::NEG_INFINITY;
            }
            // Gamma(a) = Gamma(a + 1) * U^(1/a)
            let g: f64 = Gamma::new(a + 1.0, 1.0).unwrap().sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / a
        })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Integer counts summing to `n` closest to `n * p` (largest remainder,
/// lowest label first on ties).
fn apportion(n: usize, p: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|&q| q * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if p[c] > 0.0 {
            counts[c] += 1;
            left -= 1;
        }
    }
    counts
}

/// Label-skewed partition: client `k` receives `sizes[k]` examples whose
/// label mix follows `p_k ~ Dirichlet(dir_alpha * p*)`, `p*` being the
/// global label distribution.
///
/// Clients are filled in id order. A draw whose label counts exceed what is
/// left of some label is replaced by a fresh draw, up to `max_retries` times.
/// A client whose size equals everything that remains takes it all.
pub fn partition_dirichlet(
    examples: &[Example],
    num_classes: usize,
    num_clients: usize,
    dir_alpha: f64,
    data_seed: u64,
    sizes: &[usize],
    max_retries: usize,
) -> Result<FederatedDataset> {
    if !(dir_alpha > 0.0 && dir_alpha.is_finite()) {
        return Err(Error::invalid(format!("dirichlet alpha must be positive, got {dir_alpha}")));
    }
    if num_clients == 0 || sizes.len() != num_clients {
        return Err(Error::invalid(format!(
            "expected {num_clients} client sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("client sizes must be positive"));
    }
    let total: usize = sizes.iter().sum();
    if total > examples.len() {
        return Err(Error::invalid(format!(
            "sizes sum to {total} but only {} examples exist",
            examples.len()
        )));
    }
    let supply = label_counts(examples, num_classes)?;
    let global: Vec<f64> = supply
        .iter()
        .map(|&c| c as f64 / examples.len() as f64)
        .collect();
    let conc: Vec<f64> = global.iter().map(|&p| dir_alpha * p).collect();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in examples.iter().enumerate() {
        pools[e.y].push(i);
    }
    for (y, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut seeded_rng(data_seed, "dirichlet-pool", &[y as u64]));
    }
    let mut remaining = supply;

    let mut clients = Vec::with_capacity(num_clients);
    for (k, &n_k) in sizes.iter().enumerate() {
        let left: usize = remaining.iter().sum();
        let want = if n_k == left {
            remaining.clone()
        } else {
            let mut rng = seeded_rng(data_seed, "dirichlet", &[k as u64]);
            let mut found = None;
            for _ in 0..=max_retries {
                let p = sample_dirichlet(&mut rng, &conc);
                let counts = apportion(n_k, &p);
                if counts.iter().zip(&remaining).all(|(c, r)| c <= r) {
                    found = Some(counts);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::PartitionInfeasible(format!(
                    "client {k}: no label draw fits the remaining supply after {max_retries} retries"
                ))
            })?
        };
        let mut local = Vec::with_capacity(n_k);
        for (y, &c) in want.iter().enumerate() {
            for _ in 0..c {
                let idx = pools[y].pop().expect("supply checked");
                local.push(examples[idx].clone());
            }
            remaining[y] -= c;
        }
        clients.push(local);
    }
    Ok(FederatedDataset {
        num_classes,
        dim: dims(examples),
        client_features: vec![None; num_clients],
        clients,
        test_set: Vec::new(),
    })
}

/// Sort-and-shard partition: the data, sorted by label, is cut into `2N`
/// equal shards and every client receives two of them.
///
/// Shards must exhaust the data and each must hold a single label, so that
/// every client sees at most two labels.
pub fn partition_two_label(
    examples: &[Example],
    num_classes: usize,
    num_clients: usize,
    data_seed: u64,
) -> Result<FederatedDataset> {
    let shards = 2 * num_clients;
    if num_clients == 0 || examples.is_empty() || examples.len() % shards != 0 {
        return Err(Error::invalid(format!(
            "{} examples cannot be cut into {shards} equal shards",
            examples.len()
        )));
    }
    let shard_size = examples.len() / shards;
    let counts = label_counts(examples, num_classes)?;
    if let Some(y) = counts.iter().position(|&c| c % shard_size != 0) {
        return Err(Error::invalid(format!(
            "label {y} has {} examples, not a multiple of the shard size {shard_size}",
            counts[y]
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| examples[i].y);
    let mut shard_ids: Vec<usize> = (0..shards).collect();
    shard_ids.shuffle(&mut seeded_rng(data_seed, "two-label", &[]));
    let clients = (0..num_clients)
        .map(|k| {
            shard_ids[2 * k..2 * k + 2]
                .iter()
                .flat_map(|&s| order[s * shard_size..(s + 1) * shard_size].iter())
                .map(|&i| examples[i].clone())
                .collect()
        })
        .collect();
    Ok(FederatedDataset {
        num_classes,
        dim: dims(examples),
        client_features: vec![None; num_clients],
        clients,
        test_set: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn labelled(per_class: &[usize]) -> Vec<Example> {
        let mut out = Vec::new();
        for (y, &c) in per_class.iter().enumerate() {
            for i in 0..c {
                out.push(Example {
                    x: vec![y as f64, i as f64],
                    y,
                });
            }
        }
        out
    }

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn apportion_sums_to_n() {
        assert_eq!(apportion(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
        assert_eq!(apportion(7, &[1.0, 0.0]), vec![7, 0]);
        assert_eq!(apportion(3, &[0.0, 1.0 / 3.0, 2.0 / 3.0]).iter().sum::<usize>(), 3);
    }

    #[test]
    fn dirichlet_draws_lie_on_the_simplex() {
        let mut rng = seeded_rng(1, "t", &[]);
        for conc in [[0.005, 0.005, 0.005], [1.0, 2.0, 3.0], [1e6, 1e6, 1e6]] {
            let p = sample_dirichlet(&mut rng, &conc);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn sizes_fit_the_supply() {
        for seed in 0..20 {
            let s = draw_dirichlet_sizes(1000, 30, seed).unwrap();
            assert_eq!(s.len(), 30);
            assert!(s.iter().all(|&x| x >= 1));
            assert!(s.iter().sum::<usize>() <= 1000);
        }
        assert!(draw_dirichlet_sizes(3, 5, 0).is_err());
    }

    #[test]
    fn huge_concentration_reproduces_global_mix() {
        let data = labelled(&[300, 200, 500, 1000]);
        let global = [0.15, 0.1, 0.25, 0.5];
        let sizes = vec![200; 8];
        let d = partition_dirichlet(&data, 4, 8, 1e6, 3, &sizes, DEFAULT_MAX_RETRIES).unwrap();
        for k in 0..8 {
            assert_eq!(d.clients[k].len(), 200);
            assert!(tv(&d.label_distribution(k), &global) < 0.05);
        }
    }

    #[test]
    fn single_client_takes_everything() {
        let data = labelled(&[3, 5, 2]);
        let d = partition_dirichlet(&data, 3, 1, 0.5, 0, &[10], 10).unwrap();
        assert_eq!(d.label_counts(0), vec![3, 5, 2]);
    }

    #[test]
    fn tiny_concentration_gives_near_one_hot_clients() {
        // Monte-Carlo oracle: with concentration 0.005 per label a draw has
        // max component > 0.95 with probability ~0.99.
        let data = labelled(&[200, 200]);
        let mut ok = 0;
        for seed in 0..20 {
            let d = partition_dirichlet(&data, 2, 2, 0.01, seed, &[100, 100], DEFAULT_MAX_RETRIES).unwrap();
            let one_hot = (0..2).all(|k| {
                d.label_distribution(k).iter().copied().fold(0.0, f64::max) > 0.95
            });
            if one_hot {
                ok += 1;
            }
        }
        assert!(ok >= 15, "only {ok} of 20 seeds were near one-hot");
    }

    #[test]
    fn mean_client_mix_approaches_global() {
        let data = labelled(&[100, 300, 600, 200, 800]);
        let total = data.len() as f64;
        let global: Vec<f64> = [100., 300., 600., 200., 800.].iter().map(|c| c / total).collect();
        let sizes = vec![100; 5];
        let mut mean = vec![vec![0.0; 5]; 5];
        let seeds = 200;
        for seed in 0..seeds {
            let d = partition_dirichlet(&data, 5, 5, 1.75, seed, &sizes, DEFAULT_MAX_RETRIES).unwrap();
            for (k, m) in mean.iter_mut().enumerate() {
                for (a, b) in m.iter_mut().zip(d.label_distribution(k)) {
                    *a += b / seeds as f64;
                }
            }
        }
        for m in &mean {
            assert!(tv(m, &global) < 0.05, "tv {}", tv(m, &global));
        }
    }

    #[test]
    fn exhausted_retries_are_reported() {
        // two clients each wanting 150 of a 2-class set with 200 + 100: the
        // second client can only be served by a draw matching the leftovers
        let data = labelled(&[200, 100]);
        let r = partition_dirichlet(&data, 2, 2, 0.01, 1, &[150, 149], 3);
        assert!(matches!(r, Err(Error::PartitionInfeasible(_))));
    }

    #[test]
    fn dirichlet_rejects_bad_inputs() {
        let data = labelled(&[5, 5]);
        assert!(partition_dirichlet(&data, 2, 2, 0.0, 0, &[2, 2], 10).is_err());
        assert!(partition_dirichlet(&data, 2, 2, 1.0, 0, &[8, 8], 10).is_err());
        assert!(partition_dirichlet(&data, 2, 2, 1.0, 0, &[2], 10).is_err());
    }

    #[test]
    fn two_label_shards() {
        let data = labelled(&[10; 10]);
        let d = partition_two_label(&data, 10, 5, 7).unwrap();
        let mut seen = BTreeSet::new();
        for k in 0..5 {
            assert_eq!(d.clients[k].len(), 20);
            let labels: BTreeSet<usize> = d.clients[k].iter().map(|e| e.y).collect();
            assert!(labels.len() <= 2);
            for e in &d.clients[k] {
                assert!(seen.insert((e.y, e.x[1] as usize)), "example assigned twice");
            }
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn two_label_full_classes() {
        let data = labelled(&[30; 6]);
        let d = partition_two_label(&data, 6, 3, 1).unwrap();
        for k in 0..3 {
            let counts = d.label_counts(k);
            assert_eq!(counts.iter().filter(|&&c| c == 30).count(), 2);
            assert_eq!(counts.iter().sum::<usize>(), 60);
        }
    }

    #[test]
    fn two_label_single_client_is_infeasible() {
        let data = labelled(&[10; 10]);
        assert!(matches!(
            partition_two_label(&data, 10, 1, 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(partition_two_label(&labelled(&[7, 7]), 2, 2, 0).is_err());
    }
}
