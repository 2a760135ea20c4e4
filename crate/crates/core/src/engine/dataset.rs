use crate::config::{DatasetConfig, DatasetScheme};
use crate::datagen::{
    draw_dirichlet_sizes, generate_synthetic_with, load_dataset, partition_dirichlet, partition_two_label,
    Example, FederatedDataset, SyntheticOptions,
};
use crate::error::{Error, Result};

/// Builds the federated dataset a configuration describes.
///
/// The Dirichlet and two-label schemes pool the training examples of a
/// synthetic population and partition them again; the synthetic test set is
/// kept as is.
pub fn build_dataset(cfg: &DatasetConfig, num_clients: usize, data_seed: u64) -> Result<FederatedDataset> {
    if let Some(path) = &cfg.path {
        let d = load_dataset(path)?;
        if d.num_clients() != num_clients {
            return Err(Error::config(
                "dataset.path",
                format!("dump holds {} clients, config asks for {num_clients}", d.num_clients()),
            ));
        }
        return Ok(d);
    }
    let options = SyntheticOptions {
        test_fraction: cfg.test_fraction,
        ..SyntheticOptions::default()
    };
    let base = generate_synthetic_with(cfg.alpha, cfg.beta, num_clients, data_seed, options)?;
    if cfg.scheme == DatasetScheme::Synthetic {
        return Ok(base);
    }
    let pool: Vec<Example> = base.clients.into_iter().flatten().collect();
    let mut d = match cfg.scheme {
        DatasetScheme::Dirichlet => {
            // sizes are drawn against half the pool so that late clients
            // still find every label
            let sizes = draw_dirichlet_sizes(pool.len() / 2, num_clients, data_seed)?;
            partition_dirichlet(
                &pool,
                base.num_classes,
                num_clients,
                cfg.dirichlet_alpha,
                data_seed,
                &sizes,
                cfg.max_retries,
            )?
        }
        DatasetScheme::TwoLabel => {
            let trimmed = trim_for_shards(&pool, base.num_classes, 2 * num_clients)?;
            partition_two_label(&trimmed, base.num_classes, num_clients, data_seed)?
        }
        DatasetScheme::Synthetic => unreachable!(),
    };
    d.test_set = base.test_set;
    Ok(d)
}

/// Drops examples so that the rest splits into exactly `shards` single-label
/// shards of equal size: the shard size is the largest one leaving at least
/// `shards` whole shards, and surplus shards are removed from the classes
/// holding the most, highest label first on ties.
pub fn trim_for_shards(pool: &[Example], num_classes: usize, shards: usize) -> Result<Vec<Example>> {
    let mut counts = vec![0usize; num_classes];
    for e in pool {
        *counts
            .get_mut(e.y)
            .ok_or_else(|| Error::invalid(format!("label {} outside [0, {num_classes})", e.y)))? += 1;
    }
    if shards == 0 || pool.len() < shards {
        return Err(Error::invalid(format!(
            "{} examples cannot fill {shards} shards",
            pool.len()
        )));
    }
    let whole = |s: usize| counts.iter().map(|c| c / s).sum::<usize>();
    let size = (1..=pool.len() / shards).rev().find(|&s| whole(s) >= shards).unwrap_or(1);
    let mut per_class: Vec<usize> = counts.iter().map(|c| c / size).collect();
    let mut surplus = per_class.iter().sum::<usize>() - shards;
    while surplus > 0 {
        let y = (0..num_classes)
            .max_by_key(|&y| per_class[y])
            .expect("at least one class");
        per_class[y] -= 1;
        surplus -= 1;
    }
    let mut quota: Vec<usize> = per_class.iter().map(|k| k * size).collect();
    Ok(pool
        .iter()
        .filter(|e| {
            let q = &mut quota[e.y];
            if *q > 0 {
                *q -= 1;
                true
            } else {
                false
            }
        })
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(labels: &[usize]) -> Vec<Example> {
        labels.iter().map(|&y| Example { x: vec![y as f64], y }).collect()
    }

    #[test]
    fn trimming_example() {
        // counts 7, 5, 2 with 4 shards: size 3 gives 2 + 1 + 0 = 3 shards,
        // size 2 gives 3 + 2 + 1 = 6, so size 2 with two shards dropped
        let mut labels = vec![0; 7];
        labels.extend([1; 5]);
        labels.extend([2; 2]);
        let t = trim_for_shards(&pool(&labels), 3, 4).unwrap();
        assert_eq!(t.len(), 8);
        let c: Vec<usize> = (0..3).map(|y| t.iter().filter(|e| e.y == y).count()).collect();
        assert_eq!(c, vec![4, 2, 2]);
    }

    #[test]
    fn trimmed_pool_is_shardable() {
        let labels: Vec<usize> = (0..997).map(|i| (i * 7 + i / 13) % 10).collect();
        let t = trim_for_shards(&pool(&labels), 10, 20).unwrap();
        let d = partition_two_label(&t, 10, 10, 3).unwrap();
        for k in 0..10 {
            let labels: std::collections::BTreeSet<usize> = d.clients[k].iter().map(|e| e.y).collect();
            assert!(labels.len() <= 2);
        }
    }

    #[test]
    fn too_few_examples() {
        assert!(trim_for_shards(&pool(&[0, 1, 2]), 3, 4).is_err());
    }

    #[test]
    fn every_scheme_builds() {
        for scheme in [DatasetScheme::Synthetic, DatasetScheme::Dirichlet, DatasetScheme::TwoLabel] {
            let d = build_dataset(&DatasetConfig::new(scheme), 6, 1).unwrap();
            assert_eq!(d.num_clients(), 6);
            assert!(!d.test_set.is_empty());
            assert!(d.clients.iter().all(|c| !c.is_empty()), "{scheme:?}");
        }
    }
}
