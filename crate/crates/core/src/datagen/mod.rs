//! Federated datasets: the synthetic generator, label-skew partitioners, the
//! per-client train/validation split and a binary dump format.

mod io;
mod partition;
mod synthetic;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use partition::{
    draw_dirichlet_sizes, partition_dirichlet, partition_two_label, DEFAULT_MAX_RETRIES,
};
pub use synthetic::{
    generate_synthetic, generate_synthetic_with, feature_variance, SyntheticOptions,
    SYNTHETIC_CLASSES, SYNTHETIC_DIM,
};

use crate::domain::{seeded_rng, ClientProfile};
use crate::error::{Error, Result};

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Per-client example lists plus a pooled held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub num_classes: usize,
    pub dim: usize,
    pub clients: Vec<Vec<Example>>,
    pub test_set: Vec<Example>,
    /// Ground-truth descriptor of each client's local distribution, if known
    /// (for the synthetic generator: the flattened local optimal model).
    pub client_features: Vec<Option<Vec<f64>>>,
}

impl FederatedDataset {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn total_examples(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    pub fn label_counts(&self, client: usize) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for ex in &self.clients[client] {
            counts[ex.y] += 1;
        }
        counts
    }

    /// Empirical label distribution of one client.
    pub fn label_distribution(&self, client: usize) -> Vec<f64> {
        let counts = self.label_counts(client);
        let n = self.clients[client].len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Profiles with the ground-truth features when present, otherwise the
    /// label distribution vector.
    pub fn profiles(&self) -> Vec<ClientProfile> {
        (0..self.num_clients())
            .map(|k| {
                let labels: BTreeSet<usize> = self.clients[k].iter().map(|e| e.y).collect();
                let features = self
                    .client_features
                    .get(k)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| self.label_distribution(k));
                ClientProfile::new(k, self.clients[k].len())
                    .with_labels(labels)
                    .with_features(features)
            })
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.client_features.len() != self.clients.len() {
            return Err(Error::invalid("one feature slot per client is required"));
        }
        for ex in self.clients.iter().flatten().chain(&self.test_set) {
            if ex.y >= self.num_classes {
                return Err(Error::invalid(format!(
                    "label {} outside [0, {})",
                    ex.y, self.num_classes
                )));
            }
            if ex.x.len() != self.dim {
                return Err(Error::invalid(format!(
                    "example of dimension {} in a dataset of dimension {}",
                    ex.x.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// Result of [`split_train_validation`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainValidationSplit {
    /// The dataset restricted to each client's training part.
    pub train: FederatedDataset,
    pub validation: Vec<Vec<Example>>,
    /// Clients with a single example: kept for training, no validation part.
    pub single_example_clients: Vec<usize>,
}

impl TrainValidationSplit {
    pub fn pooled_validation(&self) -> Vec<Example> {
        self.validation.iter().flatten().cloned().collect()
    }
}

/// Splits every client's data into training and validation parts.
///
/// The training share is `round(fraction * n)` clamped so that both parts
/// are nonempty whenever the client has at least two examples.
pub fn split_train_validation(
    dataset: &FederatedDataset,
    fraction: f64,
    data_seed: u64,
) -> Result<TrainValidationSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut train_clients = Vec::with_capacity(dataset.num_clients());
    let mut validation = Vec::with_capacity(dataset.num_clients());
    let mut single = Vec::new();
    for (k, examples) in dataset.clients.iter().enumerate() {
        let n = examples.len();
        if n <= 1 {
            if n == 1 {
                single.push(k);
            }
            train_clients.push(examples.clone());
            validation.push(Vec::new());
            continue;
        }
        let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeded_rng(data_seed, "split", &[k as u64]));
        let (tr, va) = order.split_at(n_train);
        train_clients.push(tr.iter().map(|&i| examples[i].clone()).collect());
        validation.push(va.iter().map(|&i| examples[i].clone()).collect());
    }
    Ok(TrainValidationSplit {
        train: FederatedDataset {
            num_classes: dataset.num_classes,
            dim: dataset.dim,
            clients: train_clients,
            test_set: dataset.test_set.clone(),
            client_features: dataset.client_features.clone(),
        },
        validation,
        single_example_clients: single,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(sizes: &[usize]) -> FederatedDataset {
        let clients = sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                (0..n)
                    .map(|i| Example {
                        x: vec![k as f64, i as f64],
                        y: i % 2,
                    })
                    .collect()
            })
            .collect();
        FederatedDataset {
            num_classes: 2,
            dim: 2,
            clients,
            test_set: vec![],
            client_features: vec![None; sizes.len()],
        }
    }

    #[test]
    fn split_sizes() {
        let d = toy(&[10, 2, 1]);
        let s = split_train_validation(&d, 0.8, 3).unwrap();
        assert_eq!(s.train.clients[0].len(), 8);
        assert_eq!(s.validation[0].len(), 2);

        let s = split_train_validation(&d, 0.9, 3).unwrap();
        assert_eq!(s.train.clients[1].len(), 1);
        assert_eq!(s.validation[1].len(), 1);

        assert_eq!(s.train.clients[2].len(), 1);
        assert!(s.validation[2].is_empty());
        assert_eq!(s.single_example_clients, vec![2]);
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let d = toy(&[37, 12]);
        let a = split_train_validation(&d, 0.7, 11).unwrap();
        let b = split_train_validation(&d, 0.7, 11).unwrap();
        assert_eq!(a, b);
        for k in 0..2 {
            let mut all: Vec<f64> = a.train.clients[k]
                .iter()
                .chain(&a.validation[k])
                .map(|e| e.x[1])
                .collect();
            all.sort_by(f64::total_cmp);
            let expected: Vec<f64> = (0..d.clients[k].len()).map(|i| i as f64).collect();
            assert_eq!(all, expected);
        }
        let c = split_train_validation(&d, 0.7, 12).unwrap();
        assert_ne!(a.train.clients[0], c.train.clients[0]);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let d = toy(&[4]);
        assert!(split_train_validation(&d, 0.0, 0).is_err());
        assert!(split_train_validation(&d, 1.0, 0).is_err());
    }

    #[test]
    fn profiles_fall_back_to_label_distribution() {
        let d = toy(&[4, 3]);
        let p = d.profiles();
        assert_eq!(p[0].features.as_deref(), Some(&[0.5, 0.5][..]));
        assert_eq!(p[1].num_examples, 3);
        assert_eq!(p[1].labels.iter().copied().collect::<Vec<_>>(), vec![0, 1]);
    }
}
