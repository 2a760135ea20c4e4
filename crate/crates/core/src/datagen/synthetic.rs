use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;

use super::{Example, FederatedDataset};
use crate::domain::seeded_rng;
use crate::error::{Error, Result};
use crate::model::argmax;

pub const SYNTHETIC_DIM: usize = 60;
pub const SYNTHETIC_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOptions {
    /// Extra examples drawn per client for the pooled test set, as a share
    /// of the client's training size.
    pub test_fraction: f64,
    /// Location and scale of the lognormal client-size distribution.
    pub size_mu: f64,
    pub size_sigma: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            test_fraction: 0.2,
            size_mu: 4.0,
            size_sigma: 2.0,
        }
    }
}

/// Variance of feature `i` (0-based) of the input covariance, `(i+1)^-1.2`.
pub fn feature_variance(i: usize) -> f64 {
    ((i + 1) as f64).powf(-1.2)
}

fn normal<R: Rng>(rng: &mut R, mean: f64, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

/// Synthetic(alpha, beta) with the default options.
pub fn generate_synthetic(
    alpha: f64,
    beta: f64,
    num_clients: usize,
    data_seed: u64,
) -> Result<FederatedDataset> {
    generate_synthetic_with(alpha, beta, num_clients, data_seed, SyntheticOptions::default())
}

/// Generates a non-iid federated classification set.
///
/// Client `k` owns a softmax model `(W_k, b_k)` with entries centred on
/// `mu_k ~ N(0, alpha)` and an input mean `v_k` centred on `B_k ~ N(0, beta)`;
/// inputs follow `N(v_k, diag((i)^-1.2))` and labels are the arg-max of the
/// client's model. The `alpha`/`beta` arguments are standard deviations.
pub fn generate_synthetic_with(
    alpha: f64,
    beta: f64,
    num_clients: usize,
    data_seed: u64,
    options: SyntheticOptions,
) -> Result<FederatedDataset> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::invalid("synthetic alpha and beta must be non-negative"));
    }
    if num_clients < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 clients"));
    }
    if !(options.test_fraction >= 0.0) {
        return Err(Error::invalid("test fraction must be non-negative"));
    }
    let stds: Vec<f64> = (0..SYNTHETIC_DIM).map(|i| feature_variance(i).sqrt()).collect();
    let sizes = LogNormal::new(options.size_mu, options.size_sigma)
        .map_err(|e| Error::invalid(format!("client size distribution: {e}")))?;

    let per_client: Vec<(Vec<Example>, Vec<Example>, Vec<f64>)> = (0..num_clients)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeded_rng(data_seed, "synthetic", &[k as u64]);
            let mu = normal(&mut rng, 0.0, alpha);
            let mut weights = vec![0.0; SYNTHETIC_CLASSES * SYNTHETIC_DIM];
            for w in weights.iter_mut() {
                *w = normal(&mut rng, mu, 1.0);
            }
            let bias: Vec<f64> = (0..SYNTHETIC_CLASSES).map(|_| normal(&mut rng, mu, 1.0)).collect();
            let shift = normal(&mut rng, 0.0, beta);
            let centre: Vec<f64> = (0..SYNTHETIC_DIM).map(|_| normal(&mut rng, shift, 1.0)).collect();

            let n_train = (sizes.sample(&mut rng).ceil() as usize).max(2);
            let n_test = if options.test_fraction > 0.0 {
                ((options.test_fraction * n_train as f64).ceil() as usize).max(1)
            } else {
                0
            };

            let mut logits = vec![0.0; SYNTHETIC_CLASSES];
            let mut draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let x: Vec<f64> = centre
                    .iter()
                    .zip(&stds)
                    .map(|(&m, &s)| normal(rng, m, s))
                    .collect();
                for (c, l) in logits.iter_mut().enumerate() {
                    let row = &weights[c * SYNTHETIC_DIM..(c + 1) * SYNTHETIC_DIM];
                    *l = crate::model::dot(row, &x) + bias[c];
                }
                // softmax is monotone, so its arg-max is that of the logits
                Example { y: argmax(&logits), x }
            };
            let train: Vec<Example> = (0..n_train).map(|_| draw(&mut rng)).collect();
            let test: Vec<Example> = (0..n_test).map(|_| draw(&mut rng)).collect();

            let mut features = weights.clone();
            features.extend_from_slice(&bias);
            (train, test, features)
        })
        .collect();

    let mut clients = Vec::with_capacity(num_clients);
    let mut test_set = Vec::new();
    let mut client_features = Vec::with_capacity(num_clients);
    for (train, test, features) in per_client {
        clients.push(train);
        test_set.extend(test);
        client_features.push(Some(features));
    }
    Ok(FederatedDataset {
        num_classes: SYNTHETIC_CLASSES,
        dim: SYNTHETIC_DIM,
        clients,
        test_set,
        client_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_of_default_setting() {
        let d = generate_synthetic(0.5, 0.5, 30, 1).unwrap();
        assert_eq!(d.num_clients(), 30);
        assert_eq!(d.dim, 60);
        assert_eq!(d.num_classes, 10);
        assert!(d.validate().is_ok());
        for (k, c) in d.clients.iter().enumerate() {
            assert!(c.len() >= 2, "client {k} too small");
            assert!(c.iter().all(|e| e.x.len() == 60 && e.y < 10));
        }
        assert!(!d.test_set.is_empty());
        let expected_test: usize = d
            .clients
            .iter()
            .map(|c| ((0.2 * c.len() as f64).ceil() as usize).max(1))
            .sum();
        assert_eq!(d.test_set.len(), expected_test);
        assert_eq!(d.client_features[0].as_ref().unwrap().len(), 610);
    }

    #[test]
    fn covariance_diagonal() {
        assert_eq!(feature_variance(0), 1.0);
        assert!((feature_variance(1) - 2f64.powf(-1.2)).abs() < 1e-15);
        assert!((feature_variance(59) - 60f64.powf(-1.2)).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_centres_models_at_zero() {
        // with mu_k = 0 exactly, the model entries are plain standard normals
        let d = generate_synthetic(0.0, 0.0, 2, 5).unwrap();
        for f in d.client_features.iter().flatten() {
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            assert!(mean.abs() < 0.2, "mean {mean}");
        }
        // same model draws as if the client's mu had been set to 0 directly
        let mut rng = seeded_rng(5, "synthetic", &[0]);
        let mu = normal(&mut rng, 0.0, 0.0);
        assert_eq!(mu, 0.0);
        let w0 = normal(&mut rng, mu, 1.0);
        assert_eq!(d.client_features[0].as_ref().unwrap()[0], w0);
    }

    #[test]
    fn bit_identical_for_same_seed() {
        let a = generate_synthetic(0.5, 0.5, 5, 42).unwrap();
        let b = generate_synthetic(0.5, 0.5, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(0.5, 0.5, 5, 43).unwrap();
        assert_ne!(a.clients[0], c.clients[0]);
    }

    #[test]
    fn labels_follow_local_model() {
        let d = generate_synthetic(0.5, 0.5, 3, 9).unwrap();
        let f = d.client_features[1].as_ref().unwrap();
        let m = crate::model::LogisticModel::new(10, 60);
        let p = crate::domain::ModelParams(f.clone());
        assert!(d.clients[1].iter().all(|e| m.predict(&p, &e.x) == e.y));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_synthetic(-1.0, 0.5, 3, 0).is_err());
        assert!(generate_synthetic(0.5, 0.5, 1, 0).is_err());
    }
}
