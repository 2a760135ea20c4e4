//! Value types shared across the simulator, the sampling-count metrics, and
//! the seed-derivation rules every random draw goes through.

use std::collections::BTreeSet;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static facts about one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub id: usize,
    /// Number of local training examples, `n_k >= 1`.
    pub num_examples: usize,
    pub labels: BTreeSet<usize>,
    /// Feature vector describing the local data distribution, if known.
    pub features: Option<Vec<f64>>,
}

impl ClientProfile {
    pub fn new(id: usize, num_examples: usize) -> Self {
        ClientProfile {
            id,
            num_examples,
            labels: BTreeSet::new(),
            features: None,
        }
    }

    pub fn with_labels(mut self, labels: impl IntoIterator<Item = usize>) -> Self {
        self.labels = labels.into_iter().collect();
        self
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = Some(features);
        self
    }
}

/// Checks id uniqueness and positive sizes for a full client population.
pub fn validate_profiles(profiles: &[ClientProfile]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in profiles {
        if p.num_examples == 0 {
            return Err(Error::invalid(format!("client {} has no examples", p.id)));
        }
        if !seen.insert(p.id) {
            return Err(Error::invalid(format!("duplicate client id {}", p.id)));
        }
    }
    Ok(())
}

/// Flat parameter vector of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        ModelParams(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Elementwise `self - other`.
    pub fn delta(&self, other: &ModelParams) -> Result<Vec<f64>> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "parameter dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// Per-client sampling counts `v` and the index of the next round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerState {
    counts: Vec<u64>,
    round: usize,
}

impl SamplerState {
    pub fn new(num_clients: usize) -> Self {
        SamplerState {
            counts: vec![0; num_clients],
            round: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        SamplerState { counts, round: 0 }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Closes a round: each selected client is counted once no matter how
    /// often it appears in `selected`.
    pub fn record_round(&mut self, selected: &[usize]) {
        let distinct: BTreeSet<usize> = selected.iter().copied().collect();
        for k in distinct {
            self.counts[k] += 1;
        }
        self.round += 1;
    }

    /// Advances the round index without touching the counts.
    pub fn skip_round(&mut self) {
        self.round += 1;
    }
}

/// The three independent seed streams of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSeeds {
    pub data: u64,
    pub train: u64,
    pub availability: u64,
}

impl ExperimentSeeds {
    pub fn uniform(seed: u64) -> Self {
        ExperimentSeeds {
            data: seed,
            train: seed,
            availability: seed,
        }
    }
}

impl Default for ExperimentSeeds {
    fn default() -> Self {
        ExperimentSeeds::uniform(0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a base seed, a stream tag and a path of indices.
///
/// Every random draw in the crate is made from an RNG seeded through this
/// function, so output never depends on evaluation order or thread count.
pub fn derive_seed(base: u64, stream: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for b in stream.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    // separator so ("ab", []) and ("a", [b'b']) differ
    h = splitmix64(h ^ 0xFF);
    for &p in path {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn seeded_rng(base: u64, stream: &str, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, path))
}

/// Sample variance of the sampling counts with the `1/(N-1)` normalisation.
pub fn counts_variance(counts: &[u64]) -> Result<f64> {
    let n = counts.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "counts_variance needs at least 2 clients, got {n}"
        )));
    }
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
    let ss: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum();
    Ok(ss / (n - 1) as f64)
}

/// `z_k = 2 (v_k - mean(v) - M/N) + 1`, the linear penalty of the selection
/// objective. `num_clients` must equal the length of the count vector.
pub fn z_vector(state: &SamplerState, max_sample: usize, num_clients: usize) -> Vec<f64> {
    let counts = state.counts();
    debug_assert_eq!(counts.len(), num_clients);
    let n = num_clients as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let share = max_sample as f64 / n;
    counts
        .iter()
        .map(|&c| 2.0 * (c as f64 - mean - share) + 1.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn variance_examples() {
        assert_eq!(counts_variance(&[2, 2, 2]).unwrap(), 0.0);
        assert!((counts_variance(&[1, 2, 3]).unwrap() - 1.0).abs() < 1e-15);
        assert!((counts_variance(&[0, 0, 0, 4]).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn variance_rejects_single_client() {
        assert!(matches!(counts_variance(&[3]), Err(Error::InvalidInput(_))));
        assert!(counts_variance(&[]).is_err());
    }

    #[test]
    fn z_examples() {
        let z = z_vector(&SamplerState::from_counts(vec![0, 0, 0, 0]), 2, 4);
        assert_eq!(z, vec![0.0; 4]);
        let z = z_vector(&SamplerState::from_counts(vec![3, 0, 0, 0]), 2, 4);
        assert_eq!(z, vec![4.5, -1.5, -1.5, -1.5]);
        let z = z_vector(&SamplerState::from_counts(vec![1, 1]), 2, 2);
        assert_eq!(z, vec![-1.0, -1.0]);
    }

    #[test]
    fn record_round_counts_distinct_once() {
        let mut s = SamplerState::new(3);
        s.record_round(&[2, 0, 2]);
        assert_eq!(s.counts(), &[1, 0, 1]);
        assert_eq!(s.round(), 1);
        s.skip_round();
        assert_eq!(s.total(), 2);
        assert_eq!(s.round(), 2);
    }

    #[test]
    fn profile_validation() {
        let ok = vec![ClientProfile::new(0, 3), ClientProfile::new(1, 1)];
        assert!(validate_profiles(&ok).is_ok());
        let dup = vec![ClientProfile::new(0, 3), ClientProfile::new(0, 1)];
        assert!(validate_profiles(&dup).is_err());
        let empty = vec![ClientProfile::new(0, 0)];
        assert!(validate_profiles(&empty).is_err());
    }

    #[test]
    fn derived_seeds_separate_streams() {
        let a = derive_seed(7, "availability", &[1, 2]);
        assert_eq!(a, derive_seed(7, "availability", &[1, 2]));
        assert_ne!(a, derive_seed(7, "availability", &[2, 1]));
        assert_ne!(a, derive_seed(7, "train", &[1, 2]));
        assert_ne!(a, derive_seed(8, "availability", &[1, 2]));
    }

    proptest! {
        #[test]
        fn variance_translation_invariant(v in prop::collection::vec(0u64..1000, 2..40), c in 0u64..1000) {
            let shifted: Vec<u64> = v.iter().map(|x| x + c).collect();
            let a = counts_variance(&v).unwrap();
            let b = counts_variance(&shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn z_preserves_order(v in prop::collection::vec(0u64..50, 2..30), m in 1usize..10) {
            let n = v.len();
            let z = z_vector(&SamplerState::from_counts(v.clone()), m, n);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(v[i] < v[j], z[i] < z[j]);
                }
            }
        }
    }
}
