use rand_distr::{Distribution, StandardNormal};

use crate::datagen::Example;
use crate::domain::{seeded_rng, ClientProfile, ModelParams};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::model::{dot, LogisticModel};

/// Conditions under which a similarity matrix was still produced but may not
/// carry information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimilarityWarning {
    /// All off-diagonal raw similarities were equal; every entry set to 0.5.
    DegenerateNormalization,
    /// The client's vector had zero norm; its row and column are 0.
    ZeroNorm { client: usize },
}

/// Symmetric client-similarity matrix with entries in `[0, 1]`. The diagonal
/// is set to 1 and carries no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: SquareMatrix,
    pub warnings: Vec<SimilarityWarning>,
}

impl SimilarityMatrix {
    pub fn new(values: SquareMatrix) -> Self {
        SimilarityMatrix {
            values,
            warnings: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.values.size()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn is_degenerate(&self) -> bool {
        self.warnings.contains(&SimilarityWarning::DegenerateNormalization)
    }
}

pub fn dot_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}

/// Min-max normalises the off-diagonal entries of a raw similarity matrix
/// to `[0, 1]`.
///
/// A spread below `1e-9` relative to the magnitude of the entries counts as
/// all-equal, which yields the all-0.5 matrix with a warning.
pub fn min_max_normalize(raw: &SquareMatrix) -> SimilarityMatrix {
    let n = raw.size();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lo = lo.min(raw[(i, j)]);
                hi = hi.max(raw[(i, j)]);
            }
        }
    }
    let scale = 1.0f64.max(lo.abs()).max(hi.abs());
    if n < 2 || !(hi - lo > 1e-9 * scale) {
        let values = SquareMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { 0.5 });
        return SimilarityMatrix {
            values,
            warnings: vec![SimilarityWarning::DegenerateNormalization],
        };
    }
    let values = SquareMatrix::from_fn(n, |i, j| {
        if i == j {
            1.0
        } else {
            ((raw[(i, j)] - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    });
    SimilarityMatrix::new(values)
}

pub(crate) fn profile_features(profiles: &[ClientProfile]) -> Result<Vec<&[f64]>> {
    if profiles.len() < 2 {
        return Err(Error::invalid("a similarity matrix needs at least 2 clients"));
    }
    let feats: Vec<&[f64]> = profiles
        .iter()
        .map(|p| {
            p.features
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("client {} has no feature vector", p.id)))
        })
        .collect::<Result<_>>()?;
    let d = feats[0].len();
    if feats.iter().any(|f| f.len() != d) {
        return Err(Error::invalid("feature vectors differ in dimension"));
    }
    Ok(feats)
}

/// Similarities computed directly from the clients' true feature vectors,
/// then min-max normalised.
pub fn build_similarity_oracle<F>(profiles: &[ClientProfile], sim_fn: F) -> Result<SimilarityMatrix>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let feats = profile_features(profiles)?;
    let n = feats.len();
    let mut raw = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = sim_fn(feats[i], feats[j]);
            raw[(i, j)] = s;
            raw[(j, i)] = s;
        }
    }
    Ok(min_max_normalize(&raw))
}

/// `max(cos(e_i, e_j), 0)` for every pair of vectors.
fn clipped_cosine(vectors: &[Vec<f64>]) -> SimilarityMatrix {
    let n = vectors.len();
    let norms: Vec<f64> = vectors.iter().map(|v| dot(v, v).sqrt()).collect();
    let mut warnings = Vec::new();
    for (k, &nk) in norms.iter().enumerate() {
        if nk == 0.0 {
            warnings.push(SimilarityWarning::ZeroNorm { client: k });
        }
    }
    let mut values = SquareMatrix::zeros(n);
    for i in 0..n {
        values[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                (dot(&vectors[i], &vectors[j]) / (norms[i] * norms[j])).clamp(0.0, 1.0)
            };
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    SimilarityMatrix { values, warnings }
}

/// Clipped cosine similarity between the clients' model updates
/// `local_k - global`.
pub fn build_similarity_cosine_updates(
    local_models: &[ModelParams],
    global_model: &ModelParams,
) -> Result<SimilarityMatrix> {
    let deltas: Vec<Vec<f64>> = local_models
        .iter()
        .map(|m| m.delta(global_model))
        .collect::<Result<_>>()?;
    Ok(clipped_cosine(&deltas))
}

/// Diagonal Gaussian the functional-similarity probes are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NoiseSpec {
    /// Per-feature mean and standard deviation of a (server-held) sample.
    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::invalid("noise statistics need at least one example"))?;
        let d = first.x.len();
        let n = examples.len() as f64;
        let mut mean = vec![0.0; d];
        for e in examples {
            for (m, x) in mean.iter_mut().zip(&e.x) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for e in examples {
            for ((v, x), m) in var.iter_mut().zip(&e.x).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        Ok(NoiseSpec {
            mean,
            std: var.into_iter().map(f64::sqrt).collect(),
        })
    }

    pub fn sample_batch(&self, batch_size: usize, train_seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(train_seed, "functional-noise", &[]);
        (0..batch_size)
            .map(|_| {
                self.mean
                    .iter()
                    .zip(&self.std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + s * z
                    })
                    .collect()
            })
            .collect()
    }
}

/// Mean output-layer activation (the logits) of a model over a probe batch.
pub fn output_embedding(model: &LogisticModel, params: &ModelParams, batch: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; model.num_classes];
    let mut logits = vec![0.0; model.num_classes];
    for x in batch {
        model.logits_into(&params.0, x, &mut logits);
        for (a, l) in acc.iter_mut().zip(&logits) {
            *a += l;
        }
    }
    let n = batch.len().max(1) as f64;
    acc.into_iter().map(|a| a / n).collect()
}

/// Functional similarity: clipped cosine between the models' mean output
/// embeddings on a shared batch of Gaussian probes.
pub fn build_similarity_functional(
    local_models: &[ModelParams],
    model: &LogisticModel,
    noise: &NoiseSpec,
    batch_size: usize,
    train_seed: u64,
) -> Result<SimilarityMatrix> {
    if batch_size == 0 {
        return Err(Error::invalid("noise batch size must be at least 1"));
    }
    if noise.mean.len() != model.dim || noise.std.len() != model.dim {
        return Err(Error::invalid("noise dimension does not match the model input"));
    }
    if let Some(m) = local_models.iter().find(|m| m.dim() != model.num_params()) {
        return Err(Error::invalid(format!(
            "model with {} parameters, expected {}",
            m.dim(),
            model.num_params()
        )));
    }
    let batch = noise.sample_batch(batch_size, train_seed);
    Ok(functional_similarity_on_batch(local_models, model, &batch))
}

pub fn functional_similarity_on_batch(
    local_models: &[ModelParams],
    model: &LogisticModel,
    batch: &[Vec<f64>],
) -> SimilarityMatrix {
    let embeddings: Vec<Vec<f64>> = local_models
        .iter()
        .map(|p| output_embedding(model, p, batch))
        .collect();
    clipped_cosine(&embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles(feats: &[&[f64]]) -> Vec<ClientProfile> {
        feats
            .iter()
            .enumerate()
            .map(|(k, f)| ClientProfile::new(k, 1).with_features(f.to_vec()))
            .collect()
    }

    #[test]
    fn oracle_normalization_example() {
        let p = profiles(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let v = build_similarity_oracle(&p, dot_similarity).unwrap();
        assert!(v.warnings.is_empty());
        assert_eq!(v.get(0, 2), 1.0);
        assert_eq!(v.get(2, 0), 1.0);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 2), 0.0);
    }

    #[test]
    fn oracle_degenerate_cases() {
        let p = profiles(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let v = build_similarity_oracle(&p, dot_similarity).unwrap();
        assert!(v.is_degenerate());
        assert_eq!(v.get(0, 1), 0.5);
        assert_eq!(v.get(2, 1), 0.5);

        let p = profiles(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let v = build_similarity_oracle(&p, dot_similarity).unwrap();
        assert!(v.is_degenerate());
        assert_eq!(v.get(0, 1), 0.5);
    }

    #[test]
    fn oracle_requires_features() {
        let mut p = profiles(&[&[1.0], &[2.0]]);
        p[1].features = None;
        assert!(build_similarity_oracle(&p, dot_similarity).is_err());
        let p = profiles(&[&[1.0], &[2.0, 1.0]]);
        assert!(build_similarity_oracle(&p, dot_similarity).is_err());
    }

    #[test]
    fn cosine_update_examples() {
        let g = ModelParams(vec![1.0, 1.0]);
        let same = build_similarity_cosine_updates(
            &[ModelParams(vec![2.0, 3.0]), ModelParams(vec![2.0, 3.0])],
            &g,
        )
        .unwrap();
        assert!((same.get(0, 1) - 1.0).abs() < 1e-15);

        let opposite = build_similarity_cosine_updates(
            &[ModelParams(vec![2.0, 3.0]), ModelParams(vec![0.0, -1.0])],
            &g,
        )
        .unwrap();
        assert_eq!(opposite.get(0, 1), 0.0);

        let v = build_similarity_cosine_updates(
            &[ModelParams(vec![2.0, 1.0]), ModelParams(vec![2.0, 2.0])],
            &g,
        )
        .unwrap();
        assert!((v.get(0, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_update_warns() {
        let g = ModelParams(vec![1.0, 1.0]);
        let v = build_similarity_cosine_updates(
            &[g.clone(), ModelParams(vec![2.0, 1.0]), ModelParams(vec![3.0, 1.0])],
            &g,
        )
        .unwrap();
        assert_eq!(v.warnings, vec![SimilarityWarning::ZeroNorm { client: 0 }]);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(2, 0), 0.0);
        assert!((v.get(1, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let g = ModelParams(vec![1.0, 1.0]);
        assert!(build_similarity_cosine_updates(&[ModelParams(vec![1.0])], &g).is_err());
    }

    #[test]
    fn functional_identical_and_opposite_models() {
        let m = LogisticModel::new(3, 2);
        let a = m.pack(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![-2.0, 0.3]], &[0.0; 3]);
        let neg = ModelParams(a.0.iter().map(|x| -x).collect());
        let noise = NoiseSpec {
            mean: vec![0.3, -0.2],
            std: vec![1.0, 0.5],
        };
        let v = build_similarity_functional(&[a.clone(), a.clone(), a.clone()], &m, &noise, 16, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((v.get(i, j) - 1.0).abs() < 1e-12);
            }
        }
        let v = build_similarity_functional(&[a, neg], &m, &noise, 16, 3).unwrap();
        assert_eq!(v.get(0, 1), 0.0);
    }

    #[test]
    fn functional_hand_forward_pass() {
        // Two 2-class models on the probes x1 = (1, 0), x2 = (0, 2).
        // Model A: W = [[1, 0], [0, 1]], b = (0, 0)
        //   logits(x1) = (1, 0), logits(x2) = (0, 2), mean e_A = (0.5, 1)
        // Model B: W = [[2, 1], [0, -1]], b = (1, 0)
        //   logits(x1) = (3, 0), logits(x2) = (3, -2), mean e_B = (3, -1)
        // cos = (1.5 - 1) / (sqrt(1.25) * sqrt(10)) = 0.5 / sqrt(12.5)
        let m = LogisticModel::new(2, 2);
        let a = m.pack(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]);
        let b = m.pack(&[vec![2.0, 1.0], vec![0.0, -1.0]], &[1.0, 0.0]);
        let batch = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let v = functional_similarity_on_batch(&[a, b], &m, &batch);
        let expected = 0.5 / 12.5f64.sqrt();
        assert!((v.get(0, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn noise_statistics() {
        let ex = vec![
            Example { x: vec![1.0, 0.0], y: 0 },
            Example { x: vec![3.0, 0.0], y: 1 },
        ];
        let n = NoiseSpec::from_examples(&ex).unwrap();
        assert_eq!(n.mean, vec![2.0, 0.0]);
        assert_eq!(n.std, vec![1.0, 0.0]);
        let b = n.sample_batch(4, 1);
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|x| x[1] == 0.0));
        assert_eq!(b, n.sample_batch(4, 1));
    }
}
