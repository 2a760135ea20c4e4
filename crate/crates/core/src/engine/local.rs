use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::datagen::Example;
use crate::domain::{seeded_rng, ModelParams};
use crate::error::{Error, Result};
use crate::model::{EvalTotals, LogisticModel};

/// Settings of one client's local optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSgd {
    pub steps: usize,
    pub batch_size: usize,
    /// Proximal coefficient pulling the iterate towards the global model.
    pub prox_mu: f64,
}

/// Runs `steps` minibatch SGD steps from the global model on one client.
///
/// Minibatches of `min(B, n)` examples are taken without replacement from a
/// shuffled order that is reshuffled whenever it runs out. The step on
/// `theta` is `eta * (grad + prox_mu * (theta - theta_global))`.
/// `rng_seed` fully determines the batch order.
pub fn local_sgd(
    model: &LogisticModel,
    theta_global: &ModelParams,
    data: &[Example],
    cfg: &LocalSgd,
    eta: f64,
    rng_seed: u64,
) -> Result<ModelParams> {
    if theta_global.dim() != model.num_params() {
        return Err(Error::invalid(format!(
            "model with {} parameters, expected {}",
            theta_global.dim(),
            model.num_params()
        )));
    }
    if data.is_empty() {
        return Err(Error::invalid("local training needs at least one example"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let n = data.len();
    let b = cfg.batch_size.min(n);
    let mut rng = seeded_rng(rng_seed, "sgd", &[]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;

    let mut theta = theta_global.0.clone();
    let mut grad = vec![0.0; theta.len()];
    let mut batch: Vec<&Example> = Vec::with_capacity(b);
    for _ in 0..cfg.steps {
        if pos + b > n {
            order.shuffle(&mut rng);
            pos = 0;
        }
        batch.clear();
        batch.extend(order[pos..pos + b].iter().map(|&i| &data[i]));
        pos += b;

        let loss = model.loss_and_grad(&theta, &batch, &mut grad);
        if !loss.is_finite() {
            return Err(Error::invalid("non-finite local loss"));
        }
        for ((t, g), t0) in theta.iter_mut().zip(&grad).zip(&theta_global.0) {
            *t -= eta * (g + cfg.prox_mu * (*t - t0));
        }
    }
    let out = ModelParams(theta);
    if !out.is_finite() {
        return Err(Error::invalid("non-finite local parameters"));
    }
    Ok(out)
}

/// Data-size weighted mean `sum_k n_k theta_k / sum_k n_k`, summed in the
/// given order and divided once at the end.
pub fn aggregate_weighted(models: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    let dim = first.0.dim();
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("aggregation weights sum to zero"));
    }
    let mut out = vec![0.0; dim];
    for (m, n) in models {
        if m.dim() != dim {
            return Err(Error::invalid("models of different dimension"));
        }
        let w = *n as f64;
        for (o, v) in out.iter_mut().zip(&m.0) {
            *o += w * v;
        }
    }
    let total = total as f64;
    Ok(ModelParams(out.into_iter().map(|v| v / total).collect()))
}

/// Unweighted mean, summed in the given order.
pub fn aggregate_uniform(models: &[&ModelParams]) -> Result<ModelParams> {
    let weighted: Vec<(&ModelParams, usize)> = models.iter().map(|m| (*m, 1)).collect();
    aggregate_weighted(&weighted)
}

const EVAL_CHUNK: usize = 512;

/// Loss and accuracy totals over `examples`. The data is cut into fixed
/// chunks and the partial sums are merged in order, so the result does not
/// depend on the thread count.
pub fn evaluate(model: &LogisticModel, theta: &ModelParams, examples: &[Example]) -> EvalTotals {
    let parts: Vec<EvalTotals> = examples
        .par_chunks(EVAL_CHUNK)
        .map(|c| model.eval_totals(theta, c))
        .collect();
    parts.into_iter().fold(EvalTotals::default(), EvalTotals::merge)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: &[f64], y: usize) -> Example {
        Example { x: x.to_vec(), y }
    }

    #[test]
    fn zero_learning_rate_keeps_the_model() {
        let m = LogisticModel::new(3, 2);
        let theta = ModelParams((0..m.num_params()).map(|i| i as f64 * 0.1).collect());
        let data = vec![ex(&[1.0, 2.0], 0), ex(&[-1.0, 0.5], 2)];
        let cfg = LocalSgd { steps: 5, batch_size: 1, prox_mu: 0.3 };
        assert_eq!(local_sgd(&m, &theta, &data, &cfg, 0.0, 9).unwrap(), theta);
    }

    #[test]
    fn one_full_batch_step_by_hand() {
        // two classes, one input, theta = 0: softmax is (1/2, 1/2)
        let m = LogisticModel::new(2, 1);
        let theta = m.zeros();
        let data = vec![ex(&[2.0], 0)];
        let cfg = LocalSgd { steps: 1, batch_size: 4, prox_mu: 0.0 };
        let out = local_sgd(&m, &theta, &data, &cfg, 0.5, 0).unwrap();
        // grad W = (p - e_y) x = (-1, 1); grad b = (-1/2, 1/2)
        let expected = [0.5, -0.5, 0.25, -0.25];
        for (a, b) in out.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{:?}", out.0);
        }
    }

    #[test]
    fn proximal_term_at_the_stationary_point() {
        // a client whose gradient vanishes stays at the global model for any mu
        let m = LogisticModel::new(2, 1);
        let theta = m.zeros();
        let data = vec![ex(&[1.0], 0), ex(&[1.0], 1)];
        for mu in [0.0, 0.5, 10.0] {
            let cfg = LocalSgd { steps: 7, batch_size: 2, prox_mu: mu };
            let out = local_sgd(&m, &theta, &data, &cfg, 0.3, 1).unwrap();
            assert!(out.0.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn proximal_term_shrinks_the_step() {
        let m = LogisticModel::new(2, 1);
        let theta = m.zeros();
        let data = vec![ex(&[1.0], 0)];
        let free = LocalSgd { steps: 20, batch_size: 1, prox_mu: 0.0 };
        let prox = LocalSgd { prox_mu: 5.0, ..free };
        let a = local_sgd(&m, &theta, &data, &free, 0.1, 0).unwrap();
        let b = local_sgd(&m, &theta, &data, &prox, 0.1, 0).unwrap();
        let norm = |p: &ModelParams| p.0.iter().map(|v| v * v).sum::<f64>();
        assert!(norm(&b) < norm(&a));
    }

    #[test]
    fn batch_larger_than_data_uses_all_examples() {
        let m = LogisticModel::new(2, 1);
        let data = vec![ex(&[1.0], 0), ex(&[3.0], 1)];
        let big = LocalSgd { steps: 1, batch_size: 50, prox_mu: 0.0 };
        let exact = LocalSgd { batch_size: 2, ..big };
        assert_eq!(
            local_sgd(&m, &m.zeros(), &data, &big, 0.1, 4).unwrap(),
            local_sgd(&m, &m.zeros(), &data, &exact, 0.1, 4).unwrap()
        );
    }

    #[test]
    fn same_seed_same_trajectory() {
        let m = LogisticModel::new(3, 2);
        let data: Vec<Example> = (0..17).map(|i| ex(&[i as f64 * 0.1, 1.0 - i as f64 * 0.05], i % 3)).collect();
        let cfg = LocalSgd { steps: 10, batch_size: 4, prox_mu: 0.0 };
        let a = local_sgd(&m, &m.zeros(), &data, &cfg, 0.2, 11).unwrap();
        assert_eq!(a, local_sgd(&m, &m.zeros(), &data, &cfg, 0.2, 11).unwrap());
        assert_ne!(a, local_sgd(&m, &m.zeros(), &data, &cfg, 0.2, 12).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let m = LogisticModel::new(2, 1);
        let data = vec![ex(&[1e300], 0), ex(&[-1e300], 1)];
        let cfg = LocalSgd { steps: 5, batch_size: 1, prox_mu: 0.0 };
        assert!(local_sgd(&m, &m.zeros(), &data, &cfg, 1e10, 0).is_err());
    }

    #[test]
    fn weighted_aggregation_example() {
        let a = ModelParams(vec![1.0, 0.0]);
        let b = ModelParams(vec![0.0, 1.0]);
        let out = aggregate_weighted(&[(&a, 30), (&b, 10)]).unwrap();
        assert_eq!(out.0, vec![0.75, 0.25]);
    }

    #[test]
    fn uniform_aggregation_counts_repeats() {
        let a = ModelParams(vec![2.0]);
        let b = ModelParams(vec![5.0]);
        assert_eq!(aggregate_uniform(&[&a, &b, &a]).unwrap().0, vec![3.0]);
        assert!(aggregate_uniform(&[]).is_err());
    }

    #[test]
    fn chunked_evaluation_matches_direct() {
        let m = LogisticModel::new(3, 2);
        let theta = ModelParams((0..m.num_params()).map(|i| (i as f64).sin()).collect());
        let data: Vec<Example> = (0..1300).map(|i| ex(&[(i as f64).cos(), (i as f64 * 0.3).sin()], i % 3)).collect();
        let a = evaluate(&m, &theta, &data);
        let b = m.eval_totals(&theta, &data);
        assert_eq!(a.count, b.count);
        assert_eq!(a.correct, b.correct);
        assert!((a.loss_sum - b.loss_sum).abs() < 1e-9 * b.loss_sum);
    }
}
