//! Multinomial logistic regression, the model trained on every client.

use serde::{Deserialize, Serialize};

use crate::datagen::Example;
use crate::domain::ModelParams;

/// Shape of a linear softmax classifier. Parameters are stored flat as the
/// row-major weight matrix `W` (`num_classes x dim`) followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub num_classes: usize,
    pub dim: usize,
}

/// Sum of losses and number of correct predictions over a set of examples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalTotals {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

impl EvalTotals {
    pub fn merge(self, other: EvalTotals) -> EvalTotals {
        EvalTotals {
            loss_sum: self.loss_sum + other.loss_sum,
            correct: self.correct + other.correct,
            count: self.count + other.count,
        }
    }

    pub fn mean_loss(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss_sum / self.count as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

impl LogisticModel {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        LogisticModel { num_classes, dim }
    }

    pub fn num_params(&self) -> usize {
        self.num_classes * (self.dim + 1)
    }

    pub fn zeros(&self) -> ModelParams {
        ModelParams::zeros(self.num_params())
    }

    /// Assembles parameters from a weight matrix given as rows and a bias.
    pub fn pack(&self, weights: &[Vec<f64>], bias: &[f64]) -> ModelParams {
        assert_eq!(weights.len(), self.num_classes);
        assert_eq!(bias.len(), self.num_classes);
        let mut p = Vec::with_capacity(self.num_params());
        for row in weights {
            assert_eq!(row.len(), self.dim);
            p.extend_from_slice(row);
        }
        p.extend_from_slice(bias);
        ModelParams(p)
    }

    pub fn logits_into(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let bias = &params[self.num_classes * d..];
        for (c, o) in out.iter_mut().enumerate().take(self.num_classes) {
            let w = &params[c * d..(c + 1) * d];
            *o = dot(w, x) + bias[c];
        }
    }

    pub fn logits(&self, params: &ModelParams, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.logits_into(&params.0, x, &mut out);
        out
    }

    pub fn predict(&self, params: &ModelParams, x: &[f64]) -> usize {
        argmax(&self.logits(params, x))
    }

    /// Mean cross-entropy over `batch`, writing the gradient of that mean
    /// into `grad` (overwritten).
    pub fn loss_and_grad(&self, params: &[f64], batch: &[&Example], grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let c_n = self.num_classes;
        grad.iter_mut().for_each(|g| *g = 0.0);
        if batch.is_empty() {
            return 0.0;
        }
        let mut probs = vec![0.0; c_n];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for ex in batch {
            self.logits_into(params, &ex.x, &mut probs);
            let lse = log_sum_exp(&probs);
            loss += lse - probs[ex.y];
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (*p - lse).exp();
                let coef = (*p - if c == ex.y { 1.0 } else { 0.0 }) * scale;
                let g = &mut grad[c * d..(c + 1) * d];
                for (gi, xi) in g.iter_mut().zip(&ex.x) {
                    *gi += coef * xi;
                }
                grad[c_n * d + c] += coef;
            }
        }
        loss * scale
    }

    /// Cross-entropy loss and correctness over `examples`.
    pub fn eval_totals(&self, params: &ModelParams, examples: &[Example]) -> EvalTotals {
        let mut logits = vec![0.0; self.num_classes];
        let mut t = EvalTotals::default();
        for ex in examples {
            self.logits_into(&params.0, &ex.x, &mut logits);
            t.loss_sum += log_sum_exp(&logits) - logits[ex.y];
            if argmax(&logits) == ex.y {
                t.correct += 1;
            }
            t.count += 1;
        }
        t
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; the first one on ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
