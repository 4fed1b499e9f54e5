//! Training objective: weighted cross entropy plus a differentiable
//! Hamming term.
//!
//! The Hamming indicator `1(prediction != label)` has no useful gradient,
//! so training uses its expectation under per-position sampling from the
//! predicted distribution, `1 - p(true class)`. The exact indicator is
//! still reported as `hamming_metric`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Probs, Real};
use crate::seq::{argmax4, hamming_distance, DnaSequence};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub hamming: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ce: 1.0, hamming: 1.0 }
    }
}

impl LossWeights {
    pub fn is_zero(&self) -> bool {
        self.ce == 0.0 && self.hamming == 0.0
    }
}

/// Batch loss terms, each a mean over all positions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub loss: f64,
    pub ce: f64,
    pub hamming_surrogate: f64,
    /// Fraction of positions whose argmax differs from the label.
    pub hamming_metric: f64,
}

impl LossValues {
    pub fn add(&self, o: &LossValues) -> LossValues {
        LossValues {
            loss: self.loss + o.loss,
            ce: self.ce + o.ce,
            hamming_surrogate: self.hamming_surrogate + o.hamming_surrogate,
            hamming_metric: self.hamming_metric + o.hamming_metric,
        }
    }

    pub fn scale(&self, s: f64) -> LossValues {
        LossValues {
            loss: self.loss * s,
            ce: self.ce * s,
            hamming_surrogate: self.hamming_surrogate * s,
            hamming_metric: self.hamming_metric * s,
        }
    }
}

fn true_class_probs<'a, T: Real>(probs: &'a Probs<T>, labels: &'a [u8]) -> impl Iterator<Item = f64> + 'a {
    assert_eq!(probs.data.len(), labels.len() * 4, "labels must match probs");
    probs
        .data
        .chunks_exact(4)
        .zip(labels)
        .map(|(row, &y)| row[y as usize].to_f64().unwrap())
}

/// Mean of `-ln p(true class)`.
pub fn cross_entropy<T: Real>(probs: &Probs<T>, labels: &[u8]) -> f64 {
    let n = labels.len().max(1) as f64;
    true_class_probs(probs, labels).map(|p| -p.ln()).sum::<f64>() / n
}

/// Mean of `1 - p(true class)`.
pub fn hamming_surrogate<T: Real>(probs: &Probs<T>, labels: &[u8]) -> f64 {
    let n = labels.len().max(1) as f64;
    true_class_probs(probs, labels).map(|p| 1.0 - p).sum::<f64>() / n
}

pub fn combined_loss<T: Real>(probs: &Probs<T>, labels: &[u8], w: LossWeights) -> f64 {
    w.ce * cross_entropy(probs, labels) + w.hamming * hamming_surrogate(probs, labels)
}

/// Fraction of mismatching positions between equal-length sequences.
pub fn hamming_metric(pred: &DnaSequence, label: &DnaSequence) -> Result<f64> {
    let d = hamming_distance(pred, label)?;
    Ok(if label.is_empty() {
        0.0
    } else {
        d as f64 / label.len() as f64
    })
}

/// Loss contributions of `logits` (a slice of a larger batch with
/// `total_positions` positions) and the gradient with respect to those
/// logits. Cross entropy comes from a stable log-softmax.
pub(crate) fn loss_gradient<T: Real>(
    logits: &[T],
    labels: &[u8],
    w: LossWeights,
    total_positions: usize,
) -> (LossValues, Vec<T>) {
    let inv_n = 1.0 / total_positions as f64;
    let mut values = LossValues::default();
    let mut grad = vec![T::zero(); logits.len()];
    for ((z, &y), g) in logits.chunks_exact(4).zip(labels).zip(grad.chunks_exact_mut(4)) {
        let z: [f64; 4] = std::array::from_fn(|j| z[j].to_f64().unwrap());
        let y = y as usize;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: [f64; 4] = std::array::from_fn(|j| (z[j] - max).exp());
        let total: f64 = e.iter().sum();
        let p: [f64; 4] = std::array::from_fn(|j| e[j] / total);
        let ce = -(z[y] - max - total.ln());
        let surrogate = 1.0 - p[y];
        values.ce += ce * inv_n;
        values.hamming_surrogate += surrogate * inv_n;
        if argmax4(&z) as usize != y {
            values.hamming_metric += inv_n;
        }
        for j in 0..4 {
            let onehot = if j == y { 1.0 } else { 0.0 };
            let d_ce = p[j] - onehot;
            let d_h = -p[y] * (onehot - p[j]);
            g[j] = T::lit((w.ce * d_ce + w.hamming * d_h) * inv_n);
        }
    }
    values.loss = w.ce * values.ce + w.hamming * values.hamming_surrogate;
    (values, grad)
}
