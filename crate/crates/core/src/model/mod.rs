//! The reconstruction network: a multi-kernel depthwise-separable
//! convolution stem, pre-norm transformer blocks and a 4-way linear head.
//!
//! There is no positional embedding; position information comes from the
//! zero-padded convolutions. The stem output is cropped from `input_len`
//! to `output_len` positions. Gradients are computed analytically by a
//! hand-written backward pass (see `net.rs`).

mod checkpoint;
pub mod linalg;
mod net;
mod params;

use rayon::prelude::*;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainState, CHECKPOINT_VERSION,
};
pub use linalg::Real;
pub use params::{init_model, ModelConfig, ModelParams, ParamLayout, ParamSpec};

use crate::embed::EmbeddedCluster;
use crate::error::{Error, Result};
use crate::seq::{argmax4, DnaSequence};
use crate::train::loss::{self, LossValues, LossWeights};

/// Clusters per forward/backward work unit. Gradients of the units are
/// summed in unit order, so results do not depend on the thread count.
pub const CHUNK: usize = 8;

/// Per-position scores, row-major `batch × len × 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<T> {
    pub batch: usize,
    pub len: usize,
    pub data: Vec<T>,
}

/// Per-position class probabilities, row-major `batch × len × 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct Probs<T> {
    pub batch: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Real> Probs<T> {
    pub fn row(&self, b: usize, i: usize) -> [T; 4] {
        let o = (b * self.len + i) * 4;
        [self.data[o], self.data[o + 1], self.data[o + 2], self.data[o + 3]]
    }
}

/// Stem output: `batch × output_len × d_model`.
pub fn conv_embed<T: Real>(params: &ModelParams<T>, input: &[T], batch: usize) -> Result<Vec<T>> {
    net::conv_embed_forward(params, input, batch)
}

/// Applies transformer block `block` to `x` (`batch × output_len ×
/// d_model`). Also returns the attention weights, `batch × heads × len ×
/// len`.
pub fn transformer_block<T: Real>(params: &ModelParams<T>, block: usize, x: &[T], batch: usize) -> (Vec<T>, Vec<T>) {
    net::block_forward_public(params, block, x, batch)
}

pub fn forward<T: Real>(params: &ModelParams<T>, input: &[T], batch: usize) -> Result<Logits<T>> {
    net::check_input(params, input, batch)?;
    let in_stride = params.config.input_len * 4;
    let parts = input
        .par_chunks(CHUNK * in_stride)
        .map(|chunk| net::forward_cached(params, chunk, chunk.len() / in_stride).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    Ok(Logits {
        batch,
        len: params.config.output_len,
        data: parts.concat(),
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_probs<T: Real>(logits: &Logits<T>) -> Probs<T> {
    let mut data = logits.data.clone();
    linalg::softmax_rows(&mut data, 4);
    Probs {
        batch: logits.batch,
        len: logits.len,
        data,
    }
}

/// Per-position argmax; ties go to the lowest letter (A < C < G < T).
pub fn predict<T: Real>(probs: &Probs<T>) -> Vec<DnaSequence> {
    probs
        .data
        .chunks_exact(probs.len * 4)
        .map(|cluster| {
            DnaSequence::from_codes(
                cluster
                    .chunks_exact(4)
                    .map(|r| argmax4(&[r[0], r[1], r[2], r[3]]))
                    .collect(),
            )
        })
        .collect()
}

/// Clusters per inference batch in [`reconstruct`].
const INFER_BATCH: usize = 256;

/// Predicts one sequence per embedded cluster.
pub fn reconstruct<T: Real>(params: &ModelParams<T>, clusters: &[EmbeddedCluster]) -> Result<Vec<DnaSequence>> {
    let rows = params.config.input_len;
    let mut out = Vec::with_capacity(clusters.len());
    for group in clusters.chunks(INFER_BATCH) {
        let mut input = Vec::with_capacity(group.len() * rows * 4);
        for c in group {
            if c.counts.len() != rows {
                return Err(Error::ShapeMismatch {
                    what: "embedded cluster".into(),
                    expected: vec![rows, 4],
                    actual: vec![c.counts.len(), 4],
                });
            }
            input.extend(c.counts.iter().flatten().map(|&v| T::lit(v as f64)));
        }
        let logits = forward(params, &input, group.len())?;
        out.extend(predict(&softmax_probs(&logits)));
    }
    Ok(out)
}

/// Loss over a batch and its exact gradient with respect to every
/// parameter, in [`ParamLayout`] order.
pub fn loss_and_grad<T: Real>(
    params: &ModelParams<T>,
    input: &[T],
    batch: usize,
    labels: &[u8],
    weights: LossWeights,
) -> Result<(LossValues, Vec<T>)> {
    net::check_input(params, input, batch)?;
    if batch == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    let lo = params.config.output_len;
    assert_eq!(labels.len(), batch * lo, "labels must be batch × output_len");
    let in_stride = params.config.input_len * 4;
    let positions = batch * lo;
    let parts = input
        .par_chunks(CHUNK * in_stride)
        .zip(labels.par_chunks(CHUNK * lo))
        .map(|(x, y)| {
            let b = x.len() / in_stride;
            let (logits, cache) = net::forward_cached(params, x, b)?;
            let (values, dlogits) = loss::loss_gradient(&logits, y, weights, positions);
            let mut grads = vec![T::zero(); params.len()];
            if weights.is_zero() {
                return Ok((values, grads));
            }
            net::backward(params, x, b, &cache, &dlogits, &mut grads);
            Ok((values, grads))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut parts = parts.into_iter();
    let (mut values, mut grads) = parts.next().expect("non-empty batch");
    for (v, g) in parts {
        values = values.add(&v);
        for (acc, x) in grads.iter_mut().zip(&g) {
            *acc += *x;
        }
    }
    Ok((values, grads))
}
