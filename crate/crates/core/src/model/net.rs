//! Forward and backward passes.
//!
//! Activations are row-major `[batch * positions, features]` matrices. The
//! stem only evaluates the first `output_len` positions: everything after
//! the depthwise convolution is position-wise, so cropping before the
//! pointwise stage gives the same result as cropping at the end.

use super::linalg::{
    all_finite, dot_lanes, gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, linear, linear_backward,
    softmax_rows, Real, View, ViewMut,
};
use super::params::{BlockSlots, ModelParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    pub batch: usize,
    pub li: usize,
    pub lo: usize,
    pub d: usize,
    pub heads: usize,
    pub dh: usize,
    pub ff: usize,
    pub ch: usize,
    pub mult: usize,
}

impl Dims {
    pub fn new<T: Real>(p: &ModelParams<T>, batch: usize) -> Self {
        let c = &p.config;
        Self {
            batch,
            li: c.input_len,
            lo: c.output_len,
            d: c.d_model,
            heads: c.n_heads,
            dh: c.head_dim(),
            ff: c.d_ff,
            ch: c.stem_channels(),
            mult: c.depth_multiplier,
        }
    }

    /// Rows of every position-wise activation matrix.
    pub fn n(&self) -> usize {
        self.batch * self.lo
    }
}

pub(crate) struct StemCache<T> {
    dw: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    sum: Vec<T>,
}

pub(crate) struct BlockCache<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    a1: Vec<T>,
    qkv: Vec<T>,
    /// `[batch, heads, lo, lo]` attention weights.
    pub probs: Vec<T>,
    ctx: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    a2: Vec<T>,
    u: Vec<T>,
    z: Vec<T>,
}

pub(crate) struct Cache<T> {
    stem: StemCache<T>,
    pub blocks: Vec<BlockCache<T>>,
    xhatf: Vec<T>,
    rstdf: Vec<T>,
    nf: Vec<T>,
}

pub(crate) fn check_input<T: Real>(p: &ModelParams<T>, input: &[T], batch: usize) -> Result<()> {
    let expected = batch * p.config.input_len * 4;
    if input.len() != expected {
        return Err(Error::ShapeMismatch {
            what: "input".into(),
            expected: vec![batch, p.config.input_len, 4],
            actual: vec![input.len()],
        });
    }
    Ok(())
}

/// Repeats each of the 4 input channels `mult` times, so depthwise channel
/// `q` reads column `q` (its source letter is `q / mult`).
fn expand_channels<T: Real>(x: &[T], rows: usize, mult: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * 4 * mult);
    for row in x.chunks_exact(4).take(rows) {
        for &v in row {
            out.extend(std::iter::repeat_n(v, mult));
        }
    }
    out
}

/// `[rows, cols]` → `[cols, rows]`.
fn transpose<T: Real>(w: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = w[i * cols + j];
        }
    }
    t
}

fn stem_forward<T: Real>(p: &ModelParams<T>, x: &[T], dims: Dims) -> (Vec<T>, StemCache<T>) {
    let Dims {
        batch,
        li,
        lo,
        d,
        ch,
        mult,
        ..
    } = dims;
    let n = dims.n();
    let xe = expand_channels(x, batch * li, mult);
    let mut sum = vec![T::zero(); n * d];
    let mut dws = Vec::with_capacity(p.layout.branches.len());
    let mut pres = Vec::with_capacity(p.layout.branches.len());
    for br in &p.layout.branches {
        let k = br.kernel;
        let r = k / 2;
        let wt = transpose(p.slot(&br.dw_w), ch, k);
        let bias = p.slot(&br.dw_b);
        let mut dw = vec![T::zero(); n * ch];
        for s in 0..batch {
            let xe = &xe[s * li * ch..(s + 1) * li * ch];
            for l in 0..lo {
                let out = &mut dw[(s * lo + l) * ch..(s * lo + l + 1) * ch];
                out.copy_from_slice(bias);
                let o_lo = r.saturating_sub(l);
                let o_hi = k.min(li + r - l);
                for o in o_lo..o_hi {
                    let row = &xe[(l + o - r) * ch..(l + o - r + 1) * ch];
                    let wo = &wt[o * ch..(o + 1) * ch];
                    for q in 0..ch {
                        out[q] += wo[q] * row[q];
                    }
                }
            }
        }
        let pre = linear(&dw, n, p.slot(&br.pw_w), p.slot(&br.pw_b), ch, d);
        for (acc, &v) in sum.iter_mut().zip(&pre) {
            *acc += gelu(v);
        }
        // `pre` keeps the pre-activation for the backward pass.
        dws.push(dw);
        pres.push(pre);
    }
    let h0 = linear(&sum, n, p.slot(&p.layout.merge_w), p.slot(&p.layout.merge_b), d, d);
    (
        h0,
        StemCache {
            dw: dws,
            pre: pres,
            sum,
        },
    )
}

fn stem_backward<T: Real>(p: &ModelParams<T>, x: &[T], dims: Dims, cache: &StemCache<T>, dh0: &[T], grads: &mut [T]) {
    let Dims {
        batch,
        li,
        lo,
        d,
        ch,
        mult,
        ..
    } = dims;
    let n = dims.n();
    let l = &p.layout;
    let xe = expand_channels(x, batch * li, mult);
    let (gw, gb) = pair_mut(grads, &l.merge_w, &l.merge_b);
    let dsum = linear_backward(&cache.sum, dh0, n, p.slot(&l.merge_w), d, d, gw, gb, true).unwrap();
    for (bi, br) in l.branches.iter().enumerate() {
        let k = br.kernel;
        let r = k / 2;
        let dpre: Vec<T> = dsum
            .iter()
            .zip(&cache.pre[bi])
            .map(|(&g, &v)| g * gelu_grad(v))
            .collect();
        let (gw, gb) = pair_mut(grads, &br.pw_w, &br.pw_b);
        let ddw = linear_backward(&cache.dw[bi], &dpre, n, p.slot(&br.pw_w), ch, d, gw, gb, true).unwrap();
        let (gw, gb) = pair_mut(grads, &br.dw_w, &br.dw_b);
        let mut gwt = vec![T::zero(); k * ch];
        for s in 0..batch {
            let xe = &xe[s * li * ch..(s + 1) * li * ch];
            for pos in 0..lo {
                let g = &ddw[(s * lo + pos) * ch..(s * lo + pos + 1) * ch];
                for q in 0..ch {
                    gb[q] += g[q];
                }
                let o_lo = r.saturating_sub(pos);
                let o_hi = k.min(li + r - pos);
                for o in o_lo..o_hi {
                    let row = &xe[(pos + o - r) * ch..(pos + o - r + 1) * ch];
                    let go = &mut gwt[o * ch..(o + 1) * ch];
                    for q in 0..ch {
                        go[q] += g[q] * row[q];
                    }
                }
            }
        }
        for q in 0..ch {
            for o in 0..k {
                gw[q * k + o] += gwt[o * ch + q];
            }
        }
    }
}

/// Two disjoint mutable slots, `first` before `second` in the layout.
fn pair_mut<'a, T>(
    data: &'a mut [T],
    first: &std::ops::Range<usize>,
    second: &std::ops::Range<usize>,
) -> (&'a mut [T], &'a mut [T]) {
    assert!(first.end <= second.start);
    let (a, b) = data.split_at_mut(second.start);
    (&mut a[first.clone()], &mut b[..second.len()])
}

fn block_forward<T: Real>(p: &ModelParams<T>, bs: &BlockSlots, x: &[T], dims: Dims) -> (Vec<T>, BlockCache<T>) {
    let Dims {
        batch,
        lo,
        d,
        heads,
        dh,
        ff,
        ..
    } = dims;
    let n = dims.n();
    let (a1, xhat1, rstd1) = layer_norm(x, d, p.slot(&bs.ln1_g), p.slot(&bs.ln1_b));
    let qkv = linear(&a1, n, p.slot(&bs.qkv_w), p.slot(&bs.qkv_b), d, 3 * d);
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut probs = vec![T::zero(); batch * heads * lo * lo];
    let mut ctx = vec![T::zero(); n * d];
    for s in 0..batch {
        for h in 0..heads {
            let base = s * lo * 3 * d + h * dh;
            let pm = &mut probs[(s * heads + h) * lo * lo..(s * heads + h + 1) * lo * lo];
            gemm(
                scale,
                View::new(&qkv, base, lo, dh, 3 * d),
                View::new(&qkv, base + d, lo, dh, 3 * d).t(),
                T::zero(),
                ViewMut::full(pm, lo, lo),
            );
            softmax_rows(pm, lo);
            gemm(
                T::one(),
                View::full(pm, lo, lo),
                View::new(&qkv, base + 2 * d, lo, dh, 3 * d),
                T::zero(),
                ViewMut::new(&mut ctx, s * lo * d + h * dh, lo, dh, d),
            );
        }
    }
    let attn = linear(&ctx, n, p.slot(&bs.out_w), p.slot(&bs.out_b), d, d);
    let x1: Vec<T> = x.iter().zip(&attn).map(|(&a, &b)| a + b).collect();
    let (a2, xhat2, rstd2) = layer_norm(&x1, d, p.slot(&bs.ln2_g), p.slot(&bs.ln2_b));
    let u = linear(&a2, n, p.slot(&bs.ff1_w), p.slot(&bs.ff1_b), d, ff);
    let z: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
    let f = linear(&z, n, p.slot(&bs.ff2_w), p.slot(&bs.ff2_b), ff, d);
    let x2: Vec<T> = x1.iter().zip(&f).map(|(&a, &b)| a + b).collect();
    (
        x2,
        BlockCache {
            xhat1,
            rstd1,
            a1,
            qkv,
            probs,
            ctx,
            xhat2,
            rstd2,
            a2,
            u,
            z,
        },
    )
}

fn block_backward<T: Real>(
    p: &ModelParams<T>,
    bs: &BlockSlots,
    dims: Dims,
    c: &BlockCache<T>,
    dx2: &[T],
    grads: &mut [T],
) -> Vec<T> {
    let Dims {
        batch,
        lo,
        d,
        heads,
        dh,
        ff,
        ..
    } = dims;
    let n = dims.n();

    // MLP branch.
    let (gw, gb) = pair_mut(grads, &bs.ff2_w, &bs.ff2_b);
    let dz = linear_backward(&c.z, dx2, n, p.slot(&bs.ff2_w), ff, d, gw, gb, true).unwrap();
    let du: Vec<T> = dz.iter().zip(&c.u).map(|(&g, &v)| g * gelu_grad(v)).collect();
    let (gw, gb) = pair_mut(grads, &bs.ff1_w, &bs.ff1_b);
    let da2 = linear_backward(&c.a2, &du, n, p.slot(&bs.ff1_w), d, ff, gw, gb, true).unwrap();
    let (gg, gb) = pair_mut(grads, &bs.ln2_g, &bs.ln2_b);
    let dln2 = layer_norm_backward(&da2, &c.xhat2, &c.rstd2, p.slot(&bs.ln2_g), d, gg, gb);
    let dx1: Vec<T> = dx2.iter().zip(&dln2).map(|(&a, &b)| a + b).collect();

    // Attention branch.
    let (gw, gb) = pair_mut(grads, &bs.out_w, &bs.out_b);
    let dctx = linear_backward(&c.ctx, &dx1, n, p.slot(&bs.out_w), d, d, gw, gb, true).unwrap();
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dqkv = vec![T::zero(); n * 3 * d];
    let mut dp = vec![T::zero(); lo * lo];
    for s in 0..batch {
        for h in 0..heads {
            let base = s * lo * 3 * d + h * dh;
            let ctx_off = s * lo * d + h * dh;
            let pm = &c.probs[(s * heads + h) * lo * lo..(s * heads + h + 1) * lo * lo];
            gemm(
                T::one(),
                View::new(&dctx, ctx_off, lo, dh, d),
                View::new(&c.qkv, base + 2 * d, lo, dh, 3 * d).t(),
                T::zero(),
                ViewMut::full(&mut dp, lo, lo),
            );
            gemm(
                T::one(),
                View::full(pm, lo, lo).t(),
                View::new(&dctx, ctx_off, lo, dh, d),
                T::zero(),
                ViewMut::new(&mut dqkv, base + 2 * d, lo, dh, 3 * d),
            );
            // Softmax backward, in place: dS = P * (dP - rowsum(dP * P)).
            for (dpr, pr) in dp.chunks_exact_mut(lo).zip(pm.chunks_exact(lo)) {
                let dot = dot_lanes(dpr, pr);
                for (g, &pv) in dpr.iter_mut().zip(pr) {
                    *g = pv * (*g - dot);
                }
            }
            gemm(
                scale,
                View::full(&dp, lo, lo),
                View::new(&c.qkv, base + d, lo, dh, 3 * d),
                T::zero(),
                ViewMut::new(&mut dqkv, base, lo, dh, 3 * d),
            );
            gemm(
                scale,
                View::full(&dp, lo, lo).t(),
                View::new(&c.qkv, base, lo, dh, 3 * d),
                T::zero(),
                ViewMut::new(&mut dqkv, base + d, lo, dh, 3 * d),
            );
        }
    }
    let (gw, gb) = pair_mut(grads, &bs.qkv_w, &bs.qkv_b);
    let da1 = linear_backward(&c.a1, &dqkv, n, p.slot(&bs.qkv_w), d, 3 * d, gw, gb, true).unwrap();
    let (gg, gb) = pair_mut(grads, &bs.ln1_g, &bs.ln1_b);
    let dln1 = layer_norm_backward(&da1, &c.xhat1, &c.rstd1, p.slot(&bs.ln1_g), d, gg, gb);
    dx1.iter().zip(&dln1).map(|(&a, &b)| a + b).collect()
}

pub(crate) fn conv_embed_forward<T: Real>(p: &ModelParams<T>, input: &[T], batch: usize) -> Result<Vec<T>> {
    check_input(p, input, batch)?;
    let (h0, _) = stem_forward(p, input, Dims::new(p, batch));
    Ok(h0)
}

pub(crate) fn block_forward_public<T: Real>(
    p: &ModelParams<T>,
    block: usize,
    x: &[T],
    batch: usize,
) -> (Vec<T>, Vec<T>) {
    let dims = Dims::new(p, batch);
    assert_eq!(x.len(), dims.n() * dims.d, "block input shape");
    let (y, cache) = block_forward(p, &p.layout.blocks[block], x, dims);
    (y, cache.probs)
}

/// Full forward pass keeping every activation needed by [`backward`].
pub(crate) fn forward_cached<T: Real>(p: &ModelParams<T>, input: &[T], batch: usize) -> Result<(Vec<T>, Cache<T>)> {
    check_input(p, input, batch)?;
    let dims = Dims::new(p, batch);
    let (mut h, stem) = stem_forward(p, input, dims);
    if !all_finite(&h) {
        return Err(Error::NonFiniteActivation { layer: 0 });
    }
    let mut blocks = Vec::with_capacity(p.layout.blocks.len());
    for (i, bs) in p.layout.blocks.iter().enumerate() {
        let (next, cache) = block_forward(p, bs, &h, dims);
        if !all_finite(&next) {
            return Err(Error::NonFiniteActivation { layer: i + 1 });
        }
        h = next;
        blocks.push(cache);
    }
    let l = &p.layout;
    let (nf, xhatf, rstdf) = layer_norm(&h, dims.d, p.slot(&l.lnf_g), p.slot(&l.lnf_b));
    let logits = linear(&nf, dims.n(), p.slot(&l.head_w), p.slot(&l.head_b), dims.d, 4);
    if !all_finite(&logits) {
        return Err(Error::NonFiniteActivation {
            layer: blocks.len() + 1,
        });
    }
    Ok((
        logits,
        Cache {
            stem,
            blocks,
            xhatf,
            rstdf,
            nf,
        },
    ))
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to the logits is `dlogits`.
pub(crate) fn backward<T: Real>(
    p: &ModelParams<T>,
    input: &[T],
    batch: usize,
    cache: &Cache<T>,
    dlogits: &[T],
    grads: &mut [T],
) {
    let dims = Dims::new(p, batch);
    let l = &p.layout;
    let n = dims.n();
    let (gw, gb) = pair_mut(grads, &l.head_w, &l.head_b);
    let dnf = linear_backward(&cache.nf, dlogits, n, p.slot(&l.head_w), dims.d, 4, gw, gb, true).unwrap();
    let (gg, gb) = pair_mut(grads, &l.lnf_g, &l.lnf_b);
    let mut dh = layer_norm_backward(&dnf, &cache.xhatf, &cache.rstdf, p.slot(&l.lnf_g), dims.d, gg, gb);
    for (bs, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
        dh = block_backward(p, bs, dims, bc, &dh, grads);
    }
    stem_backward(p, input, dims, &cache.stem, &dh, grads);
}
