//! Forward and backward passes for one sequence.
//!
//! Padding is removed before the encoder runs: only unmasked positions enter
//! attention and pooling, so masked feature values never reach the logits.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{LayerNorm, Linear, Params};
use super::{CandaceConfig, Pooling};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Inverted dropout driven by a per-sequence generator.
pub(crate) struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    fn mask(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        Array2::from_shape_simple_fn((rows, cols), || if self.rng.random::<f64>() < rate { 0.0 } else { keep })
    }
}

fn affine(x: &ArrayView2<f64>, lin: &Linear) -> Array2<f64> {
    x.dot(&lin.w) + &lin.b
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy` and returns `dy·Wᵀ`.
fn affine_backward(x: &ArrayView2<f64>, dy: &Array2<f64>, lin: &Linear, grad: &mut Linear) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.w);
    grad.b += &dy.sum_axis(Axis(0));
    dy.dot(&lin.w.t())
}

fn affine_backward_no_input(x: &ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.w);
    grad.b += &dy.sum_axis(Axis(0));
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, p: &LayerNorm) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let y = &xhat * &p.gain + &p.bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, p: &LayerNorm, grad: &mut LayerNorm) -> Array2<f64> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * &p.gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &inv) in
        dx.rows_mut().into_iter().zip(dxhat.rows()).zip(cache.xhat.rows()).zip(cache.inv_std.iter())
    {
        let sum_g = g.sum();
        let sum_gx = g.dot(&xh);
        for ((o, &gi), &xi) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
            *o = inv / d * (d * gi - sum_g - xi * sum_gx);
        }
    }
    dx
}

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_K * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_K * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * z * z)
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
}

struct LayerCache {
    ln1: LnCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    ln2: LnCache,
    h2: Array2<f64>,
    z: Array2<f64>,
    act: Array2<f64>,
    drop_ffn: Option<Array2<f64>>,
}

pub(crate) struct SequenceCache {
    inputs: Array2<f64>,
    layers: Vec<LayerCache>,
    x_final: Array2<f64>,
    pooled: Array1<f64>,
    argmax: Vec<usize>,
}

/// Runs the classifier on the unmasked rows of one sequence. `positions[i]`
/// selects the positional-table row for `features[i]`.
pub(crate) fn forward_sequence(
    params: &Params,
    positional: &Array2<f64>,
    cfg: &CandaceConfig,
    features: ArrayView2<f64>,
    positions: &[usize],
    mut dropout: Option<&mut Dropout>,
) -> (Array1<f64>, SequenceCache) {
    let len = features.nrows();
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = affine(&features, &params.projection) + &positional.select(Axis(0), positions);
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let x_in = x;
        let (h1, ln1) = layer_norm(&x_in, &layer.ln1);
        let q = affine(&h1.view(), &layer.query);
        let k = affine(&h1.view(), &layer.key);
        let v = affine(&h1.view(), &layer.value);
        let mut ctx = Array2::zeros((len, d));
        let mut attn = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut a);
            ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            attn.push(a);
        }
        let mut attn_out = affine(&ctx.view(), &layer.output);
        let drop_attn = dropout.as_deref_mut().map(|dr| dr.mask(len, d));
        if let Some(m) = &drop_attn {
            attn_out *= m;
        }
        let x_mid = &x_in + &attn_out;

        let (h2, ln2) = layer_norm(&x_mid, &layer.ln2);
        let z = affine(&h2.view(), &layer.ff1);
        let act = z.mapv(gelu);
        let mut ffn_out = affine(&act.view(), &layer.ff2);
        let drop_ffn = dropout.as_deref_mut().map(|dr| dr.mask(len, d));
        if let Some(m) = &drop_ffn {
            ffn_out *= m;
        }
        x = &x_mid + &ffn_out;
        caches.push(LayerCache { ln1, h1, q, k, v, attn, ctx, drop_attn, ln2, h2, z, act, drop_ffn });
    }

    let (pooled, argmax) = pool(&x, cfg.pooling);
    let logits = pooled.dot(&params.head.w) + &params.head.b;
    let cache = SequenceCache { inputs: features.to_owned(), layers: caches, x_final: x, pooled, argmax };
    (logits, cache)
}

fn pool(x: &Array2<f64>, pooling: Pooling) -> (Array1<f64>, Vec<usize>) {
    let d = x.ncols();
    if x.nrows() == 0 {
        return (Array1::zeros(d), Vec::new());
    }
    match pooling {
        Pooling::Mean => (x.sum_axis(Axis(0)) / x.nrows() as f64, Vec::new()),
        Pooling::Max => {
            let mut pooled = Array1::from_elem(d, f64::NEG_INFINITY);
            let mut argmax = vec![0; d];
            for (i, row) in x.rows().into_iter().enumerate() {
                for j in 0..d {
                    if row[j] > pooled[j] {
                        pooled[j] = row[j];
                        argmax[j] = i;
                    }
                }
            }
            (pooled, argmax)
        }
    }
}

/// Accumulates into `grads` the gradient of a scalar loss whose derivative
/// with respect to this sequence's logits is `dlogits`.
pub(crate) fn backward_sequence(
    params: &Params,
    cfg: &CandaceConfig,
    cache: &SequenceCache,
    dlogits: ArrayView1<f64>,
    grads: &mut Params,
) {
    let pooled_col = cache.pooled.view().insert_axis(Axis(1));
    let dlogits_row = dlogits.insert_axis(Axis(0));
    general_mat_mul(1.0, &pooled_col, &dlogits_row, 1.0, &mut grads.head.w);
    grads.head.b += &dlogits;

    let len = cache.x_final.nrows();
    if len == 0 {
        return;
    }
    let d = cfg.d_model;
    let dpooled = params.head.w.dot(&dlogits);
    let mut dx = Array2::zeros((len, d));
    match cfg.pooling {
        Pooling::Mean => {
            let share = &dpooled / len as f64;
            for mut row in dx.rows_mut() {
                row.assign(&share);
            }
        }
        Pooling::Max => {
            for (j, &i) in cache.argmax.iter().enumerate() {
                dx[[i, j]] = dpooled[j];
            }
        }
    }

    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for ((layer, lc), g) in params.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
        // feed-forward sublayer
        let mut dffn = dx.clone();
        if let Some(m) = &lc.drop_ffn {
            dffn *= m;
        }
        let dact = affine_backward(&lc.act.view(), &dffn, &layer.ff2, &mut g.ff2);
        let dz = dact * &lc.z.mapv(gelu_grad);
        let dh2 = affine_backward(&lc.h2.view(), &dz, &layer.ff1, &mut g.ff1);
        dx += &layer_norm_backward(&dh2, &lc.ln2, &layer.ln2, &mut g.ln2);

        // attention sublayer
        let mut dattn = dx.clone();
        if let Some(m) = &lc.drop_attn {
            dattn *= m;
        }
        let dctx = affine_backward(&lc.ctx.view(), &dattn, &layer.output, &mut g.output);
        let mut dq = Array2::zeros((len, d));
        let mut dk = Array2::zeros((len, d));
        let mut dv = Array2::zeros((len, d));
        for (h, a) in lc.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let da = dctx_h.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
            let mut ds = &da * a;
            let row_dot = ds.sum_axis(Axis(1));
            ds -= &(a * &row_dot.insert_axis(Axis(1)));
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        let h1 = lc.h1.view();
        let mut dh1 = affine_backward(&h1, &dq, &layer.query, &mut g.query);
        dh1 += &affine_backward(&h1, &dk, &layer.key, &mut g.key);
        dh1 += &affine_backward(&h1, &dv, &layer.value, &mut g.value);
        dx += &layer_norm_backward(&dh1, &lc.ln1, &layer.ln1, &mut g.ln1);
    }
    affine_backward_no_input(&cache.inputs.view(), &dx, &mut grads.projection);
}

/// Numerically stable `-log softmax(logits)[label]` and its gradient.
pub(crate) fn cross_entropy_item(logits: ArrayView1<f64>, label: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad = logits.mapv(|v| (v - lse).exp());
    grad[label] -= 1.0;
    (lse - logits[label], grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_differences() {
        for &z in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((fd - gelu_grad(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Array2::from_shape_vec((2, 4), vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 0.0, 5.0]).unwrap();
        let p = LayerNorm { gain: Array1::ones(4), bias: Array1::zeros(4) };
        let (y, _) = layer_norm(&x, &p);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            assert!((row.dot(&row) / 4.0 - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn cross_entropy_is_stable() {
        let (loss, grad) = cross_entropy_item(ndarray::arr1(&[1000.0, -1000.0]).view(), 0);
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
