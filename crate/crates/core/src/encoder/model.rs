//! Pre-norm transformer encoder with a hand-written backward pass.
//!
//! Per layer: `x += Attn(LN1(x))`, then `x += W2·gelu(W1·LN2(x))`. The input
//! row of token `t` is `token_emb[id] + pos_emb[t] + speaker_emb[speaker]`
//! (no speaker term for summaries). Output rows are optionally L2-normalized.

use crate::corpus::Speaker;
use crate::error::{Error, Result};

use super::params::{EncoderParams, LayerTensors, Tensors};
use super::tokenize::TokenizedText;

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn speaker_row(s: Speaker) -> usize {
    match s {
        Speaker::User => 0,
        Speaker::System => 1,
    }
}

/// `out[r] = a[r] · W + b` for `a: rows x n_in`, `W: n_in x n_out`.
fn linear(a: &[f64], rows: usize, n_in: usize, w: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        out.extend_from_slice(b);
        let o = &mut out[r * n_out..(r + 1) * n_out];
        for (i, &x) in a[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (oj, wj) in o.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                *oj += x * wj;
            }
        }
    }
    out
}

/// Backward of [`linear`]: accumulates `dW`, `db` and returns `da`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    a: &[f64],
    rows: usize,
    n_in: usize,
    w: &[f64],
    n_out: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut da = vec![0.0; rows * n_in];
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (dbj, g) in db.iter_mut().zip(dyr) {
            *dbj += g;
        }
        let ar = &a[r * n_in..(r + 1) * n_in];
        let dar = &mut da[r * n_in..(r + 1) * n_in];
        for i in 0..n_in {
            let wi = &w[i * n_out..(i + 1) * n_out];
            let dwi = &mut dw[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0;
            for j in 0..n_out {
                dwi[j] += ar[i] * dyr[j];
                acc += dyr[j] * wi[j];
            }
            dar[i] = acc;
        }
    }
    da
}

#[derive(Debug, Clone)]
struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for i in 0..d {
            let h = (xr[i] - mean) * is;
            xhat[r * d + i] = h;
            y[r * d + i] = gain[i] * h + bias[i];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    rows: usize,
    d: usize,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut dxhat = vec![0.0; d];
        for i in 0..d {
            dgain[i] += dyr[i] * xh[i];
            dbias[i] += dyr[i];
            dxhat[i] = dyr[i] * gain[i];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dx[r * d + i] = cache.inv_std[r] * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x T x T` attention probabilities.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LayerNormCache,
    c: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

/// Activations retained from a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderForward {
    pub len: usize,
    ids: Vec<u32>,
    speakers: Vec<Option<Speaker>>,
    layers: Vec<LayerCache>,
    /// Encoder rows before unit normalization.
    pub pre_norm: Vec<f64>,
    norms: Vec<f64>,
    /// Rows used for scoring.
    pub output: Vec<f64>,
}

pub(crate) fn forward(tokens: &TokenizedText, params: &EncoderParams) -> Result<EncoderForward> {
    let dims = params.dims();
    let (d, t_len) = (dims.dim, tokens.len());
    if t_len > dims.max_len {
        return Err(Error::Shape(format!(
            "sequence of {t_len} tokens exceeds max_len {}",
            dims.max_len
        )));
    }
    if let Some(&bad) = tokens.ids.iter().find(|&&id| id as usize >= dims.vocab_size) {
        return Err(Error::Shape(format!(
            "token id {bad} out of range for vocabulary of {}",
            dims.vocab_size
        )));
    }
    let p = &params.tensors;
    let mut x = vec![0.0; t_len * d];
    for (t, (&id, speaker)) in tokens.ids.iter().zip(&tokens.speakers).enumerate() {
        let row = &mut x[t * d..(t + 1) * d];
        let tok = &p.token_emb[id as usize * d..(id as usize + 1) * d];
        let pos = &p.pos_emb[t * d..(t + 1) * d];
        for i in 0..d {
            row[i] = tok[i] + pos[i];
        }
        if let Some(s) = speaker {
            let s = speaker_row(*s);
            for (r, e) in row.iter_mut().zip(&p.speaker_emb[s * d..(s + 1) * d]) {
                *r += e;
            }
        }
    }

    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let (cache, next) = layer_forward(lp, &x, t_len, dims.dim, dims.heads, dims.ffn_dim);
        layers.push(cache);
        x = next;
    }

    let mut norms = vec![1.0; t_len];
    let output = if params.config.normalize {
        let mut out = x.clone();
        for t in 0..t_len {
            let row = &mut out[t * d..(t + 1) * d];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            norms[t] = n;
            row.iter_mut().for_each(|v| *v /= n);
        }
        out
    } else {
        x.clone()
    };
    Ok(EncoderForward {
        len: t_len,
        ids: tokens.ids.clone(),
        speakers: tokens.speakers.clone(),
        layers,
        pre_norm: x,
        norms,
        output,
    })
}

fn layer_forward(lp: &LayerTensors, x: &[f64], t_len: usize, d: usize, heads: usize, f: usize) -> (LayerCache, Vec<f64>) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let (a, ln1) = layer_norm(x, t_len, d, &lp.ln1_gain, &lp.ln1_bias);
    let q = linear(&a, t_len, d, &lp.wq, &lp.bq, d);
    let k = linear(&a, t_len, d, &lp.wk, &lp.bk, d);
    let v = linear(&a, t_len, d, &lp.wv, &lp.bv, d);
    let mut probs = vec![0.0; heads * t_len * t_len];
    let mut ctx = vec![0.0; t_len * d];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..t_len {
            let qi = &q[i * d + off..i * d + off + hd];
            let row = &mut probs[(h * t_len + i) * t_len..(h * t_len + i + 1) * t_len];
            let mut max = f64::NEG_INFINITY;
            for j in 0..t_len {
                let kj = &k[j * d + off..j * d + off + hd];
                let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                row[j] = s;
                max = max.max(s);
            }
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
            let ci = &mut ctx[i * d + off..i * d + off + hd];
            for j in 0..t_len {
                let pj = row[j];
                for (c, vv) in ci.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                    *c += pj * vv;
                }
            }
        }
    }
    let attn = linear(&ctx, t_len, d, &lp.wo, &lp.bo, d);
    let mid: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
    let (c, ln2) = layer_norm(&mid, t_len, d, &lp.ln2_gain, &lp.ln2_bias);
    let u = linear(&c, t_len, d, &lp.w1, &lp.b1, f);
    let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
    let y = linear(&g, t_len, f, &lp.w2, &lp.b2, d);
    let out: Vec<f64> = mid.iter().zip(&y).map(|(a, b)| a + b).collect();
    (
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            c,
            u,
            g,
        },
        out,
    )
}

fn layer_backward(
    lp: &LayerTensors,
    cache: &LayerCache,
    grads: &mut LayerTensors,
    dout: Vec<f64>,
    t_len: usize,
    d: usize,
    heads: usize,
    f: usize,
) -> Vec<f64> {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    // Feed-forward branch; `dout` also flows straight through the residual.
    let dg = linear_backward(&cache.g, t_len, f, &lp.w2, d, &dout, &mut grads.w2, &mut grads.b2);
    let du: Vec<f64> = dg.iter().zip(&cache.u).map(|(g, &u)| g * gelu_grad(u)).collect();
    let dc = linear_backward(&cache.c, t_len, d, &lp.w1, f, &du, &mut grads.w1, &mut grads.b1);
    let dmid_ln = layer_norm_backward(&cache.ln2, t_len, d, &lp.ln2_gain, &dc, &mut grads.ln2_gain, &mut grads.ln2_bias);
    let dmid: Vec<f64> = dout.iter().zip(&dmid_ln).map(|(a, b)| a + b).collect();

    // Attention branch.
    let dctx = linear_backward(&cache.ctx, t_len, d, &lp.wo, d, &dmid, &mut grads.wo, &mut grads.bo);
    let mut dq = vec![0.0; t_len * d];
    let mut dk = vec![0.0; t_len * d];
    let mut dv = vec![0.0; t_len * d];
    let mut dp = vec![0.0; t_len];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..t_len {
            let row = &cache.probs[(h * t_len + i) * t_len..(h * t_len + i + 1) * t_len];
            let dci = &dctx[i * d + off..i * d + off + hd];
            let mut dot = 0.0;
            for j in 0..t_len {
                let vj = &cache.v[j * d + off..j * d + off + hd];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                dot += row[j] * dp[j];
                for (dvv, c) in dv[j * d + off..j * d + off + hd].iter_mut().zip(dci) {
                    *dvv += row[j] * c;
                }
            }
            for j in 0..t_len {
                let ds = row[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for m in 0..hd {
                    dq[i * d + off + m] += ds * cache.k[j * d + off + m];
                    dk[j * d + off + m] += ds * cache.q[i * d + off + m];
                }
            }
        }
    }
    let mut da = linear_backward(&cache.a, t_len, d, &lp.wq, d, &dq, &mut grads.wq, &mut grads.bq);
    let da_k = linear_backward(&cache.a, t_len, d, &lp.wk, d, &dk, &mut grads.wk, &mut grads.bk);
    let da_v = linear_backward(&cache.a, t_len, d, &lp.wv, d, &dv, &mut grads.wv, &mut grads.bv);
    for ((a, b), c) in da.iter_mut().zip(&da_k).zip(&da_v) {
        *a += b + c;
    }
    let dx_ln = layer_norm_backward(&cache.ln1, t_len, d, &lp.ln1_gain, &da, &mut grads.ln1_gain, &mut grads.ln1_bias);
    dmid.iter().zip(&dx_ln).map(|(a, b)| a + b).collect()
}

/// Accumulates parameter gradients given `d_output` (w.r.t. the scoring rows)
/// and optionally `d_pre_norm` (w.r.t. the rows before normalization).
pub(crate) fn backward(
    fwd: &EncoderForward,
    params: &EncoderParams,
    d_output: &[f64],
    d_pre_norm: Option<&[f64]>,
    grads: &mut Tensors,
) {
    let dims = params.dims();
    let (d, t_len) = (dims.dim, fwd.len);
    let mut dx = if params.config.normalize {
        let mut dx = vec![0.0; t_len * d];
        for t in 0..t_len {
            let h = &fwd.output[t * d..(t + 1) * d];
            let g = &d_output[t * d..(t + 1) * d];
            let proj: f64 = h.iter().zip(g).map(|(a, b)| a * b).sum();
            for i in 0..d {
                dx[t * d + i] = (g[i] - h[i] * proj) / fwd.norms[t];
            }
        }
        dx
    } else {
        d_output.to_vec()
    };
    if let Some(extra) = d_pre_norm {
        for (a, b) in dx.iter_mut().zip(extra) {
            *a += b;
        }
    }

    for (l, cache) in fwd.layers.iter().enumerate().rev() {
        let lp = &params.tensors.layers[l];
        dx = layer_backward(lp, cache, &mut grads.layers[l], dx, t_len, d, dims.heads, dims.ffn_dim);
    }

    for t in 0..t_len {
        let g = &dx[t * d..(t + 1) * d];
        let id = fwd.ids[t] as usize;
        for i in 0..d {
            grads.token_emb[id * d + i] += g[i];
            grads.pos_emb[t * d + i] += g[i];
        }
        if let Some(s) = fwd.speakers[t] {
            let s = speaker_row(s);
            for i in 0..d {
                grads.speaker_emb[s * d + i] += g[i];
            }
        }
    }
}
