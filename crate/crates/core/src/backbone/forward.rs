//! Causal forward pass over one chunk against a (possibly evicted) cache pool.
//!
//! Block: RMSNorm → grouped-query attention → residual → RMSNorm → SiLU-gated
//! FFN → residual; final RMSNorm and unembedding. Keys are cached before
//! rotary embedding, so every call rotates cached key `r` of a head at
//! position `r` and the chunk's queries and keys at `m..m+n`, where `m` is
//! that head's current cache length.

use crate::error::{Error, Result};
use crate::eviction::CachePool;
use crate::numerics::{
    dot, log_softmax_at, matmul, rmsnorm_into, rope_inv_freq, rope_rotate, silu, softmax_in_place,
    Mat, Real,
};

use super::{ModelConfig, Weights};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Collect attention mass received by every key (cache ∥ chunk).
    pub attention_stats: bool,
    /// Also collect mean attention received from the last `w` chunk queries.
    pub window: Option<usize>,
}

/// Post-softmax attention received per key position, per KV head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStats<T> {
    /// `received[j][u]`: sum over the group's query heads and all chunk queries.
    pub received: Vec<Vec<T>>,
    /// `window[j][u]`: mean over the group's query heads and the last `w` queries.
    pub window: Option<Vec<Vec<T>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivations<T> {
    /// Queries before rotary embedding, `n × heads·d_head`.
    pub q: Mat<T>,
    /// Keys before rotary embedding, `n × kv_heads·d_kv`.
    pub k: Mat<T>,
    pub v: Mat<T>,
    /// Residual stream after this layer, `n × d_model`.
    pub hidden: Mat<T>,
    /// Cache length per KV head the chunk attended over.
    pub cache_lens: Vec<usize>,
    pub stats: Option<AttentionStats<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkActivations<T> {
    pub layers: Vec<LayerActivations<T>>,
    /// `n × vocab`.
    pub logits: Mat<T>,
}

impl<T: Real> LayerActivations<T> {
    /// Row `t` of the retaining-head input `[Q, K, V]`.
    pub fn qkv_row(&self, t: usize) -> Vec<T> {
        let mut row = Vec::with_capacity(self.q.cols() + self.k.cols() + self.v.cols());
        row.extend_from_slice(self.q.row(t));
        row.extend_from_slice(self.k.row(t));
        row.extend_from_slice(self.v.row(t));
        row
    }

    /// `[Q, K, V]` rows `start..end` as one matrix.
    pub fn qkv_block(&self, start: usize, end: usize) -> Mat<T> {
        let width = self.q.cols() + self.k.cols() + self.v.cols();
        let mut data = Vec::with_capacity((end - start) * width);
        for t in start..end {
            data.extend_from_slice(self.q.row(t));
            data.extend_from_slice(self.k.row(t));
            data.extend_from_slice(self.v.row(t));
        }
        Mat::from_vec(end - start, width, data).expect("consistent widths")
    }
}

impl<T: Real> ChunkActivations<T> {
    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Final residual stream (before the output norm), `n × d_model`.
    pub fn last_hidden(&self) -> &Mat<T> {
        &self.layers.last().expect("at least one layer").hidden
    }
}

fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab) {
        return Err(Error::data(format!(
            "token id {t} outside vocabulary of {}",
            cfg.vocab
        )));
    }
    Ok(())
}

fn norm_rows<T: Real>(x: &Mat<T>, gain: &[T], eps: f64) -> Mat<T> {
    let mut out = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        rmsnorm_into(x.row(i), gain, eps, out.row_mut(i));
    }
    out
}

/// Runs `tokens` as one chunk on top of `pool`. The pool is not modified.
pub fn forward_chunk<T: Real>(
    weights: &Weights<T>,
    tokens: &[u32],
    pool: &CachePool<T>,
    opts: ForwardOptions,
) -> Result<ChunkActivations<T>> {
    let cfg = &weights.config;
    pool.check_shape(cfg)?;
    check_tokens(cfg, tokens)?;
    let n = tokens.len();
    let (dh, dkv, group) = (cfg.d_head, cfg.d_kv, cfg.group_size);
    let rd = cfg.rotary_dim();
    let inv_freq = rope_inv_freq(rd, cfg.rope_theta);
    let scale = T::one() / T::of((dh as f64).sqrt());

    let mut x = Mat::zeros(n, cfg.d_model);
    for (i, &t) in tokens.iter().enumerate() {
        x.row_mut(i).copy_from_slice(weights.embed.row(t as usize));
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, lw) in weights.layers.iter().enumerate() {
        let xn = norm_rows(&x, &lw.attn_norm, cfg.norm_eps);
        let q = matmul(&xn, &lw.wq)?;
        let k = matmul(&xn, &lw.wk)?;
        let v = matmul(&xn, &lw.wv)?;

        let mut attn = Mat::zeros(n, cfg.heads * dkv);
        let mut cache_lens = Vec::with_capacity(cfg.kv_heads());
        let mut received = Vec::new();
        let mut window = Vec::new();
        for j in 0..cfg.kv_heads() {
            let cache = pool.head(l, j);
            let m = cache.len();
            cache_lens.push(m);
            let total = m + n;
            if m.checked_add(n).is_none() {
                return Err(Error::Eval("position overflow".into()));
            }

            let mut keys = Vec::with_capacity(total * dkv);
            let mut vals = Vec::with_capacity(total * dkv);
            keys.extend_from_slice(cache.keys());
            vals.extend_from_slice(cache.values());
            for t in 0..n {
                keys.extend_from_slice(&k.row(t)[j * dkv..(j + 1) * dkv]);
                vals.extend_from_slice(&v.row(t)[j * dkv..(j + 1) * dkv]);
            }
            for (r, key) in keys.chunks_exact_mut(dkv).enumerate() {
                rope_rotate(&mut key[..rd], r, &inv_freq);
            }

            let mut recv = if opts.attention_stats { vec![T::zero(); total] } else { Vec::new() };
            let w = opts.window.map(|w| w.clamp(1, n.max(1)));
            let mut recv_w = if w.is_some() { vec![T::zero(); total] } else { Vec::new() };
            let mut qrow = vec![T::zero(); dh];
            let mut probs = vec![T::zero(); total];
            for g in 0..group {
                let qh = j * group + g;
                for t in 0..n {
                    qrow.copy_from_slice(&q.row(t)[qh * dh..(qh + 1) * dh]);
                    rope_rotate(&mut qrow[..rd], m + t, &inv_freq);
                    let span = m + t + 1;
                    for (r, p) in probs[..span].iter_mut().enumerate() {
                        *p = dot(&qrow, &keys[r * dkv..(r + 1) * dkv]) * scale;
                    }
                    softmax_in_place(&mut probs[..span]);
                    let out = &mut attn.row_mut(t)[qh * dkv..(qh + 1) * dkv];
                    for (r, &p) in probs[..span].iter().enumerate() {
                        for (o, &vv) in out.iter_mut().zip(&vals[r * dkv..(r + 1) * dkv]) {
                            *o = *o + p * vv;
                        }
                    }
                    if opts.attention_stats {
                        for (a, &p) in recv.iter_mut().zip(&probs[..span]) {
                            *a = *a + p;
                        }
                    }
                    if let Some(w) = w {
                        if t + w >= n {
                            for (a, &p) in recv_w.iter_mut().zip(&probs[..span]) {
                                *a = *a + p;
                            }
                        }
                    }
                }
            }
            if let Some(w) = w {
                let denom = T::of((w * group) as f64);
                recv_w.iter_mut().for_each(|a| *a = *a / denom);
                window.push(recv_w);
            }
            if opts.attention_stats {
                received.push(recv);
            }
        }

        x = x.add(&matmul(&attn, &lw.wo)?)?;
        let xn2 = norm_rows(&x, &lw.ffn_norm, cfg.norm_eps);
        let mut gate = matmul(&xn2, &lw.w_gate)?;
        let up = matmul(&xn2, &lw.w_up)?;
        for (gv, &uv) in gate.data_mut().iter_mut().zip(up.data()) {
            *gv = silu(*gv) * uv;
        }
        x = x.add(&matmul(&gate, &lw.w_down)?)?;
        x.ensure_finite("hidden state")?;

        let stats = (opts.attention_stats || opts.window.is_some()).then(|| AttentionStats {
            received,
            window: opts.window.map(|_| window),
        });
        layers.push(LayerActivations {
            q,
            k,
            v,
            hidden: x.clone(),
            cache_lens,
            stats,
        });
    }

    let logits = matmul(&norm_rows(&x, &weights.final_norm, cfg.norm_eps), &weights.unembed)?;
    Ok(ChunkActivations { layers, logits })
}

/// Single-pass causal forward over the whole sequence with an empty cache.
pub fn full_forward<T: Real>(
    weights: &Weights<T>,
    tokens: &[u32],
    opts: ForwardOptions,
) -> Result<ChunkActivations<T>> {
    forward_chunk(weights, tokens, &CachePool::new(&weights.config), opts)
}

/// Pre-softmax `Q·Kᵀ` (after rotary embedding, without the `1/√d_head`
/// scaling) of one query head of a full-sequence forward, masked to the causal
/// triangle (entries above the diagonal are zero).
pub fn attention_logits<T: Real>(
    cfg: &ModelConfig,
    acts: &ChunkActivations<T>,
    layer: usize,
    q_head: usize,
) -> Mat<T> {
    let la = &acts.layers[layer];
    let n = la.q.rows();
    let (dh, dkv) = (cfg.d_head, cfg.d_kv);
    let j = cfg.kv_head_of(q_head);
    let rd = cfg.rotary_dim();
    let inv = rope_inv_freq(rd, cfg.rope_theta);
    let keys: Vec<Vec<T>> = (0..n)
        .map(|r| {
            let mut key = la.k.row(r)[j * dkv..(j + 1) * dkv].to_vec();
            rope_rotate(&mut key[..rd], r, &inv);
            key
        })
        .collect();
    let mut out = Mat::zeros(n, n);
    for p in 0..n {
        let mut qrow = la.q.row(p)[q_head * dh..(q_head + 1) * dh].to_vec();
        rope_rotate(&mut qrow[..rd], p, &inv);
        for (kk, key) in keys.iter().enumerate().take(p + 1) {
            out.set(p, kk, dot(&qrow, key));
        }
    }
    out
}

/// `−log softmax(logits)[token]`.
pub fn token_entropy<T: Real>(logits_row: &[T], token: u32) -> T {
    -log_softmax_at(logits_row, token as usize)
}
