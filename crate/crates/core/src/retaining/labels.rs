use crate::backbone::{full_forward, ChunkActivations, ForwardOptions, ModelConfig, Weights};
use crate::error::{Error, Result};
use crate::numerics::{dot, rope_inv_freq, rope_rotate, Mat, Real};

/// Regression targets for every prompt token, one `n_q × kv_heads` matrix per layer.
///
/// Entry `(k, j)` is the largest post-RoPE `Q·Kᵀ` that any answer query of any
/// query head in KV group `j` puts on prompt key `k`. With `scaled` the
/// logits are divided by `√d_head` first.
pub fn cis_labels_from_acts<T: Real>(
    cfg: &ModelConfig,
    acts: &ChunkActivations<T>,
    n_q: usize,
    scaled: bool,
) -> Result<Vec<Mat<T>>> {
    let n = acts.len();
    if n_q == 0 || n_q >= n {
        return Err(Error::Contract(format!(
            "need a non-empty prompt and answer, got prompt {n_q} of {n} tokens"
        )));
    }
    let (dh, dkv, g) = (cfg.d_head, cfg.d_kv, cfg.group_size);
    let rd = cfg.rotary_dim();
    let inv = rope_inv_freq(rd, cfg.rope_theta);
    let scale = if scaled {
        T::one() / T::of((dh as f64).sqrt())
    } else {
        T::one()
    };
    let mut out = Vec::with_capacity(cfg.layers);
    for la in &acts.layers {
        let mut labels = Mat::from_fn(n_q, cfg.kv_heads(), |_, _| T::neg_infinity());
        for j in 0..cfg.kv_heads() {
            let mut queries = Vec::with_capacity((n - n_q) * g);
            for p in n_q..n {
                for qh in j * g..(j + 1) * g {
                    let mut q = la.q.row(p)[qh * dh..(qh + 1) * dh].to_vec();
                    rope_rotate(&mut q[..rd], p, &inv);
                    queries.push(q);
                }
            }
            for k in 0..n_q {
                let mut key = la.k.row(k)[j * dkv..(j + 1) * dkv].to_vec();
                rope_rotate(&mut key[..rd], k, &inv);
                let best = queries
                    .iter()
                    .map(|q| dot(q, &key))
                    .fold(T::neg_infinity(), T::max);
                labels.set(k, j, best * scale);
            }
        }
        labels.ensure_finite("CIS labels")?;
        out.push(labels);
    }
    Ok(out)
}

/// Runs the frozen backbone over `prompt ∥ answer` and labels the prompt tokens.
pub fn cis_labels<T: Real>(
    weights: &Weights<T>,
    prompt: &[u32],
    answer: &[u32],
    scaled: bool,
) -> Result<(Vec<Mat<T>>, ChunkActivations<T>)> {
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(answer);
    let acts = full_forward(weights, &tokens, ForwardOptions::default())?;
    let labels = cis_labels_from_acts(&weights.config, &acts, prompt.len(), scaled)?;
    Ok((labels, acts))
}
