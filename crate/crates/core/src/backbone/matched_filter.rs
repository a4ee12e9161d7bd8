//! Hand-built backbone whose layer-0 attention is a token-identity matcher.
//!
//! Token embeddings are one-hot codes. Layer 0 assigns fixed roles to its
//! KV heads:
//!
//! * KV head 0 matches identical tokens: `W_Q = W_K` are scaled embeddings, so
//!   the pre-softmax score between two positions is `gain²` when their tokens
//!   agree and `0` otherwise.
//! * KV head 1 retrieves the passkey: every needle token has key `gain·(u + e_s)`
//!   for its slot `s`, the marker and each needle token query `gain·(u + e_{s+1})`,
//!   and values carry the needle digit, written back into dedicated residual
//!   dims that the unembedding reads. Greedy decoding after the marker
//!   therefore spells the needle out slot by slot.
//! * KV head 2 (when present) is a previous-token head built from rotary
//!   dims, writing the previous token's code into scratch dims. It makes later
//!   layers sensitive to position reassignment and cache discontinuity.
//!
//! Matching dims sit above `rotary_dim`, so the scores above do not depend on
//! positions. Layers past 0 are seeded random attention that only writes into
//! junk residual dims ignored by the unembedding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{rope_inv_freq, Real};

use super::{ModelConfig, Weights};

pub const MATCHER_KV_HEAD: usize = 0;
pub const RETRIEVAL_KV_HEAD: usize = 1;
pub const LOCAL_KV_HEAD: usize = 2;

/// Default score gain; layer-0 matches score `gain² = 36`.
pub const DEFAULT_MATCH_GAIN: f64 = 6.0;

const UPPER_LAYER_SEED: u64 = 0x6d61_7463_6865_64;
const VALUE_GAIN: f64 = 2.0;
const SLOT_GAIN: f64 = 1.0;
const LOCAL_GAIN: f64 = 8.0;

/// Role of a token id in the passkey vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Filler,
    Needle { slot: usize, digit: usize },
    Marker,
}

/// Vocabulary split: fillers first, then `slots × digits` needle tokens, then
/// the question marker as the last id. Needle tokens are slot-tagged digits,
/// so the digit at slot `s` of the passkey is the token `(s, digit)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeedleLayout {
    pub vocab: usize,
    pub slots: usize,
    pub digits: usize,
}

impl NeedleLayout {
    pub const DEFAULT_SLOTS: usize = 4;
    pub const DEFAULT_DIGITS: usize = 8;

    pub fn for_vocab(vocab: usize) -> Result<Self> {
        Self::new(vocab, Self::DEFAULT_SLOTS, Self::DEFAULT_DIGITS)
    }

    pub fn new(vocab: usize, slots: usize, digits: usize) -> Result<Self> {
        if slots == 0 || digits == 0 || vocab < slots * digits + 2 {
            return Err(Error::config(format!(
                "vocab {vocab} cannot hold {slots}x{digits} needle tokens, a marker and fillers"
            )));
        }
        Ok(NeedleLayout {
            vocab,
            slots,
            digits,
        })
    }

    pub fn filler_count(&self) -> usize {
        self.vocab - 1 - self.slots * self.digits
    }

    pub fn marker(&self) -> u32 {
        (self.vocab - 1) as u32
    }

    pub fn needle_token(&self, slot: usize, digit: usize) -> u32 {
        debug_assert!(slot < self.slots && digit < self.digits);
        (self.filler_count() + slot * self.digits + digit) as u32
    }

    pub fn kind(&self, token: u32) -> TokenKind {
        let t = token as usize;
        let f = self.filler_count();
        if t == self.vocab - 1 {
            TokenKind::Marker
        } else if t >= f {
            let r = t - f;
            TokenKind::Needle {
                slot: r / self.digits,
                digit: r % self.digits,
            }
        } else {
            TokenKind::Filler
        }
    }
}

/// Desk-scale shape the construction is tuned for.
pub fn matched_filter_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 3,
        group_size: 1,
        d_model: 192,
        d_head: 64,
        d_kv: 64,
        d_ff: 32,
        vocab: 48,
        rope_theta: 10000.0,
        rotary_dim: Some(16),
        norm_eps: 1e-6,
    }
}

pub fn build_matched_filter<T: Real>(cfg: &ModelConfig, match_gain: f64) -> Result<Weights<T>> {
    cfg.validate()?;
    let layout = NeedleLayout::for_vocab(cfg.vocab)?;
    if cfg.vocab > cfg.d_model {
        return Err(Error::config(format!(
            "matched filter needs vocab ({}) <= d_model ({})",
            cfg.vocab, cfg.d_model
        )));
    }
    let rd = cfg.rotary_dim();
    let free = cfg.d_kv - rd;
    if cfg.kv_heads() < 2 {
        return Err(Error::config("matched filter needs at least two KV heads"));
    }
    if free < cfg.vocab || free < layout.slots + 1 || cfg.d_kv < layout.digits {
        return Err(Error::config(format!(
            "head width {} minus rotary dims {rd} cannot hold {} token codes",
            cfg.d_kv, cfg.vocab
        )));
    }
    let value_base = cfg.vocab;
    let scratch_base = value_base + layout.digits;
    if scratch_base > cfg.d_model {
        return Err(Error::config("d_model too small for needle value dims"));
    }
    let local_width = cfg.vocab.min(cfg.d_kv).min(cfg.d_model - scratch_base);
    let junk_base = scratch_base + local_width;

    let mut w = Weights::<T>::zeros(cfg)?;
    let (dh, dkv, g) = (cfg.d_head, cfg.d_kv, cfg.group_size);
    // rmsnorm maps a one-hot row to √(1/(1/d + eps))·e_t; undo that factor.
    let unnorm = (1.0 / cfg.d_model as f64 + cfg.norm_eps).sqrt();
    let gain = T::of(match_gain * unnorm);
    let inv_g = T::of(1.0 / g as f64);

    for t in 0..cfg.vocab {
        w.embed.set(t, t, T::one());
    }

    let l0 = &mut w.layers[0];
    let q_cols = |kv: usize| (kv * g..(kv + 1) * g).map(move |qh| qh * dh);
    // identity matcher
    for t in 0..cfg.vocab {
        for qc in q_cols(MATCHER_KV_HEAD) {
            l0.wq.set(t, qc + rd + t, gain);
        }
        l0.wk.set(t, MATCHER_KV_HEAD * dkv + rd + t, gain);
    }
    // passkey retrieval
    let u = rd;
    let slot_dim = |s: usize| rd + 1 + s;
    let kbase = RETRIEVAL_KV_HEAD * dkv;
    for t in 0..cfg.vocab as u32 {
        let next_slot = match layout.kind(t) {
            TokenKind::Filler => continue,
            TokenKind::Marker => Some(0),
            TokenKind::Needle { slot, digit } => {
                l0.wk.set(t as usize, kbase + u, gain);
                l0.wk.set(t as usize, kbase + slot_dim(slot), gain);
                l0.wv.set(t as usize, kbase + digit, T::of(unnorm));
                (slot + 1 < layout.slots).then_some(slot + 1)
            }
        };
        for qc in q_cols(RETRIEVAL_KV_HEAD) {
            l0.wq.set(t as usize, qc + u, gain);
            if let Some(s) = next_slot {
                l0.wq.set(t as usize, qc + slot_dim(s), gain);
            }
        }
    }
    for qh in RETRIEVAL_KV_HEAD * g..(RETRIEVAL_KV_HEAD + 1) * g {
        for d in 0..layout.digits {
            l0.wo.set(qh * dkv + d, value_base + d, T::of(VALUE_GAIN) * inv_g);
        }
    }
    // previous-token head on rotary dims
    if cfg.kv_heads() > LOCAL_KV_HEAD && rd > 0 {
        let inv_freq = rope_inv_freq(rd, cfg.rope_theta);
        let c = T::of(LOCAL_GAIN * unnorm);
        let kbase = LOCAL_KV_HEAD * dkv;
        for t in 0..cfg.vocab {
            for (i, &f) in inv_freq.iter().enumerate() {
                for qc in q_cols(LOCAL_KV_HEAD) {
                    l0.wq.set(t, qc + 2 * i, c);
                }
                l0.wk.set(t, kbase + 2 * i, c * T::of(f.cos()));
                l0.wk.set(t, kbase + 2 * i + 1, c * T::of(f.sin()));
            }
            if t < local_width {
                l0.wv.set(t, kbase + t, T::of(unnorm));
            }
        }
        for qh in LOCAL_KV_HEAD * g..(LOCAL_KV_HEAD + 1) * g {
            for d in 0..local_width {
                l0.wo.set(qh * dkv + d, scratch_base + d, inv_g);
            }
        }
    }

    // upper layers: random attention writing only into junk dims
    let mut rng = ChaCha8Rng::seed_from_u64(UPPER_LAYER_SEED);
    let normal = Normal::new(0.0, (cfg.d_model as f64).powf(-0.5))
        .map_err(|e| Error::config(e.to_string()))?;
    for lw in w.layers.iter_mut().skip(1) {
        for m in [&mut lw.wq, &mut lw.wk, &mut lw.wv] {
            for v in m.data_mut() {
                *v = T::of(normal.sample(&mut rng));
            }
        }
        for r in 0..lw.wo.rows() {
            for c in junk_base..cfg.d_model {
                lw.wo.set(r, c, T::of(normal.sample(&mut rng)));
            }
        }
    }

    // unembedding: needle (s, d) scores "previous slot is current" + "digit d retrieved"
    for s in 0..layout.slots {
        for d in 0..layout.digits {
            let col = layout.needle_token(s, d) as usize;
            if s == 0 {
                w.unembed.set(layout.marker() as usize, col, T::of(SLOT_GAIN));
            } else {
                for pd in 0..layout.digits {
                    let prev = layout.needle_token(s - 1, pd) as usize;
                    w.unembed.set(prev, col, T::of(SLOT_GAIN));
                }
            }
            w.unembed.set(value_base + d, col, T::one());
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_roundtrip() {
        let l = NeedleLayout::for_vocab(48).unwrap();
        assert_eq!(l.filler_count(), 15);
        assert_eq!(l.kind(0), TokenKind::Filler);
        assert_eq!(l.kind(47), TokenKind::Marker);
        let t = l.needle_token(2, 5);
        assert_eq!(l.kind(t), TokenKind::Needle { slot: 2, digit: 5 });
        assert!(NeedleLayout::for_vocab(20).is_err());
    }

    #[test]
    fn rejects_small_shapes() {
        let cfg = ModelConfig::default();
        assert!(build_matched_filter::<f64>(&cfg, 6.0).is_err());
        let big_vocab = ModelConfig {
            vocab: 200,
            ..matched_filter_config()
        };
        assert!(matches!(
            build_matched_filter::<f64>(&big_vocab, 6.0),
            Err(Error::Config(_))
        ));
    }
}
