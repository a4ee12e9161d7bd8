use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{token_entropy, ChunkActivations, ForwardOptions, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Mat, Real};
use crate::retaining::HeadSet;

use super::PolicyKind;

/// Scores produced for one chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkScores<T> {
    /// Per layer, `n × kv_heads` scores of the chunk's tokens.
    pub chunk: Vec<Mat<T>>,
    /// For refreshing policies: per layer and KV head, new stored scores of
    /// the units already cached before this chunk.
    pub cache: Option<Vec<Vec<Vec<T>>>>,
    /// Add `cache` to the stored scores instead of replacing them.
    pub accumulate: bool,
}

/// A policy together with whatever it carries between chunks.
pub struct Scorer<'a, T> {
    kind: PolicyKind,
    heads: Option<&'a HeadSet<T>>,
    rng: ChaCha8Rng,
    prev_logits: Option<Vec<T>>,
}

impl<'a, T: Real> Scorer<'a, T> {
    pub fn new(
        kind: &PolicyKind,
        cfg: &ModelConfig,
        heads: Option<&'a HeadSet<T>>,
        seed: u64,
    ) -> Result<Self> {
        if kind.needs_heads() {
            let hs = heads.ok_or_else(|| {
                Error::config(format!("policy {} needs trained retaining heads", kind.name()))
            })?;
            hs.check_compatible(cfg)?;
        }
        Ok(Scorer {
            kind: kind.clone(),
            heads,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prev_logits: None,
        })
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    /// What the forward pass must collect for this policy.
    pub fn forward_options(&self) -> ForwardOptions {
        match self.kind {
            PolicyKind::H2oSum => ForwardOptions {
                attention_stats: true,
                window: None,
            },
            PolicyKind::SnapkvWindow { w } => ForwardOptions {
                attention_stats: false,
                window: Some(w),
            },
            _ => ForwardOptions::default(),
        }
    }

    /// Scores a chunk whose first token sits at original position `start`.
    pub fn score_chunk(
        &mut self,
        cfg: &ModelConfig,
        acts: &ChunkActivations<T>,
        tokens: &[u32],
        start: usize,
    ) -> Result<ChunkScores<T>> {
        let n = tokens.len();
        if acts.len() != n || acts.layers.len() != cfg.layers {
            return Err(Error::shape(format!(
                "activations for {} tokens / {} layers, chunk has {n} tokens",
                acts.len(),
                acts.layers.len()
            )));
        }
        let kvh = cfg.kv_heads();
        let mut cache = None;
        let chunk = match &self.kind {
            PolicyKind::Locret | PolicyKind::LocretQ => {
                let hs = self.heads.expect("checked at construction");
                acts.layers
                    .iter()
                    .zip(&hs.heads)
                    .map(|(la, h)| h.predict(&la.qkv_block(0, n)))
                    .collect::<Result<Vec<_>>>()?
            }
            PolicyKind::Random => (0..cfg.layers)
                .map(|_| Mat::from_fn(n, kvh, |_, _| T::of(self.rng.random::<f64>())))
                .collect(),
            PolicyKind::SinkRecent { sink_len, .. } => {
                let s = Mat::from_fn(n, kvh, |t, _| sink_recent_score(start + t, *sink_len));
                vec![s; cfg.layers]
            }
            PolicyKind::SirllmEntropy => {
                let mut col = Vec::with_capacity(n);
                for t in 0..n {
                    let prev = if t == 0 {
                        self.prev_logits.as_deref()
                    } else {
                        Some(acts.logits.row(t - 1))
                    };
                    col.push(match prev {
                        Some(row) if start + t > 0 => token_entropy(row, tokens[t]),
                        _ => T::zero(),
                    });
                }
                let s = Mat::from_fn(n, kvh, |t, _| col[t]);
                vec![s; cfg.layers]
            }
            PolicyKind::H2oSum | PolicyKind::SnapkvWindow { .. } => {
                let mut per_layer = Vec::with_capacity(cfg.layers);
                let mut refresh = Vec::with_capacity(cfg.layers);
                for la in &acts.layers {
                    let stats = la.stats.as_ref().ok_or_else(|| {
                        Error::Contract("attention statistics missing from forward".into())
                    })?;
                    let src = match self.kind {
                        PolicyKind::H2oSum => &stats.received,
                        _ => stats.window.as_ref().ok_or_else(|| {
                            Error::Contract("window statistics missing from forward".into())
                        })?,
                    };
                    let mut s = Mat::zeros(n, kvh);
                    let mut layer_refresh = Vec::with_capacity(kvh);
                    for j in 0..kvh {
                        let m = la.cache_lens[j];
                        for t in 0..n {
                            s.set(t, j, src[j][m + t]);
                        }
                        layer_refresh.push(src[j][..m].to_vec());
                    }
                    per_layer.push(s);
                    refresh.push(layer_refresh);
                }
                cache = Some(refresh);
                per_layer
            }
        };
        if n > 0 {
            self.prev_logits = Some(acts.logits.row(n - 1).to_vec());
        }
        Ok(ChunkScores {
            chunk,
            cache,
            accumulate: self.kind == PolicyKind::H2oSum,
        })
    }

    /// Lets a later chunk see the logits of a token it did not score (decode).
    pub fn observe_logits(&mut self, row: &[T]) {
        self.prev_logits = Some(row.to_vec());
    }
}

/// `2` for sinks, `0` otherwise, plus `pos/(pos+1)` so later tokens rank higher.
pub fn sink_recent_score<T: Real>(pos: usize, sink_len: usize) -> T {
    let sink = if pos < sink_len { 2.0 } else { 0.0 };
    T::of(sink + pos as f64 / (pos as f64 + 1.0))
}
