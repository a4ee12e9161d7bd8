use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scores rank cache units for eviction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyKind {
    /// Retaining-head predictions.
    Locret,
    /// Retaining-head predictions with the query prepended and pinned.
    LocretQ,
    /// Seeded uniform scores.
    Random,
    /// Attention sinks plus a recency ramp. The recent window is whatever
    /// the budget leaves after the sinks.
    SinkRecent { sink_len: usize, recent_len: usize },
    /// Accumulated attention received so far.
    H2oSum,
    /// Mean attention received from the last `w` queries of the current chunk.
    SnapkvWindow { w: usize },
    /// Surprisal of each token under the model.
    SirllmEntropy,
}

impl PolicyKind {
    pub fn needs_heads(&self) -> bool {
        matches!(self, PolicyKind::Locret | PolicyKind::LocretQ)
    }

    /// Policies whose stored scores are rewritten by later chunks.
    pub fn refreshes_scores(&self) -> bool {
        matches!(self, PolicyKind::H2oSum | PolicyKind::SnapkvWindow { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Locret => "locret",
            PolicyKind::LocretQ => "locret_q",
            PolicyKind::Random => "random",
            PolicyKind::SinkRecent { .. } => "sink_recent",
            PolicyKind::H2oSum => "h2o_sum",
            PolicyKind::SnapkvWindow { .. } => "snapkv_window",
            PolicyKind::SirllmEntropy => "sirllm_entropy",
        }
    }
}

/// How the stabilizer mask interacts with stored scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilizerMode {
    /// The last `n_s` units rank first for one eviction step only.
    #[default]
    Transient,
    /// Once masked, a unit ranks first at every later step.
    Persistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvictionConfig {
    /// Units kept per (layer, KV head) after each eviction step.
    pub b: usize,
    /// Prefill chunk length.
    #[serde(rename = "B", alias = "chunk_size")]
    pub chunk_size: usize,
    /// Most recent units protected at each non-final step.
    pub n_s: usize,
    /// Trailing tokens appended after eviction without being evicted.
    pub n_loc: usize,
    pub policy: PolicyKind,
    pub stabilizers: StabilizerMode,
    pub seed: u64,
}

impl Default for EvictionConfig {
    fn default() -> Self {
        EvictionConfig {
            b: 6000,
            chunk_size: 3072,
            n_s: 2500,
            n_loc: 100,
            policy: PolicyKind::Locret,
            stabilizers: StabilizerMode::Transient,
            seed: 0,
        }
    }
}

impl EvictionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.chunk_size == 0 {
            return Err(Error::config("budget b and chunk size B must be positive"));
        }
        if self.b < self.n_s {
            return Err(Error::config(format!(
                "budget b ({}) is smaller than the stabilizer length n_s ({})",
                self.b, self.n_s
            )));
        }
        if let PolicyKind::SnapkvWindow { w: 0 } = self.policy {
            return Err(Error::config("snapkv window must be positive"));
        }
        Ok(())
    }
}
