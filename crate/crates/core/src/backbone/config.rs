use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the decoder-only backbone.
///
/// `heads` query heads share `heads / group_size` key/value heads; a group
/// size of one is plain multi-head attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub group_size: usize,
    pub d_model: usize,
    /// Per-head query width.
    pub d_head: usize,
    /// Per-head key/value width.
    pub d_kv: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub rope_theta: f64,
    /// Leading dims of each head that receive rotary embedding; `None` rotates all of them.
    pub rotary_dim: Option<usize>,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            heads: 8,
            group_size: 4,
            d_model: 128,
            d_head: 16,
            d_kv: 16,
            d_ff: 256,
            vocab: 64,
            rope_theta: 10000.0,
            rotary_dim: None,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn kv_heads(&self) -> usize {
        self.heads / self.group_size
    }

    pub fn rotary_dim(&self) -> usize {
        self.rotary_dim.unwrap_or(self.d_head)
    }

    /// Width of the concatenated query projection.
    pub fn q_width(&self) -> usize {
        self.heads * self.d_head
    }

    /// Width of the concatenated key (or value) projection.
    pub fn kv_width(&self) -> usize {
        self.kv_heads() * self.d_kv
    }

    /// Width of one token's `[Q, K, V]` row as seen by a retaining head.
    pub fn qkv_width(&self) -> usize {
        self.q_width() + 2 * self.kv_width()
    }

    /// KV head that serves query head `qh`.
    pub fn kv_head_of(&self, qh: usize) -> usize {
        qh / self.group_size
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.layers == 0 || self.heads == 0 || self.vocab == 0 || self.d_ff == 0 {
            return fail("layers, heads, vocab and d_ff must be positive".into());
        }
        if self.group_size == 0 || self.heads % self.group_size != 0 {
            return fail(format!(
                "heads ({}) must be divisible by group_size ({})",
                self.heads, self.group_size
            ));
        }
        if self.d_model == 0 || self.d_head == 0 {
            return fail("d_model and d_head must be positive".into());
        }
        if self.d_kv != self.d_head {
            return fail(format!(
                "query and key widths must agree for Q·Kᵀ (d_head {}, d_kv {})",
                self.d_head, self.d_kv
            ));
        }
        let rd = self.rotary_dim();
        if rd % 2 != 0 || rd > self.d_head {
            return fail(format!(
                "rotary_dim ({rd}) must be even and at most d_head ({})",
                self.d_head
            ));
        }
        if !(self.rope_theta > 0.0) || !(self.norm_eps > 0.0) {
            return fail("rope_theta and norm_eps must be positive".into());
        }
        Ok(())
    }
}
