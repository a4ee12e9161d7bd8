//! Frozen toy decoder-only transformer: GQA attention with pre-RoPE key
//! caching, RMSNorm, SiLU-gated FFN, and the matched-filter construction.

mod config;
pub mod container;
mod forward;
pub mod matched_filter;
mod weights;

pub use config::ModelConfig;
pub use container::Container;
pub use forward::{
    attention_logits, forward_chunk, full_forward, token_entropy, AttentionStats,
    ChunkActivations, ForwardOptions, LayerActivations,
};
pub use matched_filter::{
    build_matched_filter, matched_filter_config, NeedleLayout, TokenKind, DEFAULT_MATCH_GAIN,
};
pub use weights::{LayerWeights, Weights};
