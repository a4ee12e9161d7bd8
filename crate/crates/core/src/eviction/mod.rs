//! Budgeted per-head KV caches and the chunked prefill that fills them.

mod cache;
mod config;
mod policy;
mod prefill;

pub use cache::{CachePool, CacheUnit, HeadCache};
pub use config::{EvictionConfig, PolicyKind, StabilizerMode};
pub use policy::{sink_recent_score, ChunkScores, Scorer};
pub use prefill::{
    chunked_prefill_traced, chunked_prefill_with_eviction, decode, evict_top_b, evict_with,
    locret_q_prefill, write_trace_csv, EvictRule, Prefill, TraceRow, TRACE_HEADER,
};
