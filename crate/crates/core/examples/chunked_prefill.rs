//! Chunked prefill with a per-head budget, then greedy decoding.
//!
//! A random backbone, a sink-plus-recency policy and a few chunk sizes: the
//! cache ends at `b + n_loc` units per head regardless of prompt length, and
//! with `b` at least the prompt length every chunk size gives the same logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retainkv::backbone::{ModelConfig, Weights};
use retainkv::eviction::{chunked_prefill_with_eviction, decode, EvictionConfig, PolicyKind};

fn main() -> retainkv::Result<()> {
    let cfg = ModelConfig::default();
    let w: Weights<f64> = Weights::init_random(&cfg, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prompt: Vec<u32> = (0..300).map(|_| rng.random_range(0..cfg.vocab as u32)).collect();

    let ev = EvictionConfig {
        b: 64,
        chunk_size: 32,
        n_s: 16,
        n_loc: 8,
        policy: PolicyKind::SinkRecent { sink_len: 4, recent_len: 60 },
        ..Default::default()
    };
    let mut pf = chunked_prefill_with_eviction(&w, None, &prompt, &ev)?;
    println!("prompt {} tokens, {} chunk steps", prompt.len(), pf.steps);
    println!("largest head cache after prefill: {}", pf.pool.max_len());
    let out = decode(&w, &mut pf, 5)?;
    println!("decoded {out:?}, cache now {}", pf.pool.max_len());

    let full = EvictionConfig { b: 1000, ..ev };
    let reference = chunked_prefill_with_eviction(&w, None, &prompt, &EvictionConfig { chunk_size: 1000, ..full.clone() })?;
    for chunk in [1, 7, 64] {
        let pf = chunked_prefill_with_eviction(&w, None, &prompt, &EvictionConfig { chunk_size: chunk, ..full.clone() })?;
        let diff = pf
            .logits
            .iter()
            .zip(&reference.logits)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("B = {chunk:>2}: max |logit diff| vs one chunk = {diff:e}");
    }
    Ok(())
}
