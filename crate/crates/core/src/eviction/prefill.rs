use std::io::Write;

use crate::backbone::{forward_chunk, ChunkActivations, Weights};
use crate::error::{Error, Result};
use crate::numerics::{top_b_indices, Real};
use crate::retaining::HeadSet;

use super::{CachePool, ChunkScores, EvictionConfig, HeadCache, Scorer, StabilizerMode};

/// One unit's fate at one eviction step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub chunk_step: usize,
    pub layer: usize,
    pub kv_head: usize,
    pub original_position: usize,
    pub retained: bool,
    pub score: f64,
}

pub const TRACE_HEADER: &str = "chunk_step,layer,kv_head,original_position,retained,score";

pub fn write_trace_csv(mut w: impl Write, rows: &[TraceRow]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.chunk_step,
            r.layer,
            r.kv_head,
            r.original_position,
            u8::from(r.retained),
            r.score
        )?;
    }
    Ok(())
}

/// Result of a chunked prefill.
#[derive(Clone, Debug)]
pub struct Prefill<T> {
    pub pool: CachePool<T>,
    /// Per layer, residual stream of the last processed token.
    pub last_hidden: Vec<Vec<T>>,
    /// Logits of the last processed token.
    pub logits: Vec<T>,
    /// Original position the next appended token will get.
    pub next_position: usize,
    /// Number of eviction steps run.
    pub steps: usize,
    /// Every unit considered at every eviction step, then every unit held
    /// after the local tail is appended (step `steps`). Empty unless tracing.
    pub trace: Vec<TraceRow>,
}

/// What the mask protects at one eviction step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvictRule {
    pub b: usize,
    pub n_s: usize,
    pub is_last_chunk: bool,
    /// Units with original position below this are never evicted.
    pub protect_below: usize,
    pub mode: StabilizerMode,
}

/// Keeps the `b` best units, ranking the last `n_s` (by position) first
/// unless this is the last chunk. Returns, for each unit present before the
/// call, whether it survived. Stored scores are not touched.
pub fn evict_top_b<T: Real>(
    cache: &mut HeadCache<T>,
    b: usize,
    n_s: usize,
    is_last_chunk: bool,
) -> Vec<bool> {
    evict_with(
        cache,
        EvictRule {
            b,
            n_s,
            is_last_chunk,
            protect_below: 0,
            mode: StabilizerMode::Transient,
        },
    )
}

pub fn evict_with<T: Real>(cache: &mut HeadCache<T>, rule: EvictRule) -> Vec<bool> {
    let len = cache.len();
    if !rule.is_last_chunk && rule.mode == StabilizerMode::Persistent {
        for i in len.saturating_sub(rule.n_s)..len {
            cache.pin(i);
        }
    }
    if len <= rule.b {
        return vec![true; len];
    }
    let masked: Vec<T> = (0..len)
        .map(|i| {
            let stabilizer = !rule.is_last_chunk && i + rule.n_s >= len;
            if stabilizer || cache.pinned()[i] || cache.positions()[i] < rule.protect_below {
                T::infinity()
            } else {
                cache.scores()[i]
            }
        })
        .collect();
    let keep = top_b_indices(&masked, rule.b);
    let mut flags = vec![false; len];
    for &i in &keep {
        flags[i] = true;
    }
    cache.retain_indices(&keep);
    flags
}

fn apply_scores<T: Real>(
    pool: &mut CachePool<T>,
    acts: &ChunkActivations<T>,
    scores: &ChunkScores<T>,
    start: usize,
) -> Result<()> {
    let dkv = pool.head(0, 0).dim();
    for (l, la) in acts.layers.iter().enumerate() {
        for j in 0..pool.kv_heads() {
            let head = pool.head_mut(l, j);
            if let Some(cache) = &scores.cache {
                for (i, &s) in cache[l][j].iter().enumerate() {
                    let s = if scores.accumulate { head.scores()[i] + s } else { s };
                    head.set_score(i, s);
                }
            }
            for t in 0..acts.len() {
                head.push(
                    start + t,
                    &la.k.row(t)[j * dkv..(j + 1) * dkv],
                    &la.v.row(t)[j * dkv..(j + 1) * dkv],
                    scores.chunk[l].get(t, j),
                )?;
            }
        }
    }
    Ok(())
}

fn tail_state<T: Real>(acts: &ChunkActivations<T>) -> (Vec<Vec<T>>, Vec<T>) {
    let n = acts.len();
    (
        acts.layers.iter().map(|la| la.hidden.row(n - 1).to_vec()).collect(),
        acts.logits.row(n - 1).to_vec(),
    )
}

fn run<T: Real>(
    weights: &Weights<T>,
    heads: Option<&HeadSet<T>>,
    tokens: &[u32],
    ev: &EvictionConfig,
    protect: usize,
    trace: bool,
) -> Result<Prefill<T>> {
    let cfg = &weights.config;
    ev.validate()?;
    if tokens.is_empty() {
        return Err(Error::data("cannot prefill an empty token list"));
    }
    if tokens.len() <= ev.n_loc {
        return Err(Error::data(format!(
            "{} tokens leave nothing to evict before the {} local tokens",
            tokens.len(),
            ev.n_loc
        )));
    }
    if protect > 0 && ev.b < ev.n_s + protect {
        return Err(Error::config(format!(
            "budget b ({}) must hold n_s ({}) plus the {protect}-token query",
            ev.b, ev.n_s
        )));
    }
    let mut scorer = Scorer::new(&ev.policy, cfg, heads, ev.seed)?;
    let opts = scorer.forward_options();
    let mut pool = CachePool::new(cfg);
    let mut rows = Vec::new();
    let evict_end = tokens.len() - ev.n_loc;
    let mut steps = 0;
    let mut last = None;

    let mut start = 0;
    while start < evict_end {
        let end = (start + ev.chunk_size).min(evict_end);
        let chunk = &tokens[start..end];
        let acts = forward_chunk(weights, chunk, &pool, opts)?;
        let scores = scorer.score_chunk(cfg, &acts, chunk, start)?;
        apply_scores(&mut pool, &acts, &scores, start)?;
        let rule = EvictRule {
            b: ev.b,
            n_s: ev.n_s,
            is_last_chunk: end == evict_end,
            protect_below: protect,
            mode: ev.stabilizers,
        };
        for l in 0..cfg.layers {
            for j in 0..cfg.kv_heads() {
                let head = pool.head_mut(l, j);
                let before = trace.then(|| (head.positions().to_vec(), head.scores().to_vec()));
                let flags = evict_with(head, rule);
                if let Some((pos, sc)) = before {
                    for (i, &kept) in flags.iter().enumerate() {
                        rows.push(TraceRow {
                            chunk_step: steps,
                            layer: l,
                            kv_head: j,
                            original_position: pos[i],
                            retained: kept,
                            score: sc[i].f64(),
                        });
                    }
                }
            }
        }
        steps += 1;
        start = end;
        last = Some(acts);
    }

    if ev.n_loc > 0 {
        let local = &tokens[evict_end..];
        let acts = forward_chunk(weights, local, &pool, opts)?;
        let scores = scorer.score_chunk(cfg, &acts, local, evict_end)?;
        apply_scores(&mut pool, &acts, &scores, evict_end)?;
        if trace {
            for ((l, j), head) in pool.iter() {
                for (&p, &s) in head.positions().iter().zip(head.scores()) {
                    rows.push(TraceRow {
                        chunk_step: steps,
                        layer: l,
                        kv_head: j,
                        original_position: p,
                        retained: true,
                        score: s.f64(),
                    });
                }
            }
        }
        last = Some(acts);
    }

    let (last_hidden, logits) = tail_state(&last.expect("at least one chunk ran"));
    Ok(Prefill {
        pool,
        last_hidden,
        logits,
        next_position: tokens.len(),
        steps,
        trace: rows,
    })
}

/// Chunked prefill with budgeted eviction.
///
/// Tokens before the last `n_loc` are processed in chunks of `B`; each chunk
/// is forwarded against the current caches, scored, appended, and every
/// (layer, KV head) cache is cut back to `b` units. The last `n_loc` tokens are
/// then forwarded and appended as they are.
pub fn chunked_prefill_with_eviction<T: Real>(
    weights: &Weights<T>,
    heads: Option<&HeadSet<T>>,
    tokens: &[u32],
    ev: &EvictionConfig,
) -> Result<Prefill<T>> {
    run(weights, heads, tokens, ev, 0, false)
}

/// Same as [`chunked_prefill_with_eviction`], recording every eviction decision.
pub fn chunked_prefill_traced<T: Real>(
    weights: &Weights<T>,
    heads: Option<&HeadSet<T>>,
    tokens: &[u32],
    ev: &EvictionConfig,
) -> Result<Prefill<T>> {
    run(weights, heads, tokens, ev, 0, true)
}

/// Prefill over `query ∥ context` with the query's units never evicted.
pub fn locret_q_prefill<T: Real>(
    weights: &Weights<T>,
    heads: Option<&HeadSet<T>>,
    query: &[u32],
    context: &[u32],
    ev: &EvictionConfig,
) -> Result<Prefill<T>> {
    if query.is_empty() {
        return Err(Error::data("query-aware prefill needs a non-empty query"));
    }
    let mut tokens = query.to_vec();
    tokens.extend_from_slice(context);
    run(weights, heads, &tokens, ev, query.len(), false)
}

fn argmax<T: Real>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding on top of a prefill. Every generated token is forwarded
/// and appended without eviction, so each head grows by exactly `max_new`.
pub fn decode<T: Real>(
    weights: &Weights<T>,
    state: &mut Prefill<T>,
    max_new: usize,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(max_new);
    let dkv = weights.config.d_kv;
    for _ in 0..max_new {
        let tok = argmax(&state.logits);
        out.push(tok);
        let acts = forward_chunk(weights, &[tok], &state.pool, Default::default())?;
        for (l, la) in acts.layers.iter().enumerate() {
            for j in 0..weights.config.kv_heads() {
                state.pool.head_mut(l, j).push(
                    state.next_position,
                    &la.k.row(0)[j * dkv..(j + 1) * dkv],
                    &la.v.row(0)[j * dkv..(j + 1) * dkv],
                    T::zero(),
                )?;
            }
        }
        state.next_position += 1;
        (state.last_hidden, state.logits) = tail_state(&acts);
    }
    Ok(out)
}
