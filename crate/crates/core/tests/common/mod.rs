#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retainkv::backbone::ModelConfig;
use retainkv::eviction::{EvictionConfig, PolicyKind, Prefill};

pub fn tiny_config(group_size: usize) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 4,
        group_size,
        d_model: 32,
        d_head: 8,
        d_kv: 8,
        d_ff: 32,
        vocab: 32,
        ..Default::default()
    }
}

pub fn random_tokens(n: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

pub fn all_policies() -> Vec<PolicyKind> {
    vec![
        PolicyKind::Locret,
        PolicyKind::LocretQ,
        PolicyKind::Random,
        PolicyKind::SinkRecent {
            sink_len: 2,
            recent_len: 8,
        },
        PolicyKind::H2oSum,
        PolicyKind::SnapkvWindow { w: 3 },
        PolicyKind::SirllmEntropy,
    ]
}

/// Replays a traced prefill and checks, per (layer, KV head):
/// budget after every eviction step and at exit, stabilizer retention at
/// every non-final step, no re-admission, and (for policies whose scores are
/// not refreshed) that a unit's stored score never changes.
pub fn check_bookkeeping(pf: &Prefill<f64>, ev: &EvictionConfig) -> Result<(), String> {
    let causal = !ev.policy.refreshes_scores();
    let mut by_head: BTreeMap<(usize, usize), BTreeMap<usize, Vec<(usize, bool, f64)>>> =
        BTreeMap::new();
    for r in &pf.trace {
        by_head
            .entry((r.layer, r.kv_head))
            .or_default()
            .entry(r.chunk_step)
            .or_default()
            .push((r.original_position, r.retained, r.score));
    }
    for ((l, j), head) in pf.pool.iter() {
        let steps = by_head
            .get(&(l, j))
            .ok_or_else(|| format!("no trace for head ({l},{j})"))?;
        let mut dropped = HashSet::new();
        let mut first: HashMap<usize, f64> = HashMap::new();
        for (&t, rows) in steps {
            let local = t == pf.steps;
            let mut positions: Vec<usize> = rows.iter().map(|r| r.0).collect();
            positions.sort_unstable();
            for &(p, kept, s) in rows {
                if dropped.contains(&p) {
                    return Err(format!("({l},{j}) step {t}: position {p} re-admitted"));
                }
                if causal {
                    let f = *first.entry(p).or_insert(s);
                    if f != s {
                        return Err(format!("({l},{j}) step {t}: score of {p} changed {f} -> {s}"));
                    }
                }
                if !kept {
                    if local {
                        return Err(format!("({l},{j}): local step dropped {p}"));
                    }
                    dropped.insert(p);
                }
            }
            let kept = rows.iter().filter(|r| r.1).count();
            let cap = if local { ev.b + ev.n_loc } else { ev.b };
            if kept > cap {
                return Err(format!("({l},{j}) step {t}: {kept} units over cap {cap}"));
            }
            if !local && t + 1 < pf.steps {
                let tail = &positions[positions.len().saturating_sub(ev.n_s)..];
                for p in tail {
                    if !rows.iter().any(|r| r.0 == *p && r.1) {
                        return Err(format!("({l},{j}) step {t}: stabilizer {p} evicted"));
                    }
                }
            }
        }
        if head.len() > ev.b + ev.n_loc {
            return Err(format!("({l},{j}): {} units at exit", head.len()));
        }
        for (&p, &s) in head.positions().iter().zip(head.scores()) {
            if dropped.contains(&p) {
                return Err(format!("({l},{j}): evicted {p} present at exit"));
            }
            if causal && first.get(&p).is_some_and(|&f| f != s) {
                return Err(format!("({l},{j}): exit score of {p} changed"));
            }
        }
    }
    Ok(())
}
