use serde::{Deserialize, Serialize};

use crate::backbone::{full_forward, ForwardOptions, NeedleLayout, Weights};
use crate::error::{Error, Result};
use crate::eviction::{
    chunked_prefill_with_eviction, decode, locret_q_prefill, EvictionConfig, PolicyKind, Prefill,
};
use crate::numerics::{Mat, Real};
use crate::retaining::HeadSet;

use super::{gen_passkey, PasskeyInstance, PasskeyTaskConfig};

/// Processed length over per-head budget.
pub fn compression_ratio(prompt_len: usize, b: usize) -> Result<f64> {
    if b == 0 {
        return Err(Error::config("budget must be at least 1"));
    }
    Ok(prompt_len as f64 / b as f64)
}

/// Prefill of one passkey prompt under `ev`. Query-aware policies get the
/// closing marker as their query.
pub fn prefill_passkey<T: Real>(
    weights: &Weights<T>,
    heads: Option<&HeadSet<T>>,
    inst: &PasskeyInstance,
    ev: &EvictionConfig,
) -> Result<Prefill<T>> {
    let prompt = &inst.example.prompt;
    if ev.policy == PolicyKind::LocretQ {
        let (ctx, query) = prompt.split_at(prompt.len() - 1);
        locret_q_prefill(weights, heads, query, ctx, ev)
    } else {
        chunked_prefill_with_eviction(weights, heads, prompt, ev)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasskeyRow {
    pub policy: String,
    pub b: usize,
    pub compression: f64,
    pub trials: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Per layer-0 KV head: trials where every needle unit survived prefill.
    pub needle_retained_layer0: Vec<usize>,
    pub task_seeds: Vec<u64>,
}

/// Greedy-decode accuracy per budget over `trials` seeded instances
/// (task seeds `task.seed + i`, eviction seeds `ev.seed + i`).
pub fn passkey_eval<T: Real>(
    weights: &Weights<T>,
    heads: Option<&HeadSet<T>>,
    ev: &EvictionConfig,
    budgets: &[usize],
    task: &PasskeyTaskConfig,
    trials: usize,
) -> Result<Vec<PasskeyRow>> {
    passkey_eval_jobs(weights, heads, ev, budgets, task, trials, 1)
}

/// [`passkey_eval`] with trials spread over `jobs` threads. Results do not
/// depend on `jobs`.
pub fn passkey_eval_jobs<T: Real>(
    weights: &Weights<T>,
    heads: Option<&HeadSet<T>>,
    ev: &EvictionConfig,
    budgets: &[usize],
    task: &PasskeyTaskConfig,
    trials: usize,
    jobs: usize,
) -> Result<Vec<PasskeyRow>> {
    if trials == 0 {
        return Err(Error::config("passkey_eval needs at least one trial"));
    }
    let layout = NeedleLayout::for_vocab(weights.config.vocab)?;
    let insts: Vec<PasskeyInstance> = (0..trials as u64)
        .map(|i| {
            gen_passkey(
                &PasskeyTaskConfig {
                    seed: task.seed.wrapping_add(i),
                    ..task.clone()
                },
                &layout,
            )
        })
        .collect::<Result<_>>()?;
    let kvh = weights.config.kv_heads();
    let mut rows = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let outcomes = par_map(insts.len(), jobs, |i| {
            let inst = &insts[i];
            let ev_i = EvictionConfig {
                b,
                seed: ev.seed.wrapping_add(i as u64),
                ..ev.clone()
            };
            let mut pf = prefill_passkey(weights, heads, inst, &ev_i)?;
            let kept: Vec<bool> = (0..kvh)
                .map(|j| {
                    let pos = pf.pool.head(0, j).positions();
                    inst.needle_positions.iter().all(|p| pos.binary_search(p).is_ok())
                })
                .collect();
            let ok = decode(weights, &mut pf, inst.expected.len())? == inst.expected;
            Ok((ok, kept))
        })?;
        let mut correct = 0;
        let mut kept = vec![0; kvh];
        for (ok, k) in outcomes {
            correct += usize::from(ok);
            for (acc, hit) in kept.iter_mut().zip(k) {
                *acc += usize::from(hit);
            }
        }
        rows.push(PasskeyRow {
            policy: ev.policy.name().into(),
            b,
            compression: compression_ratio(task.haystack_len, b)?,
            trials,
            correct,
            accuracy: correct as f64 / trials as f64,
            needle_retained_layer0: kept,
            task_seeds: (0..trials as u64).map(|i| task.seed.wrapping_add(i)).collect(),
        });
    }
    Ok(rows)
}

/// Maps `f` over `0..n` on up to `jobs` scoped threads, keeping index order.
/// The first error by index wins.
fn par_map<R: Send>(
    n: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(&f).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                let f = &f;
                s.spawn(move || {
                    (w..n)
                        .step_by(jobs)
                        .map(|i| (i, f(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every index visited")).collect()
}

pub const PASSKEY_CSV_HEADER: &str = "policy,b,compression,trials,correct,accuracy";

impl PasskeyRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.policy, self.b, self.compression, self.trials, self.correct, self.accuracy
        )
    }
}

/// One (n_s, task) cell of the stabilizer ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub n_s: usize,
    pub task: usize,
    pub correct: bool,
    /// max |h_evicted − h_full| over layers at the last prompt position.
    pub hidden_error: f64,
    /// mean |stored score − full-context prediction| over retained units.
    pub cis_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub n_s: usize,
    pub accuracy: f64,
    pub mean_hidden_error: f64,
    pub mean_cis_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
}

pub const ABLATION_CSV_HEADER: &str = "n_s,task,correct,hidden_error,cis_error";
pub const ABLATION_SUMMARY_HEADER: &str = "n_s,accuracy,mean_hidden_error,mean_cis_error";

impl AblationReport {
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{:e},{:e}",
                    r.n_s,
                    r.task,
                    u8::from(r.correct),
                    r.hidden_error,
                    r.cis_error
                )
            })
            .collect()
    }

    pub fn summary_rows(&self) -> Vec<String> {
        self.summary
            .iter()
            .map(|s| {
                format!(
                    "{},{},{:e},{:e}",
                    s.n_s, s.accuracy, s.mean_hidden_error, s.mean_cis_error
                )
            })
            .collect()
    }
}

/// Runs the pipeline for every `n_s` in `grid` on every task and compares
/// against an uncompressed forward computed once per task.
pub fn stabilizer_ablation<T: Real>(
    weights: &Weights<T>,
    heads: &HeadSet<T>,
    tasks: &[PasskeyInstance],
    base: &EvictionConfig,
    grid: &[usize],
) -> Result<AblationReport> {
    stabilizer_ablation_jobs(weights, heads, tasks, base, grid, 1)
}

/// [`stabilizer_ablation`] with tasks spread over `jobs` threads.
pub fn stabilizer_ablation_jobs<T: Real>(
    weights: &Weights<T>,
    heads: &HeadSet<T>,
    tasks: &[PasskeyInstance],
    base: &EvictionConfig,
    grid: &[usize],
    jobs: usize,
) -> Result<AblationReport> {
    if let Some(&bad) = grid.iter().find(|&&n_s| n_s > base.b) {
        return Err(Error::config(format!("n_s {bad} exceeds budget {}", base.b)));
    }
    let refs = par_map(tasks.len(), jobs, |i| {
        let prompt = &tasks[i].example.prompt;
        let acts = full_forward(weights, prompt, ForwardOptions::default())?;
        let n = prompt.len();
        let hidden: Vec<Vec<T>> = acts.layers.iter().map(|la| la.hidden.row(n - 1).to_vec()).collect();
        let preds: Vec<Mat<T>> = acts
            .layers
            .iter()
            .zip(&heads.heads)
            .map(|(la, h)| h.predict(&la.qkv_block(0, n)))
            .collect::<Result<_>>()?;
        Ok((hidden, preds))
    })?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &n_s in grid {
        let ev = EvictionConfig {
            n_s,
            ..base.clone()
        };
        let cells = par_map(tasks.len(), jobs, |ti| {
            let inst = &tasks[ti];
            let (hidden, preds) = &refs[ti];
            let mut pf = prefill_passkey(weights, Some(heads), inst, &ev)?;
            let mut herr: f64 = 0.0;
            for (a, b) in pf.last_hidden.iter().zip(hidden) {
                for (x, y) in a.iter().zip(b) {
                    herr = herr.max((x.f64() - y.f64()).abs());
                }
            }
            let (mut cerr, mut units) = (0.0, 0usize);
            for ((l, j), head) in pf.pool.iter() {
                for (&p, &s) in head.positions().iter().zip(head.scores()) {
                    cerr += (s.f64() - preds[l].get(p, j).f64()).abs();
                    units += 1;
                }
            }
            let correct = decode(weights, &mut pf, inst.expected.len())? == inst.expected;
            Ok(AblationRow {
                n_s,
                task: ti,
                correct,
                hidden_error: herr,
                cis_error: cerr / units.max(1) as f64,
            })
        })?;
        let k = tasks.len().max(1) as f64;
        summary.push(AblationSummary {
            n_s,
            accuracy: cells.iter().filter(|r| r.correct).count() as f64 / k,
            mean_hidden_error: cells.iter().map(|r| r.hidden_error).sum::<f64>() / k,
            mean_cis_error: cells.iter().map(|r| r.cis_error).sum::<f64>() / k,
        });
        rows.extend(cells);
    }
    Ok(AblationReport { rows, summary })
}
