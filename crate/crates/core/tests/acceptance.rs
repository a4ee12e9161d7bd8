//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{all_policies, check_bookkeeping, random_tokens};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retainkv::backbone::{
    build_matched_filter, full_forward, matched_filter_config, ForwardOptions, ModelConfig,
    NeedleLayout, Weights, DEFAULT_MATCH_GAIN,
};
use retainkv::cache_theory::theorem_check;
use retainkv::eviction::{
    chunked_prefill_traced, chunked_prefill_with_eviction, locret_q_prefill, EvictionConfig,
    PolicyKind, StabilizerMode,
};
use retainkv::harness::report::write_csv;
use retainkv::harness::{
    compression_ratio, consistency_curve, gen_passkey_set, h2o_scores, locret_scores,
    passkey_eval, sirllm_scores, snapkv_scores, stabilizer_ablation, PasskeyTaskConfig,
    ABLATION_CSV_HEADER, ABLATION_SUMMARY_HEADER,
};
use retainkv::numerics::{finite_diff_grad, Mat, Real};
use retainkv::retaining::{
    grad_head, layer_loss_and_grad, train, HeadSet, LossReduction, RetainingHead, TrainingConfig,
};
use serde_json::json;

// A1
const A1_TOL_DOUBLE: f64 = 1e-8;
const A1_TOL_SINGLE_REL: f64 = 1e-4;
const A1_LIMIT: Duration = Duration::from_secs(30);
// A2
const A2_TOL: f64 = 1e-6;
const A2_EPS: f64 = 1e-5;
const A2_ALPHA: f64 = 2.5e-3;
const A2_LIMIT: Duration = Duration::from_secs(10);
// A3
const A3_LIMIT: Duration = Duration::from_secs(10);
// A4
const A4_LIMIT: Duration = Duration::from_secs(120);
// A5
const A5_RUNS: u64 = 50;
const A5_LIMIT: Duration = Duration::from_secs(120);
// A6 / A7
const HAYSTACK: usize = 1024;
const TRAIN_EXAMPLES: usize = 64;
const TRAIN_STEPS: usize = 300;
const TRAIN_WARMUP: usize = 200;
const TRAIN_LR: f64 = 5e-4;
const HEAD_DR: usize = 64;
const HEAD_SEED: u64 = 7;
const ORDER_SEED: u64 = 3;
const A6_B: usize = 128;
const A6_TRIALS: usize = 50;
const A6_MIN_ACCURACY: f64 = 0.9;
const A6_TASK_SEED: u64 = 5000;
const A6_LIMIT: Duration = Duration::from_secs(300);
const A7_LIMIT: Duration = Duration::from_secs(180);
// A8
const A8_LEN: usize = 4096;
const A8_B: usize = 1024;
const A8_CHUNK: usize = 512;
const A8_N_LOC: usize = 16;
const A8_GRID: [usize; 4] = [0, 32, 128, 512];
const A8_TASKS: usize = 10;
const A8_TASK_SEED: u64 = 9000;
const A8_MIN_SEEDS: usize = 7;
// A9
const A9_EXPECTED: f64 = 1747.6;
const A9_TOL_REL: f64 = 1e-3;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    ensure(t.elapsed() <= limit, format!("took {:.1?}, limit {limit:?}", t.elapsed()))
}

fn e2s(e: retainkv::Error) -> String {
    e.to_string()
}

/// ‖a − b‖∞ / max(‖b‖∞, 1).
fn rel_inf<T: Real>(a: &[T], b: &[T]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x.f64() - y.f64()).abs()).fold(0.0, f64::max);
    let n = b.iter().map(|y| y.f64().abs()).fold(1.0, f64::max);
    d / n
}

fn a1_case<T: Real>(group: usize, relative: bool, tol: f64) -> Result<f64, String> {
    let cfg = ModelConfig {
        layers: 4,
        heads: 8,
        group_size: group,
        d_head: 16,
        d_kv: 16,
        d_model: 128,
        vocab: 64,
        ..Default::default()
    };
    let w: Weights<T> = Weights::init_random(&cfg, 1).map_err(e2s)?;
    let heads: HeadSet<T> = HeadSet::random(&cfg, 32, 2).map_err(e2s)?;
    let tokens = random_tokens(256, cfg.vocab, 3);
    let query = random_tokens(8, cfg.vocab, 4);
    let mut qseq = query.clone();
    qseq.extend_from_slice(&tokens);
    let full = full_forward(&w, &tokens, ForwardOptions::default()).map_err(e2s)?;
    let full_q = full_forward(&w, &qseq, ForwardOptions::default()).map_err(e2s)?;
    let mut worst: f64 = 0.0;
    for policy in all_policies() {
        for chunk in [1, 7, 64] {
            let ev = EvictionConfig {
                b: 512,
                chunk_size: chunk,
                n_s: 64,
                n_loc: 16,
                policy: policy.clone(),
                ..Default::default()
            };
            let (pf, reference) = if policy == PolicyKind::LocretQ {
                let pf = locret_q_prefill(&w, Some(&heads), &query, &tokens, &ev).map_err(e2s)?;
                (pf, full_q.logits.row(qseq.len() - 1))
            } else {
                let pf = chunked_prefill_with_eviction(&w, Some(&heads), &tokens, &ev).map_err(e2s)?;
                (pf, full.logits.row(tokens.len() - 1))
            };
            let err = if relative {
                rel_inf(&pf.logits, reference)
            } else {
                pf.logits.iter().zip(reference).map(|(x, y)| (x.f64() - y.f64()).abs()).fold(0.0, f64::max)
            };
            ensure(err <= tol, format!("{} g={group} B={chunk}: error {err:e}", policy.name()))?;
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn a1() -> Outcome {
    let t = Instant::now();
    let mut d: f64 = 0.0;
    let mut s: f64 = 0.0;
    for g in [1, 4] {
        d = d.max(a1_case::<f64>(g, false, A1_TOL_DOUBLE)?);
        s = s.max(a1_case::<f32>(g, true, A1_TOL_SINGLE_REL)?);
    }
    within(t, A1_LIMIT)?;
    Ok(format!(
        "7 policies x B in {{1,7,64}} x g in {{1,4}}: max abs err (f64) {d:e} <= {A1_TOL_DOUBLE:e}, max rel err (f32) {s:e} <= {A1_TOL_SINGLE_REL:e}, {:.1?}",
        t.elapsed()
    ))
}

fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

fn a2() -> Outcome {
    let t = Instant::now();
    let (d_m, d_kv, kv, d_r, n_q) = (4, 4, 2, 8, 5);
    let in_dim = d_m + 2 * kv * d_kv;
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + inst);
        let mut m = |r: usize, c: usize, s: f64| Mat::from_fn(r, c, |_, _| rng.random_range(-s..s));
        let head = RetainingHead::new(m(in_dim, d_r, 0.8), m(d_r, kv, 0.8)).map_err(e2s)?;
        let x = m(n_q, in_dim, 1.5);
        let y = m(n_q, kv, 2.0);
        for reduction in [LossReduction::Sum, LossReduction::Mean] {
            let g = grad_head(&head, &x, &y, A2_ALPHA, reduction).map_err(e2s)?;
            let mut analytic = g.dw1.data().to_vec();
            analytic.extend_from_slice(g.dw2.data());
            let numeric = finite_diff_grad(
                |p| {
                    let mut h = head.clone();
                    h.set_params(p);
                    layer_loss_and_grad(&h.predict(&x).unwrap(), &y, A2_ALPHA, reduction).unwrap().0
                },
                &head.params(),
                A2_EPS,
            )
            .map_err(e2s)?;
            worst = worst.max(norm_rel(&analytic, &numeric));
        }
    }
    ensure(worst <= A2_TOL, format!("worst relative error {worst:e}"))?;
    within(t, A2_LIMIT)?;
    Ok(format!("20 instances, both reductions: worst rel err {worst:e} <= {A2_TOL:e}, {:.1?}", t.elapsed()))
}

fn a3() -> Outcome {
    let t = Instant::now();
    let r = theorem_check(1000, 64, 16, 0).map_err(e2s)?;
    ensure(r.violations_topb == 0, format!("{} top-b violations", r.violations_topb))?;
    ensure(r.violations_control >= 1, "control never violated monotone eviction")?;
    ensure(r.exhaustive_cases == 3276, format!("{} exhaustive cases", r.exhaustive_cases))?;
    within(t, A3_LIMIT)?;
    Ok(format!(
        "1000 trials + {} exhaustive: top-b violations 0, control violations {}, {:.1?}",
        r.exhaustive_cases,
        r.violations_control,
        t.elapsed()
    ))
}

fn a4() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig::default();
    let w: Weights<f64> = Weights::init_random(&cfg, 4).map_err(e2s)?;
    let heads = HeadSet::random(&cfg, 64, 4).map_err(e2s)?;
    let tokens = random_tokens(512, cfg.vocab, 4);
    let grid: Vec<usize> = (1..=8).map(|i| 64 * i).collect();
    let loc = consistency_curve("locret", |s| locret_scores(&w, &heads, s), &tokens, &grid, 0.1).map_err(e2s)?;
    let sir = consistency_curve("sirllm", |s| sirllm_scores(&w, s), &tokens, &grid, 0.1).map_err(e2s)?;
    let h2o = consistency_curve("h2o", |s| h2o_scores(&w, s), &tokens, &grid, 0.1).map_err(e2s)?;
    let snap = consistency_curve("snapkv", |s| snapkv_scores(&w, s, 32), &tokens, &grid, 0.1).map_err(e2s)?;
    for r in [&loc, &sir] {
        let all_one = r.per_head.iter().flatten().flatten().all(|&v| v == 1.0);
        ensure(all_one, format!("{} below 1: {:?}", r.scorer, r.mean))?;
    }
    for r in [&h2o, &snap] {
        ensure(r.mean.iter().any(|&v| v < 1.0), format!("{} never below 1", r.scorer))?;
    }
    within(t, A4_LIMIT)?;
    let minv = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "locret/sirllm = 1 at all 8 prefixes; min mean h2o {:.3}, snapkv {:.3}, {:.1?}",
        minv(&h2o.mean),
        minv(&snap.mean),
        t.elapsed()
    ))
}

fn a5() -> Outcome {
    let t = Instant::now();
    let policies = all_policies();
    let mut causal = 0;
    for run in 0..A5_RUNS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + run);
        let group = [1, 2, 4][rng.random_range(0..3)];
        let cfg = ModelConfig {
            layers: 2,
            heads: 4,
            group_size: group,
            d_model: 32,
            d_head: 8,
            d_kv: 8,
            d_ff: 32,
            vocab: 32,
            ..Default::default()
        };
        let w: Weights<f64> = Weights::init_random(&cfg, run).map_err(e2s)?;
        let heads = HeadSet::random(&cfg, 8, run).map_err(e2s)?;
        let len = rng.random_range(40..200);
        let b = rng.random_range(4..40);
        let ev = EvictionConfig {
            b,
            chunk_size: rng.random_range(1..32),
            n_s: rng.random_range(0..=b),
            n_loc: rng.random_range(0..12),
            policy: policies[run as usize % policies.len()].clone(),
            stabilizers: if rng.random::<bool>() { StabilizerMode::Persistent } else { StabilizerMode::Transient },
            seed: run,
        };
        let tokens = random_tokens(len, cfg.vocab, run);
        let pf = chunked_prefill_traced(&w, Some(&heads), &tokens, &ev).map_err(e2s)?;
        check_bookkeeping(&pf, &ev).map_err(|e| format!("run {run} ({}): {e}", ev.policy.name()))?;
        causal += usize::from(!ev.policy.refreshes_scores());
    }
    within(t, A5_LIMIT)?;
    Ok(format!(
        "{A5_RUNS} runs: budget, stabilizers, no re-admission; frozen scores on the {causal} causal-policy runs, {:.1?}",
        t.elapsed()
    ))
}

struct Trained {
    weights: Weights<f64>,
    heads: HeadSet<f64>,
    losses: Vec<f64>,
    hash_before: String,
    hash_after: String,
    elapsed: Duration,
}

fn train_shared() -> Result<Trained, String> {
    let t = Instant::now();
    let mcfg = matched_filter_config();
    let weights: Weights<f64> = build_matched_filter(&mcfg, DEFAULT_MATCH_GAIN).map_err(e2s)?;
    let layout = NeedleLayout::for_vocab(mcfg.vocab).map_err(e2s)?;
    let task = PasskeyTaskConfig {
        haystack_len: HAYSTACK,
        ..Default::default()
    };
    let data: Vec<_> = gen_passkey_set(&task, &layout, TRAIN_EXAMPLES)
        .map_err(e2s)?
        .into_iter()
        .map(|i| i.example)
        .collect();
    let tcfg = TrainingConfig {
        lr: TRAIN_LR,
        total_steps: TRAIN_STEPS,
        warmup_steps: TRAIN_WARMUP,
        d_r: HEAD_DR,
        seq_cap: HAYSTACK,
        ..Default::default()
    };
    let hash_before = weights.fingerprint().map_err(e2s)?;
    let init = HeadSet::random(&weights.config, HEAD_DR, HEAD_SEED).map_err(e2s)?;
    let (heads, losses) = train(init, &weights, &data, &tcfg, ORDER_SEED).map_err(e2s)?;
    let hash_after = weights.fingerprint().map_err(e2s)?;
    Ok(Trained {
        weights,
        heads,
        losses,
        hash_before,
        hash_after,
        elapsed: t.elapsed(),
    })
}

fn a6(tr: &Trained) -> Outcome {
    let t = Instant::now();
    let task = PasskeyTaskConfig {
        haystack_len: HAYSTACK,
        seed: A6_TASK_SEED,
        ..Default::default()
    };
    let ev = |policy| EvictionConfig {
        b: A6_B,
        chunk_size: 128,
        n_s: 16,
        n_loc: 16,
        policy,
        ..Default::default()
    };
    let loc = passkey_eval(&tr.weights, Some(&tr.heads), &ev(PolicyKind::Locret), &[A6_B], &task, A6_TRIALS).map_err(e2s)?;
    let rnd = passkey_eval(&tr.weights, None, &ev(PolicyKind::Random), &[A6_B], &task, A6_TRIALS).map_err(e2s)?;
    let (l, r) = (&loc[0], &rnd[0]);
    ensure(l.compression == 8.0, format!("compression {}", l.compression))?;
    ensure(l.accuracy >= A6_MIN_ACCURACY, format!("locret accuracy {}", l.accuracy))?;
    // the matcher and retrieval KV heads carry the needle; the previous-token head does not
    for j in [0, 1] {
        let kept = l.needle_retained_layer0[j] as f64 / A6_TRIALS as f64;
        ensure(kept >= A6_MIN_ACCURACY, format!("needle kept on layer-0 KV head {j} in {kept}"))?;
    }
    ensure(r.accuracy < l.accuracy, format!("random {} not below locret {}", r.accuracy, l.accuracy))?;
    let total = tr.elapsed + t.elapsed();
    ensure(total <= A6_LIMIT, format!("train + eval took {total:.1?}"))?;
    Ok(format!(
        "8x: locret {}/{A6_TRIALS} (needle kept on layer-0 KV heads {:?}), random {}/{A6_TRIALS}, {total:.1?} incl. training",
        l.correct, l.needle_retained_layer0, r.correct
    ))
}

fn a7(tr: &Trained) -> Outcome {
    let first = tr.losses[0];
    let last = *tr.losses.last().unwrap();
    ensure(tr.losses.len() == TRAIN_STEPS, format!("{} steps", tr.losses.len()))?;
    ensure(last < first, format!("final loss {last:e} not below initial {first:e}"))?;
    ensure(tr.hash_before == tr.hash_after, "backbone hash changed")?;
    ensure(tr.elapsed <= A7_LIMIT, format!("training took {:.1?}", tr.elapsed))?;
    Ok(format!(
        "loss {first:.4e} -> {last:.4e} over {TRAIN_STEPS} steps, backbone hash unchanged, {:.1?}",
        tr.elapsed
    ))
}

fn a8(tr: &Trained) -> Outcome {
    let t = Instant::now();
    let layout = NeedleLayout::for_vocab(tr.weights.config.vocab).map_err(e2s)?;
    let base = EvictionConfig {
        b: A8_B,
        chunk_size: A8_CHUNK,
        n_s: 0,
        n_loc: A8_N_LOC,
        policy: PolicyKind::Locret,
        ..Default::default()
    };

    // hard: nothing is lost when the budget covers the prompt
    let small = PasskeyTaskConfig {
        haystack_len: 1024,
        seed: A8_TASK_SEED,
        ..Default::default()
    };
    let tasks = gen_passkey_set(&small, &layout, 3).map_err(e2s)?;
    let full = EvictionConfig { b: 1024, ..base.clone() };
    let exact = stabilizer_ablation(&tr.weights, &tr.heads, &tasks, &full, &A8_GRID).map_err(e2s)?;
    for r in &exact.rows {
        ensure(
            r.hidden_error == 0.0 && r.cis_error == 0.0,
            format!("b >= len, n_s {} task {}: errors {:e} / {:e}", r.n_s, r.task, r.hidden_error, r.cis_error),
        )?;
    }

    let task = PasskeyTaskConfig {
        haystack_len: A8_LEN,
        seed: A8_TASK_SEED,
        ..Default::default()
    };
    let tasks = gen_passkey_set(&task, &layout, A8_TASKS).map_err(e2s)?;
    let rep = stabilizer_ablation(&tr.weights, &tr.heads, &tasks, &base, &A8_GRID).map_err(e2s)?;
    let echo = json!({ "len": A8_LEN, "b": A8_B, "B": A8_CHUNK, "n_loc": A8_N_LOC, "tasks": A8_TASKS, "task_seed": A8_TASK_SEED });
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR"));
    write_csv(dir.join("stabilizer_ablation.csv"), &echo, ABLATION_CSV_HEADER, &rep.csv_rows()).map_err(e2s)?;
    write_csv(dir.join("stabilizer_ablation_summary.csv"), &echo, ABLATION_SUMMARY_HEADER, &rep.summary_rows()).map_err(e2s)?;

    let err = |n_s: usize, task: usize| {
        rep.rows.iter().find(|r| r.n_s == n_s && r.task == task).map(|r| r.hidden_error).unwrap()
    };
    let wins = (0..A8_TASKS).filter(|&k| err(0, k) >= err(512, k)).count();
    ensure(wins >= A8_MIN_SEEDS, format!("n_s=0 error >= n_s=512 error in {wins}/{A8_TASKS} seeds"))?;
    let acc: Vec<String> = rep.summary.iter().map(|s| format!("{}:{:.1}", s.n_s, s.accuracy)).collect();
    Ok(format!(
        "b>=len errors all 0; n_s=0 >= n_s=512 hidden error in {wins}/{A8_TASKS} seeds; accuracy {}; CSV in {}, {:.1?}",
        acc.join(" "),
        dir.display(),
        t.elapsed()
    ))
}

fn a9() -> Outcome {
    let r = compression_ratio(10_485_760, 6000).map_err(e2s)?;
    let rel = (r - A9_EXPECTED).abs() / A9_EXPECTED;
    ensure(rel <= A9_TOL_REL, format!("{r} vs {A9_EXPECTED}"))?;
    Ok(format!("{r:.2}x, rel diff {rel:.1e} <= {A9_TOL_REL:e}"))
}

fn record(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(msg)
    });
    match res {
        Ok(d) => {
            println!("{name} PASS  {d}");
            true
        }
        Err(e) => {
            println!("{name} FAIL  {e}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= record("A1", a1);
    ok &= record("A2", a2);
    ok &= record("A3", a3);
    ok &= record("A4", a4);
    ok &= record("A5", a5);
    match train_shared() {
        Ok(tr) => {
            ok &= record("A6", || a6(&tr));
            ok &= record("A7", || a7(&tr));
            ok &= record("A8", || a8(&tr));
        }
        Err(e) => {
            for name in ["A6", "A7", "A8"] {
                println!("{name} FAIL  head training failed: {e}");
            }
            ok = false;
        }
    }
    ok &= record("A9", a9);
    if !ok {
        std::process::exit(1);
    }
}
