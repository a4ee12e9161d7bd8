//! How well each scorer's top-10% set on a prefix agrees with its top set
//! once the whole sequence is visible.

use retainkv::backbone::{build_matched_filter, matched_filter_config, NeedleLayout, Weights, DEFAULT_MATCH_GAIN};
use retainkv::harness::{consistency_curve, gen_passkey, h2o_scores, locret_scores, sirllm_scores, snapkv_scores, PasskeyTaskConfig};
use retainkv::retaining::HeadSet;

fn main() -> retainkv::Result<()> {
    let mcfg = matched_filter_config();
    let w: Weights<f64> = build_matched_filter(&mcfg, DEFAULT_MATCH_GAIN)?;
    let layout = NeedleLayout::for_vocab(mcfg.vocab)?;
    let task = PasskeyTaskConfig { haystack_len: 512, ..Default::default() };
    let tokens = gen_passkey(&task, &layout)?.example.prompt;
    // untrained heads are still causal, so their curve is flat at 1
    let heads = HeadSet::random(&w.config, 16, 0)?;
    let grid: Vec<usize> = (1..=8).map(|i| 64 * i).collect();

    let reports = [
        consistency_curve("locret", |t| locret_scores(&w, &heads, t), &tokens, &grid, 0.1)?,
        consistency_curve("sirllm", |t| sirllm_scores(&w, t), &tokens, &grid, 0.1)?,
        consistency_curve("h2o", |t| h2o_scores(&w, t), &tokens, &grid, 0.1)?,
        consistency_curve("snapkv", |t| snapkv_scores(&w, t, 32), &tokens, &grid, 0.1)?,
    ];
    print!("{:<8}", "m");
    for m in &grid {
        print!("{m:>6}");
    }
    println!();
    for r in &reports {
        print!("{:<8}", r.scorer);
        for v in &r.mean {
            print!("{v:>6.2}");
        }
        println!();
    }
    Ok(())
}
