//! Passkey retrieval at 8x compression: trained retaining heads against
//! random eviction on the matched-filter backbone.
//!
//! Takes a minute or two in release mode.

use retainkv::backbone::{build_matched_filter, matched_filter_config, NeedleLayout, Weights, DEFAULT_MATCH_GAIN};
use retainkv::eviction::{EvictionConfig, PolicyKind};
use retainkv::harness::{gen_passkey_set, passkey_eval, PasskeyTaskConfig};
use retainkv::retaining::{train, HeadSet, TrainingConfig};

fn main() -> retainkv::Result<()> {
    let mcfg = matched_filter_config();
    let w: Weights<f64> = build_matched_filter(&mcfg, DEFAULT_MATCH_GAIN)?;
    let layout = NeedleLayout::for_vocab(mcfg.vocab)?;
    let task = PasskeyTaskConfig { haystack_len: 1024, ..Default::default() };
    let data: Vec<_> = gen_passkey_set(&task, &layout, 64)?.into_iter().map(|i| i.example).collect();

    let tcfg = TrainingConfig {
        total_steps: 300,
        warmup_steps: 200,
        d_r: 64,
        seq_cap: 1024,
        ..Default::default()
    };
    let (heads, _) = train(HeadSet::random(&w.config, tcfg.d_r, 7)?, &w, &data, &tcfg, 3)?;

    let eval_task = PasskeyTaskConfig { seed: 5000, ..task };
    for policy in [PolicyKind::Locret, PolicyKind::Random] {
        let ev = EvictionConfig { b: 128, chunk_size: 128, n_s: 16, n_loc: 16, policy, ..Default::default() };
        for row in passkey_eval(&w, Some(&heads), &ev, &[128, 256], &eval_task, 20)? {
            println!(
                "{:<8} b={:<4} {:>4.0}x  accuracy {:.2}",
                row.policy, row.b, row.compression, row.accuracy
            );
        }
    }
    Ok(())
}
