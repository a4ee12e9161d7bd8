//! Fits retaining heads to CIS labels of the matched-filter backbone and
//! prints the loss curve.

use retainkv::backbone::{build_matched_filter, matched_filter_config, NeedleLayout, Weights, DEFAULT_MATCH_GAIN};
use retainkv::harness::{gen_passkey_set, PasskeyTaskConfig};
use retainkv::retaining::{train, HeadSet, TrainingConfig, TrainingExample};

fn main() -> retainkv::Result<()> {
    let mcfg = matched_filter_config();
    let w: Weights<f64> = build_matched_filter(&mcfg, DEFAULT_MATCH_GAIN)?;
    let layout = NeedleLayout::for_vocab(mcfg.vocab)?;
    let task = PasskeyTaskConfig { haystack_len: 256, ..Default::default() };
    let data: Vec<TrainingExample> = gen_passkey_set(&task, &layout, 16)?
        .into_iter()
        .map(|i| i.example)
        .collect();

    let tcfg = TrainingConfig {
        total_steps: 80,
        warmup_steps: 40,
        d_r: 32,
        seq_cap: 256,
        ..Default::default()
    };
    let heads = HeadSet::random(&w.config, tcfg.d_r, 7)?;
    let before = w.fingerprint()?;
    let (_trained, losses) = train(heads, &w, &data, &tcfg, 3)?;
    for (i, l) in losses.iter().enumerate().step_by(10) {
        println!("step {:>3}  loss {l:.1}", i + 1);
    }
    println!("backbone unchanged: {}", before == w.fingerprint()?);
    Ok(())
}
