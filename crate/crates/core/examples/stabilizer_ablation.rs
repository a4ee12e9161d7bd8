//! Sweeps the stabilizer length and reports how far the last hidden state
//! drifts from an uncompressed forward.

use retainkv::backbone::{build_matched_filter, matched_filter_config, NeedleLayout, Weights, DEFAULT_MATCH_GAIN};
use retainkv::eviction::EvictionConfig;
use retainkv::harness::{gen_passkey_set, stabilizer_ablation, PasskeyTaskConfig};
use retainkv::retaining::{train, HeadSet, TrainingConfig};

fn main() -> retainkv::Result<()> {
    let mcfg = matched_filter_config();
    let w: Weights<f64> = build_matched_filter(&mcfg, DEFAULT_MATCH_GAIN)?;
    let layout = NeedleLayout::for_vocab(mcfg.vocab)?;
    let task = PasskeyTaskConfig { haystack_len: 512, ..Default::default() };
    let data: Vec<_> = gen_passkey_set(&task, &layout, 16)?.into_iter().map(|i| i.example).collect();
    let tcfg = TrainingConfig { total_steps: 60, warmup_steps: 30, d_r: 32, seq_cap: 512, ..Default::default() };
    let (heads, _) = train(HeadSet::random(&w.config, tcfg.d_r, 7)?, &w, &data, &tcfg, 3)?;

    let tasks = gen_passkey_set(&PasskeyTaskConfig { seed: 900, ..task }, &layout, 4)?;
    let base = EvictionConfig { b: 128, chunk_size: 64, n_s: 0, n_loc: 16, ..Default::default() };
    let rep = stabilizer_ablation(&w, &heads, &tasks, &base, &[0, 16, 64, 128])?;
    println!("n_s  accuracy  hidden_err  cis_err");
    for s in &rep.summary {
        println!(
            "{:<4} {:>8.2}  {:>10.4}  {:>7.3}",
            s.n_s, s.accuracy, s.mean_hidden_error, s.mean_cis_error
        );
    }
    Ok(())
}
