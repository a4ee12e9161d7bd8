//! Which positions one KV head keeps after each chunk, as a text heat map.

use retainkv::backbone::{build_matched_filter, matched_filter_config, NeedleLayout, Weights, DEFAULT_MATCH_GAIN};
use retainkv::eviction::{chunked_prefill_traced, EvictionConfig, PolicyKind};
use retainkv::harness::{gen_passkey, trace_retained, PasskeyTaskConfig};

fn main() -> retainkv::Result<()> {
    let mcfg = matched_filter_config();
    let w: Weights<f64> = build_matched_filter(&mcfg, DEFAULT_MATCH_GAIN)?;
    let layout = NeedleLayout::for_vocab(mcfg.vocab)?;
    let inst = gen_passkey(&PasskeyTaskConfig { haystack_len: 256, ..Default::default() }, &layout)?;
    let ev = EvictionConfig {
        b: 32,
        chunk_size: 32,
        n_s: 8,
        n_loc: 8,
        policy: PolicyKind::H2oSum,
        ..Default::default()
    };
    let pf = chunked_prefill_traced(&w, None, &inst.example.prompt, &ev)?;
    let tm = trace_retained(&pf.trace, 0, 1)?;
    println!("needle at {:?}; one column per 4 positions", inst.needle_positions);
    for (t, row) in tm.rows.iter().enumerate() {
        let line: String = row
            .chunks(4)
            .map(|c| if c.iter().any(|&v| v == 1) { '#' } else { '.' })
            .collect();
        println!("{t:>2} {line}");
    }
    Ok(())
}
