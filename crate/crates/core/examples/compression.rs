//! Compression ratios for a few prompt lengths and budgets.

use retainkv::harness::compression_ratio;

fn main() -> retainkv::Result<()> {
    for (len, b) in [(1024, 128), (4096, 1024), (131_072, 6000), (10_485_760, 6000)] {
        println!("{len:>10} tokens, b = {b:>5}: {:>8.1}x", compression_ratio(len, b)?);
    }
    Ok(())
}
