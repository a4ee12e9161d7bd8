//! Save, reload and fingerprint backbone weights and a retaining headset.

use retainkv::backbone::{ModelConfig, Weights};
use retainkv::retaining::HeadSet;

fn main() -> retainkv::Result<()> {
    let dir = std::env::temp_dir();
    let cfg = ModelConfig::default();
    let w: Weights<f64> = Weights::init_random(&cfg, 11)?;
    let path = dir.join("retainkv_example_weights.rkv");
    w.save(&path)?;
    let back: Weights<f64> = Weights::load(&path)?;
    println!("weights {}", w.fingerprint()?);
    println!("reloaded {}", back.fingerprint()?);

    let heads: HeadSet<f64> = HeadSet::random(&cfg, 32, 0)?;
    let hpath = dir.join("retainkv_example_heads.rkv");
    heads.save(&hpath)?;
    let hb: HeadSet<f64> = HeadSet::load(&hpath)?;
    println!("headset layers {} d_r {}", hb.len(), hb.heads[0].d_r());
    Ok(())
}
