use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Mat, Real};

use super::container::Container;
use super::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    /// d_model × heads·d_head, head `i` in columns `i·d_head..`.
    pub wq: Mat<T>,
    /// d_model × kv_heads·d_kv.
    pub wk: Mat<T>,
    pub wv: Mat<T>,
    /// heads·d_kv × d_model.
    pub wo: Mat<T>,
    pub w_gate: Mat<T>,
    pub w_up: Mat<T>,
    pub w_down: Mat<T>,
    pub attn_norm: Vec<T>,
    pub ffn_norm: Vec<T>,
}

/// Frozen backbone parameters. Nothing in the crate mutates these after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub config: ModelConfig,
    pub layers: Vec<LayerWeights<T>>,
    pub embed: Mat<T>,
    pub unembed: Mat<T>,
    pub final_norm: Vec<T>,
}

impl<T: Real> LayerWeights<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let dm = cfg.d_model;
        LayerWeights {
            wq: Mat::zeros(dm, cfg.q_width()),
            wk: Mat::zeros(dm, cfg.kv_width()),
            wv: Mat::zeros(dm, cfg.kv_width()),
            wo: Mat::zeros(cfg.heads * cfg.d_kv, dm),
            w_gate: Mat::zeros(dm, cfg.d_ff),
            w_up: Mat::zeros(dm, cfg.d_ff),
            w_down: Mat::zeros(cfg.d_ff, dm),
            attn_norm: vec![T::one(); dm],
            ffn_norm: vec![T::one(); dm],
        }
    }
}

impl<T: Real> Weights<T> {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Weights {
            config: cfg.clone(),
            layers: (0..cfg.layers).map(|_| LayerWeights::zeros(cfg)).collect(),
            embed: Mat::zeros(cfg.vocab, cfg.d_model),
            unembed: Mat::zeros(cfg.d_model, cfg.vocab),
            final_norm: vec![T::one(); cfg.d_model],
        })
    }

    /// Scaled-normal initialisation with std `d_model^-1/2`; norm gains are one.
    pub fn init_random(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (cfg.d_model as f64).powf(-0.5))
            .map_err(|e| Error::config(e.to_string()))?;
        let mut fill = |m: &mut Mat<T>| {
            for v in m.data_mut() {
                *v = T::of(normal.sample(&mut rng));
            }
        };
        fill(&mut w.embed);
        for l in &mut w.layers {
            fill(&mut l.wq);
            fill(&mut l.wk);
            fill(&mut l.wv);
            fill(&mut l.wo);
            fill(&mut l.w_gate);
            fill(&mut l.w_up);
            fill(&mut l.w_down);
        }
        fill(&mut w.unembed);
        Ok(w)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.metadata
            .insert("model_config".into(), serde_json::to_string(&self.config)?);
        c.insert_mat("embed", &self.embed);
        c.insert_mat("unembed", &self.unembed);
        c.insert_vec("final_norm", &self.final_norm);
        for (i, l) in self.layers.iter().enumerate() {
            c.insert_mat(&format!("layer{i}.wq"), &l.wq);
            c.insert_mat(&format!("layer{i}.wk"), &l.wk);
            c.insert_mat(&format!("layer{i}.wv"), &l.wv);
            c.insert_mat(&format!("layer{i}.wo"), &l.wo);
            c.insert_mat(&format!("layer{i}.w_gate"), &l.w_gate);
            c.insert_mat(&format!("layer{i}.w_up"), &l.w_up);
            c.insert_mat(&format!("layer{i}.w_down"), &l.w_down);
            c.insert_vec(&format!("layer{i}.attn_norm"), &l.attn_norm);
            c.insert_vec(&format!("layer{i}.ffn_norm"), &l.ffn_norm);
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(
            c.metadata
                .get("model_config")
                .ok_or_else(|| Error::Format("weights file lacks model_config metadata".into()))?,
        )?;
        cfg.validate()?;
        let dm = cfg.d_model;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            layers.push(LayerWeights {
                wq: c.mat(&format!("layer{i}.wq"), dm, cfg.q_width())?,
                wk: c.mat(&format!("layer{i}.wk"), dm, cfg.kv_width())?,
                wv: c.mat(&format!("layer{i}.wv"), dm, cfg.kv_width())?,
                wo: c.mat(&format!("layer{i}.wo"), cfg.heads * cfg.d_kv, dm)?,
                w_gate: c.mat(&format!("layer{i}.w_gate"), dm, cfg.d_ff)?,
                w_up: c.mat(&format!("layer{i}.w_up"), dm, cfg.d_ff)?,
                w_down: c.mat(&format!("layer{i}.w_down"), cfg.d_ff, dm)?,
                attn_norm: c.vec(&format!("layer{i}.attn_norm"), dm)?,
                ffn_norm: c.vec(&format!("layer{i}.ffn_norm"), dm)?,
            });
        }
        Ok(Weights {
            embed: c.mat("embed", cfg.vocab, dm)?,
            unembed: c.mat("unembed", dm, cfg.vocab)?,
            final_norm: c.vec("final_norm", dm)?,
            layers,
            config: cfg,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// SHA-256 of the serialised container, hex encoded.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = self.to_container()?.to_bytes()?;
        Ok(hex_digest(&bytes))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::default();
        let a = Weights::<f64>::init_random(&cfg, 1).unwrap();
        let b = Weights::<f64>::init_random(&cfg, 1).unwrap();
        assert_eq!(a, b);
        let c = Weights::<f64>::init_random(&cfg, 2).unwrap();
        assert_ne!(a.embed, c.embed);
    }

    #[test]
    fn embedding_scale_matches_init_law() {
        let cfg = ModelConfig::default();
        let w = Weights::<f64>::init_random(&cfg, 5).unwrap();
        let std = (cfg.d_model as f64).powf(-0.5);
        let expected = std * (2.0 / std::f64::consts::PI).sqrt();
        let mean_abs =
            w.embed.data().iter().map(|x| x.abs()).sum::<f64>() / w.embed.data().len() as f64;
        assert!(mean_abs > 0.5 * expected && mean_abs < 1.5 * expected, "{mean_abs}");
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let cfg = ModelConfig {
            layers: 2,
            ..ModelConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        for seed in [0, 9] {
            let w = Weights::<f32>::init_random(&cfg, seed).unwrap();
            let p = dir.path().join("w.rkv");
            w.save(&p).unwrap();
            let back = Weights::<f32>::load(&p).unwrap();
            assert_eq!(w, back);
            assert_eq!(w.fingerprint().unwrap(), back.fingerprint().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), back.to_container().unwrap().to_bytes().unwrap());
        }
    }

    #[test]
    fn wrong_shapes_are_rejected_on_load() {
        let cfg = ModelConfig {
            layers: 1,
            ..ModelConfig::default()
        };
        let w = Weights::<f64>::init_random(&cfg, 0).unwrap();
        let mut c = w.to_container().unwrap();
        c.insert_mat("layer0.wq", &Mat::<f64>::zeros(3, 3));
        assert!(matches!(Weights::<f64>::from_container(&c), Err(Error::Shape(_))));
    }
}
