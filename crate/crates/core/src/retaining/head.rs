use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::{Container, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{matmul, silu, Mat, Real};

/// Per-layer scorer `S̃ = silu([Q, K, V]·W1)·W2`, one output per KV head.
///
/// The input row is the token's full pre-RoPE query, key and value
/// projections of that layer, concatenated in that order, so every KV head's
/// score can draw on all heads of the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RetainingHead<T> {
    /// `in_dim × d_r`
    pub w1: Mat<T>,
    /// `d_r × kv_heads`
    pub w2: Mat<T>,
}

/// Intermediate values of a batched head evaluation, kept for backprop.
#[derive(Clone, Debug)]
pub struct HeadForward<T> {
    pub pre: Mat<T>,
    pub act: Mat<T>,
    pub scores: Mat<T>,
}

impl<T: Real> RetainingHead<T> {
    pub fn new(w1: Mat<T>, w2: Mat<T>) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(Error::shape(format!(
                "W1 is {:?} but W2 is {:?}",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(RetainingHead { w1, w2 })
    }

    pub fn random(in_dim: usize, d_r: usize, kv_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let n1 = Normal::new(0.0, (in_dim as f64).powf(-0.5)).expect("positive std");
        let n2 = Normal::new(0.0, 0.1 * (d_r as f64).powf(-0.5)).expect("positive std");
        RetainingHead {
            w1: Mat::from_fn(in_dim, d_r, |_, _| T::of(n1.sample(rng))),
            w2: Mat::from_fn(d_r, kv_heads, |_, _| T::of(n2.sample(rng))),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_r(&self) -> usize {
        self.w1.cols()
    }

    pub fn kv_heads(&self) -> usize {
        self.w2.cols()
    }

    /// Scores for one token's `[Q, K, V]` row, one per KV head.
    pub fn predict_cis(&self, qkv_row: &[T]) -> Result<Vec<T>> {
        let x = Mat::from_vec(1, qkv_row.len(), qkv_row.to_vec())?;
        Ok(self.predict(&x)?.into_data())
    }

    /// Scores for a batch of rows, `n × kv_heads`.
    pub fn predict(&self, x: &Mat<T>) -> Result<Mat<T>> {
        Ok(self.forward(x)?.scores)
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<HeadForward<T>> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "head expects {}-wide rows, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let pre = matmul(x, &self.w1)?;
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = silu(*v));
        let scores = matmul(&act, &self.w2)?;
        Ok(HeadForward { pre, act, scores })
    }

    /// Flattened parameters `[W1, W2]`, row-major.
    pub fn params(&self) -> Vec<T> {
        let mut p = self.w1.data().to_vec();
        p.extend_from_slice(self.w2.data());
        p
    }

    pub fn set_params(&mut self, p: &[T]) {
        let n1 = self.w1.data().len();
        self.w1.data_mut().copy_from_slice(&p[..n1]);
        self.w2.data_mut().copy_from_slice(&p[n1..]);
    }
}

/// One retaining head per backbone layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadSet<T> {
    pub heads: Vec<RetainingHead<T>>,
}

impl<T: Real> HeadSet<T> {
    pub fn random(cfg: &ModelConfig, d_r: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if d_r == 0 {
            return Err(Error::config("retaining head width d_r must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(HeadSet {
            heads: (0..cfg.layers)
                .map(|_| RetainingHead::random(cfg.qkv_width(), d_r, cfg.kv_heads(), &mut rng))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn check_compatible(&self, cfg: &ModelConfig) -> Result<()> {
        if self.heads.len() != cfg.layers {
            return Err(Error::shape(format!(
                "{} retaining heads for {} layers",
                self.heads.len(),
                cfg.layers
            )));
        }
        for h in &self.heads {
            if h.in_dim() != cfg.qkv_width() || h.kv_heads() != cfg.kv_heads() {
                return Err(Error::shape(format!(
                    "retaining head {}→{} does not fit qkv width {} / {} KV heads",
                    h.in_dim(),
                    h.kv_heads(),
                    cfg.qkv_width(),
                    cfg.kv_heads()
                )));
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        for (i, h) in self.heads.iter().enumerate() {
            c.insert_mat(&format!("layer{i}.W1"), &h.w1);
            c.insert_mat(&format!("layer{i}.W2"), &h.w2);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let mut heads = Vec::new();
        loop {
            let i = heads.len();
            let name1 = format!("layer{i}.W1");
            let Ok(t1) = c.get(&name1) else { break };
            let t2 = c.get(&format!("layer{i}.W2"))?;
            if t1.shape.len() != 2 || t2.shape.len() != 2 {
                return Err(Error::Format(format!("layer {i} head tensors must be 2-D")));
            }
            let w1 = c.mat(&name1, t1.shape[0], t1.shape[1])?;
            let w2 = c.mat(&format!("layer{i}.W2"), t2.shape[0], t2.shape[1])?;
            heads.push(RetainingHead::new(w1, w2)?);
        }
        if heads.is_empty() {
            return Err(Error::Format("no retaining heads in container".into()));
        }
        Ok(HeadSet { heads })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_w1_gives_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut h = RetainingHead::<f64>::random(6, 5, 2, &mut rng);
        h.w1 = Mat::zeros(6, 5);
        let s = h.predict_cis(&[1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn scores_are_linear_in_w2() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = RetainingHead::<f64>::random(6, 5, 3, &mut rng);
        let row: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h2 = h.clone();
        h2.w2 = h.w2.scale(2.0);
        let a = h.predict_cis(&row).unwrap();
        let b = h2.predict_cis(&row).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = RetainingHead::<f64>::random(7, 4, 2, &mut rng);
        let row: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = h.predict_cis(&row).unwrap();
        for j in 0..2 {
            let mut s = 0.0;
            for r in 0..4 {
                let z: f64 = (0..7).map(|i| row[i] * h.w1.get(i, r)).sum();
                s += z / (1.0 + (-z).exp()) * h.w2.get(r, j);
            }
            assert!((got[j] - s).abs() < 1e-12);
        }
        assert!(h.predict_cis(&row[..6]).is_err());
    }

    #[test]
    fn headset_roundtrip() {
        let cfg = ModelConfig {
            layers: 2,
            ..ModelConfig::default()
        };
        let hs = HeadSet::<f32>::random(&cfg, 8, 4).unwrap();
        hs.check_compatible(&cfg).unwrap();
        let back = HeadSet::<f32>::from_container(&hs.to_container()).unwrap();
        assert_eq!(hs, back);
        let names: Vec<_> = hs.to_container().names().map(String::from).collect();
        assert_eq!(names, ["layer0.W1", "layer0.W2", "layer1.W1", "layer1.W2"]);
    }
}
