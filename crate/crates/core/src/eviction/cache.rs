use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Real;

/// One token's key/value pair inside one KV head: the smallest evictable object.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheUnit<T> {
    pub original_position: usize,
    pub k_pre_rope: Vec<T>,
    pub v: Vec<T>,
    pub score: T,
}

/// Retained units of one (layer, KV head), kept sorted by original position.
///
/// Storage is columnar so attention can read keys and values as contiguous
/// row-major blocks. The RoPE position of unit `r` is simply `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadCache<T> {
    dim: usize,
    positions: Vec<usize>,
    keys: Vec<T>,
    values: Vec<T>,
    scores: Vec<T>,
    pinned: Vec<bool>,
}

impl<T: Real> HeadCache<T> {
    pub fn new(dim: usize) -> Self {
        HeadCache {
            dim,
            positions: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
            scores: Vec::new(),
            pinned: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    /// Row-major `len × dim` pre-RoPE keys.
    pub fn keys(&self) -> &[T] {
        &self.keys
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn key(&self, i: usize) -> &[T] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn unit(&self, i: usize) -> CacheUnit<T> {
        CacheUnit {
            original_position: self.positions[i],
            k_pre_rope: self.key(i).to_vec(),
            v: self.value(i).to_vec(),
            score: self.scores[i],
        }
    }

    pub fn units(&self) -> impl Iterator<Item = CacheUnit<T>> + '_ {
        (0..self.len()).map(|i| self.unit(i))
    }

    /// Appends a unit after the current tail. Its position must exceed every stored position.
    pub fn push(&mut self, position: usize, key: &[T], value: &[T], score: T) -> Result<()> {
        if key.len() != self.dim || value.len() != self.dim {
            return Err(Error::shape(format!(
                "unit width {}/{} does not match head width {}",
                key.len(),
                value.len(),
                self.dim
            )));
        }
        if let Some(&last) = self.positions.last() {
            if position <= last {
                return Err(Error::Contract(format!(
                    "position {position} does not follow {last}"
                )));
            }
        }
        if !score.is_finite() {
            return Err(Error::Contract("stored scores must be finite".into()));
        }
        self.positions.push(position);
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.scores.push(score);
        self.pinned.push(false);
        Ok(())
    }

    pub(crate) fn set_score(&mut self, i: usize, score: T) {
        debug_assert!(score.is_finite());
        self.scores[i] = score;
    }

    pub(crate) fn pin(&mut self, i: usize) {
        self.pinned[i] = true;
    }

    /// Keeps only the units at `keep` (ascending indices).
    pub(crate) fn retain_indices(&mut self, keep: &[usize]) {
        let d = self.dim;
        let mut keys = Vec::with_capacity(keep.len() * d);
        let mut values = Vec::with_capacity(keep.len() * d);
        for &i in keep {
            keys.extend_from_slice(&self.keys[i * d..(i + 1) * d]);
            values.extend_from_slice(&self.values[i * d..(i + 1) * d]);
        }
        self.positions = keep.iter().map(|&i| self.positions[i]).collect();
        self.scores = keep.iter().map(|&i| self.scores[i]).collect();
        self.pinned = keep.iter().map(|&i| self.pinned[i]).collect();
        self.keys = keys;
        self.values = values;
    }

    /// RoPE positions after reassignment: unit `r` sits at position `r`.
    pub fn reassign_positions(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Grid of head caches, `layers × kv_heads`. Lengths may differ between heads.
#[derive(Clone, Debug, PartialEq)]
pub struct CachePool<T> {
    layers: usize,
    kv_heads: usize,
    heads: Vec<HeadCache<T>>,
}

impl<T: Real> CachePool<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        CachePool {
            layers: cfg.layers,
            kv_heads: cfg.kv_heads(),
            heads: (0..cfg.layers * cfg.kv_heads())
                .map(|_| HeadCache::new(cfg.d_kv))
                .collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn kv_heads(&self) -> usize {
        self.kv_heads
    }

    pub fn head(&self, layer: usize, kv_head: usize) -> &HeadCache<T> {
        &self.heads[layer * self.kv_heads + kv_head]
    }

    pub fn head_mut(&mut self, layer: usize, kv_head: usize) -> &mut HeadCache<T> {
        &mut self.heads[layer * self.kv_heads + kv_head]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &HeadCache<T>)> {
        self.heads
            .iter()
            .enumerate()
            .map(move |(i, h)| ((i / self.kv_heads, i % self.kv_heads), h))
    }

    pub fn max_len(&self) -> usize {
        self.heads.iter().map(HeadCache::len).max().unwrap_or(0)
    }

    pub fn total_units(&self) -> usize {
        self.heads.iter().map(HeadCache::len).sum()
    }

    pub fn check_shape(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers != cfg.layers || self.kv_heads != cfg.kv_heads() {
            return Err(Error::shape(format!(
                "pool is {}x{}, model wants {}x{}",
                self.layers,
                self.kv_heads,
                cfg.layers,
                cfg.kv_heads()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_enforces_order_and_finiteness() {
        let mut h = HeadCache::<f64>::new(2);
        h.push(0, &[1.0, 2.0], &[3.0, 4.0], 0.5).unwrap();
        h.push(5, &[1.0, 2.0], &[3.0, 4.0], 0.1).unwrap();
        assert!(h.push(5, &[0.0, 0.0], &[0.0, 0.0], 0.0).is_err());
        assert!(h.push(6, &[0.0, 0.0], &[0.0, 0.0], f64::INFINITY).is_err());
        assert!(h.push(6, &[0.0], &[0.0, 0.0], 0.0).is_err());
        assert_eq!(h.len(), 2);
        assert_eq!(h.unit(1).original_position, 5);
    }

    #[test]
    fn reassigned_positions_are_contiguous() {
        let mut h = HeadCache::<f64>::new(1);
        for p in [0, 5, 9] {
            h.push(p, &[p as f64], &[0.0], 0.0).unwrap();
        }
        assert_eq!(h.reassign_positions(), vec![0, 1, 2]);
        h.retain_indices(&[0, 2]);
        assert_eq!(h.positions(), &[0, 9]);
        assert_eq!(h.key(1), &[9.0]);
        assert_eq!(h.reassign_positions(), vec![0, 1]);
    }
}
