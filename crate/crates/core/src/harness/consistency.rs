use serde::{Deserialize, Serialize};

use crate::backbone::{full_forward, token_entropy, ForwardOptions, Weights};
use crate::error::{Error, Result};
use crate::numerics::{top_b_indices, Mat, Real};
use crate::retaining::HeadSet;

/// Scores of every position of a sequence, one `len × kv_heads` matrix per layer.
pub type ScoreGrid<T> = Vec<Mat<T>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub scorer: String,
    pub top_frac: f64,
    pub grid: Vec<usize>,
    /// Mean over (layer, KV head) per prefix length.
    pub mean: Vec<f64>,
    /// `per_head[i][layer][kv_head]` for prefix `grid[i]`.
    pub per_head: Vec<Vec<Vec<f64>>>,
}

pub const CONSISTENCY_CSV_HEADER: &str = "scorer,m,layer,kv_head,consistency";

impl ConsistencyReport {
    /// Per-head rows plus one `layer = kv_head = "mean"` row per prefix.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, &m) in self.grid.iter().enumerate() {
            for (l, row) in self.per_head[i].iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    out.push(format!("{},{m},{l},{j},{v}", self.scorer));
                }
            }
            out.push(format!("{},{m},mean,mean,{}", self.scorer, self.mean[i]));
        }
        out
    }
}

/// Overlap of prefix-only and full-context top sets.
///
/// `scorer(tokens)` returns a score for every position of `tokens`. For each
/// `m` in `grid`, the top `⌈top_frac·m⌉` positions by `scorer(&tokens[..m])`
/// are compared with the top positions among the first `m` by
/// `scorer(tokens)`.
pub fn consistency_curve<T: Real>(
    name: &str,
    mut scorer: impl FnMut(&[u32]) -> Result<ScoreGrid<T>>,
    tokens: &[u32],
    grid: &[usize],
    top_frac: f64,
) -> Result<ConsistencyReport> {
    if grid.is_empty() {
        return Err(Error::config("consistency grid is empty"));
    }
    if let Some(&m) = grid.iter().find(|&&m| m == 0 || m > tokens.len()) {
        return Err(Error::config(format!(
            "prefix {m} outside 1..={}",
            tokens.len()
        )));
    }
    if !(top_frac > 0.0 && top_frac <= 1.0) {
        return Err(Error::config("top_frac must be in (0, 1]"));
    }
    let full = scorer(tokens)?;
    let mut mean = Vec::with_capacity(grid.len());
    let mut per_head = Vec::with_capacity(grid.len());
    for &m in grid {
        let local = scorer(&tokens[..m])?;
        let k = (top_frac * m as f64).ceil() as usize;
        let mut layers = Vec::with_capacity(full.len());
        let (mut sum, mut count) = (0.0, 0usize);
        for (lf, ll) in full.iter().zip(&local) {
            let mut heads = Vec::with_capacity(lf.cols());
            for j in 0..lf.cols() {
                let col_l: Vec<T> = (0..m).map(|p| ll.get(p, j)).collect();
                let col_g: Vec<T> = (0..m).map(|p| lf.get(p, j)).collect();
                let tl = top_b_indices(&col_l, k);
                let tg = top_b_indices(&col_g, k);
                let inter = tl.iter().filter(|p| tg.binary_search(p).is_ok()).count();
                let c = inter as f64 / tl.len() as f64;
                sum += c;
                count += 1;
                heads.push(c);
            }
            layers.push(heads);
        }
        mean.push(sum / count as f64);
        per_head.push(layers);
    }
    Ok(ConsistencyReport {
        scorer: name.into(),
        top_frac,
        grid: grid.to_vec(),
        mean,
        per_head,
    })
}

/// Retaining-head predictions from a full-cache forward.
pub fn locret_scores<T: Real>(
    weights: &Weights<T>,
    heads: &HeadSet<T>,
    tokens: &[u32],
) -> Result<ScoreGrid<T>> {
    heads.check_compatible(&weights.config)?;
    let acts = full_forward(weights, tokens, ForwardOptions::default())?;
    acts.layers
        .iter()
        .zip(&heads.heads)
        .map(|(la, h)| h.predict(&la.qkv_block(0, tokens.len())))
        .collect()
}

/// Surprisal of each token given its prefix (0 at position 0), shared by all heads.
pub fn sirllm_scores<T: Real>(weights: &Weights<T>, tokens: &[u32]) -> Result<ScoreGrid<T>> {
    let acts = full_forward(weights, tokens, ForwardOptions::default())?;
    let col: Vec<T> = (0..tokens.len())
        .map(|p| {
            if p == 0 {
                T::zero()
            } else {
                token_entropy(acts.logits.row(p - 1), tokens[p])
            }
        })
        .collect();
    let kvh = weights.config.kv_heads();
    Ok(vec![
        Mat::from_fn(tokens.len(), kvh, |p, _| col[p]);
        weights.config.layers
    ])
}

/// Attention received by each key from every query of the sequence.
pub fn h2o_scores<T: Real>(weights: &Weights<T>, tokens: &[u32]) -> Result<ScoreGrid<T>> {
    let opts = ForwardOptions {
        attention_stats: true,
        window: None,
    };
    stats_grid(weights, tokens, opts, |s| &s.received)
}

/// Mean attention received from the last `w` queries of the sequence.
pub fn snapkv_scores<T: Real>(weights: &Weights<T>, tokens: &[u32], w: usize) -> Result<ScoreGrid<T>> {
    let opts = ForwardOptions {
        attention_stats: false,
        window: Some(w),
    };
    stats_grid(weights, tokens, opts, |s| {
        s.window.as_ref().expect("window requested")
    })
}

fn stats_grid<T: Real>(
    weights: &Weights<T>,
    tokens: &[u32],
    opts: ForwardOptions,
    pick: impl Fn(&crate::backbone::AttentionStats<T>) -> &Vec<Vec<T>>,
) -> Result<ScoreGrid<T>> {
    let acts = full_forward(weights, tokens, opts)?;
    acts.layers
        .iter()
        .map(|la| {
            let src = pick(la.stats.as_ref().expect("stats requested"));
            Ok(Mat::from_fn(tokens.len(), src.len(), |p, j| src[j][p]))
        })
        .collect()
}
