use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Weights;
use crate::error::{Error, Result};
use crate::numerics::Real;

use super::{cis_labels, grad_head, make_locretq_example, AdamState, AdamW, HeadSet, LossReduction, TrainingExample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    /// Weight of the adjacent-score smoothness term.
    pub alpha: f64,
    /// Longest prompt+answer fed to the backbone; longer prompts lose their head.
    pub seq_cap: usize,
    /// Divide labels by `√d_head`.
    pub label_scaling: bool,
    /// Query-prefix length for query-aware training; 0 disables it.
    pub lq: usize,
    /// Hidden width of each retaining head.
    pub d_r: usize,
    pub reduction: LossReduction,
    pub optimizer: AdamW,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 5e-4,
            total_steps: 3000,
            warmup_steps: 2000,
            alpha: 2.5e-3,
            seq_cap: 10240,
            label_scaling: false,
            lq: 0,
            d_r: 1024,
            reduction: LossReduction::Sum,
            optimizer: AdamW::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.alpha >= 0.0) || !(self.lr >= 0.0) {
            return Err(Error::config("alpha and lr must be non-negative"));
        }
        if self.d_r == 0 || self.seq_cap < 2 {
            return Err(Error::config("d_r must be positive and seq_cap at least 2"));
        }
        Ok(())
    }
}

/// Fits every layer's retaining head to CIS labels of the frozen backbone.
///
/// Batch size is one; the example for each step is drawn uniformly with a
/// ChaCha stream seeded by `seed`. Returns the trained heads and the summed
/// loss of each step (measured before that step's update).
pub fn train<T: Real>(
    mut heads: HeadSet<T>,
    weights: &Weights<T>,
    dataset: &[TrainingExample],
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<(HeadSet<T>, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::data("training dataset is empty"));
    }
    heads.check_compatible(&weights.config)?;
    let before = weights.fingerprint()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<AdamState<T>> = heads
        .heads
        .iter()
        .map(|h| AdamState::new(h.params().len()))
        .collect();
    let mut curve = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        let ex = &dataset[rng.random_range(0..dataset.len())];
        let ex = make_locretq_example(ex, cfg.lq).truncated(cfg.seq_cap)?;
        let (labels, acts) = cis_labels(weights, &ex.prompt, &ex.answer, cfg.label_scaling)?;
        let n_q = ex.prompt.len();
        let lr = super::lr_schedule(step, cfg.lr, cfg.warmup_steps, cfg.total_steps);
        let mut total = 0.0;
        for (l, head) in heads.heads.iter_mut().enumerate() {
            let x = acts.layers[l].qkv_block(0, n_q);
            let g = grad_head(head, &x, &labels[l], cfg.alpha, cfg.reduction)?;
            total += g.loss.f64();
            let mut grads = g.dw1.into_data();
            grads.extend_from_slice(g.dw2.data());
            let mut p = head.params();
            cfg.optimizer.step(&mut p, &grads, &mut states[l], lr)?;
            head.set_params(&p);
        }
        if !total.is_finite() {
            return Err(Error::Eval(format!("loss diverged at step {step}")));
        }
        curve.push(total);
    }

    if weights.fingerprint()? != before {
        return Err(Error::Contract("backbone weights changed during training".into()));
    }
    Ok((heads, curve))
}
