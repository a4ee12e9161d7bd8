use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul_t, silu_grad, t_matmul, Mat, Real};

use super::RetainingHead;

/// How per-token terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Plain sum over layers, heads and positions.
    #[default]
    Sum,
    /// Each layer's sum divided by `n_q · kv_heads`.
    Mean,
}

impl LossReduction {
    fn factor(self, n_q: usize, kv_heads: usize) -> f64 {
        match self {
            LossReduction::Sum => 1.0,
            LossReduction::Mean => 1.0 / (n_q * kv_heads).max(1) as f64,
        }
    }
}

/// Smooth-L1 with transition at `|x| = 1`.
pub fn smooth_l1<T: Real>(x: T) -> T {
    let a = x.abs();
    if a < T::one() {
        T::of(0.5) * x * x
    } else {
        a - T::of(0.5)
    }
}

fn smooth_l1_grad<T: Real>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

fn check_pair<T: Real>(pred: &Mat<T>, labels: &Mat<T>) -> Result<()> {
    if pred.shape() != labels.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs labels {:?}",
            pred.shape(),
            labels.shape()
        )));
    }
    Ok(())
}

/// Loss of one layer's `n_q × kv_heads` predictions and its gradient w.r.t. them.
pub fn layer_loss_and_grad<T: Real>(
    pred: &Mat<T>,
    labels: &Mat<T>,
    alpha: f64,
    reduction: LossReduction,
) -> Result<(T, Mat<T>)> {
    check_pair(pred, labels)?;
    let (n, kv) = pred.shape();
    let a = T::of(alpha);
    let two = T::of(2.0);
    let mut total = T::zero();
    let mut grad = Mat::zeros(n, kv);
    for k in 0..n {
        for j in 0..kv {
            let d = pred.get(k, j) - labels.get(k, j);
            total = total + smooth_l1(d);
            grad.set(k, j, smooth_l1_grad(d));
        }
    }
    let mut smooth = T::zero();
    for k in 0..n.saturating_sub(1) {
        for j in 0..kv {
            let d = pred.get(k, j) - pred.get(k + 1, j);
            smooth = smooth + d * d;
            let gd = a * two * d;
            grad.set(k, j, grad.get(k, j) + gd);
            grad.set(k + 1, j, grad.get(k + 1, j) - gd);
        }
    }
    let f = T::of(reduction.factor(n, kv));
    Ok(((total + a * smooth) * f, grad.scale(f)))
}

/// Total loss over all layers.
pub fn loss<T: Real>(
    preds: &[Mat<T>],
    labels: &[Mat<T>],
    alpha: f64,
    reduction: LossReduction,
) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} prediction layers vs {} label layers",
            preds.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (p, l) in preds.iter().zip(labels) {
        total += layer_loss_and_grad(p, l, alpha, reduction)?.0.f64();
    }
    Ok(total)
}

/// Gradient of one layer's loss w.r.t. that layer's head parameters.
#[derive(Clone, Debug)]
pub struct HeadGrad<T> {
    pub loss: T,
    pub dw1: Mat<T>,
    pub dw2: Mat<T>,
}

/// Backpropagates the layer loss through `silu(X·W1)·W2`.
pub fn grad_head<T: Real>(
    head: &RetainingHead<T>,
    inputs: &Mat<T>,
    labels: &Mat<T>,
    alpha: f64,
    reduction: LossReduction,
) -> Result<HeadGrad<T>> {
    let fwd = head.forward(inputs)?;
    let (loss, d_scores) = layer_loss_and_grad(&fwd.scores, labels, alpha, reduction)?;
    let dw2 = t_matmul(&fwd.act, &d_scores)?;
    let mut d_pre = matmul_t(&d_scores, &head.w2)?;
    for (g, &h) in d_pre.data_mut().iter_mut().zip(fwd.pre.data()) {
        *g = *g * silu_grad(h);
    }
    let dw1 = t_matmul(inputs, &d_pre)?;
    Ok(HeadGrad { loss, dw1, dw2 })
}
