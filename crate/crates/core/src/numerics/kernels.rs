use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::{Mat, Real};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(a: &Mat<T>) -> Mat<T> {
    let mut out = a.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place<T: Real>(xs: &mut [T]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

/// `log softmax(row)[index]`, computed with the log-sum-exp shift.
pub fn log_softmax_at<T: Real>(row: &[T], index: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &x in row {
        sum = sum + (x - max).exp();
    }
    row[index] - max - sum.ln()
}

/// Inverse rotary frequencies `theta^(-2i/dim)` for `i < dim / 2`.
pub fn rope_inv_freq(dim: usize, theta_base: f64) -> Vec<f64> {
    (0..dim / 2)
        .map(|i| theta_base.powf(-2.0 * i as f64 / dim as f64))
        .collect()
}

/// Rotates adjacent pairs `(x[2i], x[2i+1])` of the leading `inv_freq.len() * 2` entries.
pub fn rope_rotate<T: Real>(row: &mut [T], position: usize, inv_freq: &[f64]) {
    let pos = position as f64;
    for (i, &f) in inv_freq.iter().enumerate() {
        let angle = pos * f;
        let (s, c) = angle.sin_cos();
        let (s, c) = (T::of(s), T::of(c));
        let a = row[2 * i];
        let b = row[2 * i + 1];
        row[2 * i] = a * c - b * s;
        row[2 * i + 1] = a * s + b * c;
    }
}

/// Applies rotary position embedding to every row of `x` at the given positions.
pub fn rope_apply<T: Real>(x: &Mat<T>, positions: &[usize], theta_base: f64) -> Result<Mat<T>> {
    if x.cols() % 2 != 0 {
        return Err(Error::shape(format!("rope needs an even width, got {}", x.cols())));
    }
    if positions.len() != x.rows() {
        return Err(Error::shape(format!(
            "{} positions for {} rows",
            positions.len(),
            x.rows()
        )));
    }
    let inv = rope_inv_freq(x.cols(), theta_base);
    let mut out = x.clone();
    for (i, &p) in positions.iter().enumerate() {
        rope_rotate(out.row_mut(i), p, &inv);
    }
    Ok(out)
}

/// Orders indices by descending score, ties going to the larger index.
fn rank_order<T: Real>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .f64()
            .total_cmp(&scores[a].f64())
            .then(b.cmp(&a))
    }
}

/// Indices of the `b` largest scores, returned in ascending index order.
///
/// Ties are broken in favour of the larger index, so equal scores keep the
/// most recent entries.
pub fn top_b_indices<T: Real>(scores: &[T], b: usize) -> Vec<usize> {
    let n = scores.len();
    if b >= n {
        return (0..n).collect();
    }
    if b == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let cmp = rank_order(scores);
    idx.select_nth_unstable_by(b - 1, &cmp);
    idx.truncate(b);
    idx.sort_unstable();
    idx
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// d/dx silu(x) = σ(x)(1 + x(1 − σ(x))).
#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn rmsnorm<T: Real>(x: &[T], gain: &[T], eps: f64) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    rmsnorm_into(x, gain, eps, &mut out);
    out
}

pub fn rmsnorm_into<T: Real>(x: &[T], gain: &[T], eps: f64, out: &mut [T]) {
    let mut ss = T::zero();
    for &v in x {
        ss = ss + v * v;
    }
    let n = T::of(x.len() as f64);
    let inv = T::one() / (ss / n + T::of(eps)).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * g;
    }
}

/// Central-difference gradient `(f(x + εe_i) − f(x − εe_i)) / 2ε`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::config("finite difference step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Eval(format!("non-finite objective at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_uniform_row() {
        let m = Mat::from_rows(&[vec![0.0f64, 0.0, 0.0]]).unwrap();
        for &v in softmax_rows(&m).row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_gap_does_not_overflow() {
        let m = Mat::from_rows(&[vec![1000.0f64, 0.0]]).unwrap();
        let s = softmax_rows(&m);
        assert_eq!(s.get(0, 0), 1.0);
        assert!(s.get(0, 1) < 1e-300);
        let m32 = Mat::from_rows(&[vec![1000.0f32, 0.0]]).unwrap();
        assert!(softmax_rows(&m32).is_finite());
    }

    #[test]
    fn softmax_matches_high_precision_values() {
        // 40-digit evaluation of exp(x_i) / Σ exp(x_j) for [1, 2, 3].
        let expect = [
            0.090_030_573_170_380_457_998_022_1,
            0.244_728_471_054_797_652_472_959_6,
            0.665_240_955_774_821_889_529_018_3,
        ];
        let m = Mat::from_rows(&[vec![1.0f64, 2.0, 3.0]]).unwrap();
        let s = softmax_rows(&m);
        for (a, b) in s.row(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_zero_position_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::from_fn(4, 8, |_, _| rng.random_range(-1.0f64..1.0));
        let y = rope_apply(&x, &[0, 0, 0, 0], 10000.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rope_one_radian_for_first_pair() {
        let x = Mat::from_rows(&[vec![1.0f64, 0.0]]).unwrap();
        let y = rope_apply(&x, &[1], 10000.0).unwrap();
        assert!((y.get(0, 0) - 0.540_302_305_868_139_717_4).abs() < 1e-15);
        assert!((y.get(0, 1) - 0.841_470_984_807_896_506_7).abs() < 1e-15);
    }

    #[test]
    fn rope_odd_width_is_shape_error() {
        let x = Mat::<f64>::zeros(1, 3);
        assert!(matches!(rope_apply(&x, &[1], 10000.0), Err(Error::Shape(_))));
    }

    #[test]
    fn top_b_examples() {
        assert_eq!(top_b_indices(&[5.0f64, 1.0, 9.0], 2), vec![0, 2]);
        assert_eq!(top_b_indices(&[7.0f64, 7.0, 7.0], 2), vec![1, 2]);
        assert_eq!(top_b_indices(&[7.0f64, 7.0, 7.0], 0), Vec::<usize>::new());
        assert_eq!(top_b_indices(&[1.0f64, 2.0], 5), vec![0, 1]);
        let inf = f64::INFINITY;
        assert_eq!(top_b_indices(&[9.0, 1.0, 8.0, 2.0, inf, inf], 4), vec![0, 2, 4, 5]);
    }

    #[test]
    fn top_b_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.random_range(0..40);
            let b = rng.random_range(0..45);
            // coarse values so ties are common
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let got = top_b_indices(&scores, b);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &c| scores[c].partial_cmp(&scores[a]).unwrap().then(c.cmp(&a)));
            let mut want: Vec<usize> = order.into_iter().take(b).collect();
            want.sort();
            assert_eq!(got, want);
            let mut gv: Vec<f64> = got.iter().map(|&i| scores[i]).collect();
            let mut sv = scores.clone();
            sv.sort_by(|a, c| c.partial_cmp(a).unwrap());
            sv.truncate(b.min(n));
            gv.sort_by(|a, c| c.partial_cmp(a).unwrap());
            assert_eq!(gv, sv);
        }
    }

    #[test]
    fn silu_and_rmsnorm() {
        assert_eq!(silu(0.0f64), 0.0);
        let c = rmsnorm(&[3.0f64; 6], &[1.0; 6], 1e-6);
        for v in c {
            assert!((v - 1.0).abs() < 1e-6);
        }
        let c = rmsnorm(&[-2.0f64; 4], &[1.0; 4], 1e-6);
        for v in c {
            assert!((v + 1.0).abs() < 1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..16).map(|_| rng.random_range(0.5..1.5)).collect();
        let ms = x.iter().map(|v| v * v).sum::<f64>() / 16.0;
        let got = rmsnorm(&x, &g, 1e-5);
        for i in 0..16 {
            let want = x[i] / (ms + 1e-5).sqrt() * g[i];
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn silu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((silu_grad(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_diff_on_quadratic_and_constant() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(finite_diff_grad(|x| 1.0 / x[0], &[1e-5], 1e-5).is_err());
        assert!(finite_diff_grad(|x| x[0], &[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in prop::collection::vec(-500.0f64..500.0, 1..40)) {
            let m = Mat::from_rows(&[row]).unwrap();
            let s: f64 = softmax_rows(&m).row(0).iter().sum();
            prop_assert!((s - 1.0).abs() < f64::SOFTMAX_TOL);
        }

        #[test]
        fn softmax_rows_sum_to_one_single(row in prop::collection::vec(-80.0f32..80.0, 1..40)) {
            let m = Mat::from_rows(&[row]).unwrap();
            let s: f64 = softmax_rows(&m).row(0).iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < f32::SOFTMAX_TOL);
        }

        #[test]
        fn rope_preserves_pair_norms(
            row in prop::collection::vec(-3.0f64..3.0, 8),
            pos in 0usize..100_000,
        ) {
            let x = Mat::from_rows(&[row]).unwrap();
            let y = rope_apply(&x, &[pos], 10000.0).unwrap();
            for i in 0..4 {
                let a = x.get(0, 2 * i).hypot(x.get(0, 2 * i + 1));
                let b = y.get(0, 2 * i).hypot(y.get(0, 2 * i + 1));
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn top_b_with_full_budget_returns_everything(scores in prop::collection::vec(-5.0f64..5.0, 0..30)) {
            let n = scores.len();
            prop_assert_eq!(top_b_indices(&scores, n), (0..n).collect::<Vec<_>>());
        }
    }
}
