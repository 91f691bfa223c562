//! Reconstruction losses and their batch gradients.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result};

/// Probability clamp applied before taking logarithms in [`bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    ensure_len("mse target", target.len(), pred.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

#[inline]
fn bce_term(p: f64, bit: f64) -> f64 {
    let p = clamp_prob(p);
    -(bit * p.ln() + (1.0 - bit) * (1.0 - p).ln())
}

pub fn bce_loss(pred_prob: &[f64], target_bit: &[f64]) -> Result<f64> {
    ensure_len("bce target", target_bit.len(), pred_prob.len())?;
    if pred_prob.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred_prob
        .iter()
        .zip(target_bit)
        .map(|(&p, &b)| bce_term(p, b))
        .sum();
    Ok(sum / pred_prob.len() as f64)
}

/// Mean squared error over every element of a batch, with its gradient.
pub fn mse_batch(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(pred.dim(), target.dim(), "mse batch shapes");
    let n = pred.len().max(1) as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// Binary cross-entropy over every element of a batch, with its gradient
/// with respect to the probabilities. Clamped entries have zero gradient.
pub fn bce_batch(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(pred.dim(), target.dim(), "bce batch shapes");
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p, &b| {
            loss += bce_term(p, b);
            if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                *g = (-(b / p) + (1.0 - b) / (1.0 - p)) / n;
            }
        });
    (loss / n, grad)
}

/// Weighted composition of the training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    pub mask: f64,
    pub kld: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(value: f64, mask: f64, kld: f64, lambda_mask: f64, lambda_kld: f64) -> Self {
        LossReport {
            value,
            mask,
            kld,
            total: value + lambda_mask * mask + lambda_kld * kld,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_closed_forms() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mse_loss(&[0.0], &[1.0, 1.0]).is_err());
    }

    // Oracle: numpy.mean((p - t) ** 2) on the literals below.
    #[test]
    fn mse_matches_elementwise_oracle() {
        let p = [0.12, -1.7, 3.3, 0.0, 2.25];
        let t = [0.5, -1.0, 2.9, -0.4, 2.0];
        let v = mse_loss(&p, &t).unwrap();
        assert!((v - 0.20338).abs() < 1e-12, "{v}");
    }

    #[test]
    fn bce_closed_forms() {
        let v = bce_loss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        // Saturated but correct predictions only pay the clamp.
        let v = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((v - (-(1.0 - BCE_CLAMP).ln())).abs() < 1e-18);
        assert!(v > 0.9e-7 && v < 1.1e-7);
        assert!(bce_loss(&[0.5], &[]).is_err());
    }

    // Oracle: numpy.mean(-(b*log(p) + (1-b)*log(1-p))).
    #[test]
    fn bce_matches_elementwise_oracle() {
        let p = [0.9, 0.2, 0.65, 0.01];
        let b = [1.0, 0.0, 0.0, 1.0];
        let v = bce_loss(&p, &b).unwrap();
        assert!((v - 1.495_874_094_364_701).abs() < 1e-12, "{v}");
    }

    #[test]
    fn batch_gradients_match_central_differences() {
        let p = array![[0.3, 0.8], [0.55, 0.1]];
        let b = array![[1.0, 0.0], [1.0, 1.0]];
        let (_, g) = bce_batch(p.view(), b.view());
        let (_, gm) = mse_batch(p.view(), b.view());
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..2 {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[[i, j]] += eps;
                lo[[i, j]] -= eps;
                let cd = (bce_batch(hi.view(), b.view()).0 - bce_batch(lo.view(), b.view()).0) / (2.0 * eps);
                assert!((cd - g[[i, j]]).abs() < 1e-7);
                let cd = (mse_batch(hi.view(), b.view()).0 - mse_batch(lo.view(), b.view()).0) / (2.0 * eps);
                assert!((cd - gm[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn loss_report_total() {
        let r = LossReport::new(0.5, 0.2, 3.0, 1.0, 0.1);
        assert!((r.total - 1.0).abs() < 1e-15);
    }
}
