//! Diagonal-Gaussian summaries of latent batches and their divergence.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::substream;

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-dimension mean and variance (denominator n), variance floored.
pub fn gaussian_stats(batch: ArrayView2<f64>) -> Result<GaussianStats> {
    let n = batch.nrows();
    if n < 2 {
        return Err(Error::Estimation(format!("need at least 2 samples, got {n}")));
    }
    let mut mean = Vec::with_capacity(batch.ncols());
    let mut variance = Vec::with_capacity(batch.ncols());
    for col in batch.columns() {
        let mu = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        mean.push(mu);
        variance.push(var.max(VARIANCE_FLOOR));
    }
    Ok(GaussianStats { mean, variance })
}

/// `KL(p || q)` for diagonal Gaussians.
pub fn gaussian_kld(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    if p.dim() != q.dim() || p.variance.len() != p.dim() || q.variance.len() != q.dim() {
        return Err(Error::shape(format!("kld between {}- and {}-dimensional stats", p.dim(), q.dim())));
    }
    let mut total = 0.0;
    for d in 0..p.dim() {
        let (vp, vq) = (p.variance[d], q.variance[d]);
        let dm = p.mean[d] - q.mean[d];
        total += 0.5 * ((vq / vp).ln() + (vp + dm * dm) / vq - 1.0);
    }
    Ok(total)
}

/// `KL(stats(batch) || q)` and its gradient with respect to every batch
/// entry. Floored variances contribute no gradient.
pub fn kld_to_target(batch: ArrayView2<f64>, q: &GaussianStats) -> Result<(f64, Array2<f64>)> {
    let p = gaussian_stats(batch)?;
    let k = gaussian_kld(&p, q)?;
    let n = batch.nrows() as f64;
    let mut grad = Array2::zeros(batch.raw_dim());
    for (d, mut col) in grad.columns_mut().into_iter().enumerate() {
        let (mu, vp, vq) = (p.mean[d], p.variance[d], q.variance[d]);
        let d_mean = (mu - q.mean[d]) / vq;
        let d_var = if vp > VARIANCE_FLOOR { 0.5 * (1.0 / vq - 1.0 / vp) } else { 0.0 };
        for (g, x) in col.iter_mut().zip(batch.column(d)) {
            *g = (d_mean + d_var * 2.0 * (x - mu)) / n;
        }
    }
    Ok((k, grad))
}

/// Mean of `log p(x) - log q(x)` over draws from `p`.
pub fn kld_monte_carlo(p: &GaussianStats, q: &GaussianStats, samples: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "kld-monte-carlo");
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for d in 0..p.dim() {
            let x = p.mean[d] + p.variance[d].sqrt() * rng.sample::<f64, _>(StandardNormal);
            let lp = -0.5 * (p.variance[d].ln() + (x - p.mean[d]).powi(2) / p.variance[d]);
            let lq = -0.5 * (q.variance[d].ln() + (x - q.mean[d]).powi(2) / q.variance[d]);
            log_ratio += lp - lq;
        }
        acc += log_ratio;
    }
    acc / samples as f64
}


#[cfg(test)]
mod monte_carlo {
    use super::*;

    #[test]
    fn closed_form_matches_sampling() {
        let p = GaussianStats {
            mean: vec![0.4, -1.0, 2.0],
            variance: vec![0.6, 1.5, 0.9],
        };
        let q = GaussianStats {
            mean: vec![-0.3, 0.2, 1.1],
            variance: vec![1.2, 0.7, 2.5],
        };
        let exact = gaussian_kld(&p, &q).unwrap();
        let mc = kld_monte_carlo(&p, &q, 1_000_000, 1);
        assert!((mc - exact).abs() <= 0.01 * exact, "{mc} vs {exact}");
    }
}
