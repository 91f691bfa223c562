//! Scalar evaluation metrics.

use crate::error::{Error, Result};

/// Nash-Sutcliffe efficiency: `1 - sum((obs - pred)^2) / sum((obs - mean)^2)`.
pub fn nse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::shape(format!("nse: {} predictions for {} observations", pred.len(), obs.len())));
    }
    if obs.len() < 2 {
        return Err(Error::Metric("nse needs at least two observations".into()));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let denom: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
    if denom == 0.0 {
        return Err(Error::Metric("nse undefined for a constant observed series".into()));
    }
    let num: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p) * (o - p)).sum();
    Ok(1.0 - num / denom)
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    Ok(crate::nn::mse_loss(pred, obs)?.sqrt())
}
