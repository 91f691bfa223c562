//! Per-attribute z-scoring fitted on non-masked entries.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub attributes: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits mean and (population) standard deviation per column, using only the
/// entries whose mask is 1. Zero or undefined spread is a data error.
pub fn scale_fit(values: ArrayView2<f64>, mask: ArrayView2<f64>, attributes: &[String]) -> Result<Scaler> {
    if values.dim() != mask.dim() {
        return Err(Error::shape("scale_fit: values and mask differ in shape"));
    }
    ensure_len("scale_fit attribute names", attributes.len(), values.ncols())?;
    let mut mean = Vec::with_capacity(values.ncols());
    let mut std = Vec::with_capacity(values.ncols());
    for (a, name) in attributes.iter().enumerate() {
        let kept: Vec<f64> = values
            .column(a)
            .iter()
            .zip(mask.column(a))
            .filter(|(_, &m)| m != 0.0)
            .map(|(&v, _)| v)
            .collect();
        if kept.len() < 2 {
            return Err(Error::Data(format!(
                "attribute {name}: fewer than two non-masked values, cannot scale"
            )));
        }
        let n = kept.len() as f64;
        let mu = kept.iter().sum::<f64>() / n;
        let var = kept.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::Data(format!("attribute {name}: zero standard deviation")));
        }
        mean.push(mu);
        std.push(sd);
    }
    Ok(Scaler {
        attributes: attributes.to_vec(),
        mean,
        std,
    })
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        ensure_len("scaler input", raw.len(), self.dim())?;
        Ok(raw
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn invert(&self, scaled: &[f64]) -> Result<Vec<f64>> {
        ensure_len("scaler input", scaled.len(), self.dim())?;
        Ok(scaled
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    pub fn apply_matrix(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_len("scaler columns", raw.ncols(), self.dim())?;
        let mut out = raw.to_owned();
        for (a, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[a]) / self.std[a]);
        }
        Ok(out)
    }

    pub fn invert_matrix(&self, scaled: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_len("scaler columns", scaled.ncols(), self.dim())?;
        let mut out = scaled.to_owned();
        for (a, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[a] + self.mean[a]);
        }
        Ok(out)
    }
}
