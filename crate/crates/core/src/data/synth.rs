//! Tiered structural time-series generator.
//!
//! Every node starts from a yearly sinusoid plus stationary AR(1) noise.
//! Each incoming edge adds `gain * loading * softplus(z)`, where `z` is the
//! standardized mean of the parent's final attributes `lag` steps earlier.
//! Attributes with a non-zero rate below one are shifted down by their
//! rate-calibrated quantile and clipped at zero.

use std::f64::consts::PI;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::dag::DagSpec;
use crate::data::series::{daily_calendar, months_of, Dataset, NodeSeries};
use crate::error::{Error, Result};
use crate::rng::substream;

pub const PERIOD_DAYS: f64 = 365.0;

pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeContribution {
    pub cause: String,
    pub effect: String,
    pub tier: u8,
    /// Mean over steps and attributes of the absolute edge term.
    pub mean_abs: f64,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub dataset: Dataset,
    pub contributions: Vec<EdgeContribution>,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn standardized_mean(values: &Array2<f64>) -> Vec<f64> {
    let agg: Vec<f64> = values.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    let n = agg.len().max(1) as f64;
    let mu = agg.iter().sum::<f64>() / n;
    let sd = (agg.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        agg.iter().map(|v| (v - mu) / sd).collect()
    } else {
        vec![0.0; agg.len()]
    }
}

/// Shifts a column down by the quantile that leaves `rate` of it positive
/// and zeroes everything at or below it.
fn clip_to_rate(col: &mut [f64], rate: f64) {
    if rate >= 1.0 {
        return;
    }
    let zeros = ((1.0 - rate) * col.len() as f64).round() as usize;
    if zeros == 0 {
        return;
    }
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[zeros - 1];
    for v in col.iter_mut() {
        *v = if *v > q { *v - q } else { 0.0 };
    }
}

pub fn synth_generate(spec: &DagSpec, days: usize, seed: u64) -> Result<Dataset> {
    Ok(synthesize(spec, days, seed, None)?.dataset)
}

/// Generates the dataset and the per-edge contribution log. With `ablate`
/// set, that node's series is replaced by zeros before its children read it.
pub fn synthesize(spec: &DagSpec, days: usize, seed: u64, ablate: Option<&str>) -> Result<Synthesis> {
    spec.validate()?;
    if days < 2 {
        return Err(Error::Config(format!("cannot generate {days} days")));
    }
    if let Some(name) = ablate {
        if spec.index_of(name).is_none() {
            return Err(Error::Config(format!("unknown node {name}")));
        }
    }
    let dates = daily_calendar(start_date(), days);
    let months = months_of(&dates);
    let mut finals: Vec<Option<Array2<f64>>> = vec![None; spec.nodes.len()];
    let mut contributions = Vec::new();

    for idx in spec.topological_order()? {
        let node = &spec.nodes[idx];
        let d = node.dimension;
        let mut rng = substream(seed, &format!("synth/node/{}", node.name));
        let phases: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..PERIOD_DAYS)).collect();
        let innovation = node.noise_std * (1.0 - node.ar_coef * node.ar_coef).sqrt();
        let mut values = Array2::<f64>::zeros((days, d));
        for a in 0..d {
            let mut ar: f64 = node.noise_std * rng.sample::<f64, _>(StandardNormal);
            for t in 0..days {
                if t > 0 {
                    ar = node.ar_coef * ar + innovation * rng.sample::<f64, _>(StandardNormal);
                }
                let season = node.seasonal_amplitude * (2.0 * PI * (t as f64 + phases[a]) / PERIOD_DAYS).sin();
                values[[t, a]] = season + ar;
            }
        }

        for edge in spec.edges.iter().filter(|e| e.effect == node.name) {
            let parent = spec.index_of(&edge.cause).expect("validated endpoint");
            let parent_values = finals[parent].as_ref().expect("parents precede children");
            let z = standardized_mean(parent_values);
            let loadings: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
            let mut total_abs = 0.0;
            for t in 0..days {
                let drive = edge.gain * softplus(z[t.saturating_sub(edge.lag)]);
                for (a, l) in loadings.iter().enumerate() {
                    values[[t, a]] += l * drive;
                    total_abs += (l * drive).abs();
                }
            }
            contributions.push(EdgeContribution {
                cause: edge.cause.clone(),
                effect: edge.effect.clone(),
                tier: edge.tier,
                mean_abs: total_abs / (days * d) as f64,
            });
        }

        for mut col in values.columns_mut() {
            let mut buf = col.to_vec();
            clip_to_rate(&mut buf, node.nonzero_rate);
            for (dst, v) in col.iter_mut().zip(buf) {
                *dst = v;
            }
        }
        if ablate == Some(node.name.as_str()) {
            values.fill(0.0);
        }
        finals[idx] = Some(values);
    }

    let mut nodes = Vec::with_capacity(spec.nodes.len());
    for (node, values) in spec.nodes.iter().zip(finals) {
        let values = values.expect("every node generated");
        let series = if ablate == Some(node.name.as_str()) {
            let scaler = crate::data::scale::Scaler {
                attributes: node.attribute_names(),
                mean: vec![0.0; node.dimension],
                std: vec![1.0; node.dimension],
            };
            NodeSeries::from_parts(&node.name, node.attribute_names(), values, months.clone(), scaler)?
        } else {
            NodeSeries::new(&node.name, node.attribute_names(), values, months.clone())?
        };
        nodes.push(series);
    }
    Ok(Synthesis {
        dataset: Dataset::new(dates, nodes)?,
        contributions,
    })
}
