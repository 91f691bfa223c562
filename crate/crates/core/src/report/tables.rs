//! CSV tables: node characteristics, exploration summary, relation metrics
//! and the round log.
//!
//! Numbers are written as the shortest decimal that parses back to the same
//! value, so every table re-reads exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::series::NodeSeries;
use crate::error::{Error, Result};
use crate::explore::{emit_round_log, ExplorationState};
use crate::node::NodeMetrics;
use crate::relation::MicroCausalModel;

/// Reconstruction metrics of one relation at its effect node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub effect: String,
    /// Cause names joined without separator, as in `BC`.
    pub causes: String,
    pub rmse_scaled: f64,
    pub rmse_unscaled: f64,
    pub mask_bce: f64,
    pub kld: f64,
}

impl MetricRow {
    pub fn new(effect: &str, causes: &str, rmse_scaled: f64, rmse_unscaled: f64, mask_bce: f64, kld: f64) -> Result<Self> {
        let row = MetricRow {
            effect: effect.to_string(),
            causes: causes.to_string(),
            rmse_scaled,
            rmse_unscaled,
            mask_bce,
            kld,
        };
        row.validate()?;
        Ok(row)
    }

    pub fn from_model(model: &MicroCausalModel) -> Result<Self> {
        let m = &model.metrics;
        Self::new(
            &model.id().effect,
            &model.id().causes.concat(),
            m.rmse_scaled,
            m.rmse_unscaled,
            m.mask_bce,
            m.kld,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let values = [self.rmse_scaled, self.rmse_unscaled, self.mask_bce, self.kld];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric(format!("non-finite metric for {} -> {}", self.causes, self.effect)));
        }
        if self.kld < 0.0 {
            return Err(Error::Metric(format!("negative KLD {} for {} -> {}", self.kld, self.causes, self.effect)));
        }
        Ok(())
    }
}

/// Characteristics of one node's observations, with reconstruction metrics
/// when a trained model is available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node: String,
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub nonzero_pct: f64,
    pub rmse_scaled: Option<f64>,
    pub rmse_unscaled: Option<f64>,
    pub mask_bce: Option<f64>,
}

impl NodeRow {
    /// Statistics over every attribute value of `series`.
    pub fn summarize(series: &NodeSeries, metrics: Option<&NodeMetrics>) -> Result<Self> {
        let n = series.values.len();
        if n == 0 {
            return Err(Error::Metric(format!("node {} has no values", series.name)));
        }
        let mean = series.values.iter().sum::<f64>() / n as f64;
        let var = series.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let nonzero = series.values.iter().filter(|v| **v != 0.0).count();
        Ok(NodeRow {
            node: series.name.clone(),
            dim: series.dim(),
            mean,
            std: var.sqrt(),
            min: series.values.iter().copied().fold(f64::INFINITY, f64::min),
            max: series.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            nonzero_pct: 100.0 * nonzero as f64 / n as f64,
            rmse_scaled: metrics.map(|m| m.rmse_scaled),
            rmse_unscaled: metrics.map(|m| m.rmse_unscaled),
            mask_bce: metrics.map(|m| m.mask_bce),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableKind {
    Nodes,
    Exploration,
    Relations,
    Rounds,
}

impl TableKind {
    pub fn file_name(self) -> &'static str {
        match self {
            TableKind::Nodes => "nodes.csv",
            TableKind::Exploration => "exploration.csv",
            TableKind::Relations => "relations.csv",
            TableKind::Rounds => "rounds.csv",
        }
    }
}

/// A rendered table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub kind: TableKind,
    pub csv: String,
}

fn serialize_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Metric(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn require_rows(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::Metric(format!("{what} table needs at least one row")));
    }
    Ok(())
}

/// Node characteristics in input order.
pub fn node_table(rows: &[NodeRow]) -> Result<Table> {
    require_rows(rows.len(), "node")?;
    Ok(Table {
        kind: TableKind::Nodes,
        csv: serialize_rows(rows)?,
    })
}

/// Relation metrics grouped by effect node; rows of one effect keep their
/// input order.
pub fn relation_table(rows: &[MetricRow]) -> Result<Table> {
    require_rows(rows.len(), "relation")?;
    for r in rows {
        r.validate()?;
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.effect.cmp(&b.effect));
    Ok(Table {
        kind: TableKind::Relations,
        csv: serialize_rows(&sorted)?,
    })
}

/// Selected edges as columns in discovery order, with the strength of each
/// edge's relation and its gain when selected.
pub fn exploration_table(state: &ExplorationState) -> Result<Table> {
    require_rows(state.log.len(), "exploration")?;
    let mut header = vec!["edge".to_string()];
    let mut kld = vec!["KLD".to_string()];
    let mut gain = vec!["Gain".to_string()];
    for r in &state.log {
        let eval = r
            .candidates
            .iter()
            .find(|c| c.edge == r.selected)
            .ok_or_else(|| Error::Exploration(format!("round {} lacks its selected edge", r.round)))?;
        header.push(r.selected.to_string());
        kld.push(eval.k_with.to_string());
        gain.push(eval.gain.to_string());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in [header, kld, gain] {
        w.write_record(&rec).map_err(|e| Error::Metric(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
    Ok(Table {
        kind: TableKind::Exploration,
        csv: String::from_utf8(bytes).expect("csv output is utf-8"),
    })
}

/// The per-round log with one column per candidate edge.
pub fn round_table(state: &ExplorationState) -> Result<Table> {
    Ok(Table {
        kind: TableKind::Rounds,
        csv: emit_round_log(state)?.wide_csv,
    })
}

/// Writes each table to its file under `dir`.
pub fn emit_tables(tables: &[Table], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))?;
    let mut out = Vec::with_capacity(tables.len());
    for t in tables {
        let path = dir.join(t.kind.file_name());
        std::fs::write(&path, &t.csv).map_err(|e| Error::persistence(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

fn read_rows<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Metric(e.to_string()))
}

pub fn read_metric_rows(text: &str) -> Result<Vec<MetricRow>> {
    read_rows(text)
}

pub fn read_node_rows(text: &str) -> Result<Vec<NodeRow>> {
    read_rows(text)
}
