use chrono::{Datelike, NaiveDate};
use ndarray::{Array2, ArrayView1};

use crate::data::scale::{scale_fit, Scaler};
use crate::error::{Error, Result};

/// One observable node: its attribute matrix (time × attribute), the
/// non-zero mask, the calendar month of each step and its scaler.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSeries {
    pub name: String,
    pub attributes: Vec<String>,
    pub values: Array2<f64>,
    pub mask: Array2<f64>,
    /// Month of each step, 1..=12.
    pub months: Vec<u8>,
    pub scaler: Scaler,
}

pub fn mask_of(values: &Array2<f64>) -> Array2<f64> {
    values.mapv(|v| if v != 0.0 { 1.0 } else { 0.0 })
}

impl NodeSeries {
    /// Builds a series and fits its scaler on the non-zero entries.
    pub fn new(name: impl Into<String>, attributes: Vec<String>, values: Array2<f64>, months: Vec<u8>) -> Result<Self> {
        let name = name.into();
        let mask = mask_of(&values);
        let scaler = scale_fit(values.view(), mask.view(), &attributes)
            .map_err(|e| Error::Data(format!("node {name}: {e}")))?;
        Self::from_parts(name, attributes, values, months, scaler)
    }

    /// Builds a series around an externally supplied scaler.
    pub fn from_parts(
        name: impl Into<String>,
        attributes: Vec<String>,
        values: Array2<f64>,
        months: Vec<u8>,
        scaler: Scaler,
    ) -> Result<Self> {
        let name = name.into();
        if values.ncols() != attributes.len() || scaler.dim() != attributes.len() {
            return Err(Error::shape(format!(
                "node {name}: {} columns, {} attribute names, scaler of width {}",
                values.ncols(),
                attributes.len(),
                scaler.dim()
            )));
        }
        if months.len() != values.nrows() {
            return Err(Error::shape(format!(
                "node {name}: {} months for {} steps",
                months.len(),
                values.nrows()
            )));
        }
        if let Some(m) = months.iter().find(|m| !(1..=12).contains(*m)) {
            return Err(Error::Data(format!("node {name}: month {m} out of range")));
        }
        let mask = mask_of(&values);
        Ok(NodeSeries {
            name,
            attributes,
            values,
            mask,
            months,
            scaler,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }

    /// Scaled attribute matrix.
    pub fn scaled(&self) -> Array2<f64> {
        self.scaler
            .apply_matrix(self.values.view())
            .expect("scaler width checked at construction")
    }

    /// Fraction of non-zero entries per attribute.
    pub fn nonzero_rates(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.mask.columns().into_iter().map(|c| c.sum() / n).collect()
    }
}

/// A set of aligned node series sharing one calendar.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dates: Vec<NaiveDate>,
    pub nodes: Vec<NodeSeries>,
}

impl Dataset {
    pub fn new(dates: Vec<NaiveDate>, nodes: Vec<NodeSeries>) -> Result<Self> {
        for n in &nodes {
            if n.len() != dates.len() {
                return Err(Error::Data(format!(
                    "node {} has {} steps but the calendar has {}",
                    n.name,
                    n.len(),
                    dates.len()
                )));
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|m| m.name == n.name) {
                return Err(Error::Data(format!("duplicate node {}", n.name)));
            }
        }
        Ok(Dataset { dates, nodes })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&NodeSeries> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Result<&NodeSeries> {
        self.get(name).ok_or_else(|| Error::Config(format!("unknown node {name}")))
    }

    pub fn months(&self) -> Vec<u8> {
        months_of(&self.dates)
    }
}

pub fn months_of(dates: &[NaiveDate]) -> Vec<u8> {
    dates.iter().map(|d| d.month() as u8).collect()
}

/// `count` consecutive days starting at `start`.
pub fn daily_calendar(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    start.iter_days().take(count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_tracks_zeros() {
        let values = Array2::from_shape_vec((3, 2), vec![0.0, 1.0, 2.0, 0.0, -1.0, 3.0]).unwrap();
        let s = NodeSeries::new("n", vec!["a".into(), "b".into()], values, vec![1, 1, 2]).unwrap();
        assert_eq!(s.mask, Array2::from_shape_vec((3, 2), vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap());
        assert_eq!(s.nonzero_rates(), vec![2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn degenerate_node_reports_node_and_attribute() {
        let values = Array2::from_elem((5, 1), 2.0);
        let err = NodeSeries::new("flow", vec!["q".into()], values, vec![1; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("flow") && msg.contains("q"), "{msg}");
    }

    #[test]
    fn calendar_months() {
        let start = NaiveDate::from_ymd_opt(2001, 1, 30).unwrap();
        let dates = daily_calendar(start, 3);
        assert_eq!(months_of(&dates), vec![1, 1, 2]);
    }
}
