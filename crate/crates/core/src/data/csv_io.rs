//! Wide CSV exchange: `date,<node>.<attr>,...`, one row per day.

use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;

use crate::data::dag::DagSpec;
use crate::data::series::{months_of, Dataset, NodeSeries};
use crate::error::{Error, Result};

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::persistence(path, e.to_string()))?;
    let mut header = vec!["date".to_string()];
    for n in &data.nodes {
        header.extend(n.attributes.iter().map(|a| format!("{}.{a}", n.name)));
    }
    w.write_record(&header).map_err(|e| Error::persistence(path, e.to_string()))?;
    let mut record = Vec::with_capacity(header.len());
    for (t, date) in data.dates.iter().enumerate() {
        record.clear();
        record.push(date.format("%Y-%m-%d").to_string());
        for n in &data.nodes {
            // Display for f64 is the shortest text that parses back exactly.
            record.extend(n.values.row(t).iter().map(|v| v.to_string()));
        }
        w.write_record(&record).map_err(|e| Error::persistence(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::persistence(path, e.to_string()))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(std::io::BufReader::new(file));
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    if header.get(0) != Some("date") {
        return Err(Error::Data(format!("{}: line 1: first column must be `date`", path.display())));
    }

    // (node, attributes, column indices) in first-appearance order.
    let mut groups: Vec<(String, Vec<String>, Vec<usize>)> = Vec::new();
    for (col, field) in header.iter().enumerate().skip(1) {
        let Some((node, attr)) = field.split_once('.') else {
            return Err(Error::Data(format!(
                "{}: line 1: column {field:?} is not <node>.<attribute>",
                path.display()
            )));
        };
        match groups.iter_mut().find(|g| g.0 == node) {
            Some(g) => {
                if g.1.iter().any(|a| a == attr) {
                    return Err(Error::Data(format!("{}: line 1: duplicate column {field}", path.display())));
                }
                g.1.push(attr.to_string());
                g.2.push(col);
            }
            None => groups.push((node.to_string(), vec![attr.to_string()], vec![col])),
        }
    }

    let width = header.len();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("{}: line {line}: {e}", path.display())))?;
        if rec.len() != width {
            return Err(Error::Data(format!(
                "{}: line {line}: {} fields, expected {width}",
                path.display(),
                rec.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("{}: line {line}: bad date {:?}: {e}", path.display(), &rec[0])))?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                let what = if date == *prev { "duplicate" } else { "out-of-order" };
                return Err(Error::Data(format!("{}: line {line}: {what} date {date}", path.display())));
            }
            if date != prev.succ_opt().expect("calendar range") {
                return Err(Error::Data(format!("{}: line {line}: missing days before {date}", path.display())));
            }
        }
        dates.push(date);
        for (col, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {line}: column {}: unparseable number {field:?}",
                    path.display(),
                    &header[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: line {line}: column {}: non-finite value",
                    path.display(),
                    &header[col]
                )));
            }
            cells.push(v);
        }
    }
    if dates.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let table = Array2::from_shape_vec((dates.len(), width - 1), cells).expect("rectangular by construction");
    let months = months_of(&dates);
    let mut nodes = Vec::with_capacity(groups.len());
    for (name, attrs, cols) in groups {
        let values = Array2::from_shape_fn((dates.len(), cols.len()), |(t, a)| table[[t, cols[a] - 1]]);
        nodes.push(NodeSeries::new(name, attrs, values, months.clone())?);
    }
    Dataset::new(dates, nodes)
}

impl Dataset {
    /// Checks that every node and attribute named by `spec` is present.
    pub fn check_against(&self, spec: &DagSpec) -> Result<()> {
        for node in &spec.nodes {
            let Some(series) = self.get(&node.name) else {
                return Err(Error::Data(format!("missing column {}.{}", node.name, node.attribute_names()[0])));
            };
            for attr in node.attribute_names() {
                if !series.attributes.contains(&attr) {
                    return Err(Error::Data(format!("missing column {}.{attr}", node.name)));
                }
            }
        }
        Ok(())
    }
}
