//! Round-by-round exploration log.
//!
//! Markers: `S` selected this round, `N` scored for the first time this
//! round, `T` invalidated by this round's selection.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::explore::{Edge, ExplorationState, RoundRecord};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundLog {
    /// One row per round, one column per candidate edge.
    pub wide_csv: String,
    /// One row per round and candidate with both strengths.
    pub long_csv: String,
    pub text: String,
}

impl RoundLog {
    /// Writes `<stem>.csv`, `<stem>_long.csv` and `<stem>.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e.to_string()))?;
        let files = [
            (dir.join(format!("{stem}.csv")), &self.wide_csv),
            (dir.join(format!("{stem}_long.csv")), &self.long_csv),
            (dir.join(format!("{stem}.txt")), &self.text),
        ];
        let mut out = Vec::new();
        for (path, body) in files {
            std::fs::write(&path, body).map_err(|e| Error::persistence(&path, e.to_string()))?;
            out.push(path);
        }
        Ok(out)
    }
}

pub fn markers(record: &RoundRecord, edge: &Edge) -> String {
    let mut m = String::new();
    if record.newly.contains(edge) {
        m.push('N');
    }
    if &record.selected == edge {
        m.push('S');
    }
    if record.trimmed.contains(edge) {
        m.push('T');
    }
    m
}

/// Renders the log of a finished exploration.
pub fn emit_round_log(state: &ExplorationState) -> Result<RoundLog> {
    if state.log.is_empty() {
        return Err(Error::Exploration("no completed round to log".into()));
    }
    let columns: Vec<Edge> = state
        .log
        .iter()
        .flat_map(|r| r.candidates.iter().map(|c| c.edge.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut wide = String::from("round,selected");
    for e in &columns {
        write!(wide, ",{e}").expect("string write");
    }
    wide.push('\n');
    let mut long = String::from("round,edge,context,k_with,k_without,gain,markers\n");
    let mut text = String::new();
    for r in &state.log {
        write!(wide, "{},{}", r.round, r.selected).expect("string write");
        for e in &columns {
            wide.push(',');
            if let Some(c) = r.candidates.iter().find(|c| &c.edge == e) {
                let m = markers(r, e);
                if m.is_empty() {
                    write!(wide, "{}", c.gain).expect("string write");
                } else {
                    write!(wide, "{}({m})", c.gain).expect("string write");
                }
            }
        }
        wide.push('\n');

        write!(text, "#{:<3}", r.round).expect("string write");
        for c in &r.candidates {
            writeln!(
                long,
                "{},{},{},{},{},{},{}",
                r.round,
                c.edge,
                c.context.join(" "),
                c.k_with,
                c.k_without,
                c.gain,
                markers(r, &c.edge)
            )
            .expect("string write");
            let m = markers(r, &c.edge);
            write!(text, "  {} {:.4}", c.edge, c.gain).expect("string write");
            if !m.is_empty() {
                write!(text, " [{m}]").expect("string write");
            }
        }
        text.push('\n');
    }
    writeln!(
        text,
        "selected: {}",
        state.edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
    )
    .expect("string write");
    Ok(RoundLog {
        wide_csv: wide,
        long_csv: long,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explore::{explore, CandidateMap, ExploreConfig, FixedStrengths};

    fn run() -> ExplorationState {
        let nodes: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let k = FixedStrengths::from_pairs(&[
            (&["A"][..], "B", 1.0),
            (&["A"][..], "C", 2.0),
            (&["B"][..], "C", 1.5),
            (&["A", "B"][..], "C", 2.5),
        ]);
        explore(&nodes, &CandidateMap::forward(&nodes), &k, &ExploreConfig::default()).unwrap()
    }

    #[test]
    fn one_round_log_has_one_row_and_one_selection() {
        let nodes: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let k = FixedStrengths::from_pairs(&[(&["A"][..], "B", 0.25)]);
        let s = explore(&nodes, &CandidateMap::forward(&nodes), &k, &ExploreConfig::default()).unwrap();
        let log = emit_round_log(&s).unwrap();
        assert_eq!(log.wide_csv, "round,selected,A->B\n1,A->B,0.25(NS)\n");
        assert_eq!(log.wide_csv.matches('S').count(), 1);
    }

    #[test]
    fn markers_and_layout() {
        let log = emit_round_log(&run()).unwrap();
        let lines: Vec<&str> = log.wide_csv.lines().collect();
        assert_eq!(lines[0], "round,selected,A->B,A->C,B->C");
        assert_eq!(lines[1], "1,A->B,1(NS),2(N),");
        assert_eq!(lines[2], "2,B->C,,2(T),1.5(NS)");
        assert_eq!(lines[3], "3,A->C,,1(S),");
        assert!(log.text.contains("selected: A->B, B->C, A->C"));
    }

    #[test]
    fn logged_gains_equal_recomputed_differences() {
        let log = emit_round_log(&run()).unwrap();
        let mut rdr = csv::Reader::from_reader(log.long_csv.as_bytes());
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let with: f64 = rec[3].parse().unwrap();
            let without: f64 = rec[4].parse().unwrap();
            let gain: f64 = rec[5].parse().unwrap();
            assert_eq!(gain, with - without);
            rows += 1;
        }
        assert_eq!(rows, 5);
    }

    #[test]
    fn empty_state_cannot_be_logged() {
        assert!(emit_round_log(&ExplorationState::default()).is_err());
    }
}
