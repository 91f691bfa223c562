//! Writes an SVG line plot with its CSV sidecar and a relation table.

use rirl::report::{emit_plot, emit_tables, relation_table, MetricRow, Series};

fn main() -> rirl::Result<()> {
    let dir = std::env::temp_dir().join("rirl-report-example");
    let truth = Series {
        label: "flow".into(),
        values: (0..120).map(|t| (t as f64 / 9.0).sin().max(0.0)).collect(),
    };
    let fit = Series {
        label: "A -> B".into(),
        values: truth.values.iter().map(|v| 0.9 * v + 0.02).collect(),
    };
    let files = emit_plot(&truth, &[fit], &dir.join("flow.svg"))?;
    println!("plot: {} and {}", files.svg.display(), files.csv.display());

    let rows = vec![
        MetricRow::new("B", "A", 0.08, 0.31, 0.12, 1.4)?,
        MetricRow::new("D", "BC", 0.11, 0.52, 0.20, 2.9)?,
    ];
    for path in emit_tables(&[relation_table(&rows)?], &dir)? {
        println!("table: {}", path.display());
    }
    Ok(())
}
