//! Result tables and reconstruction plots.

pub mod plot;
pub mod tables;

pub use plot::{emit_plot, PlotFiles, Series};
pub use tables::{
    emit_tables, exploration_table, node_table, read_metric_rows, read_node_rows, relation_table, round_table, MetricRow,
    NodeRow, Table, TableKind,
};
