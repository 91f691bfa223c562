//! Datasets: synthetic generation, CSV exchange, scaling and folds.

pub mod csv_io;
pub mod dag;
pub mod folds;
pub mod scale;
pub mod series;
pub mod synth;

pub use csv_io::{load_csv, save_csv};
pub use dag::{DagSpec, EdgeSpec, NodeSpec};
pub use folds::{kfold_split, FoldPlan};
pub use scale::{scale_fit, Scaler};
pub use series::{Dataset, NodeSeries};
pub use synth::{synth_generate, synthesize, EdgeContribution, Synthesis};
