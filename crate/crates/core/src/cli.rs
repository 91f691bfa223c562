//! Command-line front end: `synth`, `init`, `edge`, `explore` and `report`.
//!
//! Every run reads a flat TOML document of [`RunConfig`] keys; each key can
//! be overridden by a flag of the same name.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, load_csv, save_csv, synth_generate, DagSpec, Dataset};
use crate::error::{Error, Result};
use crate::explore::{
    emit_round_log, explore, CandidateMap, Edge, ExplorationState, ExploreConfig, RoundRecord, TrainedStrengths,
};
use crate::nn::AdamConfig;
use crate::node::{apply_mask, defeaturize_batch, feature_matrix, train_node_autoencoder, NodeAeConfig, NodeAutoencoder};
use crate::persist::{load_model, save_model};
use crate::relation::{route_batch, stack_component, train_micro_causal, MicroCausalModel, RelationConfig, RelationId, RoutingSpec, StackState};
use crate::report::{
    emit_plot, emit_tables, exploration_table, node_table, relation_table, round_table, MetricRow, NodeRow, Series,
};

/// Longest stretch of steps drawn in one reconstruction plot.
const PLOT_STEPS: usize = 365;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub latent_dim: usize,
    pub num_keys: usize,
    pub hidden: usize,
    pub window_n: usize,
    pub window_m: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_kld: f64,
    pub lambda_mask: f64,
    pub folds: usize,
    pub gain_threshold: f64,
    pub max_rounds: usize,
    pub seed: u64,
    pub workers: usize,
    pub data: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            latent_dim: 16,
            num_keys: 4,
            hidden: 128,
            window_n: 10,
            window_m: 1,
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            lambda_kld: 0.1,
            lambda_mask: 1.0,
            folds: 4,
            gain_threshold: f64::INFINITY,
            max_rounds: 64,
            seed: 0,
            workers: 1,
            data: PathBuf::from("data.csv"),
            models: PathBuf::from("models"),
            reports: PathBuf::from("reports"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("latent_dim", self.latent_dim),
            ("num_keys", self.num_keys),
            ("hidden", self.hidden),
            ("window_n", self.window_n),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("folds", self.folds),
            ("max_rounds", self.max_rounds),
            ("workers", self.workers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.window_m != 1 {
            return Err(Error::Config(format!("window_m must be 1, got {}", self.window_m)));
        }
        if !(self.lr > 0.0) || !(self.lambda_kld >= 0.0) || !(self.lambda_mask >= 0.0) || self.gain_threshold.is_nan() {
            return Err(Error::Config("lr must be positive; lambda_kld, lambda_mask and gain_threshold non-negative numbers".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn node_config(&self) -> NodeAeConfig {
        NodeAeConfig {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            num_keys: self.num_keys,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda_mask: self.lambda_mask,
            adam: self.adam(),
            folds: self.folds,
            seed: self.seed,
        }
    }

    pub fn relation_config(&self) -> RelationConfig {
        RelationConfig {
            window_n: self.window_n,
            window_m: self.window_m,
            hidden: self.hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda_kld: self.lambda_kld,
            lambda_mask: self.lambda_mask,
            adam: self.adam(),
            folds: self.folds,
            seed: self.seed,
        }
    }

    pub fn explore_config(&self) -> ExploreConfig {
        ExploreConfig {
            gain_threshold: self.gain_threshold,
            max_rounds: self.max_rounds,
            workers: self.workers,
        }
    }
}

/// Flags overriding configuration keys.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, alias = "latent_dim", global = true)]
    pub latent_dim: Option<usize>,
    #[arg(long, alias = "num_keys", global = true)]
    pub num_keys: Option<usize>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, alias = "window_n", global = true)]
    pub window_n: Option<usize>,
    #[arg(long, alias = "window_m", global = true)]
    pub window_m: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, alias = "batch_size", global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, alias = "lambda_kld", global = true)]
    pub lambda_kld: Option<f64>,
    #[arg(long, alias = "lambda_mask", global = true)]
    pub lambda_mask: Option<f64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, alias = "gain_threshold", global = true)]
    pub gain_threshold: Option<f64>,
    #[arg(long, alias = "max_rounds", global = true)]
    pub max_rounds: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, env = "RIRL_WORKERS", global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub models: Option<PathBuf>,
    #[arg(long, global = true)]
    pub reports: Option<PathBuf>,
}

impl Overrides {
    /// The configuration file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = v.clone(); })* };
        }
        set!(
            latent_dim, num_keys, hidden, window_n, window_m, lr, epochs, batch_size, lambda_kld, lambda_mask, folds,
            gain_threshold, max_rounds, seed, workers, data, models, reports
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Parser, Debug)]
#[command(name = "rirl", version, about = "Relation-indexed representation learning and latent-space causal exploration")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset from a DAG description.
    Synth {
        /// DAG JSON file, or one of the built-in names `watershed`, `tiered-five`.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        days: usize,
        /// Output CSV; defaults to the configured data path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one node autoencoder per node.
    Init,
    /// Train the relation from a comma-separated cause list to an effect.
    Edge {
        #[arg(long)]
        cause: String,
        #[arg(long)]
        effect: String,
    },
    /// Explore the causal graph in latent space.
    Explore {
        /// Text file with one `parent->child` edge per line; defaults to
        /// every forward edge in dataset column order.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Render tables (`csv`) or reconstruction plots (`svg`) of a run.
    Report {
        /// Run directory; defaults to the configured reports path.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Error::Config(String::new()).exit_code() } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("rirl: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<String> {
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Synth { spec, days, out } => {
            let out = out.clone().unwrap_or_else(|| cfg.data.clone());
            Ok(cmd_synth(&load_spec(spec)?, *days, cfg.seed, &out)?.1)
        }
        Command::Init => Ok(cmd_init(&cfg)?.summary),
        Command::Edge { cause, effect } => {
            let causes: Vec<&str> = cause.split(',').map(str::trim).filter(|c| !c.is_empty()).collect();
            let (_, row) = cmd_edge(&causes, effect, &cfg)?;
            Ok(relation_table(&[row])?.csv)
        }
        Command::Explore { candidates } => Ok(cmd_explore(candidates.as_deref(), &cfg)?.summary),
        Command::Report { run, format } => {
            let run = run.clone().unwrap_or_else(|| cfg.reports.clone());
            let files = cmd_report(&run, format)?;
            Ok(files.iter().map(|p| format!("{}\n", p.display())).collect())
        }
    }
}

pub fn load_spec(spec: &str) -> Result<DagSpec> {
    match spec {
        "watershed" => Ok(DagSpec::watershed()),
        "tiered-five" => Ok(DagSpec::tiered_five()),
        path => DagSpec::load(Path::new(path)),
    }
}

/// Generates `days` steps, writes them to `out` and returns the dataset
/// with its node summary table.
pub fn cmd_synth(spec: &DagSpec, days: usize, seed: u64, out: &Path) -> Result<(Dataset, String)> {
    if days == 0 {
        return Err(Error::Config("days must be positive".into()));
    }
    let data = synth_generate(spec, days, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))?;
    }
    save_csv(&data, out)?;
    let rows = data.nodes.iter().map(|n| NodeRow::summarize(n, None)).collect::<Result<Vec<_>>>()?;
    Ok((data, node_table(&rows)?.csv))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

fn node_path(models: &Path, node: &str) -> PathBuf {
    models.join("nodes").join(format!("{node}.json"))
}

fn relation_path(dir: &Path, id: &RelationId) -> PathBuf {
    dir.join("relations").join(format!("{}-{}.json", id.causes.join(""), id.effect))
}

pub struct InitOutput {
    pub files: Vec<PathBuf>,
    pub metrics_csv: PathBuf,
    pub summary: String,
}

/// Trains and stores a node autoencoder for every node of the dataset.
pub fn cmd_init(cfg: &RunConfig) -> Result<InitOutput> {
    let data = load_csv(&cfg.data)?;
    let node_cfg = cfg.node_config();
    let trained = pool(cfg.workers)?.install(|| {
        data.nodes
            .par_iter()
            .map(|s| train_node_autoencoder(s, &node_cfg))
            .collect::<Vec<_>>()
    });
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for (series, t) in data.nodes.iter().zip(trained) {
        let t = t?;
        let path = node_path(&cfg.models, &series.name);
        save_model(&t.model, &path)?;
        files.push(path);
        rows.push(NodeRow::summarize(series, Some(&t.metrics))?);
    }
    let table = node_table(&rows)?;
    let written = emit_tables(std::slice::from_ref(&table), &cfg.models)?;
    Ok(InitOutput {
        files,
        metrics_csv: written[0].clone(),
        summary: table.csv,
    })
}

fn load_nodes(models: &Path, names: &[&str]) -> Result<Vec<NodeAutoencoder>> {
    names.iter().map(|n| load_model(&node_path(models, n))).collect()
}

fn check_nodes(data: &Dataset, names: &[&str]) -> Result<()> {
    for n in names {
        if data.get(n).is_none() {
            return Err(Error::Config(format!("unknown node {n}")));
        }
    }
    Ok(())
}

/// Trains one relation and stores it under the models directory.
pub fn cmd_edge(causes: &[&str], effect: &str, cfg: &RunConfig) -> Result<(PathBuf, MetricRow)> {
    if causes.is_empty() {
        return Err(Error::Config("at least one cause is required".into()));
    }
    let data = load_csv(&cfg.data)?;
    check_nodes(&data, causes)?;
    check_nodes(&data, &[effect])?;
    let cause_models = load_nodes(&cfg.models, causes)?;
    let effect_model: NodeAutoencoder = load_model(&node_path(&cfg.models, effect))?;
    let refs: Vec<&NodeAutoencoder> = cause_models.iter().collect();
    let model = train_micro_causal(&refs, &effect_model, &data, &cfg.relation_config())?;
    let path = relation_path(&cfg.models, model.id());
    save_model(&model, &path)?;
    Ok((path, MetricRow::from_model(&model)?))
}

pub fn read_candidates(path: &Path, nodes: &[&str]) -> Result<CandidateMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut map = CandidateMap::new(nodes);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (p, c) = line
            .split_once("->")
            .ok_or_else(|| Error::Config(format!("{}: line {}: expected parent->child", path.display(), i + 1)))?;
        map.allow(p.trim(), c.trim())?;
    }
    Ok(map)
}

#[derive(Serialize, Deserialize)]
struct ExplorationRecord {
    nodes: Vec<String>,
    edges: Vec<Edge>,
    log: Vec<RoundRecord>,
}

pub struct ExploreOutput {
    pub edges: Vec<Edge>,
    pub state: ExplorationState,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Explores the graph and writes the run directory: edge list, round log,
/// summary table, every trained relation and the resolved configuration.
pub fn cmd_explore(candidates: Option<&Path>, cfg: &RunConfig) -> Result<ExploreOutput> {
    let data = load_csv(&cfg.data)?;
    let names = data.names();
    let map = match candidates {
        Some(p) => read_candidates(p, &names)?,
        None => CandidateMap::forward(&names),
    };
    let nodes = load_nodes(&cfg.models, &names)?;
    let oracle = TrainedStrengths::new(&data, nodes, cfg.relation_config());
    let state = explore(&names, &map, &oracle, &cfg.explore_config())?;
    let out = &cfg.reports;

    let mut files = emit_round_log(&state)?.write(out, "rounds")?;
    files.extend(emit_tables(&[exploration_table(&state)?], out)?);
    let edges_path = out.join("edges.txt");
    let listing: String = state.edges.iter().map(|e| format!("{e}\n")).collect();
    std::fs::write(&edges_path, &listing).map_err(|e| Error::persistence(&edges_path, e))?;
    files.push(edges_path);
    let record = ExplorationRecord {
        nodes: state.nodes.clone(),
        edges: state.edges.clone(),
        log: state.log.clone(),
    };
    let record_path = out.join("exploration.json");
    let text = serde_json::to_string_pretty(&record).map_err(|e| Error::persistence(&record_path, e))?;
    std::fs::write(&record_path, text).map_err(|e| Error::persistence(&record_path, e))?;
    files.push(record_path);
    for model in oracle.into_models().values() {
        let p = relation_path(out, model.id());
        save_model(model, &p)?;
        files.push(p);
    }
    let cfg_path = out.join("run.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::persistence(&cfg_path, e))?;
    files.push(cfg_path);

    let mut summary = String::new();
    for (i, e) in state.edges.iter().enumerate() {
        writeln!(summary, "{:>3}  {e}", i + 1).expect("string write");
    }
    Ok(ExploreOutput {
        edges: state.edges.clone(),
        state,
        files,
        summary,
    })
}

struct RunArtifacts {
    cfg: RunConfig,
    data: Dataset,
    nodes: Vec<NodeAutoencoder>,
    relations: BTreeMap<RelationId, MicroCausalModel>,
    state: ExplorationState,
}

fn read_run(run: &Path) -> Result<RunArtifacts> {
    let cfg_path = run.join("run.toml");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::persistence(&cfg_path, e))?;
    let cfg = RunConfig::from_toml(&text).map_err(|e| Error::persistence(&cfg_path, e))?;
    let record_path = run.join("exploration.json");
    let text = std::fs::read_to_string(&record_path).map_err(|e| Error::persistence(&record_path, e))?;
    let record: ExplorationRecord = serde_json::from_str(&text).map_err(|e| Error::persistence(&record_path, e))?;
    let data = load_csv(&cfg.data).map_err(|e| Error::persistence(&cfg.data, e))?;
    let names = data.names();
    let nodes = load_nodes(&cfg.models, &names)?;
    let dir = run.join("relations");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::persistence(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut relations = BTreeMap::new();
    for p in paths {
        let m: MicroCausalModel = load_model(&p)?;
        relations.insert(m.id().clone(), m);
    }
    let state = ExplorationState {
        nodes: record.nodes,
        edges: record.edges,
        log: record.log,
        ..ExplorationState::default()
    };
    Ok(RunArtifacts {
        cfg,
        data,
        nodes,
        relations,
        state,
    })
}

/// Unscaled first-attribute values of reduced reconstructions.
fn first_attribute(ae: &NodeAutoencoder, recon: &Array2<f64>, mask_prob: &Array2<f64>) -> Result<Vec<f64>> {
    let scaled = defeaturize_batch(recon.view(), ae.dim);
    let raw = ae.scaler.invert_matrix(scaled.view())?;
    raw.rows()
        .into_iter()
        .zip(mask_prob.rows())
        .map(|(v, p)| Ok(apply_mask(&v.to_vec(), &p.to_vec())?[0]))
        .collect()
}

/// Renders the tables or plots of a finished exploration run into
/// `<run>/report`.
pub fn cmd_report(run: &Path, format: &str) -> Result<Vec<PathBuf>> {
    if format != "csv" && format != "svg" {
        return Err(Error::Config(format!("unknown report format {format}; expected csv or svg")));
    }
    let art = read_run(run)?;
    let out = run.join("report");
    let plan = kfold_split(art.data.len(), art.cfg.folds)?;
    let holdout = plan.holdout(plan.last());
    if format == "csv" {
        let mut node_rows = Vec::new();
        for (series, ae) in art.data.nodes.iter().zip(&art.nodes) {
            let m = ae.evaluate(series, holdout.clone())?;
            node_rows.push(NodeRow::summarize(series, Some(&m))?);
        }
        let mut tables = vec![node_table(&node_rows)?];
        if !art.relations.is_empty() {
            let rows = art.relations.values().map(MetricRow::from_model).collect::<Result<Vec<_>>>()?;
            tables.push(relation_table(&rows)?);
        }
        tables.push(exploration_table(&art.state)?);
        tables.push(round_table(&art.state)?);
        return emit_tables(&tables, &out);
    }

    let mut files = Vec::new();
    let start = holdout.start.max(art.cfg.window_n - 1).max(holdout.end.saturating_sub(PLOT_STEPS));
    let steps = start..holdout.end;
    for (series, ae) in art.data.nodes.iter().zip(&art.nodes) {
        let parents = art.state.selected_parents(&series.name);
        if parents.is_empty() {
            continue;
        }
        let id = RelationId::new(&parents, &series.name);
        let Some(model) = art.relations.get(&id) else {
            continue;
        };
        let truth: Vec<f64> = series.values.slice(s![steps.clone(), 0]).to_vec();
        let dec = ae.decode_trace(ae.encode_batch(feature_matrix(series, steps.clone())?.view())?.view())?;
        let initialized = first_attribute(ae, &dec.recon, &dec.mask_prob)?;
        let mut stack = StackState::new();
        stack_component(&mut stack, model.clone(), 0)?;
        let routed = route_batch(&RoutingSpec::along(vec![id.clone()]), &stack, &art.data, steps.clone())?;
        let relation = first_attribute(&model.effect, &routed.recon, &routed.mask_prob)?;
        let lines = [
            Series::new("initialized", initialized),
            Series::new(format!("{} -> {}", id.causes.join(","), id.effect), relation),
        ];
        let p = out.join(format!("{}.svg", series.name));
        let f = emit_plot(&Series::new(format!("{}.{}", series.name, series.attributes[0]), truth), &lines, &p)?;
        files.push(f.svg);
        files.push(f.csv);
    }
    if files.is_empty() {
        return Err(Error::persistence(run, "no node has a trained relation from its selected parents"));
    }
    Ok(files)
}
