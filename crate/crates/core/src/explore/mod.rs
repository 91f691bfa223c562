//! Greedy latent-space DAG exploration scored by KLD gain.
//!
//! Each round evaluates every admissible candidate edge `p -> n` by the gain
//! `K(beta + p, n) - K(beta, n)`, where `beta` is the set of parents already
//! selected for `n` and `K` is the causal strength (lower is stronger), then
//! selects the smallest gain. Evaluations into the node that just gained a
//! parent are invalidated and recomputed against the new context.

pub mod gaussian;
pub mod log;
pub mod strength;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::dag::DagSpec;
use crate::error::{Error, Result};

pub use gaussian::{gaussian_kld, gaussian_stats, kld_monte_carlo, kld_to_target, GaussianStats, VARIANCE_FLOOR};
pub use log::{emit_round_log, RoundLog};
pub use strength::{causal_strength, kld_gain, FixedStrengths, StrengthOracle, TrainedStrengths};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub parent: String,
    pub child: String,
}

impl Edge {
    pub fn new(parent: &str, child: &str) -> Self {
        Edge {
            parent: parent.to_string(),
            child: child.to_string(),
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.parent, self.child)
    }
}

/// Allowed parents of every node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateMap {
    parents: BTreeMap<String, BTreeSet<String>>,
}

impl CandidateMap {
    /// A map over `nodes` with no allowed edges.
    pub fn new<S: AsRef<str>>(nodes: &[S]) -> Self {
        CandidateMap {
            parents: nodes.iter().map(|n| (n.as_ref().to_string(), BTreeSet::new())).collect(),
        }
    }

    pub fn allow(&mut self, parent: &str, child: &str) -> Result<()> {
        if parent == child {
            return Err(Error::Config(format!("candidate self-loop at {child}")));
        }
        if !self.parents.contains_key(parent) {
            return Err(Error::Config(format!("unknown candidate parent {parent}")));
        }
        self.parents
            .get_mut(child)
            .ok_or_else(|| Error::Config(format!("unknown candidate child {child}")))?
            .insert(parent.to_string());
        Ok(())
    }

    pub fn from_edges<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self> {
        let mut map = Self::new(nodes);
        for (p, c) in edges {
            map.allow(p.as_ref(), c.as_ref())?;
        }
        Ok(map)
    }

    /// Every edge from an earlier node to a later one.
    pub fn forward<S: AsRef<str>>(nodes: &[S]) -> Self {
        let mut map = Self::new(nodes);
        for (i, c) in nodes.iter().enumerate() {
            for p in &nodes[..i] {
                map.allow(p.as_ref(), c.as_ref()).expect("distinct nodes");
            }
        }
        map
    }

    /// The true edges of a generator spec.
    pub fn from_dag(spec: &DagSpec) -> Result<Self> {
        let names: Vec<&str> = spec.nodes.iter().map(|n| n.name.as_str()).collect();
        let mut map = Self::new(&names);
        for e in &spec.edges {
            map.allow(&e.cause, &e.effect)?;
        }
        Ok(map)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.parents.keys().map(String::as_str)
    }

    pub fn parents(&self, node: &str) -> impl Iterator<Item = &str> {
        self.parents.get(node).into_iter().flatten().map(String::as_str)
    }

    pub fn edge_count(&self) -> usize {
        self.parents.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_count() == 0
    }
}

/// One scored candidate edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub edge: Edge,
    /// Parents of the child selected before this evaluation.
    pub context: Vec<String>,
    pub k_with: f64,
    pub k_without: f64,
    pub gain: f64,
    pub round: usize,
    pub stale: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Every candidate of the round, ordered by edge.
    pub candidates: Vec<CandidateEval>,
    pub selected: Edge,
    /// Edges scored for the first time this round.
    pub newly: Vec<Edge>,
    /// Edges whose evaluations were invalidated by the selection.
    pub trimmed: Vec<Edge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub gain_threshold: f64,
    pub max_rounds: usize,
    pub workers: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            gain_threshold: f64::INFINITY,
            max_rounds: 64,
            workers: 1,
        }
    }
}

/// Bookkeeping counters of the evaluation cache.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub computed: usize,
    pub reused: usize,
    /// Reuses of an evaluation whose context no longer matched; always zero.
    pub stale_reuses: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationState {
    pub nodes: Vec<String>,
    pub reachable: BTreeSet<String>,
    pub edges: Vec<Edge>,
    pub cache: BTreeMap<Edge, CandidateEval>,
    pub log: Vec<RoundRecord>,
    pub stats: CacheStats,
}

impl ExplorationState {
    pub fn selected_parents(&self, node: &str) -> Vec<String> {
        let mut p: Vec<String> = self.edges.iter().filter(|e| e.child == node).map(|e| e.parent.clone()).collect();
        p.sort();
        p
    }

    /// Parents of `node` selected in the rounds before `round`.
    pub fn selected_parents_before(&self, round: usize, node: &str) -> Vec<String> {
        let upto = round.saturating_sub(1).min(self.edges.len());
        let mut p: Vec<String> = self.edges[..upto]
            .iter()
            .filter(|e| e.child == node)
            .map(|e| e.parent.clone())
            .collect();
        p.sort();
        p
    }

    /// Whether `to` is reachable from `from` along selected edges.
    pub fn reaches(&self, from: &str, to: &str) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.edges.iter().filter(|e| e.parent == n).map(|e| e.child.as_str()));
            }
        }
        false
    }

    pub fn is_acyclic(&self) -> bool {
        self.edges.iter().all(|e| {
            let without: Vec<Edge> = self.edges.iter().filter(|x| *x != e).cloned().collect();
            let probe = ExplorationState {
                edges: without,
                ..ExplorationState::default()
            };
            !probe.reaches(&e.child, &e.parent)
        })
    }

    fn candidates(&self, map: &CandidateMap) -> Vec<Edge> {
        let chosen: BTreeSet<&Edge> = self.edges.iter().collect();
        let mut out = Vec::new();
        for n in &self.nodes {
            for p in map.parents(n) {
                let e = Edge::new(p, n);
                if self.reachable.contains(p) && !chosen.contains(&e) && !self.reaches(n, p) {
                    out.push(e);
                }
            }
        }
        out.sort();
        out
    }
}

/// Smallest gain, ties broken by edge order.
pub fn select_min(candidates: &[CandidateEval]) -> Option<&CandidateEval> {
    candidates.iter().min_by(|a, b| a.gain.total_cmp(&b.gain).then_with(|| a.edge.cmp(&b.edge)))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Runs the exploration over `nodes` restricted to `candidates`.
pub fn explore<S: AsRef<str>, O: StrengthOracle + ?Sized>(
    nodes: &[S],
    candidates: &CandidateMap,
    oracle: &O,
    cfg: &ExploreConfig,
) -> Result<ExplorationState> {
    let nodes: Vec<String> = nodes.iter().map(|n| n.as_ref().to_string()).collect();
    if cfg.max_rounds == 0 {
        return Err(Error::Config("max_rounds must be positive".into()));
    }
    for n in &nodes {
        if !candidates.nodes().any(|m| m == n) {
            return Err(Error::Config(format!("node {n} is missing from the candidate map")));
        }
    }
    let mut state = ExplorationState {
        nodes: nodes.clone(),
        reachable: nodes
            .iter()
            .filter(|n| candidates.parents(n).next().is_none())
            .cloned()
            .collect(),
        ..ExplorationState::default()
    };
    let all: BTreeSet<String> = nodes.iter().cloned().collect();
    let workers = pool(cfg.workers)?;

    for round in 1..=cfg.max_rounds {
        let edges = state.candidates(candidates);
        if edges.is_empty() {
            if round == 1 {
                return Err(Error::Exploration("no admissible candidate edge in the first round".into()));
            }
            break;
        }

        let mut evals = Vec::with_capacity(edges.len());
        let mut todo = Vec::new();
        let mut newly = Vec::new();
        for e in &edges {
            let context = state.selected_parents(&e.child);
            match state.cache.get(e) {
                Some(c) if !c.stale => {
                    if c.context != context {
                        state.stats.stale_reuses += 1;
                    }
                    state.stats.reused += 1;
                    evals.push(c.clone());
                }
                cached => {
                    if cached.is_none() {
                        newly.push(e.clone());
                    }
                    todo.push((e.clone(), context));
                }
            }
        }

        let mut sets: BTreeSet<(Vec<String>, String)> = BTreeSet::new();
        for (e, ctx) in &todo {
            if !ctx.is_empty() {
                sets.insert((ctx.clone(), e.child.clone()));
            }
            let mut with = ctx.clone();
            with.push(e.parent.clone());
            with.sort();
            sets.insert((with, e.child.clone()));
        }
        let sets: Vec<(Vec<String>, String)> = sets.into_iter().collect();
        let strengths: Vec<Result<f64>> =
            workers.install(|| sets.par_iter().map(|(c, n)| causal_strength(oracle, c, n)).collect());
        let mut table: BTreeMap<(Vec<String>, String), f64> = BTreeMap::new();
        for (key, k) in sets.into_iter().zip(strengths) {
            table.insert(key, k?);
        }
        table.insert((Vec::new(), String::new()), 0.0);

        for (e, ctx) in todo {
            let mut with = ctx.clone();
            with.push(e.parent.clone());
            with.sort();
            let k_with = table[&(with, e.child.clone())];
            let k_without = if ctx.is_empty() { 0.0 } else { table[&(ctx.clone(), e.child.clone())] };
            let eval = CandidateEval {
                edge: e.clone(),
                context: ctx,
                k_with,
                k_without,
                gain: k_with - k_without,
                round,
                stale: false,
            };
            state.stats.computed += 1;
            state.cache.insert(e, eval.clone());
            evals.push(eval);
        }
        evals.sort_by(|a, b| a.edge.cmp(&b.edge));

        let best = select_min(&evals).expect("non-empty").clone();
        if state.reachable == all && best.gain > cfg.gain_threshold {
            break;
        }
        let n = best.edge.child.clone();
        state.edges.push(best.edge.clone());
        state.reachable.insert(n.clone());
        let mut trimmed = Vec::new();
        for (e, c) in state.cache.iter_mut() {
            if e.child == n && !c.stale {
                c.stale = true;
                if *e != best.edge {
                    trimmed.push(e.clone());
                }
            }
        }
        if !state.is_acyclic() {
            return Err(Error::Exploration(format!("selecting {} closed a cycle", best.edge)));
        }
        state.log.push(RoundRecord {
            round,
            candidates: evals,
            selected: best.edge,
            newly,
            trimmed,
        });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn candidate_map_rejects_self_loops_and_unknown_nodes() {
        let mut m = CandidateMap::new(&["A", "B"]);
        assert!(m.allow("A", "A").is_err());
        assert!(m.allow("A", "Z").is_err());
        m.allow("A", "B").unwrap();
        assert_eq!(m.parents("B").collect::<Vec<_>>(), vec!["A"]);
        assert_eq!(CandidateMap::forward(&["A", "B", "C", "D"]).edge_count(), 6);
    }

    #[test]
    fn two_nodes_single_candidate() {
        let m = CandidateMap::from_edges(&["A", "B"], &[("A", "B")]).unwrap();
        let k = FixedStrengths::from_pairs(&[(&["A"][..], "B", 3.0)]);
        let s = explore(&names(&["A", "B"]), &m, &k, &ExploreConfig::default()).unwrap();
        assert_eq!(s.edges, vec![Edge::new("A", "B")]);
        assert_eq!(s.log.len(), 1);
    }

    #[test]
    fn empty_map_is_an_exploration_error() {
        let m = CandidateMap::new(&["A", "B"]);
        let k = FixedStrengths::default();
        let err = explore(&names(&["A", "B"]), &m, &k, &ExploreConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Exploration(_)));
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let m = CandidateMap::from_edges(&["A", "B", "C"], &[("A", "C"), ("B", "C")]).unwrap();
        let k = FixedStrengths::from_pairs(&[(&["A"][..], "C", 1.0), (&["B"][..], "C", 1.0), (&["A", "B"][..], "C", 5.0)]);
        let s = explore(&names(&["A", "B", "C"]), &m, &k, &ExploreConfig::default()).unwrap();
        assert_eq!(s.edges[0], Edge::new("A", "C"));
        assert_eq!(s.edges[1], Edge::new("B", "C"));
        assert_eq!(s.log[1].candidates[0].gain, 4.0);
    }

    #[test]
    fn selection_into_a_node_invalidates_its_evaluations() {
        let m = CandidateMap::forward(&["A", "B", "C"]);
        let k = FixedStrengths::from_pairs(&[
            (&["A"][..], "B", 1.0),
            (&["A"][..], "C", 2.0),
            (&["B"][..], "C", 1.5),
            (&["A", "B"][..], "C", 2.5),
        ]);
        let s = explore(&names(&["A", "B", "C"]), &m, &k, &ExploreConfig::default()).unwrap();
        let order: Vec<String> = s.edges.iter().map(|e| e.to_string()).collect();
        assert_eq!(order, vec!["A->B", "B->C", "A->C"]);
        assert_eq!(s.log[1].trimmed, vec![Edge::new("A", "C")]);
        assert_eq!(s.log[2].candidates[0].context, vec!["B".to_string()]);
        assert_eq!(s.log[2].candidates[0].gain, 1.0);
        assert_eq!(s.stats.stale_reuses, 0);
        // A->C computed in round 1 and recomputed in round 3; reused in round 2.
        assert_eq!(s.stats.reused, 1);
    }

    #[test]
    fn threshold_stops_once_everything_is_reachable() {
        let m = CandidateMap::forward(&["A", "B", "C"]);
        let k = FixedStrengths::from_pairs(&[
            (&["A"][..], "B", 1.0),
            (&["A"][..], "C", 2.0),
            (&["B"][..], "C", 1.5),
            (&["A", "B"][..], "C", 2.5),
        ]);
        let cfg = ExploreConfig {
            gain_threshold: 0.5,
            ..ExploreConfig::default()
        };
        let s = explore(&names(&["A", "B", "C"]), &m, &k, &cfg).unwrap();
        assert_eq!(s.edges.len(), 2);
        let capped = explore(&names(&["A", "B", "C"]), &m, &k, &ExploreConfig { max_rounds: 1, ..cfg }).unwrap();
        assert_eq!(capped.edges.len(), 1);
    }

    #[test]
    fn missing_strength_is_an_exploration_error() {
        let m = CandidateMap::forward(&["A", "B"]);
        let err = explore(&names(&["A", "B"]), &m, &FixedStrengths::default(), &ExploreConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Exploration(_)), "{err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn oracle_from(values: &[f64]) -> FixedStrengths {
            let nodes = ["A", "B", "C", "D"];
            let mut k = FixedStrengths::default();
            let mut it = values.iter().cycle();
            for (ci, c) in nodes.iter().enumerate() {
                for mask in 1u32..(1 << ci) {
                    let set: Vec<&str> = (0..ci).filter(|i| mask & (1 << i) != 0).map(|i| nodes[i]).collect();
                    k.insert(&set, c, *it.next().unwrap());
                }
            }
            k
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn rounds_select_the_logged_argmin_and_stay_acyclic(values in prop::collection::vec(-5.0f64..20.0, 11)) {
                let nodes = names(&["A", "B", "C", "D"]);
                let k = oracle_from(&values);
                let s = explore(&nodes, &CandidateMap::forward(&nodes), &k, &ExploreConfig::default()).unwrap();
                prop_assert_eq!(s.edges.len(), 6);
                prop_assert!(s.is_acyclic());
                prop_assert_eq!(s.stats.stale_reuses, 0);
                for r in &s.log {
                    let best = select_min(&r.candidates).unwrap();
                    prop_assert_eq!(&best.edge, &r.selected);
                    for c in &r.candidates {
                        prop_assert_eq!(c.gain, c.k_with - c.k_without);
                        prop_assert_eq!(&c.context, &s.selected_parents_before(r.round, &c.edge.child));
                    }
                }
            }
        }
    }
}
