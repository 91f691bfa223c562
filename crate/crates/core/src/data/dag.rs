//! Ground-truth DAG descriptions for the synthetic generator.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_ar() -> f64 {
    0.6
}

fn default_noise() -> f64 {
    1.0
}

fn default_lag() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub dimension: usize,
    /// Target fraction of non-zero entries per attribute, in (0, 1].
    pub nonzero_rate: f64,
    pub seasonal_amplitude: f64,
    #[serde(default = "default_ar")]
    pub ar_coef: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
}

impl NodeSpec {
    pub fn new(name: &str, dimension: usize, nonzero_rate: f64, seasonal_amplitude: f64) -> Self {
        NodeSpec {
            name: name.to_string(),
            dimension,
            nonzero_rate,
            seasonal_amplitude,
            ar_coef: default_ar(),
            noise_std: default_noise(),
            attributes: Vec::new(),
        }
    }

    pub fn attribute_names(&self) -> Vec<String> {
        if self.attributes.is_empty() {
            (1..=self.dimension).map(|i| format!("v{i}")).collect()
        } else {
            self.attributes.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub cause: String,
    pub effect: String,
    pub tier: u8,
    #[serde(default = "default_lag")]
    pub lag: usize,
    pub gain: f64,
}

impl EdgeSpec {
    pub fn new(cause: &str, effect: &str, tier: u8, lag: usize, gain: f64) -> Self {
        EdgeSpec {
            cause: cause.to_string(),
            effect: effect.to_string(),
            tier,
            lag,
            gain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagSpec {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl DagSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DagSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid DAG spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("DAG spec serializes")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn parents_of(&self, name: &str) -> Vec<&EdgeSpec> {
        self.edges.iter().filter(|e| e.effect == name).collect()
    }

    pub fn has_edge(&self, cause: &str, effect: &str) -> bool {
        self.edges.iter().any(|e| e.cause == cause && e.effect == effect)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Config("DAG spec has no nodes".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.name.as_str()) {
                return Err(Error::Config(format!("duplicate node {}", n.name)));
            }
            if n.name.is_empty() || n.name.contains(['.', ',']) {
                return Err(Error::Config(format!("invalid node name {:?}", n.name)));
            }
            if n.dimension == 0 {
                return Err(Error::Config(format!("node {} has dimension 0", n.name)));
            }
            if !(n.nonzero_rate > 0.0 && n.nonzero_rate <= 1.0) {
                return Err(Error::Config(format!(
                    "node {}: non-zero rate {} outside (0, 1]",
                    n.name, n.nonzero_rate
                )));
            }
            if !n.seasonal_amplitude.is_finite() || !(n.noise_std > 0.0) || !(n.ar_coef.abs() < 1.0) {
                return Err(Error::Config(format!("node {}: invalid noise parameters", n.name)));
            }
            if !n.attributes.is_empty() && n.attributes.len() != n.dimension {
                return Err(Error::Config(format!(
                    "node {}: {} attribute names for dimension {}",
                    n.name,
                    n.attributes.len(),
                    n.dimension
                )));
            }
        }
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            for end in [&e.cause, &e.effect] {
                if self.index_of(end).is_none() {
                    return Err(Error::Config(format!("edge {}->{}: unknown node {end}", e.cause, e.effect)));
                }
            }
            if e.cause == e.effect {
                return Err(Error::Config(format!("self-loop on {}", e.cause)));
            }
            if !pairs.insert((e.cause.as_str(), e.effect.as_str())) {
                return Err(Error::Config(format!("duplicate edge {}->{}", e.cause, e.effect)));
            }
            if !(1..=3).contains(&e.tier) {
                return Err(Error::Config(format!("edge {}->{}: tier {} not in 1..=3", e.cause, e.effect, e.tier)));
            }
            if !(e.gain > 0.0) || !e.gain.is_finite() {
                return Err(Error::Config(format!("edge {}->{}: gain must be positive", e.cause, e.effect)));
            }
        }
        for tier in 1..3u8 {
            let weakest = self.edges.iter().filter(|e| e.tier == tier).map(|e| e.gain).fold(f64::INFINITY, f64::min);
            let strongest = self
                .edges
                .iter()
                .filter(|e| e.tier > tier)
                .map(|e| e.gain)
                .fold(f64::NEG_INFINITY, f64::max);
            if weakest <= strongest {
                return Err(Error::Config(format!(
                    "tier {tier} gains must exceed every gain of weaker tiers"
                )));
            }
        }
        self.topological_order().map(|_| ())
    }

    /// Kahn's algorithm, preferring declaration order among ready nodes.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let idx = |name: &str| self.index_of(name).expect("validated endpoint");
        for e in &self.edges {
            indegree[idx(&e.effect)] += 1;
        }
        let mut order = Vec::with_capacity(n);
        let mut done = vec![false; n];
        while order.len() < n {
            let Some(next) = (0..n).find(|&i| !done[i] && indegree[i] == 0) else {
                return Err(Error::Config("DAG spec contains a cycle".into()));
            };
            done[next] = true;
            order.push(next);
            for e in self.edges.iter().filter(|e| e.cause == self.nodes[next].name) {
                indegree[idx(&e.effect)] -= 1;
            }
        }
        Ok(order)
    }

    /// Ten nodes A..J with the dimensions and non-zero rates of a small
    /// watershed model and sixteen tiered edges.
    pub fn watershed() -> Self {
        let dims = [5, 4, 2, 3, 2, 4, 4, 4, 3, 1];
        let rates = [0.8754, 0.6452, 0.9442, 0.1140, 1.0, 0.5908, 0.4787, 0.4993, 0.2166, 0.2175];
        let names = ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"];
        let nodes = names
            .iter()
            .zip(dims.iter().zip(rates))
            .map(|(n, (&d, r))| NodeSpec::new(n, d, r, if matches!(*n, "A" | "B") { 1.0 } else { 0.3 }))
            .collect();
        let t1 = 2.5;
        let t2 = 1.2;
        let t3 = 0.5;
        let edges = vec![
            EdgeSpec::new("A", "C", 1, 1, t1),
            EdgeSpec::new("B", "D", 1, 1, t1),
            EdgeSpec::new("B", "E", 2, 2, t2),
            EdgeSpec::new("C", "D", 1, 1, t1),
            EdgeSpec::new("C", "E", 2, 1, t2),
            EdgeSpec::new("C", "G", 1, 2, t1),
            EdgeSpec::new("D", "G", 1, 1, t1),
            EdgeSpec::new("D", "H", 1, 1, t1),
            EdgeSpec::new("D", "I", 3, 3, t3),
            EdgeSpec::new("E", "F", 3, 2, t3),
            EdgeSpec::new("E", "G", 2, 1, t2),
            EdgeSpec::new("E", "H", 2, 2, t2),
            EdgeSpec::new("F", "I", 3, 1, t3),
            EdgeSpec::new("G", "J", 1, 1, t1),
            EdgeSpec::new("H", "J", 1, 2, t1),
            EdgeSpec::new("I", "J", 3, 1, t3),
        ];
        DagSpec { nodes, edges, seed: 0 }
    }

    /// Five nodes with two tier-1, two tier-2 and one tier-3 edge.
    pub fn tiered_five() -> Self {
        let nodes = vec![
            NodeSpec::new("A", 2, 1.0, 0.5),
            NodeSpec::new("B", 2, 0.8, 0.0),
            NodeSpec::new("C", 2, 1.0, 0.0),
            NodeSpec::new("D", 2, 0.9, 0.0),
            NodeSpec::new("E", 1, 1.0, 0.0),
        ];
        let edges = vec![
            EdgeSpec::new("A", "B", 1, 1, 3.0),
            EdgeSpec::new("B", "D", 1, 1, 3.0),
            EdgeSpec::new("A", "C", 2, 2, 1.5),
            EdgeSpec::new("C", "E", 2, 1, 1.5),
            EdgeSpec::new("D", "E", 3, 1, 0.6),
        ];
        DagSpec { nodes, edges, seed: 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        let w = DagSpec::watershed();
        w.validate().unwrap();
        assert_eq!(w.nodes.len(), 10);
        assert_eq!(w.edges.len(), 16);
        let t = DagSpec::tiered_five();
        t.validate().unwrap();
        let count = |k| t.edges.iter().filter(|e| e.tier == k).count();
        assert_eq!((count(1), count(2), count(3)), (2, 2, 1));
    }

    #[test]
    fn cycle_is_a_config_error() {
        let mut s = DagSpec::tiered_five();
        s.edges.push(EdgeSpec::new("E", "A", 3, 1, 0.5));
        assert!(matches!(s.validate(), Err(Error::Config(m)) if m.contains("cycle")));
    }

    #[test]
    fn tier_gains_must_be_ordered() {
        let mut s = DagSpec::tiered_five();
        s.edges[4].gain = 2.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let text = r#"{"nodes":[{"name":"X","dimension":1,"nonzero_rate":1.0,"seasonal_amplitude":0.0},
                                {"name":"Y","dimension":2,"nonzero_rate":0.5,"seasonal_amplitude":1.0}],
                       "edges":[{"cause":"X","effect":"Y","tier":1,"gain":2.0}]}"#;
        let s = DagSpec::from_json(text).unwrap();
        assert_eq!(s.nodes[0].ar_coef, 0.6);
        assert_eq!(s.edges[0].lag, 1);
        assert_eq!(DagSpec::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn topological_order_respects_edges() {
        let s = DagSpec::watershed();
        let order = s.topological_order().unwrap();
        let pos = |n: &str| order.iter().position(|&i| s.nodes[i].name == n).unwrap();
        for e in &s.edges {
            assert!(pos(&e.cause) < pos(&e.effect));
        }
    }
}
