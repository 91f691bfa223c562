//! Causal strength `K(causes, effect)` and KLD gain.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::data::series::Dataset;
use crate::error::{Error, Result};
use crate::node::NodeAutoencoder;
use crate::relation::{train_micro_causal, MicroCausalModel, RelationConfig, RelationId};

/// Source of strengths for non-empty cause sets.
pub trait StrengthOracle: Sync {
    fn strength(&self, causes: &[String], effect: &str) -> Result<f64>;
}

/// `K(causes, effect)`, zero for an empty cause set.
pub fn causal_strength<O: StrengthOracle + ?Sized>(oracle: &O, causes: &[String], effect: &str) -> Result<f64> {
    if causes.is_empty() {
        return Ok(0.0);
    }
    let k = oracle.strength(causes, effect)?;
    if !k.is_finite() {
        return Err(Error::Exploration(format!(
            "non-finite strength {k} for {}",
            RelationId::new(causes, effect)
        )));
    }
    Ok(k)
}

/// `K(context + parent, effect) - K(context, effect)`.
pub fn kld_gain<O: StrengthOracle + ?Sized>(oracle: &O, context: &[String], parent: &str, effect: &str) -> Result<f64> {
    let mut with = context.to_vec();
    with.push(parent.to_string());
    with.sort();
    Ok(causal_strength(oracle, &with, effect)? - causal_strength(oracle, context, effect)?)
}

/// Strengths given as a table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixedStrengths {
    table: BTreeMap<RelationId, f64>,
}

impl FixedStrengths {
    pub fn insert<S: AsRef<str>>(&mut self, causes: &[S], effect: &str, k: f64) {
        self.table.insert(RelationId::new(causes, effect), k);
    }

    pub fn from_pairs<S: AsRef<str>>(pairs: &[(&[S], &str, f64)]) -> Self {
        let mut out = Self::default();
        for (c, e, k) in pairs {
            out.insert(c, e, *k);
        }
        out
    }
}

impl StrengthOracle for FixedStrengths {
    fn strength(&self, causes: &[String], effect: &str) -> Result<f64> {
        let id = RelationId::new(causes, effect);
        self.table
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Exploration(format!("no strength for {id}")))
    }
}

/// Strengths from relations trained on demand and kept for reuse. `K` is
/// the held-out latent KLD of the trained relation.
pub struct TrainedStrengths<'a> {
    data: &'a Dataset,
    nodes: BTreeMap<String, NodeAutoencoder>,
    cfg: RelationConfig,
    train: bool,
    models: Mutex<BTreeMap<RelationId, MicroCausalModel>>,
}

impl<'a> TrainedStrengths<'a> {
    pub fn new(data: &'a Dataset, nodes: Vec<NodeAutoencoder>, cfg: RelationConfig) -> Self {
        TrainedStrengths {
            data,
            nodes: nodes.into_iter().map(|m| (m.node.clone(), m)).collect(),
            cfg,
            train: true,
            models: Mutex::new(BTreeMap::new()),
        }
    }

    /// Disables training; only preloaded relations can be scored.
    pub fn frozen(mut self) -> Self {
        self.train = false;
        self
    }

    pub fn preload(&self, model: MicroCausalModel) {
        self.models.lock().expect("lock").insert(model.id().clone(), model);
    }

    pub fn model(&self, id: &RelationId) -> Option<MicroCausalModel> {
        self.models.lock().expect("lock").get(id).cloned()
    }

    pub fn into_models(self) -> BTreeMap<RelationId, MicroCausalModel> {
        self.models.into_inner().expect("lock")
    }

    fn node(&self, name: &str) -> Result<&NodeAutoencoder> {
        self.nodes
            .get(name)
            .ok_or_else(|| Error::Exploration(format!("no node model for {name}")))
    }
}

impl StrengthOracle for TrainedStrengths<'_> {
    fn strength(&self, causes: &[String], effect: &str) -> Result<f64> {
        let id = RelationId::new(causes, effect);
        if let Some(m) = self.models.lock().expect("lock").get(&id) {
            return Ok(m.metrics.kld);
        }
        if !self.train {
            return Err(Error::Exploration(format!("relation {id} is not trained and training is disabled")));
        }
        let cause_models = id.causes.iter().map(|c| self.node(c)).collect::<Result<Vec<_>>>()?;
        let model = train_micro_causal(&cause_models, self.node(effect)?, self.data, &self.cfg)?;
        let k = model.metrics.kld;
        self.models.lock().expect("lock").insert(id, model);
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn empty_context_gain_is_the_single_cause_strength() {
        let k = FixedStrengths::from_pairs(&[(&["A"][..], "C", 7.6353)]);
        assert_eq!(causal_strength(&k, &[], "C").unwrap(), 0.0);
        assert_eq!(kld_gain(&k, &[], "A", "C").unwrap(), 7.6353);
    }

    #[test]
    fn gains_may_be_negative() {
        let k = FixedStrengths::from_pairs(&[(&["C", "D"][..], "G", 12.0), (&["C", "D", "E"][..], "G", 6.0)]);
        assert_eq!(kld_gain(&k, &s(&["C", "D"]), "E", "G").unwrap(), -6.0);
    }

    #[test]
    fn non_finite_strength_names_the_relation() {
        let k = FixedStrengths::from_pairs(&[(&["A"][..], "B", f64::NAN)]);
        let err = causal_strength(&k, &s(&["A"]), "B").unwrap_err();
        assert!(matches!(err, Error::Exploration(_)));
        assert!(err.to_string().contains("A->B"));
    }
}
