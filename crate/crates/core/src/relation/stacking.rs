//! Registry of trained relation components, grouped by effect node.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{MicroCausalModel, RelationId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackEntry {
    pub relation: RelationId,
    /// 1-based registration order at the effect node.
    pub tau: usize,
}

/// Outcome of one registration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackReport {
    pub effect: String,
    pub tau: usize,
    pub count: usize,
    pub latent_dim: usize,
    pub rank: usize,
    /// `latent_dim > rank + count`.
    pub bound_ok: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StackState {
    components: BTreeMap<String, Vec<StackEntry>>,
    models: BTreeMap<RelationId, MicroCausalModel>,
}

impl StackState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Components registered at `effect`, in registration order.
    pub fn components(&self, effect: &str) -> &[StackEntry] {
        self.components.get(effect).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn count(&self, effect: &str) -> usize {
        self.components(effect).len()
    }

    pub fn model(&self, id: &RelationId) -> Option<&MicroCausalModel> {
        self.models.get(id)
    }

    pub fn models(&self) -> impl Iterator<Item = &MicroCausalModel> {
        self.models.values()
    }

    pub fn contains(&self, id: &RelationId) -> bool {
        self.models.contains_key(id)
    }

    pub fn effects(&self) -> impl Iterator<Item = &str> {
        self.components.keys().map(String::as_str)
    }
}

/// Registers a trained relation at its effect node. `rank` is the rank
/// estimate of the effect node's data used for the latent-size bound; a
/// violated bound is reported, not rejected.
pub fn stack_component(state: &mut StackState, model: MicroCausalModel, rank: usize) -> Result<StackReport> {
    let id = model.id().clone();
    if state.models.contains_key(&id) {
        return Err(Error::Registry(format!("relation {id} is already registered")));
    }
    let latent_dim = model.effect.latent_dim();
    let entries = state.components.entry(id.effect.clone()).or_default();
    let tau = entries.len() + 1;
    entries.push(StackEntry {
        relation: id.clone(),
        tau,
    });
    state.models.insert(id.clone(), model);
    Ok(StackReport {
        effect: id.effect,
        tau,
        count: tau,
        latent_dim,
        rank,
        bound_ok: latent_dim > rank + tau,
    })
}

/// Numerical rank of a data matrix by Gaussian elimination with full
/// pivoting. Pivots below `rel_tol` times the largest absolute entry count
/// as zero.
pub fn numeric_rank(x: ArrayView2<f64>, rel_tol: f64) -> usize {
    let mut a = x.to_owned();
    let (rows, cols) = a.dim();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let tol = rel_tol * scale;
    let mut rank = 0;
    while rank < rows.min(cols) {
        let mut best = (rank, rank, 0.0);
        for i in rank..rows {
            for j in rank..cols {
                if a[[i, j]].abs() > best.2 {
                    best = (i, j, a[[i, j]].abs());
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        let (pi, pj, _) = best;
        for j in 0..cols {
            a.swap([rank, j], [pi, j]);
        }
        for i in 0..rows {
            a.swap([i, rank], [i, pj]);
        }
        let pivot = a[[rank, rank]];
        for i in rank + 1..rows {
            let f = a[[i, rank]] / pivot;
            if f != 0.0 {
                for j in rank..cols {
                    a[[i, j]] -= f * a[[rank, j]];
                }
            }
        }
        rank += 1;
    }
    rank
}
