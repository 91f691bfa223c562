//! Routing observations through chains of registered relations.
//!
//! A path `A->B, B->C` encodes the windows of `A`, predicts the latent of
//! `B`, repeats that single-step latent across the window slot of `B` in the
//! second relation and decodes `C`. Causes of later hops that are not on the
//! path are read from data.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::series::Dataset;
use crate::error::{Error, Result};
use crate::node::{apply_mask, defeaturize, feature_matrix_with, Decoded, NodeMetrics};
use crate::relation::stacking::StackState;
use crate::relation::{MicroCausalModel, RelationId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteInput {
    /// Causes of the first hop are encoded from their observations.
    #[default]
    RawNode,
    /// Causes of the first hop use the latent predicted by their most
    /// recently registered incoming relation.
    CauseConditioned,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteOutput {
    /// The latent re-encoded from the decoded observation by the terminal
    /// node's own encoder.
    OwnLatent,
    /// The latent predicted by the terminal relation.
    #[default]
    RelationLatent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingSpec {
    pub input: RouteInput,
    pub output: RouteOutput,
    pub path: Vec<RelationId>,
}

impl RoutingSpec {
    pub fn along(path: Vec<RelationId>) -> Self {
        RoutingSpec {
            input: RouteInput::default(),
            output: RouteOutput::default(),
            path,
        }
    }

    pub fn terminal(&self) -> Option<&str> {
        self.path.last().map(|r| r.effect.as_str())
    }
}

/// Routed predictions for a block of steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteBatch {
    pub latent: Array2<f64>,
    /// Reduced 24-long reconstructions.
    pub recon: Array2<f64>,
    pub mask_prob: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteResult {
    pub latent: Vec<f64>,
    pub decoded: Decoded,
}

enum Source {
    /// Per-step latents over `B + n - 1` rows.
    Steps(Array2<f64>),
    /// One latent per output row, repeated across the window.
    Tiled(Array2<f64>),
}

fn resolve<'a>(spec: &RoutingSpec, state: &'a StackState) -> Result<Vec<&'a MicroCausalModel>> {
    if spec.path.is_empty() {
        return Err(Error::Routing("empty routing path".into()));
    }
    let mut hops = Vec::with_capacity(spec.path.len());
    for (k, id) in spec.path.iter().enumerate() {
        let model = state
            .model(id)
            .ok_or_else(|| Error::Routing(format!("relation {id} is not registered")))?;
        if k > 0 {
            let prev = &spec.path[k - 1].effect;
            if !id.causes.contains(prev) {
                return Err(Error::Routing(format!(
                    "broken chain: {} does not feed {id}",
                    spec.path[k - 1]
                )));
            }
        }
        hops.push(model);
    }
    Ok(hops)
}

fn step_latents(model: &MicroCausalModel, ci: usize, data: &Dataset, rows: Range<usize>) -> Result<Array2<f64>> {
    let ae = &model.causes[ci];
    let f = feature_matrix_with(data.node(&ae.node)?, &ae.scaler, rows)?;
    ae.encode_batch(f.view())
}

fn hop_input(model: &MicroCausalModel, sources: &[Source], b: usize) -> Array2<f64> {
    let n = model.window_n();
    let l = model.relation.latent_dim;
    let mut x = Array2::zeros((b, sources.len() * n * l));
    for (ci, src) in sources.iter().enumerate() {
        for row in 0..b {
            for j in 0..n {
                let off = (ci * n + j) * l;
                let z = match src {
                    Source::Steps(z) => z.row(row + j),
                    Source::Tiled(z) => z.row(row),
                };
                x.slice_mut(s![row, off..off + l]).assign(&z);
            }
        }
    }
    x
}

/// Predicted latents of `model` for effect steps `times`, with an optional
/// routed cause whose latent is given per output step.
fn hop_predict(
    model: &MicroCausalModel,
    data: &Dataset,
    times: &Range<usize>,
    routed: Option<(&str, &Array2<f64>)>,
) -> Result<Array2<f64>> {
    let n = model.window_n();
    if times.start + 1 < n || times.end > data.len() || times.is_empty() {
        return Err(Error::Data(format!(
            "steps {times:?} have no complete window of {n} in {} steps",
            data.len()
        )));
    }
    let rows = times.start + 1 - n..times.end;
    let mut sources = Vec::with_capacity(model.causes.len());
    for (ci, ae) in model.causes.iter().enumerate() {
        match routed {
            Some((name, z)) if name == ae.node => sources.push(Source::Tiled(z.clone())),
            _ => sources.push(Source::Steps(step_latents(model, ci, data, rows.clone())?)),
        }
    }
    let x = hop_input(model, &sources, times.len());
    Ok(model.relation.stack.forward_batch(x.view()))
}

/// Routes steps `times` along `spec.path`.
pub fn route_batch(spec: &RoutingSpec, state: &StackState, data: &Dataset, times: Range<usize>) -> Result<RouteBatch> {
    let hops = resolve(spec, state)?;
    let first = hops[0];
    let mut v = match spec.input {
        RouteInput::RawNode => hop_predict(first, data, &times, None)?,
        RouteInput::CauseConditioned => {
            let mut sources = Vec::with_capacity(first.causes.len());
            for ae in &first.causes {
                let entry = state.components(&ae.node).last().ok_or_else(|| {
                    Error::Routing(format!("cause {} has no registered incoming relation", ae.node))
                })?;
                let upstream = state.model(&entry.relation).expect("registered");
                sources.push(Source::Tiled(hop_predict(upstream, data, &times, None)?));
            }
            let x = hop_input(first, &sources, times.len());
            first.relation.stack.forward_batch(x.view())
        }
    };
    for k in 1..hops.len() {
        let via = spec.path[k - 1].effect.as_str();
        v = hop_predict(hops[k], data, &times, Some((via, &v)))?;
    }
    let terminal = &hops[hops.len() - 1].effect;
    let dec = terminal.decode_trace(v.view())?;
    let latent = match spec.output {
        RouteOutput::RelationLatent => v,
        RouteOutput::OwnLatent => terminal.encode_batch(dec.recon.view())?,
    };
    Ok(RouteBatch {
        latent,
        recon: dec.recon,
        mask_prob: dec.mask_prob,
    })
}

/// Routes a single effect step `t`.
pub fn route(spec: &RoutingSpec, state: &StackState, data: &Dataset, t: usize) -> Result<RouteResult> {
    let batch = route_batch(spec, state, data, t..t + 1)?;
    let hops = resolve(spec, state)?;
    let terminal = &hops[hops.len() - 1].effect;
    let feature = batch.recon.row(0).to_vec();
    let scaled = defeaturize(&feature, terminal.dim)?;
    let mask_prob = batch.mask_prob.row(0).to_vec();
    let values = apply_mask(&terminal.scaler.invert(&scaled)?, &mask_prob)?;
    Ok(RouteResult {
        latent: batch.latent.row(0).to_vec(),
        decoded: Decoded {
            feature,
            scaled,
            mask_prob,
            values,
        },
    })
}

/// Scores routed reconstructions of the terminal node on `times`.
pub fn route_metrics(spec: &RoutingSpec, state: &StackState, data: &Dataset, times: Range<usize>) -> Result<NodeMetrics> {
    let batch = route_batch(spec, state, data, times.clone())?;
    let hops = resolve(spec, state)?;
    let terminal = &hops[hops.len() - 1].effect;
    let series = data.node(&terminal.node)?;
    let truth: ArrayView2<f64> = series.values.slice(s![times.clone(), ..]);
    terminal.score(
        batch.recon.view(),
        batch.mask_prob.view(),
        truth,
        series.mask.slice(s![times, ..]),
    )
}
