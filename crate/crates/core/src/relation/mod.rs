//! Relation bridges between cause and effect latents.
//!
//! A micro-causal model chains the cause encoders, a dense relation stack
//! and the effect decoder. The relation reads the per-step latents of every
//! cause over a window of `n` steps ending at the effect step, concatenated
//! cause by cause in time order, and predicts the effect latent.
//!
//! Each epoch runs three kinds of update per minibatch:
//! 1. cause encoders, relation and effect decoder on reconstructing the
//!    effect through the relation, plus a latent-distribution KLD term;
//! 2. the effect autoencoder on its own reconstruction;
//! 3. every cause autoencoder on its own reconstruction.
//!
//! Updates 2 and 3 are guarded: a step that increases the loss of the batch
//! it was computed on is undone and retried with a smaller learning rate.

pub mod route;
pub mod stacking;

use std::fmt;
use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::folds::kfold_split;
use crate::data::series::Dataset;
use crate::error::{ensure_len, Error, Result};
use crate::explore::gaussian::{gaussian_kld, gaussian_stats, kld_to_target};
use crate::nn::{
    adam_step, adam_undo, bce_batch, mse_batch, Activation, AdamConfig, AdamState, Dense, DenseGrad, LayerSet,
    LossReport, Stack,
};
use crate::node::{defeaturize, feature_matrix_with, featurize, apply_mask, Decoded, NodeAutoencoder, NodeMetrics};
use crate::rng::substream;

pub use route::{route, route_batch, route_metrics, RouteBatch, RouteInput, RouteOutput, RouteResult, RoutingSpec};
pub use stacking::{numeric_rank, stack_component, StackEntry, StackReport, StackState};

/// Fewest training pairs a relation may be fitted on.
pub const MIN_PAIRS: usize = 50;
const GUARD_ATTEMPTS: i32 = 4;

/// Identity of a relation: its (sorted, distinct) cause nodes and its
/// effect node.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId {
    pub causes: Vec<String>,
    pub effect: String,
}

impl RelationId {
    pub fn new<S: AsRef<str>>(causes: &[S], effect: &str) -> Self {
        let mut causes: Vec<String> = causes.iter().map(|c| c.as_ref().to_string()).collect();
        causes.sort();
        causes.dedup();
        RelationId {
            causes,
            effect: effect.to_string(),
        }
    }

    pub fn cause_label(&self) -> String {
        self.causes.join(",")
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.cause_label(), self.effect)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationConfig {
    pub window_n: usize,
    pub window_m: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_kld: f64,
    pub lambda_mask: f64,
    pub adam: AdamConfig,
    pub folds: usize,
    pub seed: u64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            window_n: 10,
            window_m: 1,
            hidden: 128,
            epochs: 200,
            batch_size: 32,
            lambda_kld: 0.1,
            lambda_mask: 1.0,
            adam: AdamConfig::default(),
            folds: 4,
            seed: 0,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_m != 1 {
            return Err(Error::Config(format!(
                "effect window must be 1 step, got {}",
                self.window_m
            )));
        }
        if self.window_n == 0 || self.hidden == 0 || self.batch_size < 2 {
            return Err(Error::Config("window_n and hidden must be positive, batch_size >= 2".into()));
        }
        if !(self.lambda_kld >= 0.0) || !(self.lambda_mask >= 0.0) || !(self.adam.lr > 0.0) {
            return Err(Error::Config("loss weights must be >= 0 and lr > 0".into()));
        }
        Ok(())
    }
}

/// Dense bridge from concatenated cause-latent windows to an effect latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationModel {
    pub id: RelationId,
    pub window_n: usize,
    pub latent_dim: usize,
    pub stack: Stack,
}

impl RelationModel {
    pub fn new(id: RelationId, window_n: usize, latent_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if id.causes.is_empty() {
            return Err(Error::Config(format!("relation into {} has no causes", id.effect)));
        }
        let mut rng = substream(seed, &format!("relation/{id}/init"));
        let input = id.causes.len() * window_n * latent_dim;
        let stack = Stack::new(vec![
            Dense::init(format!("{id}.rel.0"), input, hidden, Activation::Tanh, &mut rng),
            Dense::init(format!("{id}.rel.1"), hidden, latent_dim, Activation::Identity, &mut rng),
        ])?;
        Ok(RelationModel {
            id,
            window_n,
            latent_dim,
            stack,
        })
    }

    pub fn input_len(&self) -> usize {
        self.stack.in_dim()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub rmse_scaled: f64,
    pub rmse_unscaled: f64,
    pub mask_bce: f64,
    /// KLD between predicted and encoded effect latents on held-out steps.
    pub kld: f64,
    pub nse: Option<f64>,
    pub rows: usize,
}

/// Outcome counts of the guarded self-reconstruction updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardCounters {
    pub accepted: usize,
    pub retried: usize,
    pub skipped: usize,
    /// Accepted steps whose post-step batch loss exceeded the pre-step loss.
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroCausalModel {
    /// Fine-tuned copies of the cause autoencoders, ordered as `relation.id.causes`.
    pub causes: Vec<NodeAutoencoder>,
    pub relation: RelationModel,
    pub effect: NodeAutoencoder,
    pub metrics: RelationMetrics,
    /// Mean relation-path loss of each epoch.
    pub history: Vec<f64>,
    pub guard: GuardCounters,
}

/// Aligned rows for one minibatch: `B + n - 1` cause steps per cause and the
/// `B` effect steps they predict.
pub struct PairBatch<'a> {
    pub cause_features: Vec<ArrayView2<'a, f64>>,
    pub effect_features: ArrayView2<'a, f64>,
    pub effect_bits: ArrayView2<'a, f64>,
}

/// Raw values of one cause node over a full window.
#[derive(Clone, Debug, PartialEq)]
pub struct CauseWindow {
    /// `n x d` engineering-unit values, oldest first.
    pub values: Array2<f64>,
    pub months: Vec<u8>,
}

impl LayerSet for MicroCausalModel {
    fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = Vec::new();
        for c in &self.causes {
            v.extend(c.encoder.layers.iter());
        }
        v.extend(self.relation.stack.layers.iter());
        v.extend([&self.effect.decoder_hidden, &self.effect.value_head, &self.effect.mask_head]);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = Vec::new();
        for c in &mut self.causes {
            v.extend(c.encoder.layers.iter_mut());
        }
        v.extend(self.relation.stack.layers.iter_mut());
        v.extend([
            &mut self.effect.decoder_hidden,
            &mut self.effect.value_head,
            &mut self.effect.mask_head,
        ]);
        v
    }
}

/// Lays per-step latents (`B + n - 1` rows per cause) out as `B` relation
/// inputs: row `b` holds steps `b..b + n` of each cause in turn.
pub fn window_matrix(latents: &[Array2<f64>], n: usize) -> Result<Array2<f64>> {
    let Some(first) = latents.first() else {
        return Err(Error::Config("no cause latents".into()));
    };
    let l = first.ncols();
    let u = first.nrows();
    if u < n {
        return Err(Error::Data(format!("{u} latent steps cannot fill a window of {n}")));
    }
    let b = u - n + 1;
    let mut x = Array2::zeros((b, latents.len() * n * l));
    for (ci, z) in latents.iter().enumerate() {
        if z.dim() != (u, l) {
            return Err(Error::shape("cause latents differ in shape"));
        }
        for row in 0..b {
            for j in 0..n {
                let off = (ci * n + j) * l;
                x.slice_mut(s![row, off..off + l]).assign(&z.row(row + j));
            }
        }
    }
    Ok(x)
}

/// Adjoint of [`window_matrix`].
fn scatter_windows(d_x: ArrayView2<f64>, causes: usize, n: usize, l: usize) -> Vec<Array2<f64>> {
    let b = d_x.nrows();
    let mut out = vec![Array2::zeros((b + n - 1, l)); causes];
    for (ci, dz) in out.iter_mut().enumerate() {
        for row in 0..b {
            for j in 0..n {
                let off = (ci * n + j) * l;
                let mut dst = dz.row_mut(row + j);
                dst += &d_x.slice(s![row, off..off + l]);
            }
        }
    }
    out
}

impl MicroCausalModel {
    /// Untrained model from copies of the given autoencoders.
    pub fn new(causes: &[&NodeAutoencoder], effect: &NodeAutoencoder, cfg: &RelationConfig) -> Result<Self> {
        cfg.validate()?;
        let names: Vec<&str> = causes.iter().map(|c| c.node.as_str()).collect();
        let id = RelationId::new(&names, &effect.node);
        if id.causes.len() != causes.len() {
            return Err(Error::Config(format!("repeated cause in {id}")));
        }
        if id.causes.contains(&id.effect) {
            return Err(Error::Config(format!("relation {id} is a self-loop")));
        }
        let l = effect.latent_dim();
        let mut sorted: Vec<NodeAutoencoder> = causes.iter().map(|c| (*c).clone()).collect();
        sorted.sort_by(|a, b| a.node.cmp(&b.node));
        for c in &sorted {
            if c.latent_dim() != l {
                return Err(Error::Config(format!(
                    "cause {} has latent size {} but effect {} has {l}",
                    c.node,
                    c.latent_dim(),
                    effect.node
                )));
            }
        }
        let relation = RelationModel::new(id, cfg.window_n, l, cfg.hidden, cfg.seed)?;
        Ok(MicroCausalModel {
            causes: sorted,
            relation,
            effect: effect.clone(),
            metrics: RelationMetrics::default(),
            history: Vec::new(),
            guard: GuardCounters::default(),
        })
    }

    pub fn id(&self) -> &RelationId {
        &self.relation.id
    }

    pub fn window_n(&self) -> usize {
        self.relation.window_n
    }

    /// Predicted effect latents from per-step cause latents.
    pub fn predict_latent(&self, cause_latents: &[Array2<f64>]) -> Result<Array2<f64>> {
        ensure_len("cause latent sets", cause_latents.len(), self.causes.len())?;
        let x = window_matrix(cause_latents, self.window_n())?;
        ensure_len("relation input", x.ncols(), self.relation.input_len())?;
        Ok(self.relation.stack.forward_batch(x.view()))
    }

    /// Relation-path loss of one minibatch and its gradients in
    /// [`LayerSet`] order.
    pub fn relation_loss(
        &self,
        batch: &PairBatch<'_>,
        lambda_mask: f64,
        lambda_kld: f64,
    ) -> Result<(LossReport, Vec<DenseGrad>)> {
        let n = self.window_n();
        let l = self.effect.latent_dim();
        let b = batch.effect_features.nrows();
        ensure_len("cause batches", batch.cause_features.len(), self.causes.len())?;
        let mut traces = Vec::with_capacity(self.causes.len());
        for (ae, f) in self.causes.iter().zip(&batch.cause_features) {
            ensure_len(&format!("cause {} rows", ae.node), f.nrows(), b + n - 1)?;
            traces.push(ae.encode_trace(*f)?);
        }
        let latents: Vec<Array2<f64>> = traces.iter().map(|t| t.latent().clone()).collect();
        let x = window_matrix(&latents, n)?;
        let rel_trace = self.relation.stack.forward_trace(x.view());
        let v_hat = rel_trace.last().expect("relation has layers");

        let v = self.effect.encode_batch(batch.effect_features)?;
        let target = gaussian_stats(v.view())?;
        let (kld, d_kld) = kld_to_target(v_hat.view(), &target)?;

        let dec = self.effect.decode_trace(v_hat.view())?;
        let (value, d_recon) = mse_batch(dec.recon.view(), batch.effect_features);
        let (mask, mut d_mask) = bce_batch(dec.mask_prob.view(), batch.effect_bits);
        d_mask *= lambda_mask;
        let (dec_grads, d_v) = self
            .effect
            .decoder_backward(v_hat.view(), &dec, d_recon.view(), d_mask.view(), true)?;
        let d_v_hat = d_v.expect("requested") + &(d_kld * lambda_kld);
        let (rel_grads, d_x) = self.relation.stack.backward(x.view(), &rel_trace, d_v_hat, true);
        let d_latents = scatter_windows(d_x.expect("requested").view(), self.causes.len(), n, l);

        let mut grads = Vec::new();
        for ((ae, trace), dz) in self.causes.iter().zip(&traces).zip(d_latents) {
            grads.extend(ae.encoder_backward(trace, dz));
        }
        grads.extend(rel_grads);
        grads.extend(dec_grads);
        Ok((LossReport::new(value, mask, kld, lambda_mask, lambda_kld), grads))
    }

    /// Predicts and scores the effect on steps `times`.
    pub fn evaluate(&self, data: &Dataset, times: Range<usize>) -> Result<RelationMetrics> {
        let n = self.window_n();
        if times.start + 1 < n {
            return Err(Error::Data(format!(
                "step {} has no complete window of {n}",
                times.start
            )));
        }
        if times.len() < 2 {
            return Err(Error::Estimation(format!("{}: fewer than two evaluation steps", self.id())));
        }
        let rows = times.start + 1 - n..times.end;
        let mut latents = Vec::with_capacity(self.causes.len());
        for ae in &self.causes {
            let series = data.node(&ae.node)?;
            let f = feature_matrix_with(series, &ae.scaler, rows.clone())?;
            latents.push(ae.encode_batch(f.view())?);
        }
        let v_hat = self.predict_latent(&latents)?;
        let effect_series = data.node(&self.effect.node)?;
        let f_eff = feature_matrix_with(effect_series, &self.effect.scaler, times.clone())?;
        let v = self.effect.encode_batch(f_eff.view())?;
        let kld = gaussian_kld(&gaussian_stats(v_hat.view())?, &gaussian_stats(v.view())?)?;
        let dec = self.effect.decode_trace(v_hat.view())?;
        let NodeMetrics {
            rmse_scaled,
            rmse_unscaled,
            mask_bce,
            nse,
            rows,
        } = self.effect.score(
            dec.recon.view(),
            dec.mask_prob.view(),
            effect_series.values.slice(s![times.clone(), ..]),
            effect_series.mask.slice(s![times.clone(), ..]),
        )?;
        if !kld.is_finite() {
            return Err(Error::Estimation(format!("{}: non-finite KLD", self.id())));
        }
        Ok(RelationMetrics {
            rmse_scaled,
            rmse_unscaled,
            mask_bce,
            kld,
            nse,
            rows,
        })
    }

    /// Windows of every cause ending at step `t`.
    pub fn windows_at(&self, data: &Dataset, t: usize) -> Result<Vec<CauseWindow>> {
        let n = self.window_n();
        if t + 1 < n || t >= data.len() {
            return Err(Error::Data(format!("no complete window of {n} steps ends at {t}")));
        }
        self.causes
            .iter()
            .map(|ae| {
                let s = data.node(&ae.node)?;
                Ok(CauseWindow {
                    values: s.values.slice(s![t + 1 - n..=t, ..]).to_owned(),
                    months: s.months[t + 1 - n..=t].to_vec(),
                })
            })
            .collect()
    }
}

fn guarded_self_step(
    ae: &mut NodeAutoencoder,
    state: &mut AdamState,
    features: ArrayView2<f64>,
    bits: ArrayView2<f64>,
    lambda_mask: f64,
    counters: &mut GuardCounters,
) -> Result<()> {
    let (before, grads) = ae.self_loss(features, bits, lambda_mask)?;
    if !before.total.is_finite() {
        return Err(Error::Training(format!("node {}: non-finite self-reconstruction loss", ae.node)));
    }
    let base_lr = state.config.lr;
    for attempt in 0..GUARD_ATTEMPTS {
        state.config.lr = base_lr * 0.5f64.powi(attempt);
        adam_step(&mut ae.layers_mut(), &grads, state)?;
        let after = ae.self_loss_value(features, bits, lambda_mask)?;
        if after <= before.total {
            state.config.lr = base_lr;
            counters.accepted += 1;
            if attempt > 0 {
                counters.retried += 1;
            }
            return Ok(());
        }
        adam_undo(&mut ae.layers_mut(), &grads, state)?;
    }
    state.config.lr = base_lr;
    counters.skipped += 1;
    Ok(())
}

/// Contiguous minibatches of effect steps inside `range`; a trailing batch
/// of one step joins its predecessor.
fn contiguous_batches(range: Range<usize>, size: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    let mut start = range.start;
    while start < range.end {
        let end = (start + size).min(range.end);
        if end - start < 2 && !out.is_empty() {
            out.last_mut().expect("non-empty").end = end;
        } else {
            out.push(start..end);
        }
        start = end;
    }
    out
}

/// Effect steps used for training and for evaluation: the evaluation steps
/// are the last fold block, training steps everything before it that has a
/// complete cause window.
pub fn relation_split(t_steps: usize, cfg: &RelationConfig) -> Result<(Range<usize>, Range<usize>)> {
    let plan = kfold_split(t_steps, cfg.folds)?;
    let holdout = plan.holdout(plan.last());
    let first = cfg.window_n - 1;
    let train = first.min(holdout.start)..holdout.start;
    let eval = holdout.start.max(first)..holdout.end;
    Ok((train, eval))
}

/// Trains the relation between `causes` and `effect` with the three-step
/// schedule and scores it on the held-out block.
pub fn train_micro_causal(
    causes: &[&NodeAutoencoder],
    effect: &NodeAutoencoder,
    data: &Dataset,
    cfg: &RelationConfig,
) -> Result<MicroCausalModel> {
    let mut model = MicroCausalModel::new(causes, effect, cfg)?;
    let id = model.id().clone();
    let n = cfg.window_n;
    let (train, eval) = relation_split(data.len(), cfg)?;
    if train.len() < MIN_PAIRS {
        return Err(Error::Training(format!(
            "{id}: {} training pairs, at least {MIN_PAIRS} required",
            train.len()
        )));
    }

    let mut cause_features = Vec::new();
    let mut cause_bits = Vec::new();
    for ae in &model.causes {
        let s = data.node(&ae.node)?;
        cause_features.push(feature_matrix_with(s, &ae.scaler, 0..data.len())?);
        cause_bits.push(s.mask.clone());
    }
    let effect_series = data.node(&model.effect.node)?;
    let effect_features = feature_matrix_with(effect_series, &model.effect.scaler, 0..data.len())?;
    let effect_bits = effect_series.mask.clone();

    let mut relation_state = AdamState::new(cfg.adam, &model.layers());
    let mut effect_state = AdamState::new(cfg.adam, &model.effect.layers());
    let mut cause_states: Vec<AdamState> = model.causes.iter().map(|c| AdamState::new(cfg.adam, &c.layers())).collect();
    let mut batches = contiguous_batches(train, cfg.batch_size);
    let mut rng = substream(cfg.seed, &format!("relation/{id}/order"));
    let mut guard = GuardCounters::default();

    for epoch in 0..cfg.epochs {
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        for times in &batches {
            let rows = times.start + 1 - n..times.end;
            let batch = PairBatch {
                cause_features: cause_features.iter().map(|f| f.slice(s![rows.clone(), ..])).collect(),
                effect_features: effect_features.slice(s![times.clone(), ..]),
                effect_bits: effect_bits.slice(s![times.clone(), ..]),
            };
            let (loss, grads) = model.relation_loss(&batch, cfg.lambda_mask, cfg.lambda_kld)?;
            if !loss.total.is_finite() {
                return Err(Error::Training(format!("{id}: non-finite loss in epoch {epoch}")));
            }
            adam_step(&mut model.layers_mut(), &grads, &mut relation_state)?;
            total += loss.total;

            guarded_self_step(
                &mut model.effect,
                &mut effect_state,
                batch.effect_features,
                batch.effect_bits,
                cfg.lambda_mask,
                &mut guard,
            )?;
            for ci in 0..model.causes.len() {
                guarded_self_step(
                    &mut model.causes[ci],
                    &mut cause_states[ci],
                    cause_features[ci].slice(s![rows.clone(), ..]),
                    cause_bits[ci].slice(s![rows.clone(), ..]),
                    cfg.lambda_mask,
                    &mut guard,
                )?;
            }
        }
        model.history.push(total / batches.len() as f64);
    }
    model.guard = guard;
    model.metrics = model.evaluate(data, eval)?;
    Ok(model)
}

/// Relation prediction for one set of complete cause windows, ordered as
/// the model's causes: the predicted effect latent and its decoding.
pub fn relation_forward(model: &MicroCausalModel, windows: &[CauseWindow]) -> Result<(Vec<f64>, Decoded)> {
    ensure_len("cause windows", windows.len(), model.causes.len())?;
    let n = model.window_n();
    let mut latents = Vec::with_capacity(windows.len());
    for (ae, w) in model.causes.iter().zip(windows) {
        if w.values.nrows() != n || w.months.len() != n {
            return Err(Error::Data(format!(
                "cause {}: window has {} steps, {n} required",
                ae.node,
                w.values.nrows()
            )));
        }
        ensure_len(&format!("cause {} attributes", ae.node), w.values.ncols(), ae.dim)?;
        let mut f = Array2::zeros((n, crate::node::FEATURE_LEN));
        for t in 0..n {
            let row = featurize(&w.values.row(t).to_vec(), w.months[t], &ae.scaler)?;
            f.row_mut(t).assign(&ndarray::Array1::from(row));
        }
        latents.push(ae.encode_batch(f.view())?);
    }
    let v_hat = model.predict_latent(&latents)?;
    let latent = v_hat.row(0).to_vec();
    let decoded = decode_with(&model.effect, v_hat.view())?;
    Ok((latent, decoded))
}

pub(crate) fn decode_with(effect: &NodeAutoencoder, latent: ArrayView2<f64>) -> Result<Decoded> {
    let dec = effect.decode_trace(latent)?;
    let feature = dec.recon.row(0).to_vec();
    let scaled = defeaturize(&feature, effect.dim)?;
    let mask_prob = dec.mask_prob.row(0).to_vec();
    let values = apply_mask(&effect.scaler.invert(&scaled)?, &mask_prob)?;
    Ok(Decoded {
        feature,
        scaled,
        mask_prob,
        values,
    })
}
