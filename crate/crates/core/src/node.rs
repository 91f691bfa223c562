//! Per-node featurization and the invertible node autoencoder.
//!
//! A step of a node becomes a 24-long feature: its scaled attributes tiled
//! cyclically over 12 slots, then a one-hot month. The autoencoder expands
//! the feature through the keyed coupling grids, compresses it to a latent
//! vector, and decodes it into an expanded-grid estimate that the Reducer
//! collapses back to 24 values. A separate head predicts which attributes
//! are non-zero.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::coupling::{expand_batch, make_keys, reduce_backward, reduce_batch, Key};
use crate::data::folds::kfold_split;
use crate::data::scale::Scaler;
use crate::data::series::NodeSeries;
use crate::error::{ensure_len, Error, Result};
use crate::metrics::nse;
use crate::nn::{
    adam_step, bce_batch, mse_batch, Activation, AdamConfig, AdamState, Dense, DenseGrad, LayerSet, LossReport,
    Stack,
};
use crate::rng::{stream_seed, substream};

pub const ATTRIBUTE_SLOTS: usize = 12;
pub const FEATURE_LEN: usize = 24;
pub const MASK_THRESHOLD: f64 = 0.5;

pub fn featurize_scaled(scaled: &[f64], month: u8) -> Result<Vec<f64>> {
    let d = scaled.len();
    if d == 0 || d > ATTRIBUTE_SLOTS {
        return Err(Error::Config(format!(
            "node dimension {d} outside 1..={ATTRIBUTE_SLOTS}"
        )));
    }
    if !(1..=12).contains(&month) {
        return Err(Error::Data(format!("month {month} outside 1..=12")));
    }
    let mut f = vec![0.0; FEATURE_LEN];
    for (slot, v) in f.iter_mut().take(ATTRIBUTE_SLOTS).enumerate() {
        *v = scaled[slot % d];
    }
    f[ATTRIBUTE_SLOTS + usize::from(month) - 1] = 1.0;
    Ok(f)
}

/// Scales raw attributes and builds the 24-long feature.
pub fn featurize(raw: &[f64], month: u8, scaler: &Scaler) -> Result<Vec<f64>> {
    if raw.is_empty() || raw.len() > ATTRIBUTE_SLOTS {
        return Err(Error::Config(format!(
            "node dimension {} outside 1..={ATTRIBUTE_SLOTS}",
            raw.len()
        )));
    }
    featurize_scaled(&scaler.apply(raw)?, month)
}

/// Averages the tiled copies of each attribute, as offsets from the first
/// copy so that an untouched tiling comes back bit-exact.
pub fn defeaturize(feature: &[f64], d: usize) -> Result<Vec<f64>> {
    ensure_len("feature", feature.len(), FEATURE_LEN)?;
    if d == 0 || d > ATTRIBUTE_SLOTS {
        return Err(Error::Config(format!("node dimension {d} outside 1..={ATTRIBUTE_SLOTS}")));
    }
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for slot in 0..ATTRIBUTE_SLOTS {
        sum[slot % d] += feature[slot] - feature[slot % d];
        count[slot % d] += 1;
    }
    Ok((0..d).map(|a| feature[a] + sum[a] / count[a] as f64).collect())
}

/// Row-wise [`defeaturize`].
pub fn defeaturize_batch(features: ArrayView2<f64>, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((features.nrows(), d));
    let mut count = vec![0usize; d];
    for slot in 0..ATTRIBUTE_SLOTS {
        count[slot % d] += 1;
        let mut col = out.column_mut(slot % d);
        col += &(&features.column(slot) - &features.column(slot % d));
    }
    for (a, mut col) in out.columns_mut().into_iter().enumerate() {
        col /= count[a] as f64;
        col += &features.column(a);
    }
    out
}

/// Features of `rows` of a node, using its own scaler.
pub fn feature_matrix(series: &NodeSeries, rows: Range<usize>) -> Result<Array2<f64>> {
    feature_matrix_with(series, &series.scaler, rows)
}

/// Features of `rows` of a node, scaled by `scaler`.
pub fn feature_matrix_with(series: &NodeSeries, scaler: &Scaler, rows: Range<usize>) -> Result<Array2<f64>> {
    let d = series.dim();
    if d == 0 || d > ATTRIBUTE_SLOTS {
        return Err(Error::Config(format!(
            "node {}: dimension {d} outside 1..={ATTRIBUTE_SLOTS}",
            series.name
        )));
    }
    ensure_len(&format!("node {} scaler", series.name), scaler.dim(), d)?;
    if rows.end > series.len() {
        return Err(Error::Data(format!(
            "node {}: rows up to {} requested from {} steps",
            series.name,
            rows.end,
            series.len()
        )));
    }
    let mut out = Array2::zeros((rows.len(), FEATURE_LEN));
    for (r, t) in rows.enumerate() {
        for slot in 0..ATTRIBUTE_SLOTS {
            let a = slot % d;
            out[[r, slot]] = (series.values[[t, a]] - scaler.mean[a]) / scaler.std[a];
        }
        out[[r, ATTRIBUTE_SLOTS + usize::from(series.months[t]) - 1]] = 1.0;
    }
    Ok(out)
}

/// Zeroes every value whose non-zero probability is at or below the
/// threshold.
pub fn apply_mask(values: &[f64], mask_prob: &[f64]) -> Result<Vec<f64>> {
    ensure_len("mask", mask_prob.len(), values.len())?;
    Ok(values
        .iter()
        .zip(mask_prob)
        .map(|(&v, &p)| if p > MASK_THRESHOLD { v } else { 0.0 })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeAeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub num_keys: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_mask: f64,
    pub adam: AdamConfig,
    pub folds: usize,
    pub seed: u64,
}

impl Default for NodeAeConfig {
    fn default() -> Self {
        NodeAeConfig {
            latent_dim: 16,
            hidden: 128,
            num_keys: 4,
            epochs: 200,
            batch_size: 32,
            lambda_mask: 1.0,
            adam: AdamConfig::default(),
            folds: 4,
            seed: 0,
        }
    }
}

impl NodeAeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.num_keys == 0 || self.batch_size == 0 {
            return Err(Error::Config("latent_dim, hidden, num_keys and batch_size must be positive".into()));
        }
        if !(self.lambda_mask >= 0.0) || !(self.adam.lr > 0.0) {
            return Err(Error::Config("lambda_mask must be >= 0 and lr > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeAutoencoder {
    pub node: String,
    pub dim: usize,
    pub keys: Vec<Key>,
    /// Expanded grid -> hidden (tanh) -> latent (identity).
    pub encoder: Stack,
    /// Latent -> hidden (tanh).
    pub decoder_hidden: Dense,
    /// Hidden -> expanded-grid estimate.
    pub value_head: Dense,
    /// Hidden -> per-attribute non-zero probability.
    pub mask_head: Dense,
    pub scaler: Scaler,
}

/// Intermediate tensors of an encoder pass over a batch of features.
pub struct EncodeTrace {
    pub expanded: Array2<f64>,
    pub outputs: Vec<Array2<f64>>,
}

impl EncodeTrace {
    pub fn latent(&self) -> &Array2<f64> {
        self.outputs.last().expect("encoder has layers")
    }
}

/// Intermediate tensors of a decoder pass over a batch of latents.
pub struct DecodeTrace {
    pub hidden: Array2<f64>,
    pub grid: Array2<f64>,
    pub recon: Array2<f64>,
    pub mask_prob: Array2<f64>,
}

/// Decoded observation of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Reduced 24-long feature estimate.
    pub feature: Vec<f64>,
    /// Scaled attributes before masking.
    pub scaled: Vec<f64>,
    pub mask_prob: Vec<f64>,
    /// Unscaled attributes with masked-off entries zeroed.
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub rmse_scaled: f64,
    pub rmse_unscaled: f64,
    pub mask_bce: f64,
    /// Mean per-attribute NSE on unscaled values; attributes that are
    /// constant over the evaluated rows are skipped.
    pub nse: Option<f64>,
    pub rows: usize,
}

#[derive(Clone, Debug)]
pub struct TrainedNode {
    pub model: NodeAutoencoder,
    pub metrics: NodeMetrics,
    /// Mean minibatch loss of every epoch.
    pub history: Vec<f64>,
}

impl LayerSet for NodeAutoencoder {
    fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.encoder.layers.iter().collect();
        v.extend([&self.decoder_hidden, &self.value_head, &self.mask_head]);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.encoder.layers.iter_mut().collect();
        v.extend([&mut self.decoder_hidden, &mut self.value_head, &mut self.mask_head]);
        v
    }
}

impl NodeAutoencoder {
    pub fn new(node: &str, dim: usize, scaler: Scaler, cfg: &NodeAeConfig) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 || dim > ATTRIBUTE_SLOTS {
            return Err(Error::Config(format!("node {node}: dimension {dim} outside 1..={ATTRIBUTE_SLOTS}")));
        }
        ensure_len("scaler", scaler.dim(), dim)?;
        let keys = make_keys(stream_seed(cfg.seed, &format!("keys/{node}")), cfg.num_keys)?;
        let grid = cfg.num_keys * FEATURE_LEN * FEATURE_LEN;
        let mut rng = substream(cfg.seed, &format!("node-ae/{node}/init"));
        let encoder = Stack::new(vec![
            Dense::init(format!("{node}.enc.0"), grid, cfg.hidden, Activation::Tanh, &mut rng),
            Dense::init(format!("{node}.enc.1"), cfg.hidden, cfg.latent_dim, Activation::Identity, &mut rng),
        ])?;
        let decoder_hidden = Dense::init(format!("{node}.dec.0"), cfg.latent_dim, cfg.hidden, Activation::Tanh, &mut rng);
        let value_head = Dense::init(format!("{node}.dec.value"), cfg.hidden, grid, Activation::Identity, &mut rng);
        let mask_head = Dense::init(format!("{node}.dec.mask"), cfg.hidden, dim, Activation::Sigmoid, &mut rng);
        Ok(NodeAutoencoder {
            node: node.to_string(),
            dim,
            keys,
            encoder,
            decoder_hidden,
            value_head,
            mask_head,
            scaler,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn expanded_len(&self) -> usize {
        self.keys.len() * FEATURE_LEN * FEATURE_LEN
    }

    /// Checks internal shape consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        if self.keys.is_empty() {
            return Err(Error::shape(format!("node {}: no keys", self.node)));
        }
        for k in &self.keys {
            k.validate()?;
        }
        let l = self.latent_dim();
        let checks = [
            ("encoder input", self.encoder.in_dim(), self.expanded_len()),
            ("decoder input", self.decoder_hidden.in_dim(), l),
            ("value head input", self.value_head.in_dim(), self.decoder_hidden.out_dim()),
            ("value head output", self.value_head.out_dim(), self.expanded_len()),
            ("mask head input", self.mask_head.in_dim(), self.decoder_hidden.out_dim()),
            ("mask head output", self.mask_head.out_dim(), self.dim),
            ("scaler", self.scaler.dim(), self.dim),
        ];
        for (what, got, want) in checks {
            ensure_len(&format!("node {} {what}", self.node), got, want)?;
        }
        for layer in self.layers() {
            ensure_len(&format!("layer {} bias", layer.name), layer.bias.len(), layer.out_dim())?;
        }
        Ok(())
    }

    pub fn encode_trace(&self, features: ArrayView2<f64>) -> Result<EncodeTrace> {
        ensure_len("feature width", features.ncols(), FEATURE_LEN)?;
        let expanded = expand_batch(features, &self.keys)?;
        let outputs = self.encoder.forward_trace(expanded.view());
        Ok(EncodeTrace { expanded, outputs })
    }

    pub fn encode_batch(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.encode_trace(features)?.outputs.pop().expect("encoder has layers"))
    }

    /// Parameter gradients of the two encoder layers. The gradient does not
    /// flow into the fixed expansion.
    pub fn encoder_backward(&self, trace: &EncodeTrace, d_latent: Array2<f64>) -> Vec<DenseGrad> {
        self.encoder.backward(trace.expanded.view(), &trace.outputs, d_latent, false).0
    }

    pub fn decode_trace(&self, latent: ArrayView2<f64>) -> Result<DecodeTrace> {
        ensure_len("latent width", latent.ncols(), self.latent_dim())?;
        let hidden = self.decoder_hidden.forward_batch(latent);
        let grid = self.value_head.forward_batch(hidden.view());
        let recon = reduce_batch(grid.view(), &self.keys)?;
        let mask_prob = self.mask_head.forward_batch(hidden.view());
        Ok(DecodeTrace {
            hidden,
            grid,
            recon,
            mask_prob,
        })
    }

    /// Gradients of the three decoder layers (hidden, value head, mask head)
    /// and, if requested, of the latent input.
    pub fn decoder_backward(
        &self,
        latent: ArrayView2<f64>,
        trace: &DecodeTrace,
        d_recon: ArrayView2<f64>,
        d_mask: ArrayView2<f64>,
        need_latent_grad: bool,
    ) -> Result<(Vec<DenseGrad>, Option<Array2<f64>>)> {
        let d_grid = reduce_backward(trace.grid.view(), d_recon, &self.keys)?;
        let (g_value, d_hidden_v) = self.value_head.backward_batch(trace.hidden.view(), trace.grid.view(), d_grid.view(), true);
        let (g_mask, d_hidden_m) =
            self.mask_head
                .backward_batch(trace.hidden.view(), trace.mask_prob.view(), d_mask, true);
        let d_hidden = d_hidden_v.expect("requested") + d_hidden_m.expect("requested");
        let (g_hidden, d_latent) =
            self.decoder_hidden
                .backward_batch(latent, trace.hidden.view(), d_hidden.view(), need_latent_grad);
        Ok((vec![g_hidden, g_value, g_mask], d_latent))
    }

    /// Reconstruction loss of a batch and the gradients of all five layers
    /// in [`LayerSet`] order.
    pub fn self_loss(
        &self,
        features: ArrayView2<f64>,
        mask_bits: ArrayView2<f64>,
        lambda_mask: f64,
    ) -> Result<(LossReport, Vec<DenseGrad>)> {
        ensure_len("mask width", mask_bits.ncols(), self.dim)?;
        let enc = self.encode_trace(features)?;
        let dec = self.decode_trace(enc.latent().view())?;
        let (value, d_recon) = mse_batch(dec.recon.view(), features);
        let (mask, mut d_mask) = bce_batch(dec.mask_prob.view(), mask_bits);
        d_mask *= lambda_mask;
        let (mut grads, d_latent) = self.decoder_backward(enc.latent().view(), &dec, d_recon.view(), d_mask.view(), true)?;
        let mut all = self.encoder_backward(&enc, d_latent.expect("requested"));
        all.append(&mut grads);
        Ok((LossReport::new(value, mask, 0.0, lambda_mask, 0.0), all))
    }

    /// Loss of [`NodeAutoencoder::self_loss`] without the backward pass.
    pub fn self_loss_value(&self, features: ArrayView2<f64>, mask_bits: ArrayView2<f64>, lambda_mask: f64) -> Result<f64> {
        ensure_len("mask width", mask_bits.ncols(), self.dim)?;
        let latent = self.encode_batch(features)?;
        let dec = self.decode_trace(latent.view())?;
        let (value, _) = mse_batch(dec.recon.view(), features);
        let (mask, _) = bce_batch(dec.mask_prob.view(), mask_bits);
        Ok(value + lambda_mask * mask)
    }

    /// Minibatch Adam over the given rows. Returns the mean minibatch loss
    /// per epoch.
    pub fn fit(
        &mut self,
        features: ArrayView2<f64>,
        mask_bits: ArrayView2<f64>,
        cfg: &NodeAeConfig,
        state: &mut AdamState,
    ) -> Result<Vec<f64>> {
        if features.nrows() != mask_bits.nrows() || features.nrows() == 0 {
            return Err(Error::shape("fit: features and masks must have the same positive row count"));
        }
        let mut order: Vec<usize> = (0..features.nrows()).collect();
        let mut rng = substream(cfg.seed, &format!("node-ae/{}/order", self.node));
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let f = features.select(Axis(0), chunk);
                let m = mask_bits.select(Axis(0), chunk);
                let (loss, grads) = self.self_loss(f.view(), m.view(), cfg.lambda_mask)?;
                if !loss.total.is_finite() {
                    return Err(Error::Training(format!(
                        "node {}: non-finite loss in epoch {epoch}",
                        self.node
                    )));
                }
                let mut layers = self.layers_mut();
                adam_step(&mut layers, &grads, state)?;
                total += loss.total;
                batches += 1;
            }
            history.push(total / batches as f64);
        }
        Ok(history)
    }

    pub fn adam_state(&self, cfg: &NodeAeConfig) -> AdamState {
        AdamState::new(cfg.adam, &self.layers())
    }

    /// Reconstructs `rows` of a series and scores the result.
    pub fn evaluate(&self, series: &NodeSeries, rows: Range<usize>) -> Result<NodeMetrics> {
        let features = feature_matrix(series, rows.clone())?;
        let latent = self.encode_batch(features.view())?;
        let dec = self.decode_trace(latent.view())?;
        let truth = series.values.slice(s![rows.clone(), ..]);
        let bits = series.mask.slice(s![rows.clone(), ..]);
        self.score(dec.recon.view(), dec.mask_prob.view(), truth, bits)
    }

    /// Scores reduced 24-long reconstructions and mask probabilities against
    /// raw values and mask bits.
    pub fn score(
        &self,
        recon: ArrayView2<f64>,
        mask_prob: ArrayView2<f64>,
        truth: ArrayView2<f64>,
        bits: ArrayView2<f64>,
    ) -> Result<NodeMetrics> {
        let rows = truth.nrows();
        if rows == 0 {
            return Err(Error::Data(format!("node {}: nothing to evaluate", self.node)));
        }
        let scaled_hat = defeaturize_batch(recon, self.dim);
        let scaled_true = self.scaler.apply_matrix(truth)?;
        let rmse_scaled = (scaled_hat
            .iter()
            .zip(scaled_true.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / scaled_hat.len() as f64)
            .sqrt();
        let mut unscaled = self.scaler.invert_matrix(scaled_hat.view())?;
        ndarray::Zip::from(&mut unscaled)
            .and(&mask_prob)
            .for_each(|v, &p| {
                if p <= MASK_THRESHOLD {
                    *v = 0.0
                }
            });
        let rmse_unscaled = (unscaled
            .iter()
            .zip(truth.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / unscaled.len() as f64)
            .sqrt();
        let (mask_bce, _) = bce_batch(mask_prob, bits);
        let mut nses = Vec::new();
        for a in 0..self.dim {
            let obs = truth.column(a).to_vec();
            let pred = unscaled.column(a).to_vec();
            if let Ok(v) = nse(&pred, &obs) {
                nses.push(v);
            }
        }
        let nse = (!nses.is_empty()).then(|| nses.iter().sum::<f64>() / nses.len() as f64);
        Ok(NodeMetrics {
            rmse_scaled,
            rmse_unscaled,
            mask_bce,
            nse,
            rows,
        })
    }
}

pub fn encode_node(model: &NodeAutoencoder, feature: &[f64]) -> Result<Vec<f64>> {
    ensure_len("feature", feature.len(), FEATURE_LEN)?;
    let x = ArrayView2::from_shape((1, FEATURE_LEN), feature).expect("length checked");
    Ok(model.encode_batch(x)?.row(0).to_vec())
}

pub fn decode_node(model: &NodeAutoencoder, latent: &[f64]) -> Result<Decoded> {
    ensure_len("latent", latent.len(), model.latent_dim())?;
    let z = ArrayView2::from_shape((1, latent.len()), latent).expect("length checked");
    let dec = model.decode_trace(z)?;
    let feature = dec.recon.row(0).to_vec();
    let scaled = defeaturize(&feature, model.dim)?;
    let mask_prob = dec.mask_prob.row(0).to_vec();
    let values = apply_mask(&model.scaler.invert(&scaled)?, &mask_prob)?;
    Ok(Decoded {
        feature,
        scaled,
        mask_prob,
        values,
    })
}

fn is_degenerate(series: &NodeSeries) -> bool {
    series.values.columns().into_iter().all(|c| {
        let first = c[0];
        c.iter().all(|&v| v == first)
    })
}

/// Trains a node autoencoder on every fold block but the last, and scores it
/// on the last block.
pub fn train_node_autoencoder(series: &NodeSeries, cfg: &NodeAeConfig) -> Result<TrainedNode> {
    cfg.validate()?;
    if series.len() < 100 {
        return Err(Error::Training(format!(
            "node {}: {} steps, at least 100 required",
            series.name,
            series.len()
        )));
    }
    if is_degenerate(series) {
        return Err(Error::Training(format!(
            "node {}: every attribute is constant",
            series.name
        )));
    }
    let plan = kfold_split(series.len(), cfg.folds)?;
    let holdout = plan.holdout(plan.last());
    let train_rows: Vec<usize> = plan.train_ranges(plan.last()).into_iter().flatten().collect();
    let all = feature_matrix(series, 0..series.len())?;
    let features = all.select(Axis(0), &train_rows);
    let bits = series.mask.select(Axis(0), &train_rows);

    let mut model = NodeAutoencoder::new(&series.name, series.dim(), series.scaler.clone(), cfg)?;
    let mut state = model.adam_state(cfg);
    let history = model.fit(features.view(), bits.view(), cfg, &mut state)?;
    let metrics = model.evaluate(series, holdout)?;
    Ok(TrainedNode { model, metrics, history })
}

/// Latents of every step of a series.
pub fn encode_series(model: &NodeAutoencoder, series: &NodeSeries) -> Result<Array2<f64>> {
    let features = feature_matrix(series, 0..series.len())?;
    model.encode_batch(features.view())
}

pub fn latent_row(latents: &Array2<f64>, t: usize) -> ArrayView1<'_, f64> {
    latents.row(t)
}

pub fn zeros_latent(model: &NodeAutoencoder) -> Array1<f64> {
    Array1::zeros(model.latent_dim())
}
