//! Central-difference verification of hand-derived gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::nn::dense::{Dense, DenseGrad, Stack};
use crate::rng::substream;

/// Anything that owns an ordered list of dense layers. Gradient vectors
/// returned by objectives follow the same order.
pub trait LayerSet {
    fn layers(&self) -> Vec<&Dense>;
    fn layers_mut(&mut self) -> Vec<&mut Dense>;
}

impl LayerSet for Stack {
    fn layers(&self) -> Vec<&Dense> {
        self.layers.iter().collect()
    }
    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.layers.iter_mut().collect()
    }
}

impl LayerSet for Dense {
    fn layers(&self) -> Vec<&Dense> {
        vec![self]
    }
    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![self]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many entries per weight matrix and per bias
    /// vector, chosen at random. `None` checks every parameter.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_per_tensor: None,
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_layer: String,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn param_mut<M: LayerSet>(model: &mut M, layer: usize, is_bias: bool, k: usize) -> &mut f64 {
    let dense = model.layers_mut().swap_remove(layer);
    if is_bias {
        &mut dense.bias[k]
    } else {
        let cols = dense.weights.ncols();
        &mut dense.weights[[k / cols, k % cols]]
    }
}

fn pick(len: usize, max: Option<usize>, rng: &mut crate::rng::Rng) -> Vec<usize> {
    match max {
        Some(k) if k < len => {
            let mut idx = sample(rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Compares the analytic gradient returned by `objective` with central
/// differences of its loss, parameter by parameter. Returns the maximum of
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn grad_check<M, F>(model: &M, objective: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    M: LayerSet + Clone,
    F: Fn(&M) -> Result<(f64, Vec<DenseGrad>)>,
{
    let (loss, analytic) = objective(model)?;
    if !loss.is_finite() {
        return Err(Error::GradCheck(format!("non-finite loss {loss}")));
    }
    let n_layers = model.layers().len();
    if analytic.len() != n_layers {
        return Err(Error::GradCheck(format!(
            "objective returned {} gradients for {} layers",
            analytic.len(),
            n_layers
        )));
    }

    let mut rng = substream(opts.seed, "grad-check");
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_layer: String::new(),
        checked: 0,
    };
    let eval = |m: &M| -> Result<f64> {
        let (l, _) = objective(m)?;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::GradCheck(format!("non-finite loss {l} under perturbation")))
        }
    };

    for li in 0..n_layers {
        let name = model.layers()[li].name.clone();
        let n_w = model.layers()[li].weights.len();
        let n_b = model.layers()[li].bias.len();
        for (is_bias, count) in [(false, n_w), (true, n_b)] {
            for k in pick(count, opts.max_per_tensor, &mut rng) {
                let original = *param_mut(&mut probe, li, is_bias, k);
                *param_mut(&mut probe, li, is_bias, k) = original + opts.eps;
                let up = eval(&probe)?;
                *param_mut(&mut probe, li, is_bias, k) = original - opts.eps;
                let down = eval(&probe)?;
                *param_mut(&mut probe, li, is_bias, k) = original;
                let numeric = (up - down) / (2.0 * opts.eps);
                let a = if is_bias {
                    analytic[li].bias[k]
                } else {
                    let cols = analytic[li].weights.ncols();
                    analytic[li].weights[[k / cols, k % cols]]
                };
                let err = rel_error(a, numeric, opts.floor);
                report.checked += 1;
                report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_layer = name.clone();
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::Activation;
    use crate::nn::loss::mse_batch;
    use ndarray::Array2;

    fn data() -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let y = Array2::from_shape_fn((6, 2), |(i, j)| ((i + 2 * j) as f64 * 0.51).cos());
        (x, y)
    }

    fn mse_objective(x: &Array2<f64>, y: &Array2<f64>) -> impl Fn(&Stack) -> Result<(f64, Vec<DenseGrad>)> {
        let (x, y) = (x.clone(), y.clone());
        move |s: &Stack| {
            let trace = s.forward_trace(x.view());
            let (loss, d) = mse_batch(trace.last().unwrap().view(), y.view());
            let (g, _) = s.backward(x.view(), &trace, d, false);
            Ok((loss, g))
        }
    }

    #[test]
    fn linear_model_gradients_are_exact() {
        let (x, y) = data();
        let mut rng = substream(3, "gc-linear");
        let s = Stack::new(vec![Dense::init("lin", 3, 2, Activation::Identity, &mut rng)]).unwrap();
        let r = grad_check(&s, mse_objective(&x, &y), GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn two_layer_tanh_network_passes() {
        let (x, y) = data();
        let mut rng = substream(4, "gc-tanh");
        let s = Stack::new(vec![
            Dense::init("h", 3, 5, Activation::Tanh, &mut rng),
            Dense::init("o", 5, 2, Activation::Tanh, &mut rng),
        ])
        .unwrap();
        let r = grad_check(&s, mse_objective(&x, &y), GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn sigmoid_and_relu_layers_pass() {
        let (x, y) = data();
        let mut rng = substream(5, "gc-mixed");
        let s = Stack::new(vec![
            Dense::init("r", 3, 6, Activation::Relu, &mut rng),
            Dense::init("s", 6, 2, Activation::Sigmoid, &mut rng),
        ])
        .unwrap();
        let r = grad_check(&s, mse_objective(&x, &y), GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn broken_gradient_is_detected() {
        let (x, y) = data();
        let mut rng = substream(6, "gc-broken");
        let s = Stack::new(vec![Dense::init("lin", 3, 2, Activation::Identity, &mut rng)]).unwrap();
        let inner = mse_objective(&x, &y);
        let wrong = move |m: &Stack| {
            let (l, mut g) = inner(m)?;
            g[0].weights *= 2.0;
            Ok((l, g))
        };
        let r = grad_check(&s, wrong, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut rng = substream(7, "gc-nan");
        let s = Stack::new(vec![Dense::init("lin", 3, 2, Activation::Identity, &mut rng)]).unwrap();
        let bad = |m: &Stack| Ok((f64::NAN, m.zero_grads()));
        assert!(matches!(
            grad_check(&s, bad, GradCheckOptions::default()),
            Err(Error::GradCheck(_))
        ));
    }
}
