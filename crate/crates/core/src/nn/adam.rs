//! Adam with bias-corrected moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dense::{Dense, DenseGrad};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one group of layers. Accumulator shapes mirror
/// the layers the state was created for.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<DenseGrad>,
    second: Vec<DenseGrad>,
}

impl AdamState {
    pub fn new(config: AdamConfig, layers: &[&Dense]) -> Self {
        let zeros: Vec<DenseGrad> = layers.iter().map(|l| DenseGrad::zeros_like(l)).collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// Applies one Adam update to `layers`, which may belong to different
/// models. Rejects non-finite gradients before touching any parameter; the
/// error names the offending layer.
pub fn adam_step(layers: &mut [&mut Dense], grads: &[DenseGrad], state: &mut AdamState) -> Result<()> {
    if layers.len() != grads.len() || layers.len() != state.first.len() {
        return Err(Error::shape(format!(
            "adam: {} layers, {} gradients, {} accumulators",
            layers.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (layer, g) in layers.iter().zip(grads) {
        if g.weights.raw_dim() != layer.weights.raw_dim() || g.bias.len() != layer.bias.len() {
            return Err(Error::shape(format!("adam: gradient shape mismatch for layer {}", layer.name)));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!("non-finite gradient in layer {}", layer.name)));
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (((layer, g), m), v) in layers
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        ndarray::Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

/// Reverts the most recent [`adam_step`] taken with `grads` and the current
/// configuration, up to floating-point rounding.
pub fn adam_undo(layers: &mut [&mut Dense], grads: &[DenseGrad], state: &mut AdamState) -> Result<()> {
    if state.step == 0 {
        return Err(Error::Training("adam: no step to undo".into()));
    }
    if layers.len() != grads.len() || layers.len() != state.first.len() {
        return Err(Error::shape("adam undo: group size mismatch"));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((layer, g), m), v) in layers
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let revert = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *m = (*m - (1.0 - beta1) * g) / beta1;
            *v = ((*v - (1.0 - beta2) * g * g) / beta2).max(0.0);
        };
        ndarray::Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| revert(p, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| revert(p, g, m, v));
    }
    state.step -= 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::Activation;
    use ndarray::{array, Array1, Array2};

    fn scalar(w: f64) -> Dense {
        Dense::new("w", array![[w]], Array1::zeros(1), Activation::Identity).unwrap()
    }

    fn grad(g: f64) -> Vec<DenseGrad> {
        vec![DenseGrad {
            weights: array![[g]],
            bias: Array1::zeros(1),
        }]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut layer = scalar(0.7);
        let mut state = AdamState::new(AdamConfig::default(), &[&layer]);
        adam_step(&mut [&mut layer], &grad(0.0), &mut state).unwrap();
        assert_eq!(layer.weights[[0, 0]], 0.7);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut layer = scalar(1.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&layer]);
        adam_step(&mut [&mut layer], &grad(1.0), &mut state).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((layer.weights[[0, 0]] - expected).abs() < 1e-15);
    }

    // Hand-unrolled Adam on f(w) = (w - 3)^2 / 2 from w = 1 with lr = 0.1,
    // evaluated step by step in a standalone script.
    #[test]
    fn two_steps_on_quadratic_match_unrolled_oracle() {
        let mut layer = scalar(1.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut state = AdamState::new(cfg, &[&layer]);
        let expected = [1.0999999995, 1.199833513378907];
        for e in expected {
            let w = layer.weights[[0, 0]];
            adam_step(&mut [&mut layer], &grad(w - 3.0), &mut state).unwrap();
            assert!((layer.weights[[0, 0]] - e).abs() < 1e-13);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut layer = scalar(1.0);
        layer.name = "encoder.0".into();
        let mut state = AdamState::new(AdamConfig::default(), &[&layer]);
        let err = adam_step(&mut [&mut layer], &grad(f64::NAN), &mut state).unwrap_err();
        assert!(err.to_string().contains("encoder.0"));
        assert_eq!(layer.weights[[0, 0]], 1.0);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn undo_restores_parameters_and_moments() {
        let mut layer = scalar(0.4);
        let mut state = AdamState::new(AdamConfig::default(), &[&layer]);
        adam_step(&mut [&mut layer], &grad(0.3), &mut state).unwrap();
        let (w1, m1, v1) = (layer.weights[[0, 0]], state.first.clone(), state.second.clone());
        adam_step(&mut [&mut layer], &grad(-1.7), &mut state).unwrap();
        adam_undo(&mut [&mut layer], &grad(-1.7), &mut state).unwrap();
        assert_eq!(state.step, 1);
        assert!((layer.weights[[0, 0]] - w1).abs() < 1e-15);
        assert!((state.first[0].weights[[0, 0]] - m1[0].weights[[0, 0]]).abs() < 1e-15);
        assert!((state.second[0].weights[[0, 0]] - v1[0].weights[[0, 0]]).abs() < 1e-15);
        adam_undo(&mut [&mut layer], &grad(0.3), &mut state).unwrap();
        assert!((layer.weights[[0, 0]] - 0.4).abs() < 1e-15);
        assert!(adam_undo(&mut [&mut layer], &grad(0.3), &mut state).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut layer = scalar(1.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&layer]);
        let bad = vec![DenseGrad {
            weights: Array2::zeros((2, 1)),
            bias: Array1::zeros(1),
        }];
        assert!(matches!(adam_step(&mut [&mut layer], &bad, &mut state), Err(Error::Shape(_))));
    }
}
