//! Dense layers and layer stacks.
//!
//! Batched tensors are row-major: one sample per row. A layer computes
//! `y = activation(x W^T + b)` with `W` stored as `(out, in)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's own output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub name: String,
    /// Shape `(out, in)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Parameter gradient of one dense layer, same shapes as the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrad {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrad) {
        self.weights += &other.weights;
        self.bias += &other.bias;
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

impl Dense {
    pub fn new(
        name: impl Into<String>,
        weights: Array2<f64>,
        bias: Array1<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let name = name.into();
        if weights.nrows() != bias.len() {
            return Err(Error::shape(format!(
                "layer {name}: {} weight rows but {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Dense {
            name,
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights (He-uniform for ReLU), zero bias.
    pub fn init<R: Rng + ?Sized>(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Dense {
            name: name.into(),
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Single-sample forward pass with shape checking.
    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        ensure_len(&format!("layer {} input", self.name), input.len(), self.in_dim())?;
        let mut z = self.weights.dot(&input);
        z += &self.bias;
        z.mapv_inplace(|v| self.activation.apply(v));
        Ok(z)
    }

    /// Batched forward pass. Panics on a column-count mismatch; callers
    /// validate shapes at the model boundary.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(
            input.ncols(),
            self.in_dim(),
            "layer {} expects {} input columns",
            self.name,
            self.in_dim()
        );
        let mut z = input.dot(&self.weights.t());
        z += &self.bias;
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    /// Backward pass given the forward input, the forward output and the
    /// gradient with respect to that output. The input gradient is skipped
    /// when `need_input_grad` is false (first layer over a fixed feature map).
    pub fn backward_batch(
        &self,
        input: ArrayView2<f64>,
        output: ArrayView2<f64>,
        d_output: ArrayView2<f64>,
        need_input_grad: bool,
    ) -> (DenseGrad, Option<Array2<f64>>) {
        let act = self.activation;
        let mut dz = d_output.to_owned();
        if act != Activation::Identity {
            ndarray::Zip::from(&mut dz)
                .and(&output)
                .for_each(|d, &y| *d *= act.derivative_from_output(y));
        }
        let weights = dz.t().dot(&input);
        let bias = dz.sum_axis(Axis(0));
        let d_input = need_input_grad.then(|| dz.dot(&self.weights));
        (DenseGrad { weights, bias }, d_input)
    }
}

/// A feed-forward sequence of dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub layers: Vec<Dense>,
}

impl Stack {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {} emits {} values but {} expects {}",
                    pair[0].name,
                    pair[0].out_dim(),
                    pair[1].name,
                    pair[1].in_dim()
                )));
            }
        }
        if layers.is_empty() {
            return Err(Error::Config("empty layer stack".into()));
        }
        Ok(Stack { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(Dense::out_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut x = input.to_owned();
        for layer in &self.layers {
            x = layer.forward(x.view())?;
        }
        Ok(x)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut x = self.layers[0].forward_batch(input);
        for layer in &self.layers[1..] {
            x = layer.forward_batch(x.view());
        }
        x
    }

    /// Forward pass that keeps every layer output for a later backward pass.
    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = if i == 0 {
                layer.forward_batch(input)
            } else {
                layer.forward_batch(outs[i - 1].view())
            };
            outs.push(y);
        }
        outs
    }

    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        trace: &[Array2<f64>],
        d_output: Array2<f64>,
        need_input_grad: bool,
    ) -> (Vec<DenseGrad>, Option<Array2<f64>>) {
        let n = self.layers.len();
        let mut grads: Vec<Option<DenseGrad>> = vec![None; n];
        let mut d = d_output;
        let mut d_input = None;
        for i in (0..n).rev() {
            let layer_in = if i == 0 { input } else { trace[i - 1].view() };
            let want = i > 0 || need_input_grad;
            let (g, d_in) = self.layers[i].backward_batch(layer_in, trace[i].view(), d.view(), want);
            grads[i] = Some(g);
            match d_in {
                Some(next) if i > 0 => d = next,
                other => d_input = other,
            }
        }
        (grads.into_iter().map(|g| g.expect("filled")).collect(), d_input)
    }

    pub fn zero_grads(&self) -> Vec<DenseGrad> {
        self.layers.iter().map(DenseGrad::zeros_like).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::array;

    #[test]
    fn zero_weights_return_bias() {
        let layer = Dense::new(
            "z",
            Array2::zeros((2, 3)),
            array![0.5, -1.5],
            Activation::Identity,
        )
        .unwrap();
        let y = layer.forward(array![3.0, -4.0, 9.0].view()).unwrap();
        assert_eq!(y, array![0.5, -1.5]);
    }

    #[test]
    fn identity_weights_pass_through() {
        let layer = Dense::new("id", Array2::eye(3), Array1::zeros(3), Activation::Identity).unwrap();
        let x = array![0.25, -7.0, 1e9];
        assert_eq!(layer.forward(x.view()).unwrap(), x);
    }

    // Expected values computed offline with an independent row-by-row
    // multiply-accumulate (numpy: W @ x + b with the same literals).
    #[test]
    fn three_by_two_matches_matrix_product_oracle() {
        let layer = Dense::new(
            "m",
            array![[0.3, -1.2], [2.5, 0.7], [-0.4, -0.9]],
            array![0.1, -0.2, 0.05],
            Activation::Identity,
        )
        .unwrap();
        let y = layer.forward(array![1.5, -2.0].view()).unwrap();
        let expected = [2.95, 2.15, 1.25];
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let tanh_layer = Dense {
            activation: Activation::Tanh,
            ..layer
        };
        let y = tanh_layer.forward(array![1.5, -2.0].view()).unwrap();
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let layer = Dense::new("m", Array2::zeros((2, 3)), Array1::zeros(2), Activation::Tanh).unwrap();
        assert!(matches!(layer.forward(array![1.0].view()), Err(Error::Shape(_))));
    }

    #[test]
    fn mismatched_bias_is_rejected() {
        assert!(Dense::new("m", Array2::zeros((2, 3)), Array1::zeros(3), Activation::Tanh).is_err());
    }

    #[test]
    fn batch_forward_agrees_with_single_forward() {
        let mut rng = substream(1, "dense-test");
        let layer = Dense::init("l", 5, 4, Activation::Sigmoid, &mut rng);
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let batch = layer.forward_batch(x.view());
        for r in 0..3 {
            let single = layer.forward(x.row(r)).unwrap();
            for (a, b) in single.iter().zip(batch.row(r)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stack_rejects_incompatible_layers() {
        let mut rng = substream(1, "stack-test");
        let a = Dense::init("a", 3, 4, Activation::Tanh, &mut rng);
        let b = Dense::init("b", 5, 2, Activation::Tanh, &mut rng);
        assert!(Stack::new(vec![a, b]).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        // With identity activation: f(a x + b y) = a f(x) + b f(y) - (a + b - 1) bias.
        #[test]
        fn identity_layer_is_affine(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut rng = substream(seed, "affine");
            let mut layer = Dense::init("l", 4, 3, Activation::Identity, &mut rng);
            layer.bias = array![0.3, -0.7, 1.1];
            let x = array![0.5, -1.0, 2.0, 0.25];
            let y = array![-0.3, 0.8, 0.1, -1.5];
            let lhs = layer.forward((&x * a + &y * b).view()).unwrap();
            let rhs = layer.forward(x.view()).unwrap() * a + layer.forward(y.view()).unwrap() * b
                - &layer.bias * (a + b - 1.0);
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() < 1e-10);
            }
        }
    }
}
