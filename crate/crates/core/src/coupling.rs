//! Invertible Expander / Reducer pair.
//!
//! The Expander maps a length-`L0` vector to one `L0 x L0` grid per key:
//!
//! ```text
//! y[i][j] = x[j] * exp(s(x[i])) + t(x[i])    for i != j
//! y[i][i] = x[i]
//! ```
//!
//! with `s(v) = g_s * tanh(a_s * v)` and `t(v) = g_t * tanh(a_t * v)`. The
//! identity diagonal carries each conditioner unchanged, so the Reducer can
//! undo every off-diagonal cell with `(y[i][j] - t(y[i][i])) * exp(-s(y[i][i]))`
//! and average the `K * L0` recovered copies of each `x[j]`.
//!
//! Grids are flattened row-major (`i * L0 + j`) and concatenated in
//! ascending key order.

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Upper bound on `|g_s|`; keeps `exp(s(.))` inside `[e^-2, e^2]`.
pub const MAX_SCALE_GAIN: f64 = 2.0;

/// Fixed random parameters of one coupling grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Key {
    pub key_id: u32,
    pub seed: u64,
    /// Inner gain `a_s` of the scale function.
    pub scale_inner: f64,
    /// Outer gain `g_s` of the scale function.
    pub scale_outer: f64,
    /// Inner gain `a_t` of the shift function.
    pub shift_inner: f64,
    /// Outer gain `g_t` of the shift function.
    pub shift_outer: f64,
}

impl Key {
    /// A key whose coupling is the identity (`s = t = 0`).
    pub fn identity(key_id: u32) -> Self {
        Key {
            key_id,
            seed: 0,
            scale_inner: 0.0,
            scale_outer: 0.0,
            shift_inner: 0.0,
            shift_outer: 0.0,
        }
    }

    #[inline]
    pub fn scale(&self, v: f64) -> f64 {
        self.scale_outer * (self.scale_inner * v).tanh()
    }

    #[inline]
    pub fn shift(&self, v: f64) -> f64 {
        self.shift_outer * (self.shift_inner * v).tanh()
    }

    #[inline]
    fn scale_derivative(&self, v: f64) -> f64 {
        let th = (self.scale_inner * v).tanh();
        self.scale_outer * self.scale_inner * (1.0 - th * th)
    }

    #[inline]
    fn shift_derivative(&self, v: f64) -> f64 {
        let th = (self.shift_inner * v).tanh();
        self.shift_outer * self.shift_inner * (1.0 - th * th)
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.scale_inner, self.scale_outer, self.shift_inner, self.shift_outer];
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("key {} has non-finite weights", self.key_id)));
        }
        if self.scale_outer.abs() > MAX_SCALE_GAIN {
            return Err(Error::Config(format!(
                "key {}: |scale gain| {} exceeds {MAX_SCALE_GAIN}",
                self.key_id, self.scale_outer
            )));
        }
        Ok(())
    }
}

/// Deterministic key set: weights uniform in `[-1, 1]`, scale gains clipped
/// to the conditioning bound.
pub fn make_keys(seed: u64, count: usize) -> Result<Vec<Key>> {
    if count == 0 {
        return Err(Error::Config("at least one key is required".into()));
    }
    let mut rng = substream(seed, "coupling-keys");
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    Ok((0..count)
        .map(|id| {
            let scale_inner = unit.sample(&mut rng);
            let mut scale_outer: f64 = unit.sample(&mut rng);
            let shift_inner = unit.sample(&mut rng);
            let shift_outer = unit.sample(&mut rng);
            if scale_outer.abs() > MAX_SCALE_GAIN {
                scale_outer *= MAX_SCALE_GAIN / scale_outer.abs();
            }
            Key {
                key_id: id as u32,
                seed,
                scale_inner,
                scale_outer,
                shift_inner,
                shift_outer,
            }
        })
        .collect())
}

/// Coupling of `x_j` conditioned on `x_i`.
#[inline]
pub fn eta(x_i: f64, x_j: f64, key: &Key) -> f64 {
    x_j * key.scale(x_i).exp() + key.shift(x_i)
}

/// Inverse coupling; `y_i` is the identity-passed conditioner.
#[inline]
pub fn eta_inv(y_i: f64, y_j: f64, key: &Key) -> f64 {
    (y_j - key.shift(y_i)) * (-key.scale(y_i)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpanderConfig {
    pub input_len: usize,
    pub num_keys: usize,
}

impl Default for ExpanderConfig {
    fn default() -> Self {
        ExpanderConfig {
            input_len: 24,
            num_keys: 4,
        }
    }
}

impl ExpanderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len < 2 {
            return Err(Error::Config(format!("expander input length {} < 2", self.input_len)));
        }
        if self.num_keys == 0 {
            return Err(Error::Config("expander needs at least one key".into()));
        }
        Ok(())
    }

    pub fn expanded_len(&self) -> usize {
        self.num_keys * self.input_len * self.input_len
    }
}

fn grid_side(expanded_len: usize, num_keys: usize) -> Result<usize> {
    if num_keys == 0 || expanded_len % num_keys != 0 {
        return Err(Error::shape(format!(
            "expanded length {expanded_len} does not split into {num_keys} grids"
        )));
    }
    let per = expanded_len / num_keys;
    let side = (per as f64).sqrt().round() as usize;
    if side * side != per || side < 2 {
        return Err(Error::shape(format!("grid of {per} cells is not a square of side >= 2")));
    }
    Ok(side)
}

/// Expands one vector into `K * L0^2` values.
pub fn expand(x: &[f64], keys: &[Key]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::shape(format!("expander input length {} < 2", x.len())));
    }
    if keys.is_empty() {
        return Err(Error::Config("expander needs at least one key".into()));
    }
    let n = x.len();
    let mut out = vec![0.0; keys.len() * n * n];
    expand_into(x, keys, &mut out);
    Ok(out)
}

fn expand_into(x: &[f64], keys: &[Key], out: &mut [f64]) {
    let n = x.len();
    for (k, key) in keys.iter().enumerate() {
        let grid = &mut out[k * n * n..(k + 1) * n * n];
        for i in 0..n {
            let gain = key.scale(x[i]).exp();
            let shift = key.shift(x[i]);
            let row = &mut grid[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = if i == j { x[i] } else { x[j] * gain + shift };
            }
        }
    }
}

/// Row-wise [`expand`] over a batch.
pub fn expand_batch(x: ArrayView2<f64>, keys: &[Key]) -> Result<Array2<f64>> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::shape(format!("expander input length {n} < 2")));
    }
    if keys.is_empty() {
        return Err(Error::Config("expander needs at least one key".into()));
    }
    let mut out = Array2::zeros((x.nrows(), keys.len() * n * n));
    for (row_in, mut row_out) in x.outer_iter().zip(out.axis_iter_mut(Axis(0))) {
        let xs = row_in.to_vec();
        expand_into(&xs, keys, row_out.as_slice_mut().expect("contiguous row"));
    }
    Ok(out)
}

fn reduce_into(e: &[f64], keys: &[Key], n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, key) in keys.iter().enumerate() {
        let grid = &e[k * n * n..(k + 1) * n * n];
        for i in 0..n {
            let cond = grid[i * n + i];
            let inv_gain = (-key.scale(cond)).exp();
            let shift = key.shift(cond);
            for j in 0..n {
                out[j] += if i == j {
                    cond
                } else {
                    (grid[i * n + j] - shift) * inv_gain
                };
            }
        }
    }
    let c = 1.0 / (keys.len() * n) as f64;
    out.iter_mut().for_each(|v| *v *= c);
}

/// Collapses an expanded vector back to length `L0`.
pub fn reduce(e: &[f64], keys: &[Key]) -> Result<Vec<f64>> {
    let n = grid_side(e.len(), keys.len())?;
    let mut out = vec![0.0; n];
    reduce_into(e, keys, n, &mut out);
    Ok(out)
}

pub fn reduce_batch(e: ArrayView2<f64>, keys: &[Key]) -> Result<Array2<f64>> {
    let n = grid_side(e.ncols(), keys.len())?;
    let mut out = Array2::zeros((e.nrows(), n));
    for (row_in, mut row_out) in e.outer_iter().zip(out.axis_iter_mut(Axis(0))) {
        let es = row_in.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| row_in.to_vec());
        reduce_into(&es, keys, n, row_out.as_slice_mut().expect("contiguous row"));
    }
    Ok(out)
}

/// Gradient of [`reduce_batch`] with respect to its input, given the
/// gradient with respect to its output.
pub fn reduce_backward(e: ArrayView2<f64>, d_out: ArrayView2<f64>, keys: &[Key]) -> Result<Array2<f64>> {
    let n = grid_side(e.ncols(), keys.len())?;
    if d_out.ncols() != n || d_out.nrows() != e.nrows() {
        return Err(Error::shape("reduce_backward: gradient shape mismatch"));
    }
    let c = 1.0 / (keys.len() * n) as f64;
    let mut d_e = Array2::zeros(e.raw_dim());
    for ((row_e, row_d), mut row_g) in e.outer_iter().zip(d_out.outer_iter()).zip(d_e.axis_iter_mut(Axis(0))) {
        let g = row_g.as_slice_mut().expect("contiguous row");
        for (k, key) in keys.iter().enumerate() {
            let base = k * n * n;
            for i in 0..n {
                let cond = row_e[base + i * n + i];
                let inv_gain = (-key.scale(cond)).exp();
                let shift = key.shift(cond);
                let ds = key.scale_derivative(cond);
                let dt = key.shift_derivative(cond);
                let mut d_cond = row_d[i];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let y = row_e[base + i * n + j];
                    g[base + i * n + j] = c * row_d[j] * inv_gain;
                    d_cond += row_d[j] * (-dt * inv_gain - (y - shift) * inv_gain * ds);
                }
                g[base + i * n + i] = c * d_cond;
            }
        }
    }
    Ok(d_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    /// Max elementwise error relative to the vector's own scale.
    fn vec_rel(got: &[f64], want: &[f64]) -> f64 {
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn keys_are_deterministic_and_seed_sensitive() {
        let a = make_keys(7, 4).unwrap();
        let b = make_keys(7, 4).unwrap();
        let c = make_keys(8, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(make_keys(7, 0).is_err());
        assert_eq!(a.iter().map(|k| k.key_id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn generated_keys_stay_in_bounds_over_many_seeds() {
        for seed in 0..1000 {
            for key in make_keys(seed, 4).unwrap() {
                key.validate().unwrap();
                for w in [key.scale_inner, key.scale_outer, key.shift_inner, key.shift_outer] {
                    assert!((-1.0..=1.0).contains(&w));
                }
                for v in [-1e6, -3.0, 0.0, 0.5, 1e6] {
                    let g = key.scale(v).exp();
                    assert!(g >= (-2.0f64).exp() && g <= 2.0f64.exp());
                }
            }
        }
    }

    #[test]
    fn identity_key_couplings() {
        let k = Key::identity(0);
        assert_eq!(eta(3.0, -1.25, &k), -1.25);
        assert_eq!(eta_inv(3.0, -1.25, &k), -1.25);
    }

    #[test]
    fn shift_only_and_shift_cancellation() {
        let key = make_keys(11, 1).unwrap().remove(0);
        assert_eq!(eta(0.8, 0.0, &key), key.shift(0.8));
        assert_eq!(eta_inv(0.8, key.shift(0.8), &key), 0.0);
    }

    // Direct evaluation of 2 * exp(0.5 * tanh(1)) + tanh(1), computed with
    // a standalone script.
    #[test]
    fn eta_matches_formula_oracle() {
        let key = Key {
            key_id: 0,
            seed: 0,
            scale_inner: 1.0,
            scale_outer: 0.5,
            shift_inner: 1.0,
            shift_outer: 1.0,
        };
        let v = eta(1.0, 2.0, &key);
        assert!((v - 3.688_495_373_796_469_4).abs() < 1e-14, "{v}");
    }

    #[test]
    fn eta_is_strictly_monotone_in_target() {
        let keys = make_keys(5, 8).unwrap();
        for key in &keys {
            let a = eta(0.3, 1.0, key);
            let b = eta(0.3, 1.0 + 1e-9, key);
            assert!(b > a);
        }
    }

    #[test]
    fn scalar_round_trip_is_exact() {
        let keys = make_keys(3, 4).unwrap();
        let mut rng = substream(1, "eta-roundtrip");
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            let key = &keys[rng.random_range(0..keys.len())];
            let xi: f64 = rng.random_range(-5.0..5.0);
            let xj: f64 = rng.random_range(-5.0..5.0);
            let back = eta_inv(xi, eta(xi, xj, key), key);
            worst = worst.max(rel(back, xj));
        }
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn expansion_lengths() {
        let x: Vec<f64> = (0..24).map(|v| v as f64 * 0.1).collect();
        assert_eq!(expand(&x, &make_keys(0, 1).unwrap()).unwrap().len(), 576);
        assert_eq!(expand(&x, &make_keys(0, 4).unwrap()).unwrap().len(), 2304);
        assert!(expand(&[1.0], &make_keys(0, 1).unwrap()).is_err());
        assert!(matches!(reduce(&[0.0; 10], &make_keys(0, 1).unwrap()), Err(Error::Shape(_))));
    }

    #[test]
    fn two_by_two_identity_grid() {
        let e = expand(&[1.5, -2.0], &[Key::identity(0)]).unwrap();
        assert_eq!(e, vec![1.5, -2.0, 1.5, -2.0]);
    }

    #[test]
    fn diagonal_carries_the_input() {
        let keys = make_keys(9, 4).unwrap();
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 0.7).sin() * 3.0).collect();
        let e = expand(&x, &keys).unwrap();
        for k in 0..4 {
            for i in 0..24 {
                assert_eq!(e[k * 576 + i * 24 + i], x[i]);
            }
        }
    }

    #[test]
    fn reduce_inverts_expand() {
        let keys = make_keys(21, 4).unwrap();
        let mut rng = substream(2, "reduce-roundtrip");
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-4.0..4.0)).collect();
            let back = reduce(&expand(&x, &keys).unwrap(), &keys).unwrap();
            worst = worst.max(vec_rel(&back, &x));
        }
        assert!(worst <= 1e-12, "{worst}");
        assert_eq!(reduce(&vec![0.0; 2304], &keys).unwrap(), vec![0.0; 24]);
    }

    fn single_conditioner_reduce(e: &[f64], key: &Key, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let i = (j + 1) % n;
                eta_inv(e[i * n + i], e[i * n + j], key)
            })
            .collect()
    }

    #[test]
    fn averaging_suppresses_decoder_noise() {
        let keys = make_keys(4, 4).unwrap();
        let mut rng = substream(3, "reduce-noise");
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut e = expand(&x, &keys).unwrap();
            for v in e.iter_mut() {
                *v += normal.sample(&mut rng);
            }
            let avg = reduce(&e, &keys).unwrap();
            let single = single_conditioner_reduce(&e[..576], &keys[0], 24);
            let err = |r: &[f64]| r.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            assert!(err(&avg) < err(&single));
        }
    }

    #[test]
    fn batch_paths_agree_with_single_paths() {
        let keys = make_keys(12, 2).unwrap();
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 + 1.0) * (j as f64 - 2.0) * 0.4);
        let e = expand_batch(x.view(), &keys).unwrap();
        for r in 0..3 {
            let single = expand(&x.row(r).to_vec(), &keys).unwrap();
            assert_eq!(e.row(r).to_vec(), single);
        }
        let back = reduce_batch(e.view(), &keys).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_backward_matches_central_differences() {
        let keys = make_keys(13, 2).unwrap();
        let mut rng = substream(4, "reduce-grad");
        let n = 4;
        let e = Array2::from_shape_fn((2, 2 * n * n), |_| rng.random_range(-1.5..1.5));
        let w = Array2::from_shape_fn((2, n), |_| rng.random_range(-1.0..1.0));
        let objective = |e: &Array2<f64>| (reduce_batch(e.view(), &keys).unwrap() * &w).sum();
        let g = reduce_backward(e.view(), w.view(), &keys).unwrap();
        let h = 1e-6;
        for idx in 0..e.len() {
            let (r, c) = (idx / e.ncols(), idx % e.ncols());
            let mut up = e.clone();
            let mut dn = e.clone();
            up[[r, c]] += h;
            dn[[r, c]] -= h;
            let cd = (objective(&up) - objective(&dn)) / (2.0 * h);
            assert!((cd - g[[r, c]]).abs() < 1e-8, "cell {r},{c}: {cd} vs {}", g[[r, c]]);
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bijective_on_random_vectors(seed in 0u64..10_000, scale in 0.1f64..20.0) {
            let keys = make_keys(seed, 3).unwrap();
            let mut rng = substream(seed, "prop-bijective");
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(-scale..scale)).collect();
            let back = reduce(&expand(&x, &keys).unwrap(), &keys).unwrap();
            prop_assert!(vec_rel(&back, &x) <= 1e-12);
        }

        #[test]
        fn expansion_is_bit_deterministic(seed in 0u64..10_000) {
            let keys = make_keys(seed, 2).unwrap();
            let x: Vec<f64> = (0..6).map(|v| (v as f64 + seed as f64).cos()).collect();
            prop_assert_eq!(expand(&x, &keys).unwrap(), expand(&x, &make_keys(seed, 2).unwrap()).unwrap());
        }
    }
}
