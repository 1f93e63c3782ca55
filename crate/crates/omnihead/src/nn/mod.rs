//! Minimal neural stack: fixed-topology MLPs with exact reverse-mode
//! parameter gradients, positional encoding, finite-difference input
//! gradients and Adam.
//!
//! Everything is float64. Batched evaluation goes through matrix products so
//! the 192-wide training loops stay fast on a single core; results are
//! deterministic (no threaded reductions inside a batch).
//!
//! # Example
//!
//! Reverse-mode MLP gradients agree with central finite differences:
//!
//! ```
//! use ndarray::Array2;
//! use omnihead::nn::{Activation, Mlp};
//!
//! let mut mlp = Mlp::new(vec![2, 8, 1], Activation::Softplus, 7)?;
//! let x = Array2::from_shape_vec((1, 2), vec![0.3, -0.8]).unwrap();
//! let (y0, cache) = mlp.forward_batch(&x);
//!
//! let mut grad = vec![0.0; mlp.params.len()];
//! let cot = Array2::from_elem((1, 1), 1.0);
//! mlp.backward_batch_into(&cache, &cot, &mut grad);
//!
//! let (i, h) = (5, 1e-6);
//! let orig = mlp.params[i];
//! mlp.params[i] = orig + h;
//! let yp = mlp.forward_batch(&x).0[(0, 0)];
//! mlp.params[i] = orig - h;
//! let ym = mlp.forward_batch(&x).0[(0, 0)];
//! let fd = (yp - ym) / (2.0 * h);
//! assert!((fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0));
//! # drop(y0);
//! # Ok::<(), omnihead::Error>(())
//! ```

mod adam;
mod encoding;
mod fdgrad;

pub use adam::AdamState;
pub use encoding::{encoded_dim, encoding_input_grad, positional_encoding, positional_encoding_batch};
pub use fdgrad::{input_gradient_fd, stencil_gradient, stencil_points};

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    /// Smooth softplus on hidden layers; keeps FD input gradients well
    /// behaved.
    Softplus,
    Relu,
}

/// Overflow-safe softplus ln(1 + e^z).
#[inline]
pub fn stable_softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Overflow-safe logistic sigmoid; also the softplus derivative.
#[inline]
pub fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// d/dz softplus(z) = sigmoid(z).
#[inline]
pub fn softplus_deriv(z: f64) -> f64 {
    stable_sigmoid(z)
}

use stable_sigmoid as sigmoid;
use stable_softplus as softplus;

/// Fixed-topology multilayer perceptron. Hidden layers use the configured
/// activation, the output layer is linear. Parameters live in one flat
/// buffer (weights row-major as out x in, then biases, per layer) so the
/// optimizer and finite-difference checks can treat the net as a vector.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Forward-pass cache for one batch: layer inputs (post-activation) and
/// hidden pre-activations.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_acts: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(widths: &[usize]) -> usize {
        widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// He-style random init, deterministic per seed.
    pub fn new(widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("invalid MLP widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::n_params(&widths));
        for w in widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let scale = (2.0 / n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                params.push(rng.gen_range(-1.0..1.0) * scale);
            }
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Ok(Mlp {
            widths,
            activation,
            params,
        })
    }

    /// Zeroes the final layer (weights and bias); used for residual heads
    /// that must start as the identity map.
    pub fn zero_output_layer(&mut self) {
        let last = self.n_layers() - 1;
        let (off, len) = self.layer_span(last);
        for p in &mut self.params[off..off + len] {
            *p = 0.0;
        }
    }

    /// (offset, length) of layer `l` in the flat parameter buffer.
    fn layer_span(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k] * self.widths[k + 1] + self.widths[k + 1];
        }
        (off, self.widths[l] * self.widths[l + 1] + self.widths[l + 1])
    }

    fn layer_weights(&self, l: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let (off, _) = self.layer_span(l);
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[off..off + n_in * n_out])
            .expect("contiguous weight block");
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward_batch(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        assert_eq!(
            x.ncols(),
            self.widths[0],
            "input width {} != expected {}",
            x.ncols(),
            self.widths[0]
        );
        let n_layers = self.n_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre_acts = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut h = x.clone();
        for l in 0..n_layers {
            let (w, b) = self.layer_weights(l);
            inputs.push(h.clone());
            let mut z = h.dot(&w.t());
            let bias = Array1::from_vec(b.to_vec());
            z += &bias;
            if l + 1 < n_layers {
                pre_acts.push(z.clone());
                h = match self.activation {
                    Activation::Softplus => z.mapv(softplus),
                    Activation::Relu => z.mapv(|v| v.max(0.0)),
                };
            } else {
                h = z;
            }
        }
        (h, ForwardCache { inputs, pre_acts })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let arr = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        let (y, _) = self.forward_batch(&arr);
        y.row(0).to_vec()
    }

    /// Reverse-mode pass. `cotangent` has one row per sample. Returns the
    /// flat parameter gradient (summed over the batch) and the gradient with
    /// respect to the inputs.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        cotangent: &Array2<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let n_layers = self.n_layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = cotangent.clone();
        for l in (0..n_layers).rev() {
            let (w, _) = self.layer_weights(l);
            let x_l = &cache.inputs[l];
            // dW = delta^T x, db = column sums of delta.
            let dw = delta.t().dot(x_l);
            let db = delta.sum_axis(Axis(0));
            let (off, _) = self.layer_span(l);
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            grad[off..off + n_in * n_out].copy_from_slice(dw.as_slice().unwrap());
            grad[off + n_in * n_out..off + n_in * n_out + n_out]
                .copy_from_slice(db.as_slice().unwrap());
            delta = delta.dot(&w);
            if l > 0 {
                let z = &cache.pre_acts[l - 1];
                match self.activation {
                    Activation::Softplus => delta.zip_mut_with(z, |d, &zv| *d *= sigmoid(zv)),
                    Activation::Relu => {
                        delta.zip_mut_with(z, |d, &zv| *d *= if zv > 0.0 { 1.0 } else { 0.0 })
                    }
                }
            }
        }
        (grad, delta)
    }

    /// Accumulates a backward pass into an existing gradient buffer.
    pub fn backward_batch_into(
        &self,
        cache: &ForwardCache,
        cotangent: &Array2<f64>,
        grad_acc: &mut [f64],
    ) -> Array2<f64> {
        let (g, input_grad) = self.backward_batch(cache, cotangent);
        for (a, b) in grad_acc.iter_mut().zip(&g) {
            *a += b;
        }
        input_grad
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn linear_layer_grads_are_outer_products() {
        // Single linear layer y = Wx + b.
        let mlp = Mlp::new(vec![3, 2], Activation::Softplus, 1).unwrap();
        let x = arr2(&[[1.0, 2.0, 3.0]]);
        let (_, cache) = mlp.forward_batch(&x);
        let cot = arr2(&[[0.5, -1.5]]);
        let (grad, input_grad) = mlp.backward_batch(&cache, &cot);
        // dW[i][j] = cot[i] * x[j]
        let expected_w = [0.5, 1.0, 1.5, -1.5, -3.0, -4.5];
        for (g, e) in grad[..6].iter().zip(expected_w) {
            approx::assert_abs_diff_eq!(*g, e, epsilon = 1e-14);
        }
        // db = cot
        approx::assert_abs_diff_eq!(grad[6], 0.5, epsilon = 1e-14);
        approx::assert_abs_diff_eq!(grad[7], -1.5, epsilon = 1e-14);
        // dx = W^T cot
        let (w, _) = mlp.layer_weights(0);
        for j in 0..3 {
            let expected = w[(0, j)] * 0.5 + w[(1, j)] * (-1.5);
            approx::assert_abs_diff_eq!(input_grad[(0, j)], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_grads() {
        let mlp = Mlp::new(vec![4, 8, 2], Activation::Softplus, 3).unwrap();
        let x = arr2(&[[0.1, -0.2, 0.3, 0.4], [1.0, 1.0, -1.0, 0.5]]);
        let (_, cache) = mlp.forward_batch(&x);
        let cot = Array2::zeros((2, 2));
        let (grad, input_grad) = mlp.backward_batch(&cache, &cot);
        assert!(grad.iter().all(|&g| g == 0.0));
        assert!(input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn param_grads_match_finite_differences() {
        let mut mlp = Mlp::new(vec![5, 16, 16, 2], Activation::Softplus, 7).unwrap();
        let x = arr2(&[[0.3, -0.7, 0.2, 0.9, -0.1], [-0.4, 0.6, 0.1, -0.8, 0.5]]);
        // Scalar loss: weighted sum of outputs.
        let weights = arr2(&[[1.0, -2.0], [0.5, 1.5]]);
        let loss = |m: &Mlp| -> f64 {
            let (y, _) = m.forward_batch(&x);
            (&y * &weights).sum()
        };
        let (_, cache) = mlp.forward_batch(&x);
        let (grad, _) = mlp.backward_batch(&cache, &weights);
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..60 {
            let i = rng.gen_range(0..mlp.params.len());
            let orig = mlp.params[i];
            mlp.params[i] = orig + h;
            let lp = loss(&mlp);
            mlp.params[i] = orig - h;
            let lm = loss(&mlp);
            mlp.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                ((grad[i] - fd) / denom).abs() < 1e-6,
                "param {i}: analytic {} vs fd {}",
                grad[i],
                fd
            );
        }
    }

    #[test]
    fn input_grads_match_finite_differences() {
        let mlp = Mlp::new(vec![3, 12, 1], Activation::Softplus, 11).unwrap();
        let x0 = [0.2, -0.5, 0.8];
        let x = arr2(&[x0]);
        let (_, cache) = mlp.forward_batch(&x);
        let cot = arr2(&[[1.0]]);
        let (_, input_grad) = mlp.backward_batch(&cache, &cot);
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x0;
            let mut xm = x0;
            xp[k] += h;
            xm[k] -= h;
            let fd = (mlp.forward(&xp)[0] - mlp.forward(&xm)[0]) / (2.0 * h);
            approx::assert_abs_diff_eq!(input_grad[(0, k)], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_output() {
        let mut mlp = Mlp::new(vec![4, 8, 3], Activation::Softplus, 2).unwrap();
        mlp.zero_output_layer();
        let y = mlp.forward(&[0.3, 1.0, -2.0, 0.5]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_widths_rejected() {
        assert!(Mlp::new(vec![3], Activation::Softplus, 0).is_err());
        assert!(Mlp::new(vec![3, 0, 2], Activation::Softplus, 0).is_err());
    }
}
