//! NeRF-style positional encoding.

use ndarray::Array2;

/// Maps `x` to `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x),
/// cos(2^{L-1} pi x)]`, output dimension `d * (2L + 1)`. `n_freq = 0` is the
/// identity passthrough.
pub fn positional_encoding(x: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * (2 * n_freq + 1));
    out.extend_from_slice(x);
    for l in 0..n_freq {
        let scale = (1u64 << l) as f64 * std::f64::consts::PI;
        for &v in x {
            out.push((scale * v).sin());
        }
        for &v in x {
            out.push((scale * v).cos());
        }
    }
    out
}

/// Output dimension of [`positional_encoding`] for `d` input channels.
pub fn encoded_dim(d: usize, n_freq: usize) -> usize {
    d * (2 * n_freq + 1)
}

/// Row-wise batched encoding.
pub fn positional_encoding_batch(x: &Array2<f64>, n_freq: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, encoded_dim(d, n_freq)));
    for (i, row) in x.rows().into_iter().enumerate() {
        let enc = positional_encoding(row.as_slice().unwrap(), n_freq);
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&enc));
    }
    out
}

/// Derivative of the encoding with respect to input channel `k`, as the
/// cotangent-contraction: given d(loss)/d(encoded), returns d(loss)/d(x_k).
pub fn encoding_input_grad(x: &[f64], n_freq: usize, cot: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut grad = vec![0.0; d];
    for k in 0..d {
        grad[k] = cot[k];
    }
    for l in 0..n_freq {
        let scale = (1u64 << l) as f64 * std::f64::consts::PI;
        let base = d + 2 * l * d;
        for k in 0..d {
            let arg = scale * x[k];
            grad[k] += cot[base + k] * scale * arg.cos();
            grad[k] -= cot[base + d + k] * scale * arg.sin();
        }
    }
    grad
}
