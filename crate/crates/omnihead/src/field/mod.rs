//! Canonical appearance/geometry representation: triplane feature grids
//! with a tiny decoder conditioned on (noised) expression and pose codes.
//!
//! Three axis-aligned R x R x C feature planes (XY, XZ, YZ) cover the
//! canonical bounding box. A query point projects orthogonally onto each
//! plane; bilinear taps are summed across planes and decoded together with
//! a conditioning vector phi(beta, theta) into a density (softplus) and an
//! RGB color (sigmoid). Everything is differentiable with respect to plane
//! texels, decoder and conditioning-encoder parameters.
//!
//! # Example
//!
//! Decoding is deterministic and the conditioning vector reacts to the
//! expression code:
//!
//! ```
//! use omnihead::field::{FieldConfig, TriPlaneField};
//! use omnihead::mesh::Aabb;
//!
//! let extent = Aabb { min: [-0.5; 3], max: [0.5; 3] };
//! let field = TriPlaneField::new(extent, 4, &FieldConfig::default())?;
//!
//! let neutral = field.condition_encode(&[0.0; 4], &[0.0; 6], 0.0, 0)?;
//! let smiling = field.condition_encode(&[0.8, 0.0, 0.0, 0.0], &[0.0; 6], 0.0, 0)?;
//! assert_ne!(neutral, smiling);
//!
//! let (sigma, rgb, _) = field.decode_batch(&[[0.1, 0.0, -0.2]], &neutral)?;
//! assert!(sigma[0] >= 0.0);                       // softplus density
//! assert!(rgb[0].iter().all(|c| (0.0..=1.0).contains(c)));
//! # Ok::<(), omnihead::Error>(())
//! ```

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::math::V3;
use crate::mesh::Aabb;
use crate::nn::{
    encoded_dim, encoding_input_grad, positional_encoding, softplus_deriv, stable_sigmoid,
    stable_softplus, Activation, ForwardCache, Mlp,
};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Axis pairs projected onto each plane, in storage order XY, XZ, YZ.
const PLANE_AXES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

#[derive(Debug, Clone)]
pub struct TriPlaneField {
    /// Texels per plane edge.
    pub resolution: usize,
    /// Feature channels per plane.
    pub channels: usize,
    /// Spatial extent of all three planes (canonical bbox).
    pub extent: Aabb,
    /// Plane features, each `resolution * resolution * channels`, row-major
    /// over (v, u) with channels fastest.
    pub planes: [Vec<f64>; 3],
    /// Decoder Phi: [channels + cond_dim] -> [1 density logit, 3 color logits].
    pub decoder: Mlp,
    /// Conditioning encoder phi: positional-encoded (beta, theta) -> cond.
    pub cond_encoder: Mlp,
    pub cond_dim: usize,
    /// Frequencies for the conditioning encoding.
    pub cond_freq: usize,
    pub d_beta: usize,
}

/// One bilinear tap: 4 texel corners of one plane with combined
/// weights (bilinear x boundary fade).
#[derive(Debug, Clone, Copy)]
struct PlaneTap {
    /// Flat texel indices of the (u0,v0), (u1,v0), (u0,v1), (u1,v1) corners
    /// times `channels`.
    corner: [usize; 4],
    weight: [f64; 4],
}

/// Forward cache for a decoded batch.
pub struct DecodeCache {
    taps: Vec<[PlaneTap; 3]>,
    mlp_cache: ForwardCache,
    logits: Array2<f64>,
}

/// Gradient accumulators for everything trainable in the field.
#[derive(Debug, Clone)]
pub struct FieldGrads {
    pub planes: [Vec<f64>; 3],
    pub decoder: Vec<f64>,
    pub cond_encoder: Vec<f64>,
}

impl FieldGrads {
    pub fn zeros(field: &TriPlaneField) -> Self {
        let n = field.resolution * field.resolution * field.channels;
        FieldGrads {
            planes: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            decoder: vec![0.0; field.decoder.params.len()],
            cond_encoder: vec![0.0; field.cond_encoder.params.len()],
        }
    }

    pub fn clear(&mut self) {
        for p in self.planes.iter_mut() {
            p.iter_mut().for_each(|g| *g = 0.0);
        }
        self.decoder.iter_mut().for_each(|g| *g = 0.0);
        self.cond_encoder.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.planes.iter_mut() {
            p.iter_mut().for_each(|g| *g *= s);
        }
        self.decoder.iter_mut().for_each(|g| *g *= s);
        self.cond_encoder.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FieldConfig {
    pub resolution: usize,
    pub channels: usize,
    pub cond_dim: usize,
    pub cond_freq: usize,
    pub decoder_hidden: Vec<usize>,
    pub cond_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            resolution: 64,
            channels: 16,
            cond_dim: 8,
            cond_freq: 2,
            decoder_hidden: vec![64, 64],
            cond_hidden: vec![32],
            seed: 0,
        }
    }
}

impl TriPlaneField {
    /// Zero planes, He-initialized decoder and conditioning encoder.
    pub fn new(extent: Aabb, d_beta: usize, cfg: &FieldConfig) -> Result<Self> {
        if cfg.resolution < 2 {
            return Err(Error::Config("plane resolution must be >= 2".into()));
        }
        if cfg.channels == 0 || cfg.cond_dim == 0 {
            return Err(Error::Config("channels and cond_dim must be > 0".into()));
        }
        let n = cfg.resolution * cfg.resolution * cfg.channels;
        let mut dec_widths = vec![cfg.channels + cfg.cond_dim];
        dec_widths.extend_from_slice(&cfg.decoder_hidden);
        dec_widths.push(4);
        let decoder = Mlp::new(dec_widths, Activation::Softplus, cfg.seed ^ 0x51)?;
        let mut cond_widths = vec![encoded_dim(d_beta + 6, cfg.cond_freq)];
        cond_widths.extend_from_slice(&cfg.cond_hidden);
        cond_widths.push(cfg.cond_dim);
        let cond_encoder = Mlp::new(cond_widths, Activation::Softplus, cfg.seed ^ 0x52)?;
        Ok(TriPlaneField {
            resolution: cfg.resolution,
            channels: cfg.channels,
            extent,
            planes: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            decoder,
            cond_encoder,
            cond_dim: cfg.cond_dim,
            cond_freq: cfg.cond_freq,
            d_beta,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.planes
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
            && self.decoder.all_finite()
            && self.cond_encoder.all_finite()
    }

    /// Continuous texel coordinate of `x` along `axis` (0 .. R-1 inside the
    /// extent).
    #[inline]
    fn texel_coord(&self, x: V3, axis: usize) -> f64 {
        let lo = self.extent.min[axis];
        let hi = self.extent.max[axis];
        (x[axis] - lo) / (hi - lo) * (self.resolution - 1) as f64
    }

    /// Bilinear tap for one plane, with a linear fade to zero over one texel
    /// beyond the extent.
    fn plane_tap(&self, x: V3, plane: usize) -> PlaneTap {
        let r = self.resolution;
        let mut corner = [0usize; 4];
        let mut weight = [0.0; 4];
        let mut coords = [0.0; 2];
        // Fade over all three axes (not just the plane's own two) so the
        // summed feature is exactly zero anywhere beyond the 3D extent plus
        // one texel.
        let mut fade = 1.0;
        for axis in 0..3 {
            let u = self.texel_coord(x, axis);
            let over = (-u).max(u - (r - 1) as f64).max(0.0);
            fade *= (1.0 - over).max(0.0);
        }
        for (k, &axis) in PLANE_AXES[plane].iter().enumerate() {
            coords[k] = self.texel_coord(x, axis).clamp(0.0, (r - 1) as f64);
        }
        if fade == 0.0 {
            return PlaneTap { corner, weight };
        }
        let u0 = (coords[0].floor() as usize).min(r - 2);
        let v0 = (coords[1].floor() as usize).min(r - 2);
        let fu = coords[0] - u0 as f64;
        let fv = coords[1] - v0 as f64;
        let c = self.channels;
        corner = [
            (v0 * r + u0) * c,
            (v0 * r + u0 + 1) * c,
            ((v0 + 1) * r + u0) * c,
            ((v0 + 1) * r + u0 + 1) * c,
        ];
        weight = [
            fade * (1.0 - fu) * (1.0 - fv),
            fade * fu * (1.0 - fv),
            fade * (1.0 - fu) * fv,
            fade * fu * fv,
        ];
        PlaneTap { corner, weight }
    }

    /// Summed bilinear plane features at a canonical point.
    pub fn sample_triplane(&self, x: V3) -> Vec<f64> {
        let mut feat = vec![0.0; self.channels];
        for plane in 0..3 {
            let tap = self.plane_tap(x, plane);
            let data = &self.planes[plane];
            for k in 0..4 {
                let w = tap.weight[k];
                if w != 0.0 {
                    let base = tap.corner[k];
                    for ch in 0..self.channels {
                        feat[ch] += w * data[base + ch];
                    }
                }
            }
        }
        feat
    }

    /// phi(beta, theta): positional-encode the concatenated codes (optionally
    /// noised) and run the conditioning MLP. Deterministic per seed.
    pub fn condition_encode(
        &self,
        beta: &[f64],
        theta: &[f64; 6],
        noise_std: f64,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let (cond, _) = self.condition_encode_cached(beta, theta, noise_std, seed)?;
        Ok(cond)
    }

    /// As [`condition_encode`], also returning the noised input code and the
    /// forward cache needed for the backward pass.
    pub fn condition_encode_cached(
        &self,
        beta: &[f64],
        theta: &[f64; 6],
        noise_std: f64,
        seed: u64,
    ) -> Result<(Vec<f64>, CondCache)> {
        if beta.len() != self.d_beta {
            return Err(Error::Dimension(format!(
                "beta has {} entries, conditioning expects {}",
                beta.len(),
                self.d_beta
            )));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Config(format!("bad noise_std {noise_std}")));
        }
        let mut code: Vec<f64> = beta.iter().chain(theta.iter()).copied().collect();
        if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in code.iter_mut() {
                let eps: f64 = rng.sample(StandardNormal);
                *v += noise_std * eps;
            }
        }
        let enc = positional_encoding(&code, self.cond_freq);
        let input = Array2::from_shape_vec((1, enc.len()), enc).expect("row");
        let (out, cache) = self.cond_encoder.forward_batch(&input);
        Ok((
            out.row(0).to_vec(),
            CondCache {
                code,
                mlp_cache: cache,
            },
        ))
    }

    /// Reverse mode through the conditioning encoder; accumulates parameter
    /// gradients and returns the gradient on the (noised) input code.
    pub fn condition_backward(
        &self,
        cache: &CondCache,
        cond_cot: &[f64],
        grad_acc: &mut [f64],
    ) -> Vec<f64> {
        let cot = Array2::from_shape_vec((1, cond_cot.len()), cond_cot.to_vec()).expect("row");
        let enc_grad = self
            .cond_encoder
            .backward_batch_into(&cache.mlp_cache, &cot, grad_acc);
        encoding_input_grad(
            &cache.code,
            self.cond_freq,
            enc_grad.row(0).as_slice().unwrap(),
        )
    }

    /// Decodes a batch of canonical points under one conditioning vector.
    /// Returns densities (1/m), colors in [0,1], and the backward cache.
    pub fn decode_batch(&self, pts: &[V3], cond: &[f64]) -> Result<(Vec<f64>, Vec<[f64; 3]>, DecodeCache)> {
        if cond.len() != self.cond_dim {
            return Err(Error::Dimension(format!(
                "conditioning vector has {} entries, expected {}",
                cond.len(),
                self.cond_dim
            )));
        }
        let in_dim = self.channels + self.cond_dim;
        let mut taps = Vec::with_capacity(pts.len());
        let mut data = Vec::with_capacity(pts.len() * in_dim);
        for &x in pts {
            let mut row_taps = [PlaneTap {
                corner: [0; 4],
                weight: [0.0; 4],
            }; 3];
            let mut feat = vec![0.0; self.channels];
            for plane in 0..3 {
                let tap = self.plane_tap(x, plane);
                let pdata = &self.planes[plane];
                for k in 0..4 {
                    let w = tap.weight[k];
                    if w != 0.0 {
                        let base = tap.corner[k];
                        for ch in 0..self.channels {
                            feat[ch] += w * pdata[base + ch];
                        }
                    }
                }
                row_taps[plane] = tap;
            }
            taps.push(row_taps);
            data.extend_from_slice(&feat);
            data.extend_from_slice(cond);
        }
        let input = Array2::from_shape_vec((pts.len(), in_dim), data).expect("row-major");
        let (logits, mlp_cache) = self.decoder.forward_batch(&input);
        let mut sigma = Vec::with_capacity(pts.len());
        let mut rgb = Vec::with_capacity(pts.len());
        for i in 0..pts.len() {
            sigma.push(stable_softplus(logits[(i, 0)]));
            rgb.push([
                stable_sigmoid(logits[(i, 1)]),
                stable_sigmoid(logits[(i, 2)]),
                stable_sigmoid(logits[(i, 3)]),
            ]);
        }
        Ok((
            sigma,
            rgb,
            DecodeCache {
                taps,
                mlp_cache,
                logits,
            },
        ))
    }

    /// Convenience scalar decode.
    pub fn decode(&self, x: V3, cond: &[f64]) -> Result<(f64, [f64; 3])> {
        let (s, c, _) = self.decode_batch(&[x], cond)?;
        Ok((s[0], c[0]))
    }

    /// Reverse mode for a decoded batch. `cot_sigma` and `cot_rgb` are the
    /// loss cotangents on density and color. Accumulates into `grads`
    /// (plane texels + decoder) and returns the summed cotangent on the
    /// conditioning vector.
    pub fn decode_backward(
        &self,
        cache: &DecodeCache,
        cot_sigma: &[f64],
        cot_rgb: &[[f64; 3]],
        grads: &mut FieldGrads,
    ) -> Result<Vec<f64>> {
        let n = cache.taps.len();
        if cot_sigma.len() != n || cot_rgb.len() != n {
            return Err(Error::Dimension("cotangent length mismatch".into()));
        }
        // Through the output activations.
        let mut cot = Array2::zeros((n, 4));
        for i in 0..n {
            cot[(i, 0)] = cot_sigma[i] * softplus_deriv(cache.logits[(i, 0)]);
            for ch in 0..3 {
                let s = stable_sigmoid(cache.logits[(i, 1 + ch)]);
                cot[(i, 1 + ch)] = cot_rgb[i][ch] * s * (1.0 - s);
            }
        }
        let input_grad = self
            .decoder
            .backward_batch_into(&cache.mlp_cache, &cot, &mut grads.decoder);
        // Split input gradient into plane-feature and conditioning parts.
        let mut cond_grad = vec![0.0; self.cond_dim];
        for i in 0..n {
            for plane in 0..3 {
                let tap = &cache.taps[i][plane];
                for k in 0..4 {
                    let w = tap.weight[k];
                    if w != 0.0 {
                        let base = tap.corner[k];
                        for ch in 0..self.channels {
                            grads.planes[plane][base + ch] += w * input_grad[(i, ch)];
                        }
                    }
                }
            }
            for d in 0..self.cond_dim {
                cond_grad[d] += input_grad[(i, self.channels + d)];
            }
        }
        Ok(cond_grad)
    }

    /// Serializes planes, decoder and conditioning encoder.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put_u64(
            "field.shape",
            vec![
                self.resolution as u64,
                self.channels as u64,
                self.cond_dim as u64,
                self.cond_freq as u64,
                self.d_beta as u64,
            ],
        );
        ck.put_f64("field.extent", [self.extent.min, self.extent.max].concat());
        for (i, p) in self.planes.iter().enumerate() {
            ck.put_f64(&format!("field.plane{i}"), p.clone());
        }
        ck.put_u64(
            "field.decoder.widths",
            self.decoder.widths.iter().map(|&w| w as u64).collect(),
        );
        ck.put_f64("field.decoder.params", self.decoder.params.clone());
        ck.put_u64(
            "field.cond.widths",
            self.cond_encoder.widths.iter().map(|&w| w as u64).collect(),
        );
        ck.put_f64("field.cond.params", self.cond_encoder.params.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape = ck.u64s("field.shape")?;
        if shape.len() != 5 {
            return Err(Error::Dimension("bad field.shape entry".into()));
        }
        let (resolution, channels, cond_dim, cond_freq, d_beta) = (
            shape[0] as usize,
            shape[1] as usize,
            shape[2] as usize,
            shape[3] as usize,
            shape[4] as usize,
        );
        let e = ck.f64s("field.extent")?;
        if e.len() != 6 {
            return Err(Error::Dimension("bad field.extent entry".into()));
        }
        let n = resolution * resolution * channels;
        let mut planes: [Vec<f64>; 3] = [vec![], vec![], vec![]];
        for (i, p) in planes.iter_mut().enumerate() {
            *p = ck.f64s(&format!("field.plane{i}"))?.to_vec();
            if p.len() != n {
                return Err(Error::Dimension("plane size mismatch".into()));
            }
        }
        let mk_mlp = |w_name: &str, p_name: &str| -> Result<Mlp> {
            let widths: Vec<usize> = ck.u64s(w_name)?.iter().map(|&w| w as usize).collect();
            let params = ck.f64s(p_name)?.to_vec();
            if params.len() != Mlp::n_params(&widths) {
                return Err(Error::Dimension("MLP parameter count mismatch".into()));
            }
            Ok(Mlp {
                widths,
                activation: Activation::Softplus,
                params,
            })
        };
        let decoder = mk_mlp("field.decoder.widths", "field.decoder.params")?;
        let cond_encoder = mk_mlp("field.cond.widths", "field.cond.params")?;
        if decoder.widths[0] != channels + cond_dim
            || *decoder.widths.last().unwrap() != 4
            || cond_encoder.widths[0] != encoded_dim(d_beta + 6, cond_freq)
            || *cond_encoder.widths.last().unwrap() != cond_dim
        {
            return Err(Error::Dimension("field MLP widths inconsistent".into()));
        }
        Ok(TriPlaneField {
            resolution,
            channels,
            extent: Aabb {
                min: [e[0], e[1], e[2]],
                max: [e[3], e[4], e[5]],
            },
            planes,
            decoder,
            cond_encoder,
            cond_dim,
            cond_freq,
            d_beta,
        })
    }
}

/// Cache for the conditioning backward pass.
pub struct CondCache {
    /// The (noised) raw code fed into the positional encoding.
    pub code: Vec<f64>,
    mlp_cache: ForwardCache,
}
