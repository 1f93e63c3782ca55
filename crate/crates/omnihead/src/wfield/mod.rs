//! The semantic signed-distance field W(x | p) = (s, x_bar).
//!
//! A correspondence MLP maps an observation-space point x (positionally
//! encoded, concatenated with the control vector p) to its canonical
//! correspondence x_bar; the signed distance is then read from the
//! pre-baked canonical SDF grid: s(x | p) = s_bar(x_bar). Distance
//! preservation between observation and canonical space is structural, not
//! a trained property. The warp is parameterized residually,
//! x_bar = x + delta(x, p), with a zero-initialized output layer so the
//! untrained field is the identity map.
//!
//! # Example
//!
//! A fresh warp network is exactly the identity, so its semantic SDF
//! equals the baked canonical grid:
//!
//! ```
//! use omnihead::head::{build_template, ModelConfig};
//! use omnihead::mesh::bake_sdf_grid;
//! use omnihead::wfield::WNet;
//!
//! let model = build_template(&ModelConfig { d_alpha: 4, d_beta: 4, subdivisions: 2, seed: 3 })?;
//! let bbox = model.bbox.padded(0.25);
//! let grid = bake_sdf_grid(&model.canonical_mesh(), bbox, 32)?;
//! let net = WNet::new(grid, model.canonical_params(), bbox, 4, &[24, 24], 0)?;
//!
//! let x = [0.02, -0.03, 0.05];
//! let p = model.canonical_params();
//! let (s, x_bar) = net.semantic_sdf(x, &p)?;
//! assert_eq!(x_bar, x);                          // identity warp
//! assert_eq!(s, net.canonical_sdf.query(x).0);   // grid read-through
//! # Ok::<(), omnihead::Error>(())
//! ```

mod loss;
mod train;

pub use loss::{
    huber, huber_grad, loss_eik_value, loss_iso_value, loss_sem_value, stage1_loss_grad,
    LossTerms, LossWeights,
};
pub use train::{
    draw_control_params, train_semantic_sdf, evaluate_wnet, EpochLog, TrainSdfConfig, WnetMetrics,
};

use crate::error::{Error, Result};
use crate::head::ControlParams;
use crate::io::Checkpoint;
use crate::math::{self, V3};
use crate::mesh::{Aabb, SdfGrid};
use crate::nn::{encoded_dim, positional_encoding, Activation, Mlp};
use ndarray::Array2;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WNet {
    pub mlp: Mlp,
    pub canonical_sdf: SdfGrid,
    pub canonical_params: ControlParams,
    /// Working volume (padded model bounding box); inputs are normalized to
    /// [-1, 1] per axis against it before encoding.
    pub bbox: Aabb,
    pub n_freq: usize,
    pub d_alpha: usize,
    pub d_beta: usize,
}

impl WNet {
    /// Fresh identity-initialized warp field around a baked canonical SDF.
    pub fn new(
        canonical_sdf: SdfGrid,
        canonical_params: ControlParams,
        bbox: Aabb,
        n_freq: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let d_alpha = canonical_params.alpha.len();
        let d_beta = canonical_params.beta.len();
        let in_dim = encoded_dim(3, n_freq) + d_alpha + d_beta + 6;
        let mut widths = vec![in_dim];
        widths.extend_from_slice(hidden);
        widths.push(3);
        let mut mlp = Mlp::new(widths, Activation::Softplus, seed)?;
        mlp.zero_output_layer();
        Ok(WNet {
            mlp,
            canonical_sdf,
            canonical_params,
            bbox,
            n_freq,
            d_alpha,
            d_beta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.widths[0]
    }

    /// Default finite-difference step: 1e-3 of the bbox diagonal.
    pub fn fd_step(&self) -> f64 {
        1e-3 * self.bbox.diagonal()
    }

    fn normalize(&self, x: V3) -> V3 {
        let c = self.bbox.center();
        [
            (x[0] - c[0]) / (0.5 * (self.bbox.max[0] - self.bbox.min[0])),
            (x[1] - c[1]) / (0.5 * (self.bbox.max[1] - self.bbox.min[1])),
            (x[2] - c[2]) / (0.5 * (self.bbox.max[2] - self.bbox.min[2])),
        ]
    }

    /// Input rows for a batch of points under one control vector.
    pub fn build_inputs(&self, pts: &[V3], p: &ControlParams) -> Result<Array2<f64>> {
        if p.alpha.len() != self.d_alpha || p.beta.len() != self.d_beta {
            return Err(Error::Dimension(
                "control dims do not match warp field".into(),
            ));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("control parameters"));
        }
        let p_flat = p.to_flat();
        let in_dim = self.input_dim();
        let enc_dim = encoded_dim(3, self.n_freq);
        let mut data = Vec::with_capacity(pts.len() * in_dim);
        for &x in pts {
            let enc = positional_encoding(&self.normalize(x), self.n_freq);
            data.extend_from_slice(&enc);
            data.extend_from_slice(&p_flat);
            debug_assert_eq!(enc.len(), enc_dim);
        }
        Ok(Array2::from_shape_vec((pts.len(), in_dim), data).expect("row-major batch"))
    }

    /// Batched warp: canonical correspondences for `pts` under `p`.
    pub fn warp_batch(&self, pts: &[V3], p: &ControlParams) -> Result<Vec<V3>> {
        let inputs = self.build_inputs(pts, p)?;
        let (delta, _) = self.mlp.forward_batch(&inputs);
        Ok(pts
            .iter()
            .enumerate()
            .map(|(i, &x)| math::add(x, [delta[(i, 0)], delta[(i, 1)], delta[(i, 2)]]))
            .collect())
    }

    pub fn warp(&self, x: V3, p: &ControlParams) -> Result<V3> {
        Ok(self.warp_batch(&[x], p)?[0])
    }

    /// W(x | p) = (s, x_bar): the signed distance is the canonical grid
    /// queried at the warped point, so s(x | p) = s_bar(x_bar) exactly.
    pub fn semantic_sdf(&self, x: V3, p: &ControlParams) -> Result<(f64, V3)> {
        let xbar = self.warp(x, p)?;
        let (s, _) = self.canonical_sdf.query(xbar);
        Ok((s, xbar))
    }

    /// Batched signed distances (grid queried once per warped point).
    pub fn sdf_batch(&self, pts: &[V3], p: &ControlParams) -> Result<Vec<f64>> {
        let grid = &self.canonical_sdf;
        Ok(self
            .warp_batch(pts, p)?
            .into_iter()
            .map(|xbar| grid.query(xbar).0)
            .collect())
    }

    /// Spatial SDF gradient by the 6-point central stencil through the warp.
    pub fn sdf_gradient(&self, x: V3, p: &ControlParams, h: f64) -> Result<V3> {
        let pts = crate::nn::stencil_points(x, h);
        let s = self.sdf_batch(&pts, p)?;
        Ok(crate::nn::stencil_gradient(&s.try_into().unwrap(), h))
    }

    /// Serializes the field (and optionally the optimizer) into a
    /// checkpoint blob table.
    pub fn to_checkpoint(&self, adam: Option<&crate::nn::AdamState>) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put_u64("wnet.widths", self.mlp.widths.iter().map(|&w| w as u64).collect());
        ck.put_u64(
            "wnet.activation",
            vec![match self.mlp.activation {
                Activation::Softplus => 0,
                Activation::Relu => 1,
            }],
        );
        ck.put_f64("wnet.params", self.mlp.params.clone());
        ck.put_u64("grid.dims", self.canonical_sdf.dims.iter().map(|&d| d as u64).collect());
        let gb = &self.canonical_sdf.bbox;
        ck.put_f64("grid.bbox", [gb.min, gb.max].concat());
        ck.put_f32("grid.values", self.canonical_sdf.values.clone());
        ck.put_f64("canonical.alpha", self.canonical_params.alpha.clone());
        ck.put_f64("canonical.beta", self.canonical_params.beta.clone());
        ck.put_f64("canonical.theta", self.canonical_params.theta.to_vec());
        ck.put_f64("bbox", [self.bbox.min, self.bbox.max].concat());
        ck.put_u64("n_freq", vec![self.n_freq as u64]);
        if let Some(a) = adam {
            ck.put_f64("adam.hyper", vec![a.lr, a.beta1, a.beta2, a.eps]);
            ck.put_u64("adam.counts", vec![a.step_count, a.skipped]);
            ck.put_f64("adam.m", a.m.clone());
            ck.put_f64("adam.v", a.v.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<crate::nn::AdamState>)> {
        let widths: Vec<usize> = ck.u64s("wnet.widths")?.iter().map(|&w| w as usize).collect();
        let activation = match ck.u64s("wnet.activation")?.first() {
            Some(0) => Activation::Softplus,
            Some(1) => Activation::Relu,
            _ => return Err(Error::Config("unknown activation code".into())),
        };
        let params = ck.f64s("wnet.params")?.to_vec();
        if params.len() != Mlp::n_params(&widths) {
            return Err(Error::Dimension("parameter count does not match widths".into()));
        }
        let mlp = Mlp {
            widths,
            activation,
            params,
        };
        let dims_u = ck.u64s("grid.dims")?;
        let gb = ck.f64s("grid.bbox")?;
        let bb = ck.f64s("bbox")?;
        if dims_u.len() != 3 || gb.len() != 6 || bb.len() != 6 {
            return Err(Error::Dimension("bad grid/bbox entry shapes".into()));
        }
        let dims = [dims_u[0] as usize, dims_u[1] as usize, dims_u[2] as usize];
        let values = ck.f32s("grid.values")?.to_vec();
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Dimension("grid value count does not match dims".into()));
        }
        let theta_v = ck.f64s("canonical.theta")?;
        if theta_v.len() != 6 {
            return Err(Error::Dimension("canonical theta must have 6 entries".into()));
        }
        let canonical_params = ControlParams {
            alpha: ck.f64s("canonical.alpha")?.to_vec(),
            beta: ck.f64s("canonical.beta")?.to_vec(),
            theta: theta_v.try_into().unwrap(),
        };
        let d_alpha = canonical_params.alpha.len();
        let d_beta = canonical_params.beta.len();
        let n_freq = ck.scalar_u64("n_freq")? as usize;
        if mlp.widths[0] != encoded_dim(3, n_freq) + d_alpha + d_beta + 6
            || *mlp.widths.last().unwrap() != 3
        {
            return Err(Error::Dimension("MLP widths inconsistent with encoding".into()));
        }
        let net = WNet {
            mlp,
            canonical_sdf: SdfGrid {
                dims,
                bbox: Aabb {
                    min: [gb[0], gb[1], gb[2]],
                    max: [gb[3], gb[4], gb[5]],
                },
                values,
            },
            canonical_params,
            bbox: Aabb {
                min: [bb[0], bb[1], bb[2]],
                max: [bb[3], bb[4], bb[5]],
            },
            n_freq,
            d_alpha,
            d_beta,
        };
        let adam = if ck.has("adam.hyper") {
            let hy = ck.f64s("adam.hyper")?;
            let counts = ck.u64s("adam.counts")?;
            if hy.len() != 4 || counts.len() != 2 {
                return Err(Error::Dimension("bad optimizer entry shapes".into()));
            }
            let m = ck.f64s("adam.m")?.to_vec();
            let v = ck.f64s("adam.v")?.to_vec();
            if m.len() != net.mlp.params.len() || v.len() != net.mlp.params.len() {
                return Err(Error::Dimension("optimizer moment size mismatch".into()));
            }
            let mut a = crate::nn::AdamState::new(net.mlp.params.len(), hy[0]);
            a.beta1 = hy[1];
            a.beta2 = hy[2];
            a.eps = hy[3];
            a.step_count = counts[0];
            a.skipped = counts[1];
            a.m = m;
            a.v = v;
            Some(a)
        } else {
            None
        };
        Ok((net, adam))
    }

    pub fn save_checkpoint(
        &self,
        path: &std::path::Path,
        adam: Option<&crate::nn::AdamState>,
    ) -> Result<()> {
        self.to_checkpoint(adam).save(path)
    }

    pub fn load_checkpoint(
        path: &std::path::Path,
    ) -> Result<(Self, Option<crate::nn::AdamState>)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{build_template, ModelConfig};
    use crate::mesh::bake_sdf_grid;

    fn tiny_wnet() -> (WNet, crate::head::HeadModel) {
        let model = build_template(&ModelConfig {
            subdivisions: 2,
            d_alpha: 4,
            d_beta: 4,
            seed: 3,
        })
        .unwrap();
        let bbox = model.bbox.padded(0.25);
        let grid = bake_sdf_grid(&model.canonical_mesh(), bbox, 32).unwrap();
        let net = WNet::new(
            grid,
            ControlParams::canonical(4, 4),
            bbox,
            4,
            &[32, 32],
            9,
        )
        .unwrap();
        (net, model)
    }

    #[test]
    fn untrained_net_is_identity_warp() {
        let (net, model) = tiny_wnet();
        let p = ControlParams::zeros(4, 4);
        for x in [[0.0, 0.0, 0.0], [0.05, -0.03, 0.08], model.bbox.min] {
            let xbar = net.warp(x, &p).unwrap();
            assert_eq!(xbar, x);
        }
    }

    #[test]
    fn distance_preservation_is_structural() {
        // Both code paths must return literally the same number.
        let (net, _) = tiny_wnet();
        let p = ControlParams::canonical(4, 4);
        let x = [0.02, 0.01, 0.06];
        let (s, xbar) = net.semantic_sdf(x, &p).unwrap();
        let (s_direct, _) = net.canonical_sdf.query(xbar);
        assert_eq!(s, s_direct);
    }

    #[test]
    fn identity_warp_reproduces_canonical_grid() {
        let (net, _) = tiny_wnet();
        let p = ControlParams::canonical(4, 4);
        let x = [0.03, -0.02, 0.05];
        let (s, _) = net.semantic_sdf(x, &p).unwrap();
        let (expected, _) = net.canonical_sdf.query(x);
        assert_eq!(s, expected);
    }

    #[test]
    fn checkpoint_round_trip_preserves_field() {
        let (net, _) = tiny_wnet();
        let mut adam = crate::nn::AdamState::new(net.mlp.params.len(), 3e-4);
        let g: Vec<f64> = (0..net.mlp.params.len()).map(|i| (i as f64).sin() * 1e-3).collect();
        let mut params = net.mlp.params.clone();
        adam.step(&mut params, &g);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ckp");
        net.save_checkpoint(&p, Some(&adam)).unwrap();
        let (back, adam_back) = WNet::load_checkpoint(&p).unwrap();
        assert_eq!(back.mlp.params, net.mlp.params);
        assert_eq!(back.mlp.widths, net.mlp.widths);
        assert_eq!(back.canonical_sdf.values, net.canonical_sdf.values);
        assert_eq!(back.bbox, net.bbox);
        assert_eq!(back.n_freq, net.n_freq);
        assert_eq!(back.canonical_params, net.canonical_params);
        let ab = adam_back.unwrap();
        assert_eq!(ab.m, adam.m);
        assert_eq!(ab.v, adam.v);
        assert_eq!(ab.step_count, adam.step_count);
        assert_eq!(ab.lr, adam.lr);
        // A warped point must agree bit-for-bit after reload.
        let q = [0.04, -0.01, 0.07];
        let pc = ControlParams::canonical(4, 4);
        assert_eq!(net.warp(q, &pc).unwrap(), back.warp(q, &pc).unwrap());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (net, _) = tiny_wnet();
        let p = ControlParams::zeros(7, 4);
        assert!(net.warp([0.0; 3], &p).is_err());
    }
}
