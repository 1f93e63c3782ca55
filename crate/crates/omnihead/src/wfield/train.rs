//! Stage-1 training: fit the warp field over a population of posed heads.
//!
//! Supervision is fully synthetic. Control vectors are drawn once per run
//! (unit-normal shape/expression coefficients; uniform joint angles), and
//! each optimizer step re-derives its posed meshes and sample batches from
//! seeds, so nothing heavier than the control draws is held in memory and
//! runs are bit-reproducible.

use crate::error::{Error, Result};
use crate::head::{pose_mesh, ControlParams, HeadModel};
use crate::math::{self, V3};
use crate::mesh::{bake_sdf_grid, sample_surface, sample_volume, signed_distance, Bvh};
use crate::nn::AdamState;
use crate::wfield::{stage1_loss_grad, LossTerms, LossWeights, WNet};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainSdfConfig {
    /// Population size M of posed heads.
    pub n_meshes: usize,
    pub epochs: usize,
    /// Heads visited per optimizer step.
    pub meshes_per_step: usize,
    /// On-surface samples per head per step.
    pub surface_samples: usize,
    /// Free-space samples per head per step.
    pub volume_samples: usize,
    pub lr: f64,
    /// Final learning rate of the cosine decay schedule (set equal to `lr`
    /// for a constant rate).
    pub lr_final: f64,
    pub weights: LossWeights,
    pub hidden: Vec<usize>,
    pub n_freq: usize,
    pub grid_resolution: usize,
    /// Fractional padding of the model bbox for both the canonical grid and
    /// the free-space sampling volume.
    pub grid_padding: f64,
    pub seed: u64,
    /// Abort when the epoch loss exceeds this multiple of the first epoch's
    /// loss for three consecutive epochs.
    pub divergence_factor: f64,
}

impl Default for TrainSdfConfig {
    fn default() -> Self {
        TrainSdfConfig {
            n_meshes: 2000,
            epochs: 8,
            meshes_per_step: 4,
            surface_samples: 96,
            volume_samples: 96,
            lr: 1e-3,
            lr_final: 1e-5,
            weights: LossWeights::default(),
            hidden: vec![192, 192, 192],
            n_freq: 6,
            grid_resolution: 128,
            grid_padding: 0.25,
            seed: 0,
            divergence_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub iso: f64,
    pub eik: f64,
    pub sem: f64,
    pub total: f64,
}

/// One random control draw: unit-normal alpha/beta, uniform neck angles
/// within +-20 degrees, jaw hinge in [-5, +30] degrees with +-8 degrees of
/// off-axis play.
pub fn draw_control_params(d_alpha: usize, d_beta: usize, rng: &mut ChaCha8Rng) -> ControlParams {
    let deg = std::f64::consts::PI / 180.0;
    let mut p = ControlParams::zeros(d_alpha, d_beta);
    for a in p.alpha.iter_mut() {
        *a = rng.sample(StandardNormal);
    }
    for b in p.beta.iter_mut() {
        *b = rng.sample(StandardNormal);
    }
    for k in 0..3 {
        p.theta[k] = rng.gen_range(-20.0 * deg..20.0 * deg);
    }
    p.theta[3] = rng.gen_range(-5.0 * deg..30.0 * deg);
    p.theta[4] = rng.gen_range(-8.0 * deg..8.0 * deg);
    p.theta[5] = rng.gen_range(-8.0 * deg..8.0 * deg);
    p
}

fn check_config(cfg: &TrainSdfConfig) -> Result<()> {
    if cfg.n_meshes == 0
        || cfg.epochs == 0
        || cfg.meshes_per_step == 0
        || cfg.surface_samples == 0
        || cfg.volume_samples == 0
    {
        return Err(Error::Config("training sizes must all be > 0".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) || !(cfg.lr_final.is_finite() && cfg.lr_final > 0.0) {
        return Err(Error::Config(format!(
            "bad learning rates {} / {}",
            cfg.lr, cfg.lr_final
        )));
    }
    if cfg.divergence_factor <= 1.0 {
        return Err(Error::Config("divergence factor must exceed 1".into()));
    }
    Ok(())
}

/// Per-(epoch, mesh) sampling seed; offsets keep the surface and volume
/// streams independent of each other and of the control draws.
fn batch_seed(base: u64, epoch: usize, mesh: usize, stream: u64) -> u64 {
    base.wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(epoch as u64)
        .wrapping_mul(0x2545F4914F6CDD1D)
        .wrapping_add(mesh as u64)
        .wrapping_mul(0xD1342543DE82EF95)
        .wrapping_add(stream)
}

/// Trains a fresh warp field on `model`. Returns the trained field and the
/// per-epoch loss trace.
pub fn train_semantic_sdf(
    model: &HeadModel,
    cfg: &TrainSdfConfig,
) -> Result<(WNet, Vec<EpochLog>)> {
    check_config(cfg)?;
    let bbox = model.bbox.padded(cfg.grid_padding);
    let canon = model.canonical_mesh();
    let grid = bake_sdf_grid(&canon, bbox, cfg.grid_resolution)?;
    let mut net = WNet::new(
        grid,
        model.canonical_params(),
        bbox,
        cfg.n_freq,
        &cfg.hidden,
        cfg.seed,
    )?;
    let h = net.fd_step();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let population: Vec<ControlParams> = (0..cfg.n_meshes)
        .map(|_| draw_control_params(model.d_alpha(), model.d_beta(), &mut rng))
        .collect();

    let mut adam = AdamState::new(net.mlp.params.len(), cfg.lr);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut first_epoch_total = f64::NAN;
    let mut high_epochs = 0usize;
    let mut order: Vec<usize> = (0..cfg.n_meshes).collect();
    let total_steps = cfg.epochs * cfg.n_meshes.div_ceil(cfg.meshes_per_step);
    let mut step_idx = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = LossTerms {
            iso: 0.0,
            eik: 0.0,
            sem: 0.0,
        };
        let mut n_steps = 0usize;
        let mut grad = vec![0.0; net.mlp.params.len()];
        for chunk in order.chunks(cfg.meshes_per_step) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut step_terms = LossTerms {
                iso: 0.0,
                eik: 0.0,
                sem: 0.0,
            };
            for &mi in chunk {
                let p = &population[mi];
                let mesh = pose_mesh(model, p)?;
                let surf = sample_surface(
                    &mesh,
                    &canon,
                    cfg.surface_samples,
                    batch_seed(cfg.seed, epoch, mi, 1),
                )?;
                let off = sample_volume(
                    &bbox,
                    cfg.volume_samples,
                    batch_seed(cfg.seed, epoch, mi, 2),
                );
                let t = stage1_loss_grad(&net, &surf, &off, p, &cfg.weights, h, &mut grad)?;
                step_terms.iso += t.iso;
                step_terms.eik += t.eik;
                step_terms.sem += t.sem;
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            // Cosine decay from lr to lr_final over the whole run.
            let phase = step_idx as f64 / total_steps.max(1) as f64;
            adam.lr = cfg.lr_final
                + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + (std::f64::consts::PI * phase).cos());
            adam.step(&mut net.mlp.params, &grad);
            step_idx += 1;
            epoch_terms.iso += step_terms.iso * inv;
            epoch_terms.eik += step_terms.eik * inv;
            epoch_terms.sem += step_terms.sem * inv;
            n_steps += 1;
        }
        if !net.mlp.all_finite() {
            return Err(Error::NonFinite("warp-field parameters"));
        }
        let inv = 1.0 / n_steps as f64;
        let log = EpochLog {
            epoch,
            iso: epoch_terms.iso * inv,
            eik: epoch_terms.eik * inv,
            sem: epoch_terms.sem * inv,
            total: LossTerms {
                iso: epoch_terms.iso * inv,
                eik: epoch_terms.eik * inv,
                sem: epoch_terms.sem * inv,
            }
            .total(&cfg.weights),
        };
        if epoch == 0 {
            first_epoch_total = log.total;
        } else if log.total > cfg.divergence_factor * first_epoch_total {
            high_epochs += 1;
            if high_epochs >= 3 {
                return Err(Error::Diverged(format!(
                    "epoch {} loss {:.4} vs initial {:.4}",
                    epoch, log.total, first_epoch_total
                )));
            }
        } else {
            high_epochs = 0;
        }
        logs.push(log);
    }
    Ok((net, logs))
}

/// Held-out quality metrics of a trained warp field. All geometric errors
/// are reported as fractions of the model bounding-box diagonal; the
/// eikonal residual is unitless.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct WnetMetrics {
    /// Mean |s_net - s_exact| over near-surface free-space points.
    pub sdf_mae: f64,
    /// Mean | ||grad s||_2 - 1 | at the same points.
    pub eikonal_residual: f64,
    /// Mean distance between predicted and oracle canonical correspondences
    /// for on-surface points.
    pub sem_surface_err: f64,
    /// Mean warp displacement at the canonical configuration, where the warp
    /// should be the identity.
    pub identity_err: f64,
}

/// Evaluates against exact mesh oracles on freshly drawn heads. Pass a seed
/// disjoint from training to get a held-out population. Near-surface points
/// are rejection-sampled from the working volume into the band
/// |s| < 20% of the bbox diagonal.
pub fn evaluate_wnet(
    net: &WNet,
    model: &HeadModel,
    n_heads: usize,
    samples_per_head: usize,
    seed: u64,
) -> Result<WnetMetrics> {
    if n_heads == 0 || samples_per_head == 0 {
        return Err(Error::EmptyBatch("evaluation"));
    }
    let diag = model.bbox.diagonal();
    let band = 0.2 * diag;
    let h = net.fd_step();
    let canon = model.canonical_mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sdf_mae = 0.0;
    let mut eik = 0.0;
    let mut sem = 0.0;
    let mut n_band = 0usize;
    let mut n_surf = 0usize;
    for hi in 0..n_heads {
        let p = draw_control_params(model.d_alpha(), model.d_beta(), &mut rng);
        let mesh = pose_mesh(model, &p)?;
        let bvh = Bvh::build(&mesh);

        // On-surface correspondence error.
        let surf = sample_surface(&mesh, &canon, samples_per_head, seed ^ (hi as u64 + 1))?;
        let pts: Vec<V3> = surf.iter().map(|s| s.point).collect();
        let pred = net.warp_batch(&pts, &p)?;
        for (w, s) in pred.iter().zip(&surf) {
            sem += math::dist(*w, s.canonical);
        }
        n_surf += surf.len();

        // Near-surface band: exact signed distance as reference.
        let mut collected = 0usize;
        let mut attempts = 0usize;
        let mut band_pts = Vec::with_capacity(samples_per_head);
        let mut band_ref = Vec::with_capacity(samples_per_head);
        while collected < samples_per_head && attempts < 200 * samples_per_head {
            attempts += 1;
            let mut x = [0.0; 3];
            for a in 0..3 {
                x[a] = rng.gen_range(net.bbox.min[a]..net.bbox.max[a]);
            }
            let s = signed_distance(&mesh, x, Some(&bvh)).distance;
            if s.abs() < band {
                band_pts.push(x);
                band_ref.push(s);
                collected += 1;
            }
        }
        let s_pred = net.sdf_batch(&band_pts, &p)?;
        for (sp, sr) in s_pred.iter().zip(&band_ref) {
            sdf_mae += (sp - sr).abs();
        }
        for &x in &band_pts {
            let g = net.sdf_gradient(x, &p, h)?;
            eik += (math::norm(g) - 1.0).abs();
        }
        n_band += band_pts.len();
    }

    // Identity check at the canonical configuration.
    let p0 = model.canonical_params();
    let surf0 = sample_surface(&canon, &canon, samples_per_head.max(64), seed ^ 0xABCD)?;
    let pts0: Vec<V3> = surf0.iter().map(|s| s.point).collect();
    let pred0 = net.warp_batch(&pts0, &p0)?;
    let identity_err = pred0
        .iter()
        .zip(&pts0)
        .map(|(w, x)| math::dist(*w, *x))
        .sum::<f64>()
        / pts0.len() as f64
        / diag;

    if n_band == 0 {
        return Err(Error::EmptyBatch("no near-surface points found"));
    }
    Ok(WnetMetrics {
        sdf_mae: sdf_mae / n_band as f64 / diag,
        eikonal_residual: eik / n_band as f64,
        sem_surface_err: sem / n_surf as f64 / diag,
        identity_err,
    })
}
