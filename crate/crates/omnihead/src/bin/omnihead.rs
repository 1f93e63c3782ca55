//! Command-line harness: dataset generation, both training stages,
//! rendering, landmark fitting, and the evaluation metrics, all driven by
//! INI configs. Every command echoes its resolved configuration as a JSON
//! line, appends progress to a JSON-lines log in the output directory, and
//! writes a versioned metrics report.
//!
//! Exit codes: 0 success, 1 usage/runtime error, 4 divergence guard hit.

use clap::{Parser, Subcommand};
use omnihead::error::{Error, Result};
use omnihead::eval::{
    eval_control, eval_disentanglement, DsConfig, MetricsReport,
};
use omnihead::field::{FieldConfig, TriPlaneField};
use omnihead::head::{
    build_template, fit_landmarks, landmarks3d, Camera, ControlParams, FitOptions, HeadModel,
    ModelConfig,
};
use omnihead::io::{
    guard_overwrite, load_head_model, require_exists, save_float_map, save_head_model,
    save_png_gray, save_png_rgb, save_sample_archive, Checkpoint, Ini, SampleBatch,
};
use omnihead::mesh::{sample_surface, sample_volume};
use omnihead::render::{
    fit_field, raster_render, DensityPrior, FitFieldConfig, RenderMode, RenderOpts, RenderTarget,
};
use omnihead::wfield::{
    draw_control_params, evaluate_wnet, train_semantic_sdf, LossWeights, TrainSdfConfig, WNet,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "omnihead",
    about = "Geometry-guided controllable head synthesis, desk scale",
    version
)]
struct Cli {
    /// INI configuration file; omitted keys fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, logs, images, and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing output artifacts.
    #[arg(long, global = true)]
    force: bool,
    /// Master seed; overrides the config's [run] seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a population of posed heads and archive surface/volume samples.
    GenData,
    /// Stage 1: train the semantic-SDF warp network.
    TrainSdf,
    /// Evaluate a trained warp network on held-out control draws.
    EvalSdf,
    /// Stage 2: fit the canonical tri-plane field to rendered targets.
    FitField,
    /// Render one frame (RGB or geometry-only silhouette).
    Render,
    /// Fit control parameters to projected landmarks of a synthetic target.
    FitLandmarks,
    /// Control-accuracy round trip: ASD / AED analogues over many draws.
    EvalControl,
    /// Disentanglement-score analogue per control factor.
    EvalDs,
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    std::process::exit(match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    });
}

/// Honors OMNIHEAD_THREADS; otherwise rayon picks the core count. Results
/// are bit-identical either way, the env var only bounds parallelism.
fn init_threads() {
    if let Ok(v) = std::env::var("OMNIHEAD_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid OMNIHEAD_THREADS='{v}'"),
        }
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let ini = match &cli.config {
        Some(p) => {
            require_exists(p)?;
            Ini::load(p)?
        }
        None => Ini::default(),
    };
    std::fs::create_dir_all(&cli.out)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => ini.get_u64("run", "seed", 0)?,
    };
    let ctx = Ctx {
        ini,
        out: cli.out.clone(),
        force: cli.force,
        seed,
    };
    match cli.cmd {
        Cmd::GenData => cmd_gen_data(&ctx),
        Cmd::TrainSdf => cmd_train_sdf(&ctx),
        Cmd::EvalSdf => cmd_eval_sdf(&ctx),
        Cmd::FitField => cmd_fit_field(&ctx),
        Cmd::Render => cmd_render(&ctx),
        Cmd::FitLandmarks => cmd_fit_landmarks(&ctx),
        Cmd::EvalControl => cmd_eval_control(&ctx),
        Cmd::EvalDs => cmd_eval_ds(&ctx),
    }
}

struct Ctx {
    ini: Ini,
    out: PathBuf,
    force: bool,
    seed: u64,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// New artifacts respect the overwrite guard unless --force is given.
    fn out_path(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        guard_overwrite(&p, self.force)?;
        Ok(p)
    }

    fn model(&self) -> Result<HeadModel> {
        let explicit = self.ini.get("model", "path").map(PathBuf::from);
        let default = self.path("model.phm");
        if let Some(p) = explicit {
            require_exists(&p)?;
            return load_head_model(&p);
        }
        if default.exists() {
            return load_head_model(&default);
        }
        build_template(&self.model_config()?)
    }

    fn model_config(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        Ok(ModelConfig {
            d_alpha: self.ini.get_usize("model", "d_alpha", d.d_alpha)?,
            d_beta: self.ini.get_usize("model", "d_beta", d.d_beta)?,
            subdivisions: self.ini.get_u64("model", "subdivisions", d.subdivisions as u64)? as u32,
            seed: self.ini.get_u64("model", "seed", d.seed)?,
        })
    }

    fn load_wnet(&self) -> Result<WNet> {
        let p = self
            .ini
            .get("artifacts", "wnet")
            .map(PathBuf::from)
            .unwrap_or_else(|| self.path("wnet.ckp"));
        require_exists(&p)?;
        Ok(WNet::load_checkpoint(&p)?.0)
    }

    fn load_field(&self) -> Result<(TriPlaneField, DensityPrior)> {
        let p = self
            .ini
            .get("artifacts", "field")
            .map(PathBuf::from)
            .unwrap_or_else(|| self.path("field.ckp"));
        require_exists(&p)?;
        let ck = Checkpoint::load(&p)?;
        let field = TriPlaneField::from_checkpoint(&ck)?;
        let prior = DensityPrior {
            kappa_raw: ck.scalar_f64("prior.kappa_raw")?,
            gamma: ck.scalar_f64("prior.gamma")?,
        };
        Ok((field, prior))
    }

    /// Camera from the [camera] section; focal defaults to framing the
    /// model's bounding box.
    fn camera(&self, model: &HeadModel, width: usize, height: usize) -> Result<Camera> {
        let eye = self.ini.get_list_f64("camera", "eye", &[0.0, 0.0, 1.0])?;
        let target = self.ini.get_list_f64("camera", "target", &[0.0, 0.0, 0.0])?;
        if eye.len() != 3 || target.len() != 3 {
            return Err(Error::Config("camera eye/target need 3 components".into()));
        }
        let focal_default = 1.2 * width as f64 / model.bbox.diagonal();
        let focal = self.ini.get_f64("camera", "focal", focal_default)?;
        Camera::look_at(
            [eye[0], eye[1], eye[2]],
            [target[0], target[1], target[2]],
            focal,
            width as u32,
            height as u32,
        )
    }
}

/// Append-only JSON-lines log; one file per command run.
struct Jsonl {
    file: File,
}

impl Jsonl {
    fn create(path: &Path) -> Result<Self> {
        Ok(Jsonl {
            file: File::create(path)?,
        })
    }

    fn log(&mut self, v: &Value) -> Result<()> {
        serde_json::to_writer(&mut self.file, v)?;
        self.file.write_all(b"\n")?;
        Ok(())
    }
}

/// Echoes the resolved configuration (stdout + log) so every run records
/// exactly what it executed.
fn echo_config(log: &mut Jsonl, command: &str, resolved: &Value) -> Result<()> {
    let line = json!({ "event": "config", "command": command, "resolved": resolved });
    println!("{line}");
    log.log(&line)
}

/// Order-independent digest of the resolved config for the provenance field.
fn provenance(resolved: &Value) -> String {
    let s = resolved.to_string();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("omnihead {} cfg {:016x}", env!("CARGO_PKG_VERSION"), h)
}

/// Writes the report, prints it, and maps the divergence flag to the exit
/// code contract.
fn finish(ctx: &Ctx, mut report: MetricsReport, t0: Instant, resolved: &Value) -> Result<i32> {
    report.runtime_s = t0.elapsed().as_secs_f64();
    report.provenance = provenance(resolved);
    let json = report.to_json()?;
    let path = ctx.out_path(&format!("{}_report.json", report.command.replace('-', "_")))?;
    std::fs::write(&path, &json)?;
    println!("{json}");
    if report.flagged {
        eprintln!("warning: report flagged (estimator failure budget exceeded)");
    }
    Ok(if report.diverged { 4 } else { 0 })
}

// ---------------------------------------------------------------------------
// gen-data

fn cmd_gen_data(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let n_meshes = ctx.ini.get_usize("gen_data", "n_meshes", 50)?;
    let surface_samples = ctx.ini.get_usize("gen_data", "surface_samples", 96)?;
    let volume_samples = ctx.ini.get_usize("gen_data", "volume_samples", 96)?;
    let padding = ctx.ini.get_f64("gen_data", "padding", 0.25)?;
    if n_meshes == 0 {
        return Err(Error::Config("gen_data needs n_meshes >= 1".into()));
    }
    let mc = ctx.model_config()?;
    let resolved = json!({
        "seed": ctx.seed, "n_meshes": n_meshes,
        "surface_samples": surface_samples, "volume_samples": volume_samples,
        "padding": padding,
        "model": { "d_alpha": mc.d_alpha, "d_beta": mc.d_beta,
                   "subdivisions": mc.subdivisions, "seed": mc.seed },
    });
    let mut log = Jsonl::create(&ctx.out_path("gen_data.log.jsonl")?)?;
    echo_config(&mut log, "gen-data", &resolved)?;

    let model_path = ctx.out_path("model.phm")?;
    let archive_path = ctx.out_path("samples.smb")?;
    let model = build_template(&mc)?;
    save_head_model(&model_path, &model)?;

    let canonical = model.canonical_mesh();
    let bbox = model.bbox.padded(padding);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut batches = Vec::with_capacity(n_meshes);
    for i in 0..n_meshes {
        let params = draw_control_params(model.d_alpha(), model.d_beta(), &mut rng);
        let mesh = omnihead::head::pose_mesh(&model, &params)?;
        let sample_seed = ctx.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
        let surface = sample_surface(&mesh, &canonical, surface_samples, sample_seed)?;
        let volume = sample_volume(&bbox, volume_samples, sample_seed ^ 0xff);
        batches.push(SampleBatch {
            params,
            surface,
            volume,
        });
        if (i + 1) % 10 == 0 || i + 1 == n_meshes {
            log.log(&json!({ "event": "progress", "meshes": i + 1 }))?;
        }
    }
    save_sample_archive(&archive_path, &batches)?;
    log.log(&json!({
        "event": "done",
        "model": model_path.display().to_string(),
        "archive": archive_path.display().to_string(),
        "n_batches": batches.len(),
    }))?;

    let report = MetricsReport::new("gen-data", ctx.seed);
    finish(ctx, report, t0, &resolved)
}

// ---------------------------------------------------------------------------
// train-sdf

fn train_config(ctx: &Ctx) -> Result<TrainSdfConfig> {
    let d = TrainSdfConfig::default();
    let s = "train_sdf";
    let w = LossWeights::default();
    Ok(TrainSdfConfig {
        n_meshes: ctx.ini.get_usize(s, "n_meshes", d.n_meshes)?,
        epochs: ctx.ini.get_usize(s, "epochs", d.epochs)?,
        meshes_per_step: ctx.ini.get_usize(s, "meshes_per_step", d.meshes_per_step)?,
        surface_samples: ctx.ini.get_usize(s, "surface_samples", d.surface_samples)?,
        volume_samples: ctx.ini.get_usize(s, "volume_samples", d.volume_samples)?,
        lr: ctx.ini.get_f64(s, "lr", d.lr)?,
        lr_final: ctx.ini.get_f64(s, "lr_final", d.lr_final)?,
        weights: LossWeights {
            iso: ctx.ini.get_f64(s, "w_iso", w.iso)?,
            eik: ctx.ini.get_f64(s, "w_eik", w.eik)?,
            sem: ctx.ini.get_f64(s, "w_sem", w.sem)?,
            delta: ctx.ini.get_f64(s, "w_delta", w.delta)?,
        },
        hidden: ctx.ini.get_list_usize(s, "hidden", &d.hidden)?,
        n_freq: ctx.ini.get_usize(s, "n_freq", d.n_freq)?,
        grid_resolution: ctx.ini.get_usize(s, "grid_resolution", d.grid_resolution)?,
        grid_padding: ctx.ini.get_f64(s, "grid_padding", d.grid_padding)?,
        seed: ctx.seed,
        divergence_factor: ctx.ini.get_f64(s, "divergence_factor", d.divergence_factor)?,
    })
}

fn cmd_train_sdf(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let cfg = train_config(ctx)?;
    let eval_heads = ctx.ini.get_usize("train_sdf", "eval_heads", 8)?;
    let eval_samples = ctx.ini.get_usize("train_sdf", "eval_samples", 128)?;
    let resolved = json!({
        "seed": ctx.seed, "n_meshes": cfg.n_meshes, "epochs": cfg.epochs,
        "meshes_per_step": cfg.meshes_per_step,
        "surface_samples": cfg.surface_samples, "volume_samples": cfg.volume_samples,
        "lr": cfg.lr, "lr_final": cfg.lr_final,
        "weights": { "iso": cfg.weights.iso, "eik": cfg.weights.eik, "sem": cfg.weights.sem },
        "hidden": cfg.hidden, "n_freq": cfg.n_freq,
        "grid_resolution": cfg.grid_resolution, "grid_padding": cfg.grid_padding,
        "divergence_factor": cfg.divergence_factor,
        "eval_heads": eval_heads, "eval_samples": eval_samples,
    });
    let mut log = Jsonl::create(&ctx.out_path("train_sdf.log.jsonl")?)?;
    echo_config(&mut log, "train-sdf", &resolved)?;
    let ckp_path = ctx.out_path("wnet.ckp")?;

    let model = ctx.model()?;
    let mut report = MetricsReport::new("train-sdf", ctx.seed);
    match train_semantic_sdf(&model, &cfg) {
        Ok((net, epochs)) => {
            for e in &epochs {
                log.log(&json!({
                    "event": "epoch", "epoch": e.epoch,
                    "iso": e.iso, "eik": e.eik, "sem": e.sem, "total": e.total,
                }))?;
            }
            net.save_checkpoint(&ckp_path, None)?;
            let m = evaluate_wnet(&net, &model, eval_heads, eval_samples, ctx.seed ^ 0xe7a1)?;
            report.sdf_mae = Some(m.sdf_mae);
            report.eikonal_residual = Some(m.eikonal_residual);
            report.sem_surface_err = Some(m.sem_surface_err);
            report.identity_err = Some(m.identity_err);
            log.log(&json!({
                "event": "done", "checkpoint": ckp_path.display().to_string(),
                "sdf_mae": m.sdf_mae, "eikonal_residual": m.eikonal_residual,
                "sem_surface_err": m.sem_surface_err, "identity_err": m.identity_err,
            }))?;
        }
        Err(Error::Diverged(msg)) => {
            report.diverged = true;
            log.log(&json!({ "event": "diverged", "detail": msg }))?;
        }
        Err(e) => return Err(e),
    }
    finish(ctx, report, t0, &resolved)
}

// ---------------------------------------------------------------------------
// eval-sdf

fn cmd_eval_sdf(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let n_heads = ctx.ini.get_usize("eval_sdf", "n_heads", 20)?;
    let samples = ctx.ini.get_usize("eval_sdf", "samples_per_head", 256)?;
    let resolved = json!({
        "seed": ctx.seed, "n_heads": n_heads, "samples_per_head": samples,
    });
    let mut log = Jsonl::create(&ctx.out_path("eval_sdf.log.jsonl")?)?;
    echo_config(&mut log, "eval-sdf", &resolved)?;

    let model = ctx.model()?;
    let net = ctx.load_wnet()?;
    let m = evaluate_wnet(&net, &model, n_heads, samples, ctx.seed)?;
    log.log(&json!({
        "event": "done", "sdf_mae": m.sdf_mae, "eikonal_residual": m.eikonal_residual,
        "sem_surface_err": m.sem_surface_err, "identity_err": m.identity_err,
    }))?;
    let mut report = MetricsReport::new("eval-sdf", ctx.seed);
    report.sdf_mae = Some(m.sdf_mae);
    report.eikonal_residual = Some(m.eikonal_residual);
    report.sem_surface_err = Some(m.sem_surface_err);
    report.identity_err = Some(m.identity_err);
    finish(ctx, report, t0, &resolved)
}

// ---------------------------------------------------------------------------
// fit-field

fn fit_field_config(ctx: &Ctx) -> Result<FitFieldConfig> {
    let d = FitFieldConfig::default();
    let s = "fit_field";
    Ok(FitFieldConfig {
        steps: ctx.ini.get_usize(s, "steps", d.steps)?,
        rays_per_step: ctx.ini.get_usize(s, "rays_per_step", d.rays_per_step)?,
        samples_per_ray: ctx.ini.get_usize(s, "samples_per_ray", d.samples_per_ray)?,
        lr: ctx.ini.get_f64(s, "lr", d.lr)?,
        lr_final: ctx.ini.get_f64(s, "lr_final", d.lr_final)?,
        lambda_photo: ctx.ini.get_f64(s, "lambda_photo", d.lambda_photo)?,
        lambda_prior: ctx.ini.get_f64(s, "lambda_prior", d.lambda_prior)?,
        noise_std: ctx.ini.get_f64(s, "noise_std", d.noise_std)?,
        use_conditioning: ctx.ini.get_bool(s, "use_conditioning", d.use_conditioning)?,
        background: d.background,
        seed: ctx.seed,
        divergence_factor: ctx.ini.get_f64(s, "divergence_factor", d.divergence_factor)?,
    })
}

fn field_config(ctx: &Ctx) -> Result<FieldConfig> {
    let d = FieldConfig::default();
    let s = "field";
    Ok(FieldConfig {
        resolution: ctx.ini.get_usize(s, "resolution", d.resolution)?,
        channels: ctx.ini.get_usize(s, "channels", d.channels)?,
        cond_dim: ctx.ini.get_usize(s, "cond_dim", d.cond_dim)?,
        cond_freq: ctx.ini.get_usize(s, "cond_freq", d.cond_freq)?,
        decoder_hidden: ctx.ini.get_list_usize(s, "decoder_hidden", &d.decoder_hidden)?,
        cond_hidden: ctx.ini.get_list_usize(s, "cond_hidden", &d.cond_hidden)?,
        seed: ctx.seed ^ 0xf1e1d,
    })
}

fn cmd_fit_field(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let cfg = fit_field_config(ctx)?;
    let fcfg = field_config(ctx)?;
    let n_views = ctx.ini.get_usize("fit_field", "n_views", 3)?;
    let resolution = ctx.ini.get_usize("fit_field", "target_resolution", 64)?;
    let kappa0 = ctx.ini.get_f64("fit_field", "kappa_init", 0.02)?;
    let gamma = ctx.ini.get_f64("fit_field", "gamma", 50.0)?;
    if n_views == 0 {
        return Err(Error::Config("fit_field needs n_views >= 1".into()));
    }
    let resolved = json!({
        "seed": ctx.seed, "steps": cfg.steps, "rays_per_step": cfg.rays_per_step,
        "samples_per_ray": cfg.samples_per_ray, "lr": cfg.lr, "lr_final": cfg.lr_final,
        "lambda_photo": cfg.lambda_photo, "lambda_prior": cfg.lambda_prior,
        "noise_std": cfg.noise_std, "use_conditioning": cfg.use_conditioning,
        "divergence_factor": cfg.divergence_factor,
        "n_views": n_views, "target_resolution": resolution,
        "kappa_init": kappa0, "gamma": gamma,
        "field": { "resolution": fcfg.resolution, "channels": fcfg.channels,
                   "cond_dim": fcfg.cond_dim, "cond_freq": fcfg.cond_freq,
                   "decoder_hidden": fcfg.decoder_hidden, "cond_hidden": fcfg.cond_hidden },
    });
    let mut log = Jsonl::create(&ctx.out_path("fit_field.log.jsonl")?)?;
    echo_config(&mut log, "fit-field", &resolved)?;
    let ckp_path = ctx.out_path("field.ckp")?;

    let model = ctx.model()?;
    let wnet = ctx.load_wnet()?;

    // Targets: rasterized views of fresh expression draws, cameras fanned
    // around the frontal axis.
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x7a26);
    let mut targets = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let p = omnihead::eval::draw_fit_params(&model, &mut rng);
        let yaw = if n_views == 1 {
            0.0
        } else {
            -0.3 + 0.6 * i as f64 / (n_views - 1) as f64
        };
        let focal = 1.2 * resolution as f64 / model.bbox.diagonal();
        let cam = Camera::look_at(
            [yaw.sin(), 0.0, yaw.cos()],
            [0.0, 0.0, 0.0],
            focal,
            resolution as u32,
            resolution as u32,
        )?;
        let rendered = raster_render(&model, &p, &cam, cfg.background)?;
        targets.push(RenderTarget {
            cam,
            p,
            image: rendered.rgb,
        });
    }
    log.log(&json!({ "event": "targets", "count": targets.len() }))?;

    let mut field = TriPlaneField::new(wnet.bbox, model.d_beta(), &fcfg)?;
    let mut prior = DensityPrior::new(kappa0, gamma)?;
    let fit = fit_field(&wnet, &mut field, &mut prior, &targets, &cfg)?;
    let stride = (cfg.steps / 50).max(1);
    for (i, (ph, pr)) in fit.photometric.iter().zip(&fit.prior).enumerate() {
        if i % stride == 0 || i + 1 == fit.photometric.len() {
            log.log(&json!({ "event": "step", "step": i, "photometric": ph, "prior": pr }))?;
        }
    }
    let mut ck = field.to_checkpoint();
    ck.put_f64("prior.kappa_raw", vec![prior.kappa_raw]);
    ck.put_f64("prior.gamma", vec![prior.gamma]);
    ck.save(&ckp_path)?;
    log.log(&json!({
        "event": "done", "checkpoint": ckp_path.display().to_string(),
        "final_photometric": fit.final_photometric,
        "final_prior_mae": fit.final_prior_mae,
        "final_kappa": fit.final_kappa, "diverged": fit.diverged,
    }))?;

    let mut report = MetricsReport::new("fit-field", ctx.seed);
    report.photometric_l1 = Some(fit.final_photometric);
    report.diverged = fit.diverged;
    finish(ctx, report, t0, &resolved)
}

// ---------------------------------------------------------------------------
// render

fn control_from_ini(ctx: &Ctx, model: &HeadModel) -> Result<ControlParams> {
    let mut p = model.canonical_params();
    let alpha = ctx.ini.get_list_f64("params", "alpha", &p.alpha)?;
    let beta = ctx.ini.get_list_f64("params", "beta", &p.beta)?;
    let theta = ctx.ini.get_list_f64("params", "theta", &p.theta)?;
    if theta.len() != 6 {
        return Err(Error::Config("params theta needs 6 components".into()));
    }
    p.alpha = alpha;
    p.beta = beta;
    p.theta = theta.try_into().unwrap();
    model.check_params(&p)?;
    Ok(p)
}

fn cmd_render(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let width = ctx.ini.get_usize("render", "width", 128)?;
    let height = ctx.ini.get_usize("render", "height", 128)?;
    let n_samples = ctx.ini.get_usize("render", "samples_per_ray", 64)?;
    let mode_str = ctx.ini.get_str("render", "mode", "silhouette").to_string();
    let mode = match mode_str.as_str() {
        "rgb" => RenderMode::Rgb,
        "silhouette" => RenderMode::SigmaOverride,
        other => {
            return Err(Error::Config(format!(
                "render mode '{other}' (expected rgb | silhouette)"
            )))
        }
    };
    // Geometry-only preview defaults to a tight density band so the
    // silhouette resolves at pixel scale.
    let kappa_override = ctx.ini.get_f64("render", "kappa", 2e-3)?;
    let resolved = json!({
        "seed": ctx.seed, "width": width, "height": height,
        "samples_per_ray": n_samples, "mode": mode_str, "kappa": kappa_override,
    });
    let mut log = Jsonl::create(&ctx.out_path("render.log.jsonl")?)?;
    echo_config(&mut log, "render", &resolved)?;

    let model = ctx.model()?;
    let wnet = ctx.load_wnet()?;
    let p = control_from_ini(ctx, &model)?;
    let cam = ctx.camera(&model, width, height)?;
    let opts = RenderOpts {
        width,
        height,
        n_samples,
        mode,
        jitter: false,
        seed: ctx.seed,
        noise_std: 0.0,
        background: [1.0; 3],
    };
    let (field, prior);
    let (field_ref, prior_val) = match mode {
        RenderMode::Rgb => {
            let loaded = ctx.load_field()?;
            field = loaded.0;
            prior = loaded.1;
            (Some(&field), prior)
        }
        RenderMode::SigmaOverride => (None, DensityPrior::new(kappa_override, 50.0)?),
    };
    let out = omnihead::render::render(&wnet, field_ref, &prior_val, &cam, &p, &opts)?;
    let png = ctx.out_path("render.png")?;
    save_png_rgb(&png, &out.rgb)?;
    save_png_gray(&ctx.out_path("opacity.png")?, &out.opacity)?;
    save_float_map(&ctx.out_path("depth.img")?, &out.depth)?;
    save_float_map(&ctx.out_path("opacity.img")?, &out.opacity)?;
    let covered = out
        .opacity
        .data
        .iter()
        .filter(|&&o| o >= 0.5)
        .count();
    log.log(&json!({
        "event": "done", "image": png.display().to_string(),
        "covered_pixels": covered, "total_pixels": width * height,
    }))?;

    let report = MetricsReport::new("render", ctx.seed);
    finish(ctx, report, t0, &resolved)
}

// ---------------------------------------------------------------------------
// fit-landmarks

fn cmd_fit_landmarks(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let width = ctx.ini.get_usize("fit_landmarks", "width", 256)?;
    let height = ctx.ini.get_usize("fit_landmarks", "height", 256)?;
    let max_iters = ctx.ini.get_usize("fit_landmarks", "max_iters", 100)?;
    let resolved = json!({
        "seed": ctx.seed, "width": width, "height": height, "max_iters": max_iters,
    });
    let mut log = Jsonl::create(&ctx.out_path("fit_landmarks.log.jsonl")?)?;
    echo_config(&mut log, "fit-landmarks", &resolved)?;

    let model = ctx.model()?;
    let cam = ctx.camera(&model, width, height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let p_gt = omnihead::eval::draw_fit_params(&model, &mut rng);
    let lms3 = landmarks3d(&model, &p_gt)?;
    let mut observed = Vec::with_capacity(lms3.len());
    for &lm in &lms3 {
        observed.push(cam.project_point(lm).ok_or_else(|| {
            Error::Config("synthetic landmark fell outside the camera frustum".into())
        })?);
    }
    let opts = FitOptions {
        max_iters,
        ..FitOptions::default()
    };
    let init = ControlParams::zeros(model.d_alpha(), model.d_beta());
    let fit = fit_landmarks(&model, &cam, &observed, &init, &opts)?;
    let asd = omnihead::eval::asd(&model, &fit.params, &p_gt)?;
    let aed = omnihead::eval::aed(&model, &fit.params, &p_gt)?;
    std::fs::write(
        ctx.out_path("fitted_params.json")?,
        serde_json::to_string_pretty(&json!({
            "alpha": fit.params.alpha, "beta": fit.params.beta, "theta": fit.params.theta,
            "truth": { "alpha": p_gt.alpha, "beta": p_gt.beta, "theta": p_gt.theta },
        }))?,
    )?;
    log.log(&json!({
        "event": "done", "converged": fit.converged, "iterations": fit.iterations,
        "rms_pixels": fit.rms_pixels, "asd": asd, "aed": aed,
    }))?;

    let mut report = MetricsReport::new("fit-landmarks", ctx.seed);
    report.asd = Some(asd);
    report.aed = Some(aed);
    report.flagged = !fit.converged;
    finish(ctx, report, t0, &resolved)
}

// ---------------------------------------------------------------------------
// eval-control

fn cmd_eval_control(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let n_trials = ctx.ini.get_usize("eval_control", "n_trials", 50)?;
    let width = ctx.ini.get_usize("eval_control", "width", 256)?;
    let height = ctx.ini.get_usize("eval_control", "height", 256)?;
    let resolved = json!({
        "seed": ctx.seed, "n_trials": n_trials, "width": width, "height": height,
    });
    let mut log = Jsonl::create(&ctx.out_path("eval_control.log.jsonl")?)?;
    echo_config(&mut log, "eval-control", &resolved)?;

    let model = ctx.model()?;
    let cam = ctx.camera(&model, width, height)?;
    let rep = eval_control(&model, &cam, n_trials, ctx.seed)?;
    log.log(&json!({
        "event": "done", "n_trials": rep.n_trials,
        "mean_asd": rep.mean_asd, "max_asd": rep.max_asd,
        "mean_aed": rep.mean_aed,
        "mean_rms_px": rep.mean_rms_px, "max_rms_px": rep.max_rms_px,
        "non_convergence_rate": rep.non_convergence_rate,
    }))?;

    let mut report = MetricsReport::new("eval-control", ctx.seed);
    report.asd = Some(rep.mean_asd);
    report.aed = Some(rep.mean_aed);
    report.flagged = rep.flagged;
    finish(ctx, report, t0, &resolved)
}

// ---------------------------------------------------------------------------
// eval-ds

fn cmd_eval_ds(ctx: &Ctx) -> Result<i32> {
    let t0 = Instant::now();
    let d = DsConfig::default();
    let s = "eval_ds";
    let cfg = DsConfig {
        n_draws: ctx.ini.get_usize(s, "n_draws", d.n_draws)?,
        resolution: ctx.ini.get_usize(s, "resolution", d.resolution)?,
        n_samples: ctx.ini.get_usize(s, "samples_per_ray", d.n_samples)?,
        seed: ctx.seed,
        spread: ctx.ini.get_f64(s, "spread", d.spread)?,
        render_kappa: ctx.ini.get_f64(s, "render_kappa", d.render_kappa)?,
        fit: FitOptions::default(),
    };
    let resolved = json!({
        "seed": ctx.seed, "n_draws": cfg.n_draws, "resolution": cfg.resolution,
        "samples_per_ray": cfg.n_samples, "spread": cfg.spread,
        "render_kappa": cfg.render_kappa,
    });
    let mut log = Jsonl::create(&ctx.out_path("eval_ds.log.jsonl")?)?;
    echo_config(&mut log, "eval-ds", &resolved)?;

    let model = ctx.model()?;
    let wnet = ctx.load_wnet()?;
    let rep = eval_disentanglement(&model, &wnet, &cfg)?;
    log.log(&json!({
        "event": "done",
        "factors": omnihead::eval::DS_FACTORS,
        "variances": rep.variances,
        "ds": rep.ds, "capped": rep.capped, "degenerate": rep.degenerate,
        "non_convergence_rate": rep.non_convergence_rate,
    }))?;
    for (i, f) in omnihead::eval::DS_FACTORS.iter().enumerate() {
        let cap = if rep.capped[i] { " (>= cap)" } else { "" };
        println!("DS_{f} = {:.6e}{cap}", rep.ds[i]);
    }
    if rep.degenerate {
        eprintln!("warning: all estimated variances degenerate in at least one experiment");
    }

    let mut report = MetricsReport::new("eval-ds", ctx.seed);
    report.ds_alpha = Some(rep.ds[0]);
    report.ds_beta_theta = Some(rep.ds[1]);
    report.ds_camera = Some(rep.ds[2]);
    report.flagged = rep.flagged;
    finish(ctx, report, t0, &resolved)
}
