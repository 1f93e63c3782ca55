//! Scratch probe: can the warp MLP drive the sem loss to zero on one fixed
//! batch from one posed mesh? Run: cargo run --release --example probe -- [steps] [lr]

use omnihead::head::{build_template, pose_mesh, ModelConfig};
use omnihead::mesh::{bake_sdf_grid, sample_surface, sample_volume};
use omnihead::nn::AdamState;
use omnihead::wfield::{stage1_loss_grad, LossWeights, WNet};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);

    let model = build_template(&ModelConfig::default()).unwrap();
    let bbox = model.bbox.padded(0.25);
    let canon = model.canonical_mesh();
    let grid = bake_sdf_grid(&canon, bbox, 64).unwrap();
    let mut net = WNet::new(
        grid,
        model.canonical_params(),
        bbox,
        6,
        &[192, 192, 192],
        0,
    )
    .unwrap();
    let h = net.fd_step();

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let p = omnihead::wfield::draw_control_params(model.d_alpha(), model.d_beta(), &mut rng);
    let mesh = pose_mesh(&model, &p).unwrap();
    let surf = sample_surface(&mesh, &canon, 256, 7).unwrap();
    let off = sample_volume(&bbox, 32, 8);
    let w = LossWeights {
        iso: 0.0,
        eik: 0.0,
        sem: 1.0,
        ..Default::default()
    };

    let mut adam = AdamState::new(net.mlp.params.len(), lr);
    let mut grad = vec![0.0; net.mlp.params.len()];
    for step in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let t = stage1_loss_grad(&net, &surf, &off, &p, &w, h, &mut grad).unwrap();
        adam.step(&mut net.mlp.params, &grad);
        if step % (steps / 10).max(1) == 0 || step == steps - 1 {
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            println!("step {step}: sem {:.6} |grad| {:.3e}", t.sem, gnorm);
        }
    }
}
