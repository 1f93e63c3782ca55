//! Scratch diagnostic: irreducible iso-loss floor of the baked canonical
//! grid, evaluated with the exact correspondence (perfect warp).
//! Run: cargo run --release --example floor -- [grid_res] [h_frac]

use omnihead::head::{build_template, pose_mesh, ModelConfig};
use omnihead::mesh::{bake_sdf_grid, sample_surface};
use omnihead::nn::stencil_points;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let res: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(128);
    let h_frac: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);

    let model = build_template(&ModelConfig::default()).unwrap();
    let canonical = model.canonical_mesh();
    let bbox = model.bbox.padded(0.25);
    let grid = bake_sdf_grid(&canonical, bbox, res).unwrap();
    let h = h_frac * bbox.diagonal();

    // Perfect warp: evaluate the grid at the true canonical correspondence
    // of posed surface samples, plus the FD normal alignment there.
    let p = model.canonical_params();
    let posed = pose_mesh(&model, &p).unwrap();
    let samples = sample_surface(&posed, &canonical, 4000, 12345).unwrap();
    let mut abs_s = 0.0;
    let mut nerr = 0.0;
    for smp in &samples {
        let xb = smp.canonical;
        let (s, _) = grid.query(xb);
        abs_s += s.abs();
        let pts = stencil_points(xb, h);
        let mut g = [0.0; 3];
        for a in 0..3 {
            let (sp, _) = grid.query(pts[2 * a]);
            let (sm, _) = grid.query(pts[2 * a + 1]);
            g[a] = (sp - sm) / (2.0 * h);
        }
        for a in 0..3 {
            nerr += (g[a] - smp.normal[a]).abs();
        }
    }
    let n = samples.len() as f64;
    println!(
        "grid {res}^3 h {h:.5}: mean|s| {:.5} ({:.4} of diag)  normal L1 {:.4}  iso floor {:.4}",
        abs_s / n,
        abs_s / n / model.bbox.diagonal(),
        nerr / n,
        abs_s / n + nerr / n
    );
}
