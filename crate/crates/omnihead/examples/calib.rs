//! Scratch calibration harness for stage-1 training speed/convergence.
//! Run: cargo run --release --example calib -- <epochs> <n_meshes> <mps>

use omnihead::head::{build_template, ModelConfig};
use omnihead::wfield::{evaluate_wnet, train_semantic_sdf, TrainSdfConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let n_meshes: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
    let mps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let lr_final: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-5);
    let hidden: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(192);
    let w_iso: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let w_eik: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let w_sem: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let ssamp: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(96);
    let vsamp: usize = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(96);

    let t0 = Instant::now();
    let model = build_template(&ModelConfig::default()).unwrap();
    eprintln!("model built in {:?}", t0.elapsed());

    let cfg = TrainSdfConfig {
        n_meshes,
        epochs,
        meshes_per_step: mps,
        lr,
        lr_final,
        hidden: vec![hidden; 3],
        surface_samples: ssamp,
        volume_samples: vsamp,
        weights: omnihead::wfield::LossWeights {
            iso: w_iso,
            eik: w_eik,
            sem: w_sem,
            ..Default::default()
        },
        ..TrainSdfConfig::default()
    };
    let t1 = Instant::now();
    let (net, logs) = train_semantic_sdf(&model, &cfg).unwrap();
    let train_time = t1.elapsed();
    let steps = epochs * n_meshes.div_ceil(mps);
    eprintln!(
        "trained {} steps in {:?} ({:.3} s/step)",
        steps,
        train_time,
        train_time.as_secs_f64() / steps as f64
    );
    for l in &logs {
        eprintln!(
            "epoch {}: iso {:.4} eik {:.4} sem {:.5} total {:.4}",
            l.epoch, l.iso, l.eik, l.sem, l.total
        );
    }
    let t2 = Instant::now();
    let m = evaluate_wnet(&net, &model, 4, 64, 999_001).unwrap();
    eprintln!("eval in {:?}: {:?}", t2.elapsed(), m);
}
