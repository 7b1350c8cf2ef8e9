//! Simulates a capture of the demo scene, builds naive priors, trains with
//! warm-up and progressive event supervision, then scores held-out views.
//!
//! cargo run --release --example train_pipeline -- [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use evgs::config::Config;
use evgs::pipeline::{evaluate_views, held_out_orbit, mean_psnr, mean_ssim, naive_priors, simulate_capture};
use evgs::render::render;
use evgs::simulator::demo_scene;
use evgs::trainer::{train, TrainData, TrainOutputs};

fn main() -> evgs::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "train_out".into()));
    let config = Config::from_json_str(
        r#"{
            "scene": { "n_init": 2000 },
            "schedule": { "warm_up_iters": 300, "event_iters": 900, "k_start": 8000, "k_end": 1600 }
        }"#,
        &[],
    )?;
    let intr = config.camera.intrinsics();
    let settings = config.render_settings();
    let truth = demo_scene();

    let capture = simulate_capture(&truth, &config.orbit, &intr, &config.sim, &settings)?;
    let priors = naive_priors(
        &capture.events,
        &capture.trajectory,
        config.prior.stride,
        config.prior.half_life_us,
    )?;
    println!("{} events, {} prior frames", capture.events.len(), priors.len());

    let start = Instant::now();
    let outputs = TrainOutputs {
        log: Some(out.join("train.jsonl")),
        checkpoint_dir: Some(out.join("checkpoints")),
    };
    let data = TrainData {
        events: &capture.events,
        trajectory: &capture.trajectory,
        intrinsics: &intr,
        priors: Some(&priors),
    };
    let train_config = config.train_config();
    let (scene, report) = train(&train_config, data, &outputs)?;
    let warm = train_config.schedule.warm_up_iters;
    println!(
        "trained in {:.0}s: prior L1 {:.4} -> {:.4}, event loss {:.5} -> {:.5}, {} gaussians",
        start.elapsed().as_secs_f64(),
        report.mean_over(0..50, |r| r.prior_l1),
        report.mean_over(warm - 50..warm, |r| r.prior_l1),
        report.mean_over(warm..warm + 50, |r| r.event_loss),
        report.mean_over(report.reports.len() - 50..report.reports.len(), |r| r.event_loss),
        scene.len()
    );

    let held = held_out_orbit(&config.orbit, 8).poses()?;
    let poses: Vec<_> = held.iter().map(|(_, p)| *p).collect();
    let metrics = evaluate_views(&scene, &truth, &poses, &intr, &settings)?;
    println!(
        "held-out: {:.2} dB PSNR, SSIM {:.3}",
        mean_psnr(&metrics),
        mean_ssim(&metrics)
    );

    for (i, pose) in poses.iter().enumerate() {
        render(&scene, pose, &intr, &settings)
            .image
            .save_png(&out.join(format!("view_{i}.png")))?;
        render(&truth, pose, &intr, &settings)
            .image
            .save_png(&out.join(format!("truth_{i}.png")))?;
    }
    scene.save_json(&out.join("final.json"))?;
    Ok(())
}
