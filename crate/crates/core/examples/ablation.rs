//! Compares training variants on the demo scene: no prior, warm-up only
//! initialisation, the full pipeline and fixed-size event windows. The three
//! prior-based variants continue from one shared warm-up.
//!
//! cargo run --release --example ablation -- [event_iters]

use std::time::Instant;

use evgs::config::Config;
use evgs::pipeline::{evaluate_views, held_out_orbit, mean_psnr, naive_priors, simulate_capture};
use evgs::scene::GaussianScene;
use evgs::simulator::demo_scene;
use evgs::trainer::{evaluate_event_loss, initial_scene, TrainConfig, TrainData, TrainOutputs, Trainer};

fn main() -> evgs::Result<()> {
    let event_iters: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1500);
    let config = Config::from_json_str(
        r#"{
            "scene": { "n_init": 2000 },
            "schedule": { "warm_up_iters": 500, "k_start": 8000, "k_end": 1600 }
        }"#,
        &[format!("schedule.event_iters={event_iters}")],
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
    let held: Vec<_> = held_out_orbit(&config.orbit, 20)
        .poses()?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let data = TrainData {
        events: &capture.events,
        trajectory: &capture.trajectory,
        intrinsics: &intr,
        priors: Some(&priors),
    };

    let full = config.train_config();
    let mut init = full.clone();
    init.loss.lambda_reg = 0.0;
    let mut fixed = full.clone();
    fixed.schedule.k_start = fixed.schedule.k_end;
    let mut no_prior = init.clone();
    no_prior.schedule.warm_up_iters = 0;

    let report = |name: &str, scene: &GaussianScene, start: Instant| -> evgs::Result<()> {
        let psnr = mean_psnr(&evaluate_views(scene, &truth, &held, &intr, &settings)?);
        let loss = evaluate_event_loss(
            scene,
            &capture.events,
            full.schedule.k_end,
            &capture.trajectory,
            &intr,
            &settings,
            config.loss.log_epsilon,
        )?;
        println!(
            "{name:<10} {psnr:>7.2} dB  event loss {loss:.5}  {:>5} gaussians  {:.0}s",
            scene.len(),
            start.elapsed().as_secs_f64()
        );
        Ok(())
    };
    let none = TrainOutputs::default();

    let start = Instant::now();
    let mut t = Trainer::new(&no_prior, data, initial_scene(&no_prior)?, &none)?;
    t.event_phase()?;
    report("no prior", &t.finish()?.0, start)?;

    let start = Instant::now();
    let mut warm = Trainer::new(&full, data, initial_scene(&full)?, &none)?;
    warm.warm_up()?;
    report("warm-up", warm.scene(), start)?;

    let variants: [(&str, &TrainConfig); 3] = [("init", &init), ("full", &full), ("fixed k", &fixed)];
    for (name, cfg) in variants {
        let start = Instant::now();
        let mut t = warm.fork(cfg)?;
        t.event_phase()?;
        report(name, &t.finish()?.0, start)?;
    }
    Ok(())
}
