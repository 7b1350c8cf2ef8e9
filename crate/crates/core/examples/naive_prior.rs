//! Integrates events into intensity priors with the leaky log integrator
//! and scores them against the ground-truth frames.
//!
//! cargo run --release --example naive_prior -- [half_life_us]

use evgs::camera::Intrinsics;
use evgs::pipeline::{aligned_metrics, naive_priors, simulate_capture};
use evgs::render::RenderSettings;
use evgs::simulator::{demo_scene, OrbitSpec, SimConfig};

fn main() -> evgs::Result<()> {
    let half_life: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(200_000.0);
    let intr = Intrinsics::centered(64, 64, 80.0);
    let capture = simulate_capture(
        &demo_scene(),
        &OrbitSpec::default(),
        &intr,
        &SimConfig::default(),
        &RenderSettings::default(),
    )?;
    let stride = 20;
    let priors = naive_priors(&capture.events, &capture.trajectory, stride, half_life)?;
    let dir = std::path::Path::new("prior_out");
    let manifest = priors.save(dir)?;

    println!(
        "half-life {half_life} us, {} priors -> {}",
        priors.len(),
        manifest.display()
    );
    println!("{:>9} {:>8} {:>7}", "t us", "psnr", "ssim");
    for (i, (t, prior)) in priors.frames().iter().enumerate() {
        let (_, truth) = &capture.frames[i * stride];
        let m = aligned_metrics(prior, truth)?;
        println!("{t:>9} {:>8.2} {:>7.3}", m.psnr, m.ssim);
    }
    Ok(())
}
