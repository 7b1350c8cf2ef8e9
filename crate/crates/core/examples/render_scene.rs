//! Renders the demo scene from a few orbit positions and writes PNGs.
//!
//! cargo run --release --example render_scene -- [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use evgs::camera::Intrinsics;
use evgs::render::{render, RenderSettings};
use evgs::simulator::{demo_scene, OrbitSpec};

fn main() -> evgs::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_out".into()));
    std::fs::create_dir_all(&out)?;

    let scene = demo_scene();
    let intr = Intrinsics::centered(128, 128, 160.0);
    let orbit = OrbitSpec {
        n_frames: 8,
        ..OrbitSpec::default()
    };
    let settings = RenderSettings::default();

    for (i, (t, pose)) in orbit.poses()?.into_iter().enumerate() {
        let start = Instant::now();
        let result = render(&scene, &pose, &intr, &settings);
        let path = out.join(format!("view_{i}.png"));
        result.image.save_png(&path)?;
        println!(
            "t={t:>7} us  {} splats  {:.1} ms  -> {}",
            result.splats.len(),
            start.elapsed().as_secs_f64() * 1e3,
            path.display()
        );
    }
    Ok(())
}
