//! Renders the built-in demo scene along a 200-frame orbit, converts the
//! frames into events and writes everything to a directory.
//!
//! cargo run --release --example simulate_events -- [out_dir]

use std::path::PathBuf;

use evgs::camera::Intrinsics;
use evgs::event_io::write_events_file;
use evgs::render::RenderSettings;
use evgs::simulator::{demo_scene, render_orbit, simulate_events, OrbitSpec, SimConfig};

fn main() -> evgs::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sim_out".into()));
    std::fs::create_dir_all(out.join("frames"))?;

    let scene = demo_scene();
    let intr = Intrinsics::centered(64, 64, 80.0);
    let orbit = OrbitSpec::default();
    let (frames, trajectory) = render_orbit(&scene, &orbit, &intr, &RenderSettings::default())?;
    let stream = simulate_events(&frames, &SimConfig::default())?;

    for (i, (_, img)) in frames.iter().enumerate() {
        img.save_png(&out.join("frames").join(format!("{i:04}.png")))?;
    }
    trajectory.save_json(&intr, &out.join("trajectory.json"))?;
    write_events_file(&stream, &out.join("events.bin"))?;
    scene.save_json(&out.join("scene.json"))?;

    let positive = stream.events().iter().filter(|e| e.p > 0).count();
    println!("frames      {}", frames.len());
    println!(
        "events      {} ({} positive, {} negative)",
        stream.len(),
        positive,
        stream.len() - positive
    );
    println!("span        {:?}..={:?} us", stream.start_bound(), stream.end_time());
    println!("written to  {}", out.display());
    Ok(())
}
