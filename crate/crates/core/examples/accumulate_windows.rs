//! Slices a simulated stream into count-based windows and shows how the
//! window duration shrinks with k.
//!
//! cargo run --release --example accumulate_windows -- [k ...]

use evgs::camera::Intrinsics;
use evgs::event_io::{accumulate_frame, slice_by_count};
use evgs::image::Image;
use evgs::pipeline::simulate_capture;
use evgs::render::RenderSettings;
use evgs::simulator::{demo_scene, OrbitSpec, SimConfig};

fn main() -> evgs::Result<()> {
    let ks: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ks = if ks.is_empty() {
        vec![16_000, 8_000, 4_000, 1_000]
    } else {
        ks
    };

    let intr = Intrinsics::centered(64, 64, 80.0);
    let capture = simulate_capture(
        &demo_scene(),
        &OrbitSpec::default(),
        &intr,
        &SimConfig::default(),
        &RenderSettings::default(),
    )?;
    let stream = &capture.events;
    println!(
        "{} events over {:?}..={:?} us\n",
        stream.len(),
        stream.start_bound(),
        stream.end_time()
    );
    println!("{:>8} {:>8} {:>14} {:>12}", "k", "windows", "mean span us", "mean |E|");

    for k in ks {
        let windows = slice_by_count(stream, k)?;
        if windows.is_empty() {
            println!("{k:>8} {:>8}", 0);
            continue;
        }
        let mut span = 0.0;
        let mut magnitude = 0.0;
        for w in &windows {
            let frame = accumulate_frame(stream, w.t1, w.t2)?;
            span += (w.t2 - w.t1) as f64;
            magnitude += frame.values.iter().map(|v| v.abs()).sum::<f64>() / frame.values.len() as f64;
        }
        let n = windows.len() as f64;
        println!("{k:>8} {:>8} {:>14.0} {:>12.4}", windows.len(), span / n, magnitude / n);

        // Positive change red, negative blue, on grey.
        let w = &windows[0];
        let frame = accumulate_frame(stream, w.t1, w.t2)?;
        let img = Image::from_fn(frame.width, frame.height, |x, y| {
            let v = (frame.at(x, y) * 2.0).clamp(-0.5, 0.5);
            [0.5 + v.max(0.0), 0.5 - v.abs(), 0.5 - v.min(0.0)]
        });
        img.save_png(std::path::Path::new(&format!("window_k{k}.png")))?;
    }
    Ok(())
}
