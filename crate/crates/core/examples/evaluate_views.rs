//! Scores a directory of renderings against a reference directory after
//! per-channel log-space alignment, as `evgs eval` does.
//!
//! cargo run --release --example evaluate_views -- <rendered_dir> <reference_dir>

use std::path::PathBuf;

use evgs::app::evaluate_dirs;

fn main() -> evgs::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let [rendered, reference] = args.as_slice() else {
        eprintln!("usage: evaluate_views <rendered_dir> <reference_dir>");
        std::process::exit(2);
    };
    let metrics = evaluate_dirs(rendered, reference)?;
    for v in &metrics.views {
        println!("{:<20} {:>8.3} dB  ssim {:.4}", v.name, v.psnr, v.ssim);
    }
    println!(
        "{:<20} {:>8.3} dB  ssim {:.4}",
        "mean", metrics.mean_psnr, metrics.mean_ssim
    );
    Ok(())
}
