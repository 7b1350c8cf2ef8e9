//! Glue shared by the command-line app, the examples and the end-to-end
//! tests: simulated captures, prior construction and held-out evaluation.

use serde::Serialize;

use crate::camera::{Intrinsics, Pose, Trajectory};
use crate::error::{EvgsError, Result};
use crate::event_io::EventStream;
use crate::image::Image;
use crate::losses::{log_affine_align, psnr, ssim};
use crate::prior::{naive_integrate, PriorFrameSet};
use crate::render::{render, RenderSettings};
use crate::scene::GaussianScene;
use crate::simulator::{render_orbit, simulate_events, OrbitSpec, SimConfig};

/// A simulated recording: ground-truth frames, poses and events.
#[derive(Clone, Debug)]
pub struct Capture {
    pub intrinsics: Intrinsics,
    pub orbit: OrbitSpec,
    pub frames: Vec<(i64, Image)>,
    pub trajectory: Trajectory,
    pub events: EventStream,
}

pub fn simulate_capture(
    scene: &GaussianScene,
    orbit: &OrbitSpec,
    intr: &Intrinsics,
    sim: &SimConfig,
    settings: &RenderSettings,
) -> Result<Capture> {
    let (frames, trajectory) = render_orbit(scene, orbit, intr, settings)?;
    let events = simulate_events(&frames, sim)?;
    Ok(Capture {
        intrinsics: *intr,
        orbit: *orbit,
        frames,
        trajectory,
        events,
    })
}

/// Every `stride`-th trajectory keyframe time.
pub fn prior_timestamps(trajectory: &Trajectory, stride: usize) -> Vec<i64> {
    trajectory
        .keyframes()
        .iter()
        .step_by(stride.max(1))
        .map(|(t, _)| *t)
        .collect()
}

/// Naive priors at every `stride`-th keyframe.
pub fn naive_priors(
    events: &EventStream,
    trajectory: &Trajectory,
    stride: usize,
    half_life_us: f64,
) -> Result<PriorFrameSet> {
    naive_integrate(events, &prior_timestamps(trajectory, stride), half_life_us)
}

/// The same orbit shifted by half an azimuth step: views never seen in training.
pub fn held_out_orbit(orbit: &OrbitSpec, n_views: usize) -> OrbitSpec {
    let step = orbit.step_deg();
    OrbitSpec {
        n_frames: n_views,
        duration_us: orbit.duration_us.max(n_views as i64),
        start_angle_deg: orbit.start_angle_deg + 0.5 * step,
        ..*orbit
    }
}

/// Metrics of one view after log-affine alignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub degenerate: bool,
}

pub fn aligned_metrics(pred: &Image, reference: &Image) -> Result<ViewMetrics> {
    let aligned = log_affine_align(pred, reference)?;
    Ok(ViewMetrics {
        psnr: psnr(&aligned.image, reference)?,
        ssim: ssim(&aligned.image, reference)?,
        degenerate: aligned.degenerate,
    })
}

/// Renders `trained` and `truth` at every pose and compares them.
pub fn evaluate_views(
    trained: &GaussianScene,
    truth: &GaussianScene,
    poses: &[Pose],
    intr: &Intrinsics,
    settings: &RenderSettings,
) -> Result<Vec<ViewMetrics>> {
    if poses.is_empty() {
        return Err(EvgsError::arg("no evaluation poses"));
    }
    poses
        .iter()
        .map(|p| {
            let a = render(trained, p, intr, settings).image;
            let b = render(truth, p, intr, settings).image;
            aligned_metrics(&a, &b)
        })
        .collect()
}

pub fn mean_psnr(metrics: &[ViewMetrics]) -> f64 {
    metrics.iter().map(|m| m.psnr).sum::<f64>() / metrics.len().max(1) as f64
}

pub fn mean_ssim(metrics: &[ViewMetrics]) -> f64 {
    metrics.iter().map(|m| m.ssim).sum::<f64>() / metrics.len().max(1) as f64
}
