//! The `evgs` subcommands. Each returns a process exit code: 0 on success,
//! 1 on runtime failure, 2 on usage or configuration errors.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose, Trajectory};
use crate::config::{load_config, Config};
use crate::error::{EvgsError, Result};
use crate::event_io::{read_events_file, write_events_file, EventStream, SensorInfo};
use crate::image::Image;
use crate::math::Vec3;
use crate::pipeline::{aligned_metrics, mean_psnr, mean_ssim, naive_priors, simulate_capture, ViewMetrics};
use crate::prior::load_prior_frames;
use crate::render::render;
use crate::scene::GaussianScene;
use crate::simulator::demo_scene;
use crate::trainer::{train, TrainData, TrainOutputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    Render,
    Eval,
}

/// Loads the config, runs `command` and maps the outcome to an exit code.
/// Errors are printed to stderr.
pub fn run(command: Command, config_path: &Path, overrides: &[String]) -> i32 {
    let outcome = configure_threads()
        .and_then(|_| load_config(config_path, overrides))
        .and_then(|config| match command {
            Command::Simulate => cmd_simulate(&config),
            Command::Train => cmd_train(&config),
            Command::Render => cmd_render(&config).map(|_| ()),
            Command::Eval => cmd_eval(&config).map(|_| ()),
        });
    exit_code(outcome)
}

pub fn exit_code(outcome: Result<()>) -> i32 {
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

/// Caps the rayon pool at `EVGS_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("EVGS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| EvgsError::Argument(format!("EVGS_THREADS must be a positive integer, got `{raw}`")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| EvgsError::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Renders the ground-truth orbit, converts it to events and writes frames,
/// trajectory, events and the ground-truth scene.
pub fn cmd_simulate(config: &Config) -> Result<()> {
    let scene = match &config.paths.ground_truth {
        Some(path) => GaussianScene::load_json(path)?,
        None => demo_scene(),
    };
    let intr = config.camera.intrinsics();
    let capture = simulate_capture(&scene, &config.orbit, &intr, &config.sim, &config.render_settings())?;

    let paths = &config.paths;
    let frames_dir = paths.frames_dir();
    create_dir(&frames_dir)?;
    for (i, (_, img)) in capture.frames.iter().enumerate() {
        img.save_png(&frames_dir.join(format!("{i:04}.png")))?;
    }
    let (traj_path, events_path) = (paths.trajectory(), paths.events());
    create_parent(&traj_path)?;
    create_parent(&events_path)?;
    capture.trajectory.save_json(&intr, &traj_path)?;
    write_events_file(&capture.events, &events_path)?;
    let truth_path = paths.out_dir.join("ground_truth.json");
    create_parent(&truth_path)?;
    scene.save_json(&truth_path)?;

    if capture.events.is_empty() {
        log::warn!("simulated stream is empty; the contrast threshold exceeds every log-intensity change");
    }
    println!("frames  {} -> {}", capture.frames.len(), frames_dir.display());
    println!("events  {} -> {}", capture.events.len(), events_path.display());
    Ok(())
}

/// Event stream for `config`, checked against the configured sensor.
pub fn load_stream(config: &Config) -> Result<EventStream> {
    let intr = config.camera.intrinsics();
    let sensor = SensorInfo {
        width: intr.width as u16,
        height: intr.height as u16,
        threshold: config.sim.threshold,
    };
    let path = config.paths.events();
    let stream = read_events_file(&path, Some(sensor))?;
    if stream.width() != intr.width || stream.height() != intr.height {
        return Err(EvgsError::Resolution {
            path,
            expected_w: intr.width as u32,
            expected_h: intr.height as u32,
            got_w: stream.width() as u32,
            got_h: stream.height() as u32,
        });
    }
    Ok(stream)
}

/// Trajectory for `config`; its stored resolution must match the camera.
pub fn load_trajectory(config: &Config) -> Result<Trajectory> {
    let path = config.paths.trajectory();
    let (traj, stored) = Trajectory::load_json(&path)?;
    let intr = config.camera.intrinsics();
    if (stored.width, stored.height) != (intr.width, intr.height) {
        return Err(EvgsError::Resolution {
            path,
            expected_w: intr.width as u32,
            expected_h: intr.height as u32,
            got_w: stored.width as u32,
            got_h: stored.height as u32,
        });
    }
    Ok(traj)
}

/// Trains from the configured events and writes the final checkpoint, the
/// loss log, periodic checkpoints and a handful of test views.
pub fn cmd_train(config: &Config) -> Result<()> {
    let intr = config.camera.intrinsics();
    let stream = load_stream(config)?;
    let trajectory = load_trajectory(config)?;
    let priors = match &config.paths.priors {
        Some(manifest) => load_prior_frames(manifest, intr.width, intr.height)?,
        None => naive_priors(&stream, &trajectory, config.prior.stride, config.prior.half_life_us)?,
    };

    let paths = &config.paths;
    let log_path = paths.log();
    create_parent(&log_path)?;
    let outputs = TrainOutputs {
        log: Some(log_path.clone()),
        checkpoint_dir: Some(paths.checkpoint_dir()),
    };
    let data = TrainData {
        events: &stream,
        trajectory: &trajectory,
        intrinsics: &intr,
        priors: Some(&priors),
    };
    let (scene, report) = train(&config.train_config(), data, &outputs)?;

    let final_path = paths.checkpoint();
    create_parent(&final_path)?;
    scene.save_json(&final_path)?;

    let views_dir = paths.out_dir.join("test_views");
    create_dir(&views_dir)?;
    let settings = config.render_settings();
    for (i, (_, pose)) in trajectory
        .keyframes()
        .iter()
        .enumerate()
        .step_by(config.render.test_view_stride)
    {
        render(&scene, pose, &intr, &settings)
            .image
            .save_png(&views_dir.join(format!("{i:04}.png")))?;
    }

    if let Some(last) = report.reports.last() {
        println!("iterations  {}", report.reports.len());
        println!(
            "final loss  {:.6e} (event {:.6e}, reg {:.6e})",
            last.total, last.event_loss, last.reg_loss
        );
    }
    println!("gaussians   {}", scene.len());
    println!("skipped     {}", report.skipped_steps);
    println!("checkpoint  {}", final_path.display());
    Ok(())
}

/// One pose of an explicit pose list (world-to-camera).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose> {
        let q = [self.qw, self.qx, self.qy, self.qz];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(EvgsError::arg("pose quaternion must be nonzero and finite"));
        }
        Ok(Pose::new(q.map(|v| v / norm), Vec3::new(self.tx, self.ty, self.tz)))
    }
}

/// Poses selected by the render config: an explicit list, the given
/// timestamps or every trajectory keyframe.
pub fn render_poses(config: &Config) -> Result<Vec<Pose>> {
    let poses = if let Some(path) = &config.render.poses_file {
        let text = fs::read_to_string(path).map_err(|e| EvgsError::io(path, e))?;
        let records: Vec<PoseRecord> = serde_json::from_str(&text)
            .map_err(|e| EvgsError::config("render.poses_file", format!("{}: {e}", path.display())))?;
        records.iter().map(PoseRecord::to_pose).collect::<Result<Vec<_>>>()?
    } else {
        let trajectory = load_trajectory(config)?;
        match &config.render.timestamps {
            Some(ts) => ts
                .iter()
                .map(|t| {
                    trajectory
                        .pose_at(*t)
                        .map_err(|e| EvgsError::config("render.timestamps", e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?,
            None => trajectory.keyframes().iter().map(|(_, p)| *p).collect(),
        }
    };
    if poses.is_empty() {
        return Err(EvgsError::config("render", "no poses to render"));
    }
    Ok(poses)
}

/// Renders the checkpoint at every selected pose. Returns the written files.
pub fn cmd_render(config: &Config) -> Result<Vec<PathBuf>> {
    let scene = GaussianScene::load_json(&config.paths.checkpoint())?;
    let poses = render_poses(config)?;
    let intr: Intrinsics = config.camera.intrinsics();
    let settings = config.render_settings();
    let dir = config.paths.render_dir();
    create_dir(&dir)?;
    let mut written = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let path = dir.join(format!("{i:04}.png"));
        render(&scene, pose, &intr, &settings).image.save_png(&path)?;
        written.push(path);
    }
    println!("rendered {} views -> {}", written.len(), dir.display());
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub views: Vec<ViewRecord>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| EvgsError::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| EvgsError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.insert(name.to_string());
            }
        }
    }
    Ok(names)
}

/// Pairs images by filename, aligns each rendering to its reference in log
/// space and scores it.
pub fn evaluate_dirs(rendered: &Path, reference: &Path) -> Result<EvalMetrics> {
    let (a, b) = (png_names(rendered)?, png_names(reference)?);
    if a != b {
        let only_a: Vec<_> = a.difference(&b).cloned().collect();
        let only_b: Vec<_> = b.difference(&a).cloned().collect();
        return Err(EvgsError::Argument(format!(
            "filename sets differ; only in {}: {only_a:?}; only in {}: {only_b:?}",
            rendered.display(),
            reference.display()
        )));
    }
    if a.is_empty() {
        return Err(EvgsError::Argument(format!("no PNG files in {}", rendered.display())));
    }
    let mut views = Vec::with_capacity(a.len());
    let mut metrics: Vec<ViewMetrics> = Vec::with_capacity(a.len());
    for name in &a {
        let pred = Image::load_png(&rendered.join(name))?;
        let truth = Image::load_png(&reference.join(name))?;
        if !pred.same_shape(&truth) {
            return Err(EvgsError::Resolution {
                path: rendered.join(name),
                expected_w: truth.width as u32,
                expected_h: truth.height as u32,
                got_w: pred.width as u32,
                got_h: pred.height as u32,
            });
        }
        let m = aligned_metrics(&pred, &truth)?;
        views.push(ViewRecord {
            name: name.clone(),
            psnr: m.psnr,
            ssim: m.ssim,
            degenerate: m.degenerate,
        });
        metrics.push(m);
    }
    Ok(EvalMetrics {
        views,
        mean_psnr: mean_psnr(&metrics),
        mean_ssim: mean_ssim(&metrics),
    })
}

/// Scores the rendered directory against the reference directory, writes the
/// metrics JSON and prints a table.
pub fn cmd_eval(config: &Config) -> Result<EvalMetrics> {
    let metrics = evaluate_dirs(&config.paths.render_dir(), &config.paths.reference_dir())?;
    let path = config.paths.metrics();
    create_parent(&path)?;
    fs::write(&path, serde_json::to_string_pretty(&metrics)?).map_err(|e| EvgsError::io(&path, e))?;

    println!("{:<24} {:>9} {:>7}", "view", "psnr", "ssim");
    for v in &metrics.views {
        let flag = if v.degenerate { " (degenerate)" } else { "" };
        println!("{:<24} {:>9.3} {:>7.4}{flag}", v.name, v.psnr, v.ssim);
    }
    println!("{:<24} {:>9.3} {:>7.4}", "mean", metrics.mean_psnr, metrics.mean_ssim);
    Ok(metrics)
}
