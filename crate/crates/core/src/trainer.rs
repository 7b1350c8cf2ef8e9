//! Coarse-to-fine optimisation: a random cloud, a warm-up on prior frames,
//! then event supervision over count-based windows whose size shrinks with
//! the iteration, regularised by SSIM against the nearest prior frame.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Trajectory};
use crate::error::{EvgsError, Result};
use crate::event_io::{
    accumulate_events, accumulate_frame, slice_by_count, window_at, EventFrame, EventStream, EventWindow,
};
use crate::image::Image;
use crate::losses::{
    event_loss_with_grad, prior_l1_with_grad, reg_loss_with_grad, total_loss, LossReport, LossWeights,
};
use crate::math::{quat_to_matrix, Vec3};
use crate::optim::{Adam, LearningRates};
use crate::prior::PriorFrameSet;
use crate::render::{render, render_backward, ParamGradients, RenderSettings};
use crate::rng::{streams, substream};
use crate::scene::{init_random_cloud, Aabb, GaussianScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KShape {
    Linear,
    Geometric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub warm_up_iters: usize,
    pub event_iters: usize,
    pub k_start: usize,
    pub k_end: usize,
    pub k_shape: KShape,
    pub densify_interval: usize,
    /// Fraction of each phase during which density control runs.
    pub densify_until: f64,
    pub densify_in_warm_up: bool,
    pub opacity_prune_threshold: f64,
    pub positional_grad_threshold: f64,
    /// Densification is skipped once the scene holds this many Gaussians.
    pub max_gaussians: usize,
    pub checkpoint_interval: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warm_up_iters: 3000,
            event_iters: 15000,
            k_start: 150_000,
            k_end: 30_000,
            k_shape: KShape::Linear,
            densify_interval: 100,
            densify_until: 0.5,
            densify_in_warm_up: true,
            opacity_prune_threshold: 0.005,
            positional_grad_threshold: 0.0002,
            max_gaussians: 50_000,
            checkpoint_interval: 1000,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.k_end < 1 {
            return Err(EvgsError::config("schedule.k_end", "must be at least 1"));
        }
        if self.k_end > self.k_start {
            return Err(EvgsError::config(
                "schedule.k_end",
                format!("must not exceed schedule.k_start ({} > {})", self.k_end, self.k_start),
            ));
        }
        for (key, v) in [
            ("schedule.event_iters", self.event_iters),
            ("schedule.densify_interval", self.densify_interval),
            ("schedule.checkpoint_interval", self.checkpoint_interval),
            ("schedule.max_gaussians", self.max_gaussians),
        ] {
            if v == 0 {
                return Err(EvgsError::config(key, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.densify_until) {
            return Err(EvgsError::config("schedule.densify_until", "must lie in [0, 1]"));
        }
        if !(self.opacity_prune_threshold >= 0.0 && self.opacity_prune_threshold < 1.0) {
            return Err(EvgsError::config(
                "schedule.opacity_prune_threshold",
                "must lie in [0, 1)",
            ));
        }
        if !(self.positional_grad_threshold >= 0.0) {
            return Err(EvgsError::config("schedule.positional_grad_threshold", "must be >= 0"));
        }
        Ok(())
    }

    pub fn total_iters(&self) -> usize {
        self.warm_up_iters + self.event_iters
    }

    /// Whether density control runs after local step `i` of a phase of `n` steps.
    fn densify_due(&self, i: usize, n: usize) -> bool {
        let done = i + 1;
        done.is_multiple_of(self.densify_interval) && (done as f64) <= self.densify_until * n as f64
    }
}

/// Window size for event-phase iteration `iter`: `k_start` at 0, `k_end` at
/// the last iteration, interpolated linearly (or geometrically) and rounded.
pub fn progressive_k(iter: usize, schedule: &Schedule) -> Result<usize> {
    let n = schedule.event_iters;
    if iter >= n {
        return Err(EvgsError::arg(format!(
            "iteration {iter} outside the event phase of {n} steps"
        )));
    }
    let (a, b) = (schedule.k_start as f64, schedule.k_end as f64);
    if n == 1 {
        return Ok(schedule.k_start);
    }
    let frac = iter as f64 / (n - 1) as f64;
    let k = match schedule.k_shape {
        KShape::Linear => a + (b - a) * frac,
        KShape::Geometric => a * (b / a).powf(frac),
    };
    Ok((k.round() as usize).clamp(schedule.k_end, schedule.k_start))
}

/// A uniformly random run of exactly `k` consecutive events and its frame.
pub fn sample_event_window(stream: &EventStream, k: usize, rng: &mut impl Rng) -> Result<(EventWindow, EventFrame)> {
    if k == 0 {
        return Err(EvgsError::arg("window size must be at least 1"));
    }
    if stream.len() < k {
        return Err(EvgsError::InsufficientEvents {
            available: stream.len(),
            needed: k,
        });
    }
    let start = rng.gen_range(0..=stream.len() - k);
    let window = window_at(stream, start, k);
    let frame = window_frame(stream, &window)?;
    Ok((window, frame))
}

/// The frame over `(t1, t2]`. Events sharing a timestamp with the window
/// bounds are included, so with ties it may hold more than the run itself.
/// When the whole run shares one timestamp the run's own events are used.
pub fn window_frame(stream: &EventStream, window: &EventWindow) -> Result<EventFrame> {
    if window.t1 < window.t2 {
        accumulate_frame(stream, window.t1, window.t2)
    } else {
        Ok(accumulate_events(
            stream,
            &stream.events()[window.range.clone()],
            window.t1,
            window.t2,
        ))
    }
}

/// How the random initial cloud is laid out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneInit {
    pub n_init: usize,
    pub bounds: Aabb,
    pub sh_degree: usize,
    pub background: [f64; 3],
}

impl Default for SceneInit {
    fn default() -> Self {
        Self {
            n_init: 10_000,
            bounds: Aabb::new([-1.0; 3], [1.0; 3]),
            sh_degree: 0,
            background: [0.5; 3],
        }
    }
}

impl SceneInit {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(EvgsError::config("scene.n_init", "must be positive"));
        }
        if self.bounds.is_degenerate() {
            return Err(EvgsError::config("scene.bounds", "max must exceed min on every axis"));
        }
        if self.sh_degree > crate::sh::MAX_DEGREE {
            return Err(EvgsError::config("scene.sh_degree", "must be 0..=3"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(EvgsError::config("scene.background", "channels must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Half the bounds diagonal; sets the position learning-rate scale and
    /// the clone/split boundary.
    pub fn spatial_extent(&self) -> f64 {
        0.5 * self.bounds.extent()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub loss: LossWeights,
    pub optim: LearningRates,
    pub scene: SceneInit,
    pub render: RenderSettings,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.scene.validate()
    }
}

/// Everything the optimisation reads.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub events: &'a EventStream,
    pub trajectory: &'a Trajectory,
    pub intrinsics: &'a Intrinsics,
    pub priors: Option<&'a PriorFrameSet>,
}

/// Result of one optimisation step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub report: LossReport,
    /// Gradients of the total loss; also carries 2D positional statistics.
    pub grads: ParamGradients,
    /// False when the loss was non-finite and the update was skipped.
    pub applied: bool,
}

fn apply_update(scene: &mut GaussianScene, adam: &mut Adam, grads: &ParamGradients, position_lr: f64) -> Result<()> {
    let mut params = scene.flatten();
    adam.update(&mut params, &grads.data, position_lr)?;
    scene.unflatten(&params);
    scene.normalize_rotations();
    Ok(())
}

fn finish_step(
    scene: &mut GaussianScene,
    adam: &mut Adam,
    report: LossReport,
    grads: ParamGradients,
    position_lr: f64,
) -> Result<StepOutcome> {
    let applied = report.is_finite() && grads.check_finite().is_ok();
    if applied {
        apply_update(scene, adam, &grads, position_lr)?;
    }
    Ok(StepOutcome { report, grads, applied })
}

/// One warm-up step: L1 between the render at the prior's pose and the prior.
pub fn warm_up_step(
    scene: &mut GaussianScene,
    adam: &mut Adam,
    prior: &(i64, Image),
    trajectory: &Trajectory,
    intr: &Intrinsics,
    settings: &RenderSettings,
    position_lr: f64,
    iteration: usize,
) -> Result<StepOutcome> {
    let pose = trajectory.pose_at(prior.0)?;
    let out = render(scene, &pose, intr, settings);
    let (l1, g) = prior_l1_with_grad(&prior.1, &out.image)?;
    let grads = render_backward(scene, &pose, intr, &out, &g)?;
    let report = LossReport {
        iteration,
        event_loss: 0.0,
        reg_loss: 0.0,
        prior_l1: l1,
        total: l1,
    };
    finish_step(scene, adam, report, grads, position_lr)
}

/// One event-phase step: weighted event loss between renders at the window
/// bounds plus the SSIM regulariser against the prior nearest to `t2`.
pub fn training_step(
    scene: &mut GaussianScene,
    adam: &mut Adam,
    frame: &EventFrame,
    priors: Option<&PriorFrameSet>,
    weights: &LossWeights,
    trajectory: &Trajectory,
    intr: &Intrinsics,
    settings: &RenderSettings,
    position_lr: f64,
    iteration: usize,
) -> Result<StepOutcome> {
    let (p1, p2) = (trajectory.pose_at(frame.t1)?, trajectory.pose_at(frame.t2)?);
    let (o1, o2) = (render(scene, &p1, intr, settings), render(scene, &p2, intr, settings));
    let (event, mut g1, mut g2) =
        event_loss_with_grad(&o1.image, &o2.image, frame, weights.log_epsilon, weights.per_channel)?;
    for g in g1.iter_mut().chain(g2.iter_mut()) {
        *g *= weights.lambda_event;
    }
    let mut grads = render_backward(scene, &p1, intr, &o1, &g1)?;
    grads.accumulate(&render_backward(scene, &p2, intr, &o2, &g2)?);

    let mut reg = 0.0;
    let mut prior_l1 = 0.0;
    if let (Some(set), true) = (priors, weights.lambda_reg > 0.0) {
        if let Some((t, prior)) = set.nearest(frame.t2) {
            let pose = trajectory.pose_at(*t)?;
            let out = render(scene, &pose, intr, settings);
            let (r, mut g) = reg_loss_with_grad(prior, &out.image)?;
            reg = r;
            prior_l1 = crate::losses::prior_l1_loss(prior, &out.image)?;
            for v in &mut g {
                *v *= weights.lambda_reg;
            }
            grads.accumulate(&render_backward(scene, &pose, intr, &out, &g)?);
        }
    }
    let report = LossReport {
        iteration,
        event_loss: event,
        reg_loss: reg,
        prior_l1,
        total: total_loss(event, reg, weights),
    };
    finish_step(scene, adam, report, grads, position_lr)
}

/// Per-Gaussian view-space gradient statistics between density-control passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one step's statistics. Pixel-unit norms are converted to
    /// normalised device units (half the image size per unit).
    pub fn add(&mut self, grads: &ParamGradients, intr: &Intrinsics) {
        let to_ndc = 0.5 * intr.width.max(intr.height) as f64;
        for i in 0..self.sum.len() {
            self.sum[i] += grads.mean2d_grad_norm[i] * to_ndc;
            self.count[i] += grads.visible_count[i];
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Sets the mean statistic of Gaussian `i` (as if seen once).
    pub fn set(&mut self, i: usize, mean: f64) {
        self.sum[i] = mean;
        self.count[i] = 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    pub opacity_threshold: f64,
    /// Splits apply when the largest scale exceeds 1% of this.
    pub extent: f64,
    pub max_gaussians: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DensifyOutcome {
    pub iteration: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub count: usize,
}

pub const SPLIT_SCALE: f64 = 0.8;
const SPLIT_FRACTION_OF_EXTENT: f64 = 0.01;

/// Clones small and splits large Gaussians whose mean view-space gradient
/// exceeds the threshold, then drops those with low opacity. Optimizer rows
/// follow the scene: survivors keep their moments, new Gaussians start at zero.
pub fn densify_and_prune(
    scene: &mut GaussianScene,
    adam: &mut Adam,
    stats: &GradStats,
    params: &DensifyParams,
    rng: &mut ChaCha8Rng,
) -> Result<DensifyOutcome> {
    if stats.len() != scene.len() || adam.num_gaussians() != scene.len() {
        return Err(EvgsError::Shape("density statistics do not match the scene".into()));
    }
    let grow = scene.len() < params.max_gaussians;
    let split_limit = SPLIT_FRACTION_OF_EXTENT * params.extent;
    let mut keep = Vec::with_capacity(scene.len());
    let mut added = Vec::new();
    let (mut cloned, mut split, mut pruned) = (0, 0, 0);
    for (i, g) in scene.gaussians.iter().enumerate() {
        if g.opacity() < params.opacity_threshold {
            keep.push(false);
            pruned += 1;
            continue;
        }
        if !(grow && stats.mean(i) > params.grad_threshold) {
            keep.push(true);
            continue;
        }
        let scale = g.scale();
        if scale.max() > split_limit {
            let rot = quat_to_matrix(&g.rotation);
            for _ in 0..2 {
                let z = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let mut child = g.clone();
                child.position = g.position + rot * scale.component_mul(&z);
                child.log_scale = g.log_scale.add_scalar(SPLIT_SCALE.ln());
                added.push(child);
            }
            keep.push(false);
            split += 1;
        } else {
            added.push(g.clone());
            keep.push(true);
            cloned += 1;
        }
    }
    let old = std::mem::take(&mut scene.gaussians);
    scene.gaussians = old
        .into_iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(g, _)| g)
        .chain(added.iter().cloned())
        .collect();
    adam.resize_rows(&keep, added.len());
    if scene.is_empty() {
        return Err(EvgsError::Training("density control pruned every Gaussian".into()));
    }
    Ok(DensifyOutcome {
        iteration: 0,
        cloned,
        split,
        pruned,
        count: scene.len(),
    })
}

/// Where training writes its artefacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub log: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub reports: Vec<LossReport>,
    pub skipped_steps: usize,
    pub densify: Vec<DensifyOutcome>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    /// Mean of `f` over the reports with iteration in `range`.
    pub fn mean_over(&self, range: std::ops::Range<usize>, f: impl Fn(&LossReport) -> f64) -> f64 {
        let vals: Vec<f64> = self
            .reports
            .iter()
            .filter(|r| range.contains(&r.iteration))
            .map(f)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

/// Writes `contents` next to `path` and renames it into place, so a crash
/// never leaves a truncated file behind.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents).map_err(|e| EvgsError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| EvgsError::io(path, e))
}

/// Stateful driver for the warm-up and event phases.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    data: TrainData<'a>,
    scene: GaussianScene,
    adam: Adam,
    stats: GradStats,
    rates: LearningRates,
    iter: usize,
    warm_rng: ChaCha8Rng,
    window_rng: ChaCha8Rng,
    densify_rng: ChaCha8Rng,
    log: Option<BufWriter<File>>,
    log_path: Option<PathBuf>,
    checkpoint_dir: Option<PathBuf>,
    report: TrainReport,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: &'a TrainConfig,
        data: TrainData<'a>,
        scene: GaussianScene,
        outputs: &TrainOutputs,
    ) -> Result<Self> {
        config.validate()?;
        data.intrinsics.validate()?;
        if data.events.width() != data.intrinsics.width || data.events.height() != data.intrinsics.height {
            return Err(EvgsError::config(
                "camera",
                format!(
                    "event sensor is {}x{} but intrinsics are {}x{}",
                    data.events.width(),
                    data.events.height(),
                    data.intrinsics.width,
                    data.intrinsics.height
                ),
            ));
        }
        if scene.sh_degree != config.scene.sh_degree {
            return Err(EvgsError::config("scene.sh_degree", "does not match the initial scene"));
        }
        let rates = LearningRates {
            spatial_scale: config.optim.spatial_scale * config.scene.spatial_extent(),
            ..config.optim
        };
        let log = match &outputs.log {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| EvgsError::io(dir, e))?;
                }
                Some(BufWriter::new(File::create(p).map_err(|e| EvgsError::io(p, e))?))
            }
            None => None,
        };
        if let Some(dir) = &outputs.checkpoint_dir {
            fs::create_dir_all(dir).map_err(|e| EvgsError::io(dir, e))?;
        }
        let n = scene.len();
        Ok(Self {
            config,
            data,
            adam: Adam::new(scene.layout(), n, rates),
            stats: GradStats::new(n),
            scene,
            rates,
            iter: 0,
            warm_rng: substream(config.seed, streams::WARM_UP),
            window_rng: substream(config.seed, streams::WINDOWS),
            densify_rng: substream(config.seed, streams::DENSIFY),
            log,
            log_path: outputs.log.clone(),
            checkpoint_dir: outputs.checkpoint_dir.clone(),
            report: TrainReport::default(),
        })
    }

    /// Copies a trainer that has not started its event phase so it can continue
    /// under `config`, which may differ only in loss weights and the k
    /// schedule. The copy writes no log or checkpoints. Continuing the copy
    /// gives the same result as a fresh run with `config`.
    pub fn fork(&self, config: &'a TrainConfig) -> Result<Self> {
        let mut aligned = config.clone();
        aligned.loss = self.config.loss;
        aligned.schedule.k_start = self.config.schedule.k_start;
        aligned.schedule.k_end = self.config.schedule.k_end;
        aligned.schedule.k_shape = self.config.schedule.k_shape;
        if aligned != *self.config {
            return Err(EvgsError::arg("a fork may change only loss weights and the k schedule"));
        }
        if self.iter > self.config.schedule.warm_up_iters {
            return Err(EvgsError::arg("cannot fork after the event phase has started"));
        }
        config.validate()?;
        Ok(Self {
            config,
            data: self.data,
            scene: self.scene.clone(),
            adam: self.adam.clone(),
            stats: self.stats.clone(),
            rates: self.rates,
            iter: self.iter,
            warm_rng: self.warm_rng.clone(),
            window_rng: self.window_rng.clone(),
            densify_rng: self.densify_rng.clone(),
            log: None,
            log_path: None,
            checkpoint_dir: None,
            report: self.report.clone(),
        })
    }

    pub fn scene(&self) -> &GaussianScene {
        &self.scene
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    fn position_lr(&self) -> f64 {
        self.rates.position_at(self.iter, self.config.schedule.total_iters())
    }

    fn record(&mut self, outcome: &StepOutcome) -> Result<()> {
        if !outcome.applied {
            self.report.skipped_steps += 1;
            log::warn!("iteration {}: non-finite loss, update skipped", self.iter);
        }
        if let Some(w) = &mut self.log {
            let line = serde_json::to_string(&outcome.report)?;
            writeln!(w, "{line}").map_err(|e| EvgsError::io(self.log_path.clone().unwrap_or_default(), e))?;
        }
        self.report.reports.push(outcome.report);
        self.stats.add(&outcome.grads, self.data.intrinsics);
        Ok(())
    }

    fn after_step(&mut self, local: usize, phase_len: usize, densify: bool) -> Result<()> {
        let schedule = &self.config.schedule;
        if densify && schedule.densify_due(local, phase_len) {
            let params = DensifyParams {
                grad_threshold: schedule.positional_grad_threshold,
                opacity_threshold: schedule.opacity_prune_threshold,
                extent: self.config.scene.spatial_extent(),
                max_gaussians: schedule.max_gaussians,
            };
            let mut outcome = densify_and_prune(
                &mut self.scene,
                &mut self.adam,
                &self.stats,
                &params,
                &mut self.densify_rng,
            )?;
            outcome.iteration = self.iter;
            log::debug!("densify at {}: {:?}", self.iter, outcome);
            self.report.densify.push(outcome);
            self.stats = GradStats::new(self.scene.len());
        }
        self.iter += 1;
        if self.iter.is_multiple_of(schedule.checkpoint_interval) {
            self.checkpoint(&format!("checkpoint_{:06}.json", self.iter))?;
        }
        Ok(())
    }

    /// Writes the current scene into the checkpoint directory, if any.
    pub fn checkpoint(&mut self, name: &str) -> Result<Option<PathBuf>> {
        if let Some(w) = &mut self.log {
            w.flush()
                .map_err(|e| EvgsError::io(self.log_path.clone().unwrap_or_default(), e))?;
        }
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(None);
        };
        let path = dir.join(name);
        write_atomic(&path, &self.scene.to_json()?)?;
        self.report.checkpoints.push(path.clone());
        Ok(Some(path))
    }

    /// Stage (b): `schedule.warm_up_iters` steps of prior L1.
    pub fn warm_up(&mut self) -> Result<()> {
        let n = self.config.schedule.warm_up_iters;
        if n == 0 {
            return Ok(());
        }
        let priors = self
            .data
            .priors
            .filter(|p| !p.is_empty())
            .ok_or_else(|| EvgsError::arg("warm-up needs at least one prior frame"))?;
        for local in 0..n {
            let idx = self.warm_rng.gen_range(0..priors.len());
            let lr = self.position_lr();
            let outcome = warm_up_step(
                &mut self.scene,
                &mut self.adam,
                &priors.frames()[idx],
                self.data.trajectory,
                self.data.intrinsics,
                &self.config.render,
                lr,
                self.iter,
            )?;
            self.record(&outcome)?;
            self.after_step(local, n, self.config.schedule.densify_in_warm_up)?;
        }
        Ok(())
    }

    /// Stage (c): event supervision with progressive window sizes.
    pub fn event_phase(&mut self) -> Result<()> {
        let n = self.config.schedule.event_iters;
        if self.data.events.is_empty() {
            return Err(EvgsError::InsufficientEvents {
                available: 0,
                needed: 1,
            });
        }
        for local in 0..n {
            let k = progressive_k(local, &self.config.schedule)?.min(self.data.events.len());
            let (_, frame) = sample_event_window(self.data.events, k, &mut self.window_rng)?;
            let lr = self.position_lr();
            let outcome = training_step(
                &mut self.scene,
                &mut self.adam,
                &frame,
                self.data.priors,
                &self.config.loss,
                self.data.trajectory,
                self.data.intrinsics,
                &self.config.render,
                lr,
                self.iter,
            )?;
            self.record(&outcome)?;
            self.after_step(local, n, true)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(GaussianScene, TrainReport)> {
        if let Some(w) = &mut self.log {
            w.flush()
                .map_err(|e| EvgsError::io(self.log_path.clone().unwrap_or_default(), e))?;
        }
        Ok((self.scene, self.report))
    }
}

/// Stage (a): the random initial cloud for a config.
pub fn initial_scene(config: &TrainConfig) -> Result<GaussianScene> {
    let s = &config.scene;
    init_random_cloud(s.n_init, &s.bounds, config.seed, s.sh_degree, s.background)
}

/// Runs all three stages and returns the final scene.
pub fn train(
    config: &TrainConfig,
    data: TrainData<'_>,
    outputs: &TrainOutputs,
) -> Result<(GaussianScene, TrainReport)> {
    config.validate()?;
    let scene = initial_scene(config)?;
    let mut trainer = Trainer::new(config, data, scene, outputs)?;
    trainer.warm_up()?;
    trainer.event_phase()?;
    trainer.finish()
}

/// Mean event loss of `scene` over the consecutive `k`-event windows of the
/// stream. Used to compare training runs on identical windows.
pub fn evaluate_event_loss(
    scene: &GaussianScene,
    stream: &EventStream,
    k: usize,
    trajectory: &Trajectory,
    intr: &Intrinsics,
    settings: &RenderSettings,
    eps: f64,
) -> Result<f64> {
    let windows = slice_by_count(stream, k.min(stream.len()).max(1))?;
    if windows.is_empty() {
        return Err(EvgsError::InsufficientEvents {
            available: stream.len(),
            needed: k,
        });
    }
    let mut total = 0.0;
    for w in &windows {
        let frame = window_frame(stream, w)?;
        let a = render(scene, &trajectory.pose_at(w.t1)?, intr, settings).image;
        let b = render(scene, &trajectory.pose_at(w.t2)?, intr, settings).image;
        total += event_loss_with_grad(&a, &b, &frame, eps, false)?.0;
    }
    Ok(total / windows.len() as f64)
}
