//! The single JSON run configuration, `--set key=value` overrides and
//! cross-field validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::camera::Intrinsics;
use crate::error::{EvgsError, Result};
use crate::losses::LossWeights;
use crate::optim::LearningRates;
use crate::prior::DEFAULT_HALF_LIFE_US;
use crate::render::RenderSettings;
use crate::simulator::{OrbitSpec, SimConfig};
use crate::trainer::{SceneInit, Schedule, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Principal point; the image centre when absent.
    pub principal: Option<[f64; 2]>,
    pub near: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            focal: 80.0,
            principal: None,
            near: crate::camera::DEFAULT_NEAR,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        let mut intr = Intrinsics::centered(self.width, self.height, self.focal);
        if let Some([cx, cy]) = self.principal {
            intr.cx = cx;
            intr.cy = cy;
        }
        intr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Naive priors are built at every `stride`-th trajectory keyframe.
    pub stride: usize,
    pub half_life_us: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            stride: 10,
            half_life_us: DEFAULT_HALF_LIFE_US,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub early_stop: bool,
    /// Timestamps to render; every trajectory keyframe when absent.
    pub timestamps: Option<Vec<i64>>,
    /// JSON list of explicit world-to-camera poses; overrides `timestamps`.
    pub poses_file: Option<PathBuf>,
    /// Every this-many keyframes `train` writes a test view.
    pub test_view_stride: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            early_stop: false,
            timestamps: None,
            poses_file: None,
            test_view_stride: 20,
        }
    }
}

/// File locations. Unset entries resolve inside `out_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    /// Ground-truth scene checkpoint for `simulate`; the demo scene when absent.
    pub ground_truth: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub frames_dir: Option<PathBuf>,
    /// Prior manifest; naive priors are integrated from the events when absent.
    pub priors: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub render_dir: Option<PathBuf>,
    pub reference_dir: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("evgs_out"),
            ground_truth: None,
            events: None,
            trajectory: None,
            frames_dir: None,
            priors: None,
            checkpoint: None,
            checkpoint_dir: None,
            log: None,
            render_dir: None,
            reference_dir: None,
            metrics: None,
        }
    }
}

impl PathsConfig {
    fn or_out(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out_dir.join(name))
    }

    pub fn events(&self) -> PathBuf {
        self.or_out(&self.events, "events.bin")
    }

    pub fn trajectory(&self) -> PathBuf {
        self.or_out(&self.trajectory, "trajectory.json")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.or_out(&self.frames_dir, "frames")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.or_out(&self.checkpoint, "final.json")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.or_out(&self.checkpoint_dir, "checkpoints")
    }

    pub fn log(&self) -> PathBuf {
        self.or_out(&self.log, "train.jsonl")
    }

    pub fn render_dir(&self) -> PathBuf {
        self.or_out(&self.render_dir, "renders")
    }

    pub fn reference_dir(&self) -> PathBuf {
        self.reference_dir.clone().unwrap_or_else(|| self.frames_dir())
    }

    pub fn metrics(&self) -> PathBuf {
        self.or_out(&self.metrics, "metrics.json")
    }
}

/// Every setting of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub camera: CameraConfig,
    pub scene: SceneInit,
    pub schedule: Schedule,
    pub loss: LossWeights,
    pub optim: LearningRates,
    pub sim: SimConfig,
    pub orbit: OrbitSpec,
    pub prior: PriorConfig,
    pub render: RenderConfig,
    pub paths: PathsConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || c.width > u16::MAX as usize || c.height > u16::MAX as usize {
            return Err(EvgsError::config(
                "camera.width",
                "resolution must be 1..=65535 on both axes",
            ));
        }
        if !(c.focal > 0.0) {
            return Err(EvgsError::config("camera.focal", "must be > 0"));
        }
        if !(c.near > 0.0) {
            return Err(EvgsError::config("camera.near", "must be > 0"));
        }
        self.scene.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.sim.validate()?;
        self.orbit.validate()?;
        if self.prior.stride == 0 {
            return Err(EvgsError::config("prior.stride", "must be positive"));
        }
        if !(self.prior.half_life_us > 0.0) {
            return Err(EvgsError::config("prior.half_life_us", "must be > 0"));
        }
        if self.render.test_view_stride == 0 {
            return Err(EvgsError::config("render.test_view_stride", "must be positive"));
        }
        if (self.loss.log_epsilon - self.sim.log_epsilon).abs() > 0.0 {
            log::warn!(
                "loss.log_epsilon differs from sim.log_epsilon; the simulator round-trip bound assumes they match"
            );
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            near: self.camera.near,
            early_stop: self.render.early_stop,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule,
            loss: self.loss,
            optim: self.optim,
            scene: self.scene,
            render: self.render_settings(),
            seed: self.seed,
        }
    }

    /// Parses a JSON document, applies overrides and validates.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| EvgsError::config("<root>", e.to_string()))?;
        if !doc.is_object() {
            return Err(EvgsError::config("<root>", "config must be a JSON object"));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: Config = serde_path_to_error::deserialize(doc).map_err(|e| {
            let key = e.path().to_string();
            EvgsError::config(key, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reads, overrides and validates a config file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(|e| EvgsError::io(path, e))?;
    Config::from_json_str(&text, overrides)
}

/// Applies `a.b.c=value`. The value is parsed as JSON and kept as a string
/// when that fails.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| EvgsError::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(EvgsError::config(key, "empty path segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| EvgsError::config(parts[..i].join("."), "is not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}
