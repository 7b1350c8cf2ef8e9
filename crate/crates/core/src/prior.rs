//! Prior intensity frames for warm-up and regularisation: either loaded from
//! a manifest of externally reconstructed PNGs, or synthesised by a leaky
//! log-intensity integrator over the event stream.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EvgsError, Result};
use crate::event_io::EventStream;
use crate::image::Image;

pub const REST_INTENSITY: f64 = 0.5;
pub const DEFAULT_HALF_LIFE_US: f64 = 200_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSource {
    External,
    Naive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorFrameSet {
    frames: Vec<(i64, Image)>,
    source: PriorSource,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    frames: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    t_us: i64,
    path: PathBuf,
}

impl PriorFrameSet {
    pub fn new(frames: Vec<(i64, Image)>, source: PriorSource) -> Result<Self> {
        for pair in frames.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(EvgsError::arg(format!(
                    "prior timestamps must be strictly increasing ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
            pair[0].1.check_shape(&pair[1].1)?;
        }
        Ok(Self { frames, source })
    }

    pub fn frames(&self) -> &[(i64, Image)] {
        &self.frames
    }

    pub fn source(&self) -> PriorSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Index of the frame whose timestamp is closest to `t` (earlier wins ties).
    pub fn nearest_index(&self, t: i64) -> Option<usize> {
        if self.frames.is_empty() {
            return None;
        }
        let i = self.frames.partition_point(|(ft, _)| *ft < t);
        if i == 0 {
            return Some(0);
        }
        if i == self.frames.len() {
            return Some(i - 1);
        }
        let (before, after) = (t - self.frames[i - 1].0, self.frames[i].0 - t);
        Some(if after < before { i } else { i - 1 })
    }

    pub fn nearest(&self, t: i64) -> Option<&(i64, Image)> {
        self.nearest_index(t).map(|i| &self.frames[i])
    }

    /// Writes `frame_NNNN.png` files and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| EvgsError::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.frames.len());
        for (i, (t, img)) in self.frames.iter().enumerate() {
            let name = PathBuf::from(format!("frame_{i:04}.png"));
            img.save_png(&dir.join(&name))?;
            entries.push(ManifestEntry { t_us: *t, path: name });
        }
        let manifest = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&Manifest { frames: entries })?;
        fs::write(&manifest, text).map_err(|e| EvgsError::io(&manifest, e))?;
        Ok(manifest)
    }
}

/// Loads a manifest `{"frames":[{"t_us":N,"path":"..."}]}`. Relative image
/// paths resolve against the manifest's directory. Every image must be
/// `width x height`.
pub fn load_prior_frames(manifest_path: &Path, width: usize, height: usize) -> Result<PriorFrameSet> {
    let text = fs::read_to_string(manifest_path).map_err(|e| EvgsError::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in manifest.frames {
        let path = base.join(&entry.path);
        let img = Image::load_png(&path)?;
        if img.width != width || img.height != height {
            return Err(EvgsError::Resolution {
                path,
                expected_w: width as u32,
                expected_h: height as u32,
                got_w: img.width as u32,
                got_h: img.height as u32,
            });
        }
        frames.push((entry.t_us, img));
    }
    PriorFrameSet::new(frames, PriorSource::External)
}

/// Leaky per-pixel log integrator. The state starts at `log(0.5)`, each event
/// adds `p * threshold`, and between events the state relaxes toward
/// `log(0.5)` with the given half-life (`f64::INFINITY` disables decay). Each
/// frame at `T` includes events with `t <= T` and holds `exp(state)` clamped
/// to `[0, 1]`, replicated to three channels.
pub fn naive_integrate(stream: &EventStream, timestamps: &[i64], half_life_us: f64) -> Result<PriorFrameSet> {
    let log_states = naive_log_states(stream, timestamps, half_life_us)?;
    let (w, h) = (stream.width(), stream.height());
    let frames = timestamps
        .iter()
        .zip(log_states)
        .map(|(&t, state)| {
            let gray: Vec<f64> = state.iter().map(|s| s.exp().clamp(0.0, 1.0)).collect();
            (t, Image::from_gray(w, h, &gray))
        })
        .collect();
    PriorFrameSet::new(frames, PriorSource::Naive)
}

/// Unclamped integrator states at each requested timestamp.
pub fn naive_log_states(stream: &EventStream, timestamps: &[i64], half_life_us: f64) -> Result<Vec<Vec<f64>>> {
    if timestamps.is_empty() {
        return Err(EvgsError::arg("naive_integrate needs at least one frame timestamp"));
    }
    if !(half_life_us > 0.0) {
        return Err(EvgsError::arg("half-life must be positive"));
    }
    if timestamps.windows(2).any(|p| p[1] <= p[0]) {
        return Err(EvgsError::arg("frame timestamps must be strictly increasing"));
    }
    let rest = REST_INTENSITY.ln();
    let npix = stream.width() * stream.height();
    // Deviation from rest, and the time it was last brought up to date.
    let mut dev = vec![0.0; npix];
    let mut last = vec![i64::MIN; npix];
    let decay = |d: f64, from: i64, to: i64| {
        if from == i64::MIN || half_life_us.is_infinite() || to <= from {
            d
        } else {
            d * (-(to - from) as f64 / half_life_us).exp2()
        }
    };
    let events = stream.events();
    let mut next = 0;
    let mut out = Vec::with_capacity(timestamps.len());
    for &t in timestamps {
        while next < events.len() && events[next].t <= t {
            let e = events[next];
            let p = e.y as usize * stream.width() + e.x as usize;
            dev[p] = decay(dev[p], last[p], e.t) + e.p as f64 * stream.threshold();
            last[p] = e.t;
            next += 1;
        }
        out.push((0..npix).map(|p| rest + decay(dev[p], last[p], t)).collect());
    }
    Ok(out)
}
