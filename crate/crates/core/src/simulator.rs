//! Synthetic ground truth: render a camera orbit around a known scene and turn
//! the frame sequence into events with a noise-free threshold-crossing model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose, Trajectory};
use crate::error::{EvgsError, Result};
use crate::event_io::{Event, EventStream};
use crate::image::Image;
use crate::math::{quat_from_axis_angle, Vec3};
use crate::render::{render, RenderSettings};
use crate::scene::{Gaussian, GaussianScene};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub threshold: f64,
    /// Floor inside the luminance log.
    pub log_epsilon: f64,
    /// Reserved for a future noise model; the simulator is noise-free.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            log_epsilon: 1e-3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(EvgsError::config("sim.threshold", "must be > 0"));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(EvgsError::config("sim.log_epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// A circular camera path at fixed elevation, every camera looking at `center`
/// with world `+z` as up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub elevation_deg: f64,
    pub n_frames: usize,
    pub duration_us: i64,
    /// Azimuth of the first camera; a half step yields views between training frames.
    pub start_angle_deg: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            radius: 4.0,
            elevation_deg: 20.0,
            n_frames: 200,
            duration_us: 1_000_000,
            start_angle_deg: 0.0,
        }
    }
}

impl OrbitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(EvgsError::config("orbit.radius", "must be > 0"));
        }
        if self.n_frames < 2 {
            return Err(EvgsError::config("orbit.n_frames", "must be at least 2"));
        }
        if self.duration_us < self.n_frames as i64 {
            return Err(EvgsError::config(
                "orbit.duration_us",
                "must give every frame a distinct microsecond timestamp",
            ));
        }
        if !(self.elevation_deg.abs() < 90.0) {
            return Err(EvgsError::config(
                "orbit.elevation_deg",
                "must lie strictly between -90 and 90",
            ));
        }
        Ok(())
    }

    /// Azimuth step between consecutive frames, in degrees.
    pub fn step_deg(&self) -> f64 {
        360.0 / self.n_frames as f64
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        (self.duration_us as f64 * i as f64 / self.n_frames as f64).round() as i64
    }

    pub fn eye(&self, i: usize) -> Vec3 {
        let theta = (self.start_angle_deg + self.step_deg() * i as f64).to_radians();
        let el = self.elevation_deg.to_radians();
        Vec3::from(self.center) + self.radius * Vec3::new(el.cos() * theta.cos(), el.cos() * theta.sin(), el.sin())
    }

    /// Timestamped world-to-camera poses covering `[0, 360)` degrees.
    pub fn poses(&self) -> Result<Vec<(i64, Pose)>> {
        self.validate()?;
        (0..self.n_frames)
            .map(|i| {
                Ok((
                    self.timestamp(i),
                    Pose::look_at(self.eye(i), Vec3::from(self.center), Vec3::z())?,
                ))
            })
            .collect()
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(self.poses()?)
    }
}

/// Renders every orbit frame. Returns the frames and the matching trajectory.
pub fn render_orbit(
    scene: &GaussianScene,
    orbit: &OrbitSpec,
    intr: &Intrinsics,
    settings: &RenderSettings,
) -> Result<(Vec<(i64, Image)>, Trajectory)> {
    let poses = orbit.poses()?;
    intr.validate()?;
    let frames = poses
        .iter()
        .map(|(t, pose)| (*t, render(scene, pose, intr, settings).image))
        .collect();
    Ok((frames, Trajectory::new(poses)?))
}

/// Converts a frame sequence into events.
///
/// Each pixel keeps a reference log-luminance `r`, starting at frame 0. For
/// every later frame with value `v`, events of polarity `sign(v - r)` are
/// emitted while `|v - r| >= threshold`, each moving `r` one threshold step.
/// The `j`-th of `n` crossings between frames at `t0` and `t1` is stamped
/// `t0 + ceil((t1 - t0) * j / n)`, so it always falls in `(t0, t1]`.
/// Output is sorted by `(t, y, x, order)`.
pub fn simulate_events(frames: &[(i64, Image)], config: &SimConfig) -> Result<EventStream> {
    config.validate()?;
    if frames.len() < 2 {
        return Err(EvgsError::arg("simulation needs at least two frames"));
    }
    let (w, h) = (frames[0].1.width, frames[0].1.height);
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(EvgsError::arg("frame resolution exceeds the event coordinate range"));
    }
    for pair in frames.windows(2) {
        pair[0].1.check_shape(&pair[1].1)?;
        if pair[1].0 <= pair[0].0 {
            return Err(EvgsError::arg("frame timestamps must be strictly increasing"));
        }
    }
    let eps = config.log_epsilon;
    let delta = config.threshold;
    let logs: Vec<Vec<f64>> = frames
        .iter()
        .map(|(_, img)| img.luminance().iter().map(|l| (l + eps).ln()).collect())
        .collect();

    let rows: Vec<Vec<(Event, u32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            for x in 0..w {
                let p = y * w + x;
                let r0 = logs[0][p];
                let mut count: i64 = 0;
                let mut seq = 0u32;
                for f in 1..frames.len() {
                    // Compared as (v - r0) - count * delta, the same arithmetic
                    // as accumulating the emitted events, so the residual of the
                    // accumulated frame stays strictly below delta.
                    let change = logs[f][p] - r0;
                    let start = count;
                    loop {
                        let acc = count as f64 * delta;
                        if change - acc >= delta {
                            count += 1;
                        } else if acc - change >= delta {
                            count -= 1;
                        } else {
                            break;
                        }
                    }
                    let n = (count - start).unsigned_abs();
                    if n == 0 {
                        continue;
                    }
                    let pol: i8 = if count > start { 1 } else { -1 };
                    let (t0, t1) = (frames[f - 1].0, frames[f].0);
                    for j in 1..=n {
                        let t = t0 + ceil_div((t1 - t0) as i128 * j as i128, n as i128) as i64;
                        out.push((Event::new(t, x as u16, y as u16, pol), seq));
                        seq += 1;
                    }
                }
            }
            out
        })
        .collect();
    let mut events: Vec<(Event, u32)> = rows.into_iter().flatten().collect();
    events.sort_by_key(|(e, seq)| (e.t, e.y, e.x, *seq));
    EventStream::new(events.into_iter().map(|(e, _)| e).collect(), w as u16, h as u16, delta)
}

fn ceil_div(a: i128, b: i128) -> i128 {
    (a + b - 1) / b
}

pub const DEMO_BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

/// The built-in ground-truth scene: eight grey, mostly anisotropic Gaussians
/// inside the unit box over a mid-grey background, SH degree 0. Events and
/// naive priors carry luminance only, so the albedo is grey as well.
pub fn demo_scene() -> GaussianScene {
    // (position, axis scales, rotation axis, rotation degrees, albedo)
    type Placement = ([f64; 3], [f64; 3], [f64; 3], f64, [f64; 3]);
    let spec: [Placement; 8] = [
        ([0.0, 0.0, 0.0], [0.45, 0.45, 0.45], [0.0, 0.0, 1.0], 0.0, [0.8; 3]),
        ([0.8, 0.2, 0.1], [0.35, 0.12, 0.12], [0.0, 0.0, 1.0], 30.0, [0.2; 3]),
        ([-0.7, 0.5, -0.2], [0.15, 0.4, 0.15], [1.0, 0.0, 0.0], 25.0, [0.3; 3]),
        ([0.1, -0.8, 0.3], [0.2, 0.2, 0.35], [0.0, 1.0, 0.0], 40.0, [0.1; 3]),
        ([-0.3, -0.4, -0.6], [0.3, 0.18, 0.1], [1.0, 1.0, 0.0], 60.0, [0.03; 3]),
        ([0.5, 0.7, 0.5], [0.18, 0.18, 0.18], [0.0, 0.0, 1.0], 0.0, [0.98; 3]),
        ([-0.6, -0.2, 0.6], [0.25, 0.1, 0.2], [0.0, 1.0, 1.0], 45.0, [0.7; 3]),
        ([0.4, -0.3, -0.7], [0.12, 0.3, 0.12], [1.0, 0.0, 1.0], 70.0, [0.15; 3]),
    ];
    let gaussians = spec
        .iter()
        .map(|&(pos, scale, axis, angle, rgb)| {
            let mut g = Gaussian::isotropic(Vec3::from(pos), 1.0, 0.9, rgb, 0);
            g.log_scale = Vec3::from(scale).map(f64::ln);
            g.rotation = quat_from_axis_angle(Vec3::from(axis).normalize(), angle.to_radians());
            g
        })
        .collect();
    GaussianScene::new(gaussians, DEMO_BACKGROUND, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::world_to_camera;
    use crate::event_io::accumulate_frame;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn gray_frames(values: &[&[f64]], w: usize, h: usize) -> Vec<(i64, Image)> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (i as i64 * 1000, Image::from_gray(w, h, v)))
            .collect()
    }

    #[test]
    fn four_frame_orbit_angles_and_look_at() {
        let orbit = OrbitSpec {
            n_frames: 4,
            elevation_deg: 0.0,
            radius: 3.0,
            ..OrbitSpec::default()
        };
        let intr = Intrinsics::centered(64, 64, 60.0);
        let poses = orbit.poses().unwrap();
        let expected = [[3.0, 0.0], [0.0, 3.0], [-3.0, 0.0], [0.0, -3.0]];
        for ((_, pose), e) in poses.iter().zip(expected) {
            let c = pose.center();
            assert!((c.x - e[0]).abs() < 1e-12 && (c.y - e[1]).abs() < 1e-12 && c.z.abs() < 1e-12);
            let uv = intr.project(&world_to_camera(pose, &Vec3::zeros()).xyz);
            assert!((uv[0] - intr.cx).abs() < 1e-6 && (uv[1] - intr.cy).abs() < 1e-6);
        }
        assert_eq!(orbit.trajectory().unwrap().keyframes().len(), 4);
    }

    #[test]
    fn full_orbit_does_not_wrap() {
        let orbit = OrbitSpec::default();
        let poses = orbit.poses().unwrap();
        let (first, last) = (poses[0].1.center(), poses[199].1.center());
        let angle = first.xy().angle(&last.xy()).to_degrees();
        assert!((angle - 1.8).abs() < 1e-9);
        assert_eq!(poses[199].0, 995_000);
        let bad = OrbitSpec { radius: 0.0, ..orbit };
        assert!(bad.poses().is_err());
    }

    #[test]
    fn constant_sequence_is_silent() {
        let f = [0.3; 6];
        let stream = simulate_events(&gray_frames(&[&f, &f, &f], 3, 2), &SimConfig::default()).unwrap();
        assert!(stream.is_empty());
    }

    #[test]
    fn step_of_quarter_gives_two_events() {
        let eps = 1e-3;
        let a = 0.2;
        let b = (a + eps) * 0.25f64.exp() - eps;
        let frames = gray_frames(&[&[a, 0.5], &[b, 0.5]], 2, 1);
        let stream = simulate_events(&frames, &SimConfig::default()).unwrap();
        assert_eq!(stream.len(), 2);
        assert!(stream.events().iter().all(|e| e.p == 1 && e.x == 0 && e.y == 0));
        assert_eq!(stream.events()[0].t, 500);
        assert_eq!(stream.events()[1].t, 1000);
    }

    #[test]
    fn darkening_gives_negative_events() {
        let frames = gray_frames(&[&[0.9, 0.8, 0.7], &[0.5, 0.4, 0.3], &[0.1, 0.1, 0.1]], 3, 1);
        let stream = simulate_events(&frames, &SimConfig::default()).unwrap();
        assert!(!stream.is_empty());
        assert!(stream.events().iter().all(|e| e.p == -1));
    }

    #[test]
    fn errors() {
        let f = [0.3; 6];
        assert!(simulate_events(&gray_frames(&[&f], 3, 2), &SimConfig::default()).is_err());
        let bad = SimConfig {
            threshold: 0.0,
            ..SimConfig::default()
        };
        assert!(simulate_events(&gray_frames(&[&f, &f], 3, 2), &bad).is_err());
    }

    #[test]
    fn demo_scene_renders_structure() {
        let scene = demo_scene();
        assert_eq!(scene.len(), 8);
        let orbit = OrbitSpec {
            n_frames: 8,
            ..OrbitSpec::default()
        };
        let (frames, traj) = render_orbit(
            &scene,
            &orbit,
            &Intrinsics::centered(64, 64, 64.0),
            &RenderSettings::default(),
        )
        .unwrap();
        assert_eq!(frames.len(), 8);
        assert_eq!(traj.keyframes().len(), 8);
        for (_, img) in &frames {
            let lum = img.luminance();
            let max = lum.iter().cloned().fold(0.0, f64::max);
            assert!(max > 0.5);
            assert!((lum[0] - 0.5).abs() < 1e-6, "corner shows background");
        }
    }

    fn random_frames(seed: u64, n: usize) -> Vec<(i64, Image)> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0;
        (0..n)
            .map(|_| {
                t += rng.gen_range(1..5000);
                (t, Image::from_fn(5, 4, |_, _| [rng.gen(), rng.gen(), rng.gen()]))
            })
            .collect()
    }

    proptest! {
        #[test]
        fn round_trip_within_threshold(seed in 0u64..300, delta in 0.05f64..0.5) {
            let frames = random_frames(seed, 6);
            let cfg = SimConfig { threshold: delta, ..SimConfig::default() };
            let stream = simulate_events(&frames, &cfg).unwrap();
            let (first, last) = (&frames[0], &frames[frames.len() - 1]);
            let frame = accumulate_frame(&stream, first.0, last.0).unwrap();
            let (l0, l1) = (first.1.luminance(), last.1.luminance());
            for p in 0..l0.len() {
                let d = (l1[p] + 1e-3).ln() - (l0[p] + 1e-3).ln();
                prop_assert!((frame.values[p] - d).abs() < delta);
            }
            let ev = stream.events();
            prop_assert!(ev.windows(2).all(|w| w[0].t <= w[1].t));
            prop_assert!(ev.iter().all(|e| e.t > first.0 && e.t <= last.0));
        }

        #[test]
        fn doubling_threshold_never_adds_events(seed in 0u64..300, delta in 0.03f64..0.4) {
            let frames = random_frames(seed, 8);
            let count = |d: f64| {
                let s = simulate_events(&frames, &SimConfig { threshold: d, ..SimConfig::default() }).unwrap();
                let mut c = vec![0usize; 20];
                for e in s.events() {
                    c[e.y as usize * 5 + e.x as usize] += 1;
                }
                c
            };
            let (a, b) = (count(delta), count(2.0 * delta));
            for p in 0..20 {
                prop_assert!(b[p] <= a[p], "pixel {}: {} > {}", p, b[p], a[p]);
            }
        }
    }
}
