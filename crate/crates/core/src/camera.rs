//! Pinhole intrinsics, world-to-camera poses, the perspective Jacobian and
//! pose interpolation along a keyframed trajectory.
//!
//! Camera frame: +x right, +y down, +z forward.

use std::fs;
use std::path::Path;

use nalgebra::Matrix2x3;
use serde::{Deserialize, Serialize};

use crate::error::{EvgsError, Result};
use crate::math::{
    matrix_to_quat, quat_mul, quat_norm, quat_normalize, quat_slerp, quat_to_matrix_unit, Mat3, Quat, Vec3,
    IDENTITY_QUAT,
};

pub const DEFAULT_NEAR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square-pixel camera with the principal point at the image centre.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(EvgsError::config("camera.fx", "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(EvgsError::config("camera.width", "resolution must be nonzero"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(EvgsError::config("camera.cx", "principal point outside the image"));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project(&self, p: &Vec3) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }
}

/// World-to-camera rigid transform: `p_cam = R p_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// A point expressed in camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPoint {
    pub xyz: Vec3,
    pub behind: bool,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: IDENTITY_QUAT,
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation: quat_normalize(&rotation),
            translation,
        }
    }

    pub fn from_matrix(rotation: &Mat3, translation: Vec3) -> Self {
        Self {
            rotation: matrix_to_quat(rotation),
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_matrix_unit(&self.rotation)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Pose) -> Pose {
        Pose {
            rotation: quat_normalize(&quat_mul(&self.rotation, &first.rotation)),
            translation: self.rotation_matrix() * first.translation + self.translation,
        }
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Pose> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(EvgsError::arg("look-at eye and target coincide"));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(EvgsError::arg("look-at up vector is parallel to the view direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Ok(Pose::from_matrix(&rot, -(rot * eye)))
    }
}

pub fn world_to_camera(pose: &Pose, point: &Vec3) -> CameraPoint {
    let xyz = pose.rotation_matrix() * point + pose.translation;
    CameraPoint {
        xyz,
        behind: xyz.z <= 0.0,
    }
}

/// Jacobian of the pixel projection at a camera-space point.
pub fn projection_jacobian(p: &Vec3, intr: &Intrinsics, near: f64) -> Result<Matrix2x3<f64>> {
    if p.z <= near {
        return Err(EvgsError::BehindCamera { z: p.z });
    }
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Ok(Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * p.x * iz2,
        0.0,
        intr.fy * iz,
        -intr.fy * p.y * iz2,
    ))
}

/// Keyframed poses with strictly increasing timestamps (microseconds).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    keyframes: Vec<(i64, Pose)>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<(i64, Pose)>) -> Result<Self> {
        if keyframes.len() < 2 {
            return Err(EvgsError::arg("a trajectory needs at least two keyframes"));
        }
        if keyframes.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(EvgsError::arg("trajectory timestamps must be strictly increasing"));
        }
        for (_, pose) in &keyframes {
            if (quat_norm(&pose.rotation) - 1.0).abs() > 1e-9 {
                return Err(EvgsError::arg("keyframe rotation is not a unit quaternion"));
            }
        }
        Ok(Self { keyframes })
    }

    pub fn keyframes(&self) -> &[(i64, Pose)] {
        &self.keyframes
    }

    pub fn start(&self) -> i64 {
        self.keyframes[0].0
    }

    pub fn end(&self) -> i64 {
        self.keyframes[self.keyframes.len() - 1].0
    }

    /// Pose at `t`, or a range error outside the keyframe span.
    pub fn pose_at(&self, t: i64) -> Result<Pose> {
        if t < self.start() || t > self.end() {
            return Err(EvgsError::Range {
                t: t.max(0) as u64,
                min: self.start().max(0) as u64,
                max: self.end().max(0) as u64,
            });
        }
        let i = self.keyframes.partition_point(|(kt, _)| *kt <= t);
        let (t0, p0) = self.keyframes[i - 1];
        if t0 == t {
            return Ok(p0);
        }
        let (t1, p1) = self.keyframes[i];
        let s = (t - t0) as f64 / (t1 - t0) as f64;
        Ok(Pose {
            rotation: quat_slerp(&p0.rotation, &p1.rotation, s),
            translation: p0.translation + (p1.translation - p0.translation) * s,
        })
    }

    /// Like [`Trajectory::pose_at`] but clamps `t` into the keyframe span.
    pub fn pose_at_clamped(&self, t: i64) -> Pose {
        self.pose_at(t.clamp(self.start(), self.end()))
            .expect("clamped time lies inside the trajectory")
    }

    pub fn save_json(&self, intr: &Intrinsics, path: &Path) -> Result<()> {
        let file = TrajectoryFile {
            convention: "w2c".into(),
            intrinsics: *intr,
            keyframes: self
                .keyframes
                .iter()
                .map(|(t, p)| KeyframeRecord {
                    t_us: *t,
                    qw: p.rotation[0],
                    qx: p.rotation[1],
                    qy: p.rotation[2],
                    qz: p.rotation[3],
                    tx: p.translation.x,
                    ty: p.translation.y,
                    tz: p.translation.z,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text).map_err(|e| EvgsError::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<(Trajectory, Intrinsics)> {
        let text = fs::read_to_string(path).map_err(|e| EvgsError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<(Trajectory, Intrinsics)> {
        let file: TrajectoryFile = serde_json::from_str(text)?;
        if file.convention != "w2c" {
            return Err(EvgsError::arg(format!(
                "unsupported pose convention `{}` (expected w2c)",
                file.convention
            )));
        }
        file.intrinsics.validate()?;
        let keyframes = file
            .keyframes
            .iter()
            .map(|k| (k.t_us, Pose::new([k.qw, k.qx, k.qy, k.qz], Vec3::new(k.tx, k.ty, k.tz))))
            .collect();
        Ok((Trajectory::new(keyframes)?, file.intrinsics))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    convention: String,
    intrinsics: Intrinsics,
    keyframes: Vec<KeyframeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyframeRecord {
    t_us: i64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
}
