//! The explicit Gaussian scene: parameters, covariance construction, random
//! initialisation and the JSON checkpoint format.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvgsError, Result};
use crate::math::{
    logit, quat_matrix_backward, quat_normalize, quat_normalize_backward, quat_to_matrix_unit, sigmoid, Mat3, Quat,
    Vec3, IDENTITY_QUAT,
};
use crate::rng::{streams, substream};
use crate::sh;

/// Initial opacity of randomly initialised Gaussians.
pub const INIT_OPACITY: f64 = 0.1;
/// Points used to estimate the initial isotropic scale.
const SCALE_SUBSAMPLE: usize = 1000;

/// One anisotropic Gaussian in unconstrained parameterisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vec3,
    /// Elementwise log of the axis scales.
    pub log_scale: Vec3,
    /// Raw quaternion `[w, x, y, z]`; normalised on use.
    pub rotation: Quat,
    /// Logit of the opacity.
    pub opacity_logit: f64,
    /// SH coefficients laid out `[k * 3 + channel]`.
    pub color_coeffs: Vec<f64>,
}

impl Gaussian {
    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Mat3 {
        build_covariance(&self.log_scale, &self.rotation)
    }

    /// An isotropic Gaussian with a constant colour.
    pub fn isotropic(position: Vec3, scale: f64, opacity: f64, rgb: [f64; 3], sh_degree: usize) -> Self {
        let mut color_coeffs = vec![0.0; sh::num_coeffs(sh_degree) * 3];
        for c in 0..3 {
            color_coeffs[c] = sh::dc_for_color(rgb[c]);
        }
        Self {
            position,
            log_scale: Vec3::repeat(scale.ln()),
            rotation: IDENTITY_QUAT,
            opacity_logit: logit(opacity),
            color_coeffs,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color_coeffs.iter().all(|v| v.is_finite())
    }
}

/// `R S S^T R^T` with `S = diag(exp(log_scale))`.
pub fn build_covariance(log_scale: &Vec3, rotation: &Quat) -> Mat3 {
    let r = quat_to_matrix_unit(&quat_normalize(rotation));
    let m = r * Mat3::from_diagonal(&log_scale.map(f64::exp));
    m * m.transpose()
}

/// Pulls `dL/dSigma` back to `(dL/dlog_scale, dL/drotation)`.
/// `grad_cov` is treated entrywise (both off-diagonal copies carry gradient).
pub fn covariance_backward(log_scale: &Vec3, rotation: &Quat, grad_cov: &Mat3) -> (Vec3, Quat) {
    let unit = quat_normalize(rotation);
    let r = quat_to_matrix_unit(&unit);
    let s = log_scale.map(f64::exp);
    let m = r * Mat3::from_diagonal(&s);
    let sym = grad_cov + grad_cov.transpose();
    let grad_m = sym * m;
    let mut grad_log_scale = Vec3::zeros();
    for k in 0..3 {
        let mut acc = 0.0;
        for i in 0..3 {
            acc += grad_m[(i, k)] * r[(i, k)];
        }
        grad_log_scale[k] = acc * s[k];
    }
    let grad_r = grad_m * Mat3::from_diagonal(&s);
    let grad_unit = quat_matrix_backward(&unit, &grad_r);
    (grad_log_scale, quat_normalize_backward(rotation, &grad_unit))
}

/// Offsets of each parameter class inside one Gaussian's flat parameter row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub sh_degree: usize,
}

impl ParamLayout {
    pub const POSITION: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;

    pub fn new(sh_degree: usize) -> Self {
        Self { sh_degree }
    }

    pub fn num_color(&self) -> usize {
        sh::num_coeffs(self.sh_degree) * 3
    }

    pub fn stride(&self) -> usize {
        Self::COLOR + self.num_color()
    }

    /// Parameter class of an offset within a row.
    pub fn class_of(&self, offset: usize) -> ParamClass {
        match offset {
            0..=2 => ParamClass::Position,
            3..=5 => ParamClass::LogScale,
            6..=9 => ParamClass::Rotation,
            10 => ParamClass::Opacity,
            _ => ParamClass::Color,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamClass {
    Position,
    LogScale,
    Rotation,
    Opacity,
    Color,
}

impl ParamClass {
    pub const ALL: [ParamClass; 5] = [
        ParamClass::Position,
        ParamClass::LogScale,
        ParamClass::Rotation,
        ParamClass::Opacity,
        ParamClass::Color,
    ];
}

impl Gaussian {
    pub fn write_row(&self, row: &mut [f64]) {
        row[0..3].copy_from_slice(self.position.as_slice());
        row[3..6].copy_from_slice(self.log_scale.as_slice());
        row[6..10].copy_from_slice(&self.rotation);
        row[10] = self.opacity_logit;
        row[11..].copy_from_slice(&self.color_coeffs);
    }

    pub fn read_row(&mut self, row: &[f64]) {
        self.position = Vec3::new(row[0], row[1], row[2]);
        self.log_scale = Vec3::new(row[3], row[4], row[5]);
        self.rotation = [row[6], row[7], row[8], row[9]];
        self.opacity_logit = row[10];
        self.color_coeffs.copy_from_slice(&row[11..]);
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> f64 {
        Vec3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
        .norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub background: [f64; 3],
    pub sh_degree: usize,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, background: [f64; 3], sh_degree: usize) -> Self {
        Self {
            gaussians,
            background,
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Radius of the sphere around the centroid that holds every Gaussian mean.
    pub fn extent(&self) -> f64 {
        if self.gaussians.is_empty() {
            return 0.0;
        }
        let centroid =
            self.gaussians.iter().fold(Vec3::zeros(), |acc, g| acc + g.position) / self.gaussians.len() as f64;
        self.gaussians
            .iter()
            .map(|g| (g.position - centroid).norm())
            .fold(0.0, f64::max)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.sh_degree)
    }

    /// All parameters, one row of `layout().stride()` values per Gaussian.
    pub fn flatten(&self) -> Vec<f64> {
        let stride = self.layout().stride();
        let mut out = vec![0.0; stride * self.len()];
        for (g, row) in self.gaussians.iter().zip(out.chunks_exact_mut(stride)) {
            g.write_row(row);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let stride = self.layout().stride();
        assert_eq!(flat.len(), stride * self.len());
        for (g, row) in self.gaussians.iter_mut().zip(flat.chunks_exact(stride)) {
            g.read_row(row);
        }
    }

    /// Renormalises every quaternion.
    pub fn normalize_rotations(&mut self) {
        for g in &mut self.gaussians {
            g.rotation = quat_normalize(&g.rotation);
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| EvgsError::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            sh_degree: self.sh_degree,
            background: self.background,
            position: self.gaussians.iter().map(|g| g.position.into()).collect(),
            log_scale: self.gaussians.iter().map(|g| g.log_scale.into()).collect(),
            rotation: self.gaussians.iter().map(|g| g.rotation).collect(),
            opacity_logit: self.gaussians.iter().map(|g| g.opacity_logit).collect(),
            color_coeffs: self.gaussians.iter().map(|g| g.color_coeffs.clone()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| EvgsError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(text)?;
        let n = f.position.len();
        if f.log_scale.len() != n || f.rotation.len() != n || f.opacity_logit.len() != n || f.color_coeffs.len() != n {
            return Err(EvgsError::Shape("checkpoint arrays differ in length".into()));
        }
        if f.sh_degree > sh::MAX_DEGREE {
            return Err(EvgsError::arg(format!("SH degree {} exceeds 3", f.sh_degree)));
        }
        let ncoef = sh::num_coeffs(f.sh_degree) * 3;
        let mut gaussians = Vec::with_capacity(n);
        for i in 0..n {
            if f.color_coeffs[i].len() != ncoef {
                return Err(EvgsError::Shape(format!(
                    "gaussian {i} has {} colour coefficients, expected {ncoef}",
                    f.color_coeffs[i].len()
                )));
            }
            gaussians.push(Gaussian {
                position: f.position[i].into(),
                log_scale: f.log_scale[i].into(),
                rotation: f.rotation[i],
                opacity_logit: f.opacity_logit[i],
                color_coeffs: f.color_coeffs[i].clone(),
            });
        }
        Ok(Self {
            gaussians,
            background: f.background,
            sh_degree: f.sh_degree,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    sh_degree: usize,
    background: [f64; 3],
    position: Vec<[f64; 3]>,
    log_scale: Vec<[f64; 3]>,
    rotation: Vec<[f64; 4]>,
    opacity_logit: Vec<f64>,
    color_coeffs: Vec<Vec<f64>>,
}

/// `n` Gaussians uniform in `bounds`: identity rotations, opacity 0.1,
/// mid-grey colour, isotropic scale equal to the mean nearest-neighbour
/// distance (estimated on a subsample).
pub fn init_random_cloud(
    n: usize,
    bounds: &Aabb,
    seed: u64,
    sh_degree: usize,
    background: [f64; 3],
) -> Result<GaussianScene> {
    if n == 0 {
        return Err(EvgsError::arg("random cloud needs at least one point"));
    }
    if bounds.is_degenerate() {
        return Err(EvgsError::arg("random cloud bounds are degenerate"));
    }
    if sh_degree > sh::MAX_DEGREE {
        return Err(EvgsError::arg(format!("SH degree {sh_degree} exceeds 3")));
    }
    let mut rng = substream(seed, streams::INIT_CLOUD);
    let positions: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(bounds.min[0]..=bounds.max[0]),
                rng.gen_range(bounds.min[1]..=bounds.max[1]),
                rng.gen_range(bounds.min[2]..=bounds.max[2]),
            )
        })
        .collect();
    let scale = mean_nearest_neighbor(&positions).unwrap_or(0.01 * bounds.extent());
    let gaussians = positions
        .into_iter()
        .map(|p| Gaussian::isotropic(p, scale, INIT_OPACITY, [0.5; 3], sh_degree))
        .collect();
    Ok(GaussianScene::new(gaussians, background, sh_degree))
}

fn mean_nearest_neighbor(points: &[Vec3]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let m = points.len().min(SCALE_SUBSAMPLE);
    let total: f64 = points[..m]
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    let mean = total / m as f64;
    (mean > 0.0).then_some(mean)
}
