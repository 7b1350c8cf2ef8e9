//! Differentiable splat renderer.
//!
//! Forward: each Gaussian is projected with the local affine (EWA)
//! approximation, low-pass dilated, globally sorted by depth and alpha
//! composited front to back at pixel centres `(x + 0.5, y + 0.5)`.
//! Backward: exact reverse-mode gradients for every Gaussian parameter.
//!
//! Work is split into a fixed number of row bands. Per-band partial
//! gradients are reduced in band order, so results are bit-identical for any
//! thread count.

use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;

use crate::camera::{projection_jacobian, world_to_camera, Intrinsics, Pose, DEFAULT_NEAR};
use crate::error::{EvgsError, Result};
use crate::image::Image;
use crate::math::{sigmoid, Mat3, Vec3};
use crate::scene::{covariance_backward, Gaussian, GaussianScene, ParamLayout};
use crate::sh;

/// Added to both diagonal entries of the projected covariance.
pub const DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Transmittance below which optional early termination stops a pixel.
pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;
const CULL_SIGMAS: f64 = 3.0;
const BANDS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub near: f64,
    /// Stop compositing a pixel once its transmittance would drop below
    /// 1e-4. Changes gradients slightly; finite-difference checks assume it
    /// is off.
    pub early_stop: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            near: DEFAULT_NEAR,
            early_stop: false,
        }
    }
}

/// A Gaussian projected to the image plane.
#[derive(Clone, Debug)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    /// `[a, b, c]` of the inverse covariance `[[a, b], [b, c]]`.
    pub inv_cov2d: [f64; 3],
    pub depth: f64,
    pub base_opacity: f64,
    pub color: [f64; 3],
    pub source: usize,
    raw_color: [f64; 3],
    cam_point: Vec3,
    view_dir: Vec3,
    view_dist: f64,
    /// Inclusive pixel bounds where alpha can reach 1/255.
    bbox: [i64; 4],
}

/// Projects one Gaussian; `None` when culled.
pub fn project_gaussian(
    g: &Gaussian,
    sh_degree: usize,
    source: usize,
    pose: &Pose,
    intr: &Intrinsics,
    settings: &RenderSettings,
) -> Option<Splat2D> {
    let cam = world_to_camera(pose, &g.position);
    if cam.xyz.z <= settings.near {
        return None;
    }
    let j = projection_jacobian(&cam.xyz, intr, settings.near).ok()?;
    let t = j * pose.rotation_matrix();
    let cov3 = g.covariance();
    let mut cov2d: Matrix2<f64> = t * cov3 * t.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += DILATION;
    cov2d[(1, 1)] += DILATION;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
    if !(det > 0.0) {
        return None;
    }
    let mean2d = intr.project(&cam.xyz);
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let r3 = CULL_SIGMAS * lambda_max.sqrt();
    let (w, h) = (intr.width as f64, intr.height as f64);
    if mean2d[0] + r3 < 0.0 || mean2d[0] - r3 > w || mean2d[1] + r3 < 0.0 || mean2d[1] - r3 > h {
        return None;
    }
    let base_opacity = g.opacity();
    let inv_cov2d = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];

    // alpha >= 1/255 needs the Mahalanobis distance q <= 2 ln(255 sigma).
    let q_max = 2.0 * (base_opacity / ALPHA_MIN).ln();
    let bbox = if q_max > 0.0 {
        let rx = (q_max * cov2d[(0, 0)]).sqrt();
        let ry = (q_max * cov2d[(1, 1)]).sqrt();
        [
            ((mean2d[0] - rx - 0.5).floor() as i64 - 1).max(0),
            ((mean2d[0] + rx - 0.5).ceil() as i64 + 1).min(intr.width as i64 - 1),
            ((mean2d[1] - ry - 0.5).floor() as i64 - 1).max(0),
            ((mean2d[1] + ry - 0.5).ceil() as i64 + 1).min(intr.height as i64 - 1),
        ]
    } else {
        [0, -1, 0, -1]
    };

    let center = pose.center();
    let v = g.position - center;
    let view_dist = v.norm();
    let view_dir = if view_dist > 0.0 { v / view_dist } else { Vec3::z() };
    let raw_color = sh::raw_color(&g.color_coeffs, sh_degree, &view_dir);
    Some(Splat2D {
        mean2d,
        cov2d,
        inv_cov2d,
        depth: cam.xyz.z,
        base_opacity,
        color: raw_color.map(|c| c.clamp(0.0, 1.0)),
        source,
        raw_color,
        cam_point: cam.xyz,
        view_dir,
        view_dist,
        bbox,
    })
}

#[inline]
fn splat_alpha(s: &Splat2D, px: f64, py: f64) -> (f64, f64, f64, f64) {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let [a, b, c] = s.inv_cov2d;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let gauss = power.exp();
    (s.base_opacity * gauss, gauss, dx, dy)
}

/// Per-pixel compositing lists in CSR form: for pixel `p`, entries
/// `offsets[p]..offsets[p] + used[p]` are the splats that contributed, in
/// front-to-back order.
#[derive(Clone, Debug, Default)]
pub struct BlendRecords {
    pub offsets: Vec<usize>,
    pub used: Vec<usize>,
    pub splat: Vec<u32>,
    pub alpha: Vec<f64>,
    pub final_transmittance: Vec<f64>,
}

impl BlendRecords {
    /// `(splat index into the sorted list, alpha)` for one pixel.
    pub fn pixel(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = self.offsets[p];
        (start..start + self.used[p]).map(move |i| (self.splat[i] as usize, self.alpha[i]))
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Visible splats sorted by depth (ties by source index).
    pub splats: Vec<Splat2D>,
    pub records: BlendRecords,
}

pub fn render(scene: &GaussianScene, pose: &Pose, intr: &Intrinsics, settings: &RenderSettings) -> RenderOutput {
    let mut splats: Vec<Splat2D> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, scene.sh_degree, i, pose, intr, settings))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source.cmp(&b.source)));

    let (w, h) = (intr.width, intr.height);
    let npix = w * h;

    // Candidate lists: count, prefix-sum, fill (in depth order).
    let mut counts = vec![0usize; npix];
    for s in &splats {
        let [x0, x1, y0, y1] = s.bbox;
        for y in y0..=y1 {
            for x in x0..=x1 {
                counts[y as usize * w + x as usize] += 1;
            }
        }
    }
    let mut offsets = Vec::with_capacity(npix + 1);
    let mut total = 0;
    for c in &counts {
        offsets.push(total);
        total += c;
    }
    offsets.push(total);
    let mut splat_idx = vec![0u32; total];
    let mut cursor = offsets[..npix].to_vec();
    for (si, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bbox;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = y as usize * w + x as usize;
                splat_idx[cursor[p]] = si as u32;
                cursor[p] += 1;
            }
        }
    }

    // Composite each band of rows independently; survivors are compacted to
    // the front of each pixel's candidate slot.
    let rows_per_band = h.div_ceil(BANDS).max(1);
    let bg = scene.background;
    let band_results: Vec<_> = (0..h)
        .step_by(rows_per_band)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|y0| {
            let y1 = (y0 + rows_per_band).min(h);
            let p0 = y0 * w;
            let p1 = y1 * w;
            let base = offsets[p0];
            let mut local_idx = splat_idx[base..offsets[p1]].to_vec();
            let mut local_alpha = vec![0.0; local_idx.len()];
            let mut used = vec![0usize; p1 - p0];
            let mut final_t = vec![0.0; p1 - p0];
            let mut rgb = vec![0.0; (p1 - p0) * 3];
            for p in p0..p1 {
                let (x, y) = (p % w, p / w);
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let start = offsets[p] - base;
                let end = offsets[p + 1] - base;
                let mut t = 1.0;
                let mut c = [0.0; 3];
                let mut n = 0;
                for k in start..end {
                    let si = local_idx[k];
                    let s = &splats[si as usize];
                    let (alpha, _, _, _) = splat_alpha(s, px, py);
                    let alpha = alpha.min(ALPHA_MAX);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    if settings.early_stop && t * (1.0 - alpha) < EARLY_STOP_TRANSMITTANCE {
                        break;
                    }
                    let wgt = alpha * t;
                    for ch in 0..3 {
                        c[ch] += s.color[ch] * wgt;
                    }
                    t *= 1.0 - alpha;
                    local_idx[start + n] = si;
                    local_alpha[start + n] = alpha;
                    n += 1;
                }
                let q = p - p0;
                used[q] = n;
                final_t[q] = t;
                for ch in 0..3 {
                    rgb[q * 3 + ch] = (c[ch] + t * bg[ch]).clamp(0.0, 1.0);
                }
            }
            (local_idx, local_alpha, used, final_t, rgb)
        })
        .collect();

    let mut image = Image::new(w, h);
    let mut used = Vec::with_capacity(npix);
    let mut final_transmittance = Vec::with_capacity(npix);
    let mut splat_out = Vec::with_capacity(total);
    let mut alpha_out = Vec::with_capacity(total);
    let mut pix = 0;
    for (idx, alpha, u, ft, rgb) in band_results {
        splat_out.extend(idx);
        alpha_out.extend(alpha);
        used.extend(u);
        final_transmittance.extend(ft);
        let n = rgb.len();
        image.data[pix..pix + n].copy_from_slice(&rgb);
        pix += n;
    }
    RenderOutput {
        image,
        splats,
        records: BlendRecords {
            offsets,
            used,
            splat: splat_out,
            alpha: alpha_out,
            final_transmittance,
        },
    }
}

/// Gradients for every Gaussian, in the flat layout of
/// [`GaussianScene::flatten`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
    /// Summed 2D mean gradient norm per Gaussian (pixel units), across renders.
    pub mean2d_grad_norm: Vec<f64>,
    /// Number of renders in which each Gaussian was visible.
    pub visible_count: Vec<u32>,
}

impl ParamGradients {
    pub fn zeros(scene: &GaussianScene) -> Self {
        let layout = scene.layout();
        Self {
            layout,
            data: vec![0.0; layout.stride() * scene.len()],
            mean2d_grad_norm: vec![0.0; scene.len()],
            visible_count: vec![0; scene.len()],
        }
    }

    pub fn num_gaussians(&self) -> usize {
        self.mean2d_grad_norm.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let s = self.layout.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.layout.stride();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &ParamGradients) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        for (a, b) in self.mean2d_grad_norm.iter_mut().zip(&other.mean2d_grad_norm) {
            *a += b;
        }
        for (a, b) in self.visible_count.iter_mut().zip(&other.visible_count) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        let s = self.layout.stride();
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(EvgsError::NonFiniteGradient { index: i / s }),
            None => Ok(()),
        }
    }
}

/// Per-splat image-space gradient accumulators.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    color: [f64; 3],
    opacity: f64,
    mean2d: [f64; 2],
    /// d/da, d/db (b as one scalar used twice), d/dc of the inverse covariance.
    conic: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for i in 0..3 {
            self.color[i] += o.color[i];
            self.conic[i] += o.conic[i];
        }
        self.opacity += o.opacity;
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
    }
}

/// Exact gradients of `sum(dl_dimage * image)` w.r.t. every Gaussian
/// parameter. `forward` must come from [`render`] on the same inputs.
pub fn render_backward(
    scene: &GaussianScene,
    pose: &Pose,
    intr: &Intrinsics,
    forward: &RenderOutput,
    dl_dimage: &[f64],
) -> Result<ParamGradients> {
    let (w, h) = (intr.width, intr.height);
    if dl_dimage.len() != w * h * 3 {
        return Err(EvgsError::Shape(format!(
            "image gradient has {} values, expected {}",
            dl_dimage.len(),
            w * h * 3
        )));
    }
    let splats = &forward.splats;
    let rec = &forward.records;
    let bg = scene.background;
    let rows_per_band = h.div_ceil(BANDS).max(1);

    let partials: Vec<Vec<SplatGrad>> = (0..h)
        .step_by(rows_per_band)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|y0| {
            let y1 = (y0 + rows_per_band).min(h);
            let mut grads = vec![SplatGrad::default(); splats.len()];
            let mut trans = Vec::new();
            for p in y0 * w..y1 * w {
                let g = [dl_dimage[p * 3], dl_dimage[p * 3 + 1], dl_dimage[p * 3 + 2]];
                if g == [0.0; 3] {
                    continue;
                }
                let start = rec.offsets[p];
                let n = rec.used[p];
                trans.clear();
                let mut t = 1.0;
                for k in start..start + n {
                    trans.push(t);
                    t *= 1.0 - rec.alpha[k];
                }
                let t_final = rec.final_transmittance[p];
                let (px, py) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
                let mut behind = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
                for j in (0..n).rev() {
                    let k = start + j;
                    let si = rec.splat[k] as usize;
                    let s = &splats[si];
                    let alpha = rec.alpha[k];
                    let t_i = trans[j];
                    let sg = &mut grads[si];
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        sg.color[ch] += g[ch] * alpha * t_i;
                        d_alpha += g[ch] * (s.color[ch] * t_i - behind[ch] / (1.0 - alpha));
                    }
                    for ch in 0..3 {
                        behind[ch] += s.color[ch] * alpha * t_i;
                    }
                    let (raw_alpha, gauss, dx, dy) = splat_alpha(s, px, py);
                    if raw_alpha > ALPHA_MAX {
                        continue;
                    }
                    sg.opacity += d_alpha * gauss;
                    let d_power = d_alpha * raw_alpha;
                    let [a, b, c] = s.inv_cov2d;
                    // power = -1/2 (a dx^2 + 2 b dx dy + c dy^2), dx = px - mx
                    sg.mean2d[0] += d_power * (a * dx + b * dy);
                    sg.mean2d[1] += d_power * (b * dx + c * dy);
                    sg.conic[0] += -0.5 * d_power * dx * dx;
                    sg.conic[1] += -d_power * dx * dy;
                    sg.conic[2] += -0.5 * d_power * dy * dy;
                }
            }
            grads
        })
        .collect();

    let mut totals = vec![SplatGrad::default(); splats.len()];
    for band in &partials {
        for (t, g) in totals.iter_mut().zip(band) {
            t.add(g);
        }
    }

    let mut out = ParamGradients::zeros(scene);
    let layout = out.layout;
    let rot_w = pose.rotation_matrix();
    let per_splat: Vec<(usize, Vec<f64>, f64)> = splats
        .par_iter()
        .zip(totals.par_iter())
        .map(|(s, sg)| {
            let g = &scene.gaussians[s.source];
            let mut row = vec![0.0; layout.stride()];
            splat_backward(g, scene.sh_degree, s, sg, &rot_w, intr, &mut row);
            let n2d = (sg.mean2d[0] * sg.mean2d[0] + sg.mean2d[1] * sg.mean2d[1]).sqrt();
            (s.source, row, n2d)
        })
        .collect();
    for (src, row, n2d) in per_splat {
        out.row_mut(src).copy_from_slice(&row);
        out.mean2d_grad_norm[src] = n2d;
        out.visible_count[src] = 1;
    }
    out.check_finite()?;
    Ok(out)
}

fn splat_backward(
    g: &Gaussian,
    sh_degree: usize,
    s: &Splat2D,
    sg: &SplatGrad,
    rot_w: &Mat3,
    intr: &Intrinsics,
    row: &mut [f64],
) {
    // Colour: clamp, SH basis, view direction.
    let (basis, dbasis) = sh::basis_with_grad(sh_degree, &s.view_dir);
    let ncoef = sh::num_coeffs(sh_degree);
    let mut d_raw = [0.0; 3];
    for ch in 0..3 {
        if s.raw_color[ch] >= 0.0 && s.raw_color[ch] <= 1.0 {
            d_raw[ch] = sg.color[ch];
        }
    }
    let mut d_dir = Vec3::zeros();
    for k in 0..ncoef {
        for ch in 0..3 {
            row[ParamLayout::COLOR + k * 3 + ch] = basis[k] * d_raw[ch];
            let coef = g.color_coeffs[k * 3 + ch] * d_raw[ch];
            for axis in 0..3 {
                d_dir[axis] += coef * dbasis[k][axis];
            }
        }
    }
    let mut d_pos = if s.view_dist > 0.0 {
        (d_dir - s.view_dir * s.view_dir.dot(&d_dir)) / s.view_dist
    } else {
        Vec3::zeros()
    };

    // Opacity logistic.
    let sigma = sigmoid(g.opacity_logit);
    row[ParamLayout::OPACITY] = sg.opacity * sigma * (1.0 - sigma);

    // Inverse 2D covariance -> 2D covariance.
    let conic = Matrix2::new(s.inv_cov2d[0], s.inv_cov2d[1], s.inv_cov2d[1], s.inv_cov2d[2]);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -(conic * g_conic * conic);

    // cov2d = T Sigma T^T + dilation, T = J R_w.
    let p = s.cam_point;
    let j = projection_jacobian(&p, intr, 0.0).expect("projected splat lies in front");
    let t: Matrix2x3<f64> = j * rot_w;
    let cov3 = g.covariance();
    let g_cov3: Mat3 = t.transpose() * g_cov2d * t;
    let g_t: Matrix2x3<f64> = (g_cov2d + g_cov2d.transpose()) * t * cov3;
    let g_j: Matrix2x3<f64> = g_t * rot_w.transpose();

    let (d_log_scale, d_rot) = covariance_backward(&g.log_scale, &g.rotation, &g_cov3);
    row[ParamLayout::LOG_SCALE..ParamLayout::LOG_SCALE + 3].copy_from_slice(d_log_scale.as_slice());
    row[ParamLayout::ROTATION..ParamLayout::ROTATION + 4].copy_from_slice(&d_rot);

    // Camera-space point: through J and the projected mean.
    let (fx, fy) = (intr.fx, intr.fy);
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_cam = Vec3::zeros();
    d_cam.x += sg.mean2d[0] * fx * iz;
    d_cam.y += sg.mean2d[1] * fy * iz;
    d_cam.z += -sg.mean2d[0] * fx * p.x * iz2 - sg.mean2d[1] * fy * p.y * iz2;
    // J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
    d_cam.x += g_j[(0, 2)] * (-fx * iz2);
    d_cam.y += g_j[(1, 2)] * (-fy * iz2);
    d_cam.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * p.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * p.y * iz3);
    d_pos += rot_w.transpose() * d_cam;
    row[ParamLayout::POSITION..ParamLayout::POSITION + 3].copy_from_slice(d_pos.as_slice());
}
