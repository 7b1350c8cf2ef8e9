//! Real spherical harmonics up to degree 3 (Condon-Shortley phase, the sign
//! convention used by common splatting renderers) and their gradients.

use crate::math::Vec3;

pub const MAX_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions per channel for a degree.
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Offset added to the SH sum before clamping.
pub const COLOR_OFFSET: f64 = 0.5;

/// Basis values at a unit direction, plus their gradient w.r.t. the
/// (unnormalised) direction components.
pub fn basis_with_grad(degree: usize, d: &Vec3) -> ([f64; 16], [[f64; 3]; 16]) {
    let mut b = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    let (x, y, z) = (d.x, d.y, d.z);
    b[0] = C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
        g[1] = [0.0, -C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [-C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
        g[4] = [C2[0] * y, C2[0] * x, 0.0];
        g[5] = [0.0, C2[1] * z, C2[1] * y];
        g[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        g[7] = [C2[3] * z, 0.0, C2[3] * x];
        g[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = C3[0] * y * (3.0 * xx - yy);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = C3[5] * z * (xx - yy);
        b[15] = C3[6] * x * (xx - 3.0 * yy);
        g[9] = [6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
        g[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
        g[11] = [
            -2.0 * C3[2] * x * y,
            C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * C3[2] * y * z,
        ];
        g[12] = [
            -6.0 * C3[3] * x * z,
            -6.0 * C3[3] * y * z,
            C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * C3[4] * x * y,
            8.0 * C3[4] * x * z,
        ];
        g[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
        g[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
    }
    (b, g)
}

pub fn basis(degree: usize, d: &Vec3) -> [f64; 16] {
    basis_with_grad(degree, d).0
}

/// Unclamped colour: `sum_k coeff[k] * Y_k(d) + 0.5` per channel.
/// `coeffs` is laid out `[k * 3 + channel]`.
pub fn raw_color(coeffs: &[f64], degree: usize, d: &Vec3) -> [f64; 3] {
    let b = basis(degree, d);
    let mut c = [COLOR_OFFSET; 3];
    for (k, bk) in b.iter().enumerate().take(num_coeffs(degree)) {
        for (ch, cv) in c.iter_mut().enumerate() {
            *cv += coeffs[k * 3 + ch] * bk;
        }
    }
    c
}

/// View-dependent colour clamped to `[0, 1]`.
pub fn sh_to_color(coeffs: &[f64], degree: usize, view_dir: &Vec3) -> [f64; 3] {
    raw_color(coeffs, degree, view_dir).map(|v| v.clamp(0.0, 1.0))
}

/// SH DC coefficient that produces a given colour.
pub fn dc_for_color(c: f64) -> f64 {
    (c - COLOR_OFFSET) / C0
}
