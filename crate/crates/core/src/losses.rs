//! Training losses (event supervision, prior L1, SSIM regulariser, weighted
//! total) and evaluation metrics (PSNR, SSIM, log-affine alignment).
//!
//! Every loss used for optimisation also returns its gradient w.r.t. the
//! rendered image(s) so the trainer can chain it into the renderer.

use serde::{Deserialize, Serialize};

use crate::error::{EvgsError, Result};
use crate::event_io::EventFrame;
use crate::image::{Image, LUMA};

pub const DEFAULT_LAMBDA_EVENT: f64 = 0.02;
pub const DEFAULT_LAMBDA_REG: f64 = 0.002;
pub const DEFAULT_LOG_EPSILON: f64 = 1e-3;
/// Floor inside the log used by [`log_affine_align`].
pub const ALIGN_EPSILON: f64 = 1e-3;
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_event: f64,
    pub lambda_reg: f64,
    pub log_epsilon: f64,
    /// Compare each colour channel against the event frame instead of luminance.
    pub per_channel: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_event: DEFAULT_LAMBDA_EVENT,
            lambda_reg: DEFAULT_LAMBDA_REG,
            log_epsilon: DEFAULT_LOG_EPSILON,
            per_channel: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_event >= 0.0) {
            return Err(EvgsError::config("loss.lambda_event", "must be >= 0"));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(EvgsError::config("loss.lambda_reg", "must be >= 0"));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(EvgsError::config("loss.log_epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "iter")]
    pub iteration: usize,
    #[serde(rename = "event")]
    pub event_loss: f64,
    #[serde(rename = "reg")]
    pub reg_loss: f64,
    pub prior_l1: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.event_loss.is_finite() && self.reg_loss.is_finite() && self.prior_l1.is_finite() && self.total.is_finite()
    }
}

fn check_frame(img: &Image, frame: &EventFrame) -> Result<()> {
    if img.width != frame.width || img.height != frame.height {
        return Err(EvgsError::Shape(format!(
            "image {}x{} vs event frame {}x{}",
            img.width, img.height, frame.width, frame.height
        )));
    }
    Ok(())
}

/// Event loss with gradients w.r.t. both rendered images.
///
/// Residual per pixel: `log(L(I_t2) + eps) - log(L(I_t1) + eps) - E`, where
/// `L` is luminance (or each channel in per-channel mode); the loss is the
/// mean squared residual.
pub fn event_loss_with_grad(
    i_t1: &Image,
    i_t2: &Image,
    frame: &EventFrame,
    eps: f64,
    per_channel: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    i_t1.check_shape(i_t2)?;
    check_frame(i_t1, frame)?;
    let npix = i_t1.num_pixels();
    let mut g1 = vec![0.0; npix * 3];
    let mut g2 = vec![0.0; npix * 3];
    let mut sum = 0.0;
    if per_channel {
        let n = (npix * 3) as f64;
        for p in 0..npix {
            for ch in 0..3 {
                let k = p * 3 + ch;
                let (a, b) = (i_t1.data[k] + eps, i_t2.data[k] + eps);
                let r = b.ln() - a.ln() - frame.values[p];
                sum += r * r;
                g2[k] = 2.0 * r / (n * b);
                g1[k] = -2.0 * r / (n * a);
            }
        }
        return Ok((sum / n, g1, g2));
    }
    let n = npix as f64;
    let (l1, l2) = (i_t1.luminance(), i_t2.luminance());
    for p in 0..npix {
        let (a, b) = (l1[p] + eps, l2[p] + eps);
        let r = b.ln() - a.ln() - frame.values[p];
        sum += r * r;
        let (d2, d1) = (2.0 * r / (n * b), -2.0 * r / (n * a));
        for ch in 0..3 {
            g2[p * 3 + ch] = d2 * LUMA[ch];
            g1[p * 3 + ch] = d1 * LUMA[ch];
        }
    }
    Ok((sum / n, g1, g2))
}

pub fn event_loss(i_t1: &Image, i_t2: &Image, frame: &EventFrame, eps: f64) -> Result<f64> {
    Ok(event_loss_with_grad(i_t1, i_t2, frame, eps, false)?.0)
}

/// Mean absolute per-channel difference and its gradient w.r.t. `render`.
pub fn prior_l1_with_grad(prior: &Image, render: &Image) -> Result<(f64, Vec<f64>)> {
    prior.check_shape(render)?;
    let n = render.data.len() as f64;
    let mut sum = 0.0;
    let grad = prior
        .data
        .iter()
        .zip(&render.data)
        .map(|(&p, &r)| {
            let d = r - p;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, grad))
}

pub fn prior_l1_loss(prior: &Image, render: &Image) -> Result<f64> {
    Ok(prior_l1_with_grad(prior, render)?.0)
}

/// Normalised 1D Gaussian taps.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable "valid" filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * plane[y * w + x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a valid-size map back to full size.
fn filter_adjoint(map: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (k, t) in taps.iter().enumerate() {
                tmp[(y + k) * ow + x] += t * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (k, t) in taps.iter().enumerate() {
                out[y * w + x + k] += t * v;
            }
        }
    }
    out
}

/// SSIM of one plane and, optionally, its gradient w.r.t. `b`.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let taps = gaussian_taps();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let e_aa = filter_valid(&aa, w, h, &taps);
    let e_bb = filter_valid(&bb, w, h, &taps);
    let e_ab = filter_valid(&ab, w, h, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    let (mut ga, mut gb, mut gc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for q in 0..n {
        let (ma, mb) = (mu_a[q], mu_b[q]);
        let var_a = e_aa[q] - ma * ma;
        let var_b = e_bb[q] - mb * mb;
        let cov = e_ab[q] - ma * mb;
        let n1 = 2.0 * ma * mb + SSIM_C1;
        let n2 = 2.0 * cov + SSIM_C2;
        let d1 = ma * ma + mb * mb + SSIM_C1;
        let d2 = var_a + var_b + SSIM_C2;
        let s = (n1 * n2) / (d1 * d2);
        total += s;
        if want_grad {
            let ds_dmb = (2.0 * ma * n2) / (d1 * d2) - s * 2.0 * mb / d1;
            let ds_dvar_b = -s / d2;
            let ds_dcov = 2.0 * n1 / (d1 * d2);
            // ds/db_p = w(p - q) [ds_dmb + 2 ds_dvar_b (b_p - mb) + ds_dcov (a_p - ma)]
            ga[q] = (ds_dmb - 2.0 * ds_dvar_b * mb - ds_dcov * ma) / n as f64;
            gb[q] = 2.0 * ds_dvar_b / n as f64;
            gc[q] = ds_dcov / n as f64;
        }
    }
    let grad = want_grad.then(|| {
        let sa = filter_adjoint(&ga, w, h, &taps);
        let sb = filter_adjoint(&gb, w, h, &taps);
        let sc = filter_adjoint(&gc, w, h, &taps);
        (0..w * h).map(|p| sa[p] + b[p] * sb[p] + a[p] * sc[p]).collect()
    });
    (total / n as f64, grad)
}

fn check_ssim_shape(a: &Image, b: &Image) -> Result<()> {
    a.check_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(EvgsError::arg(format!(
            "SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, valid windows only),
/// averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_shape(a, b)?;
    let mut total = 0.0;
    for ch in 0..3 {
        total += ssim_plane(&a.channel(ch), &b.channel(ch), a.width, a.height, false).0;
    }
    Ok(total / 3.0)
}

/// SSIM and its gradient w.r.t. `b` (interleaved RGB layout).
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    check_ssim_shape(a, b)?;
    let mut total = 0.0;
    let mut grad = vec![0.0; b.data.len()];
    for ch in 0..3 {
        let (v, g) = ssim_plane(&a.channel(ch), &b.channel(ch), a.width, a.height, true);
        total += v;
        for (p, gv) in g.unwrap().into_iter().enumerate() {
            grad[p * 3 + ch] = gv / 3.0;
        }
    }
    Ok((total / 3.0, grad))
}

/// `1 - SSIM(prior, render)`.
pub fn reg_loss(prior: &Image, render: &Image) -> Result<f64> {
    Ok(1.0 - ssim(prior, render)?)
}

/// `1 - SSIM(prior, render)` and its gradient w.r.t. `render`.
pub fn reg_loss_with_grad(prior: &Image, render: &Image) -> Result<(f64, Vec<f64>)> {
    let (s, mut g) = ssim_with_grad(prior, render)?;
    for v in &mut g {
        *v = -*v;
    }
    Ok((1.0 - s, g))
}

pub fn total_loss(event: f64, reg: f64, weights: &LossWeights) -> f64 {
    weights.lambda_event * event + weights.lambda_reg * reg
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// PSNR over a unit dynamic range, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Result of a per-channel log-affine fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub image: Image,
    /// `(scale, offset)` per channel, in log space.
    pub coeffs: [(f64, f64); 3],
    /// Set when some channel of `pred` was constant, so only the offset was fit.
    pub degenerate: bool,
}

/// Fits `a * log(pred + eps) + b ~ log(ref + eps)` per channel by least
/// squares and returns `exp(a * log(pred + eps) + b) - eps`, clamped to `[0, 1]`.
pub fn log_affine_align(pred: &Image, reference: &Image) -> Result<Alignment> {
    pred.check_shape(reference)?;
    let eps = ALIGN_EPSILON;
    let mut out = pred.clone();
    let mut coeffs = [(1.0, 0.0); 3];
    let mut degenerate = false;
    for ch in 0..3 {
        let xs: Vec<f64> = pred.channel(ch).iter().map(|v| (v.max(0.0) + eps).ln()).collect();
        let ys: Vec<f64> = reference.channel(ch).iter().map(|v| (v.max(0.0) + eps).ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
        let (a, b) = if sxx <= 1e-12 * n {
            degenerate = true;
            (0.0, my)
        } else {
            let a = sxy / sxx;
            (a, my - a * mx)
        };
        coeffs[ch] = (a, b);
        for (p, x) in xs.iter().enumerate() {
            out.data[p * 3 + ch] = ((a * x + b).exp() - eps).clamp(0.0, 1.0);
        }
    }
    Ok(Alignment {
        image: out,
        coeffs,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_image(w: usize, h: usize, seed: u64, lo: f64, hi: f64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| {
            [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
        })
    }

    fn frame(w: usize, h: usize, values: Vec<f64>) -> EventFrame {
        EventFrame {
            width: w,
            height: h,
            values,
            t1: 0,
            t2: 1,
        }
    }

    /// Smooth content resembling a rendered view.
    fn smooth_image(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            [
                0.15 + 0.8 * (0.5 + 0.5 * (6.0 * u).sin() * (4.0 * v).cos()),
                0.2 + 0.7 * u * v,
                0.3 + 0.6 * (1.0 - u) * (0.5 + 0.5 * (9.0 * v).sin()),
            ]
        })
    }

    #[test]
    fn event_loss_zero_on_consistent_pair() {
        let eps = DEFAULT_LOG_EPSILON;
        let i1 = random_image(8, 8, 1, 0.05, 0.6);
        let e: Vec<f64> = (0..64).map(|k| 0.1 * ((k % 5) as f64 - 2.0)).collect();
        let l1 = i1.luminance();
        // Scale each pixel so the luminance satisfies the log identity.
        let i2 = Image::from_fn(8, 8, |x, y| {
            let p = y * 8 + x;
            let target = (l1[p] + eps) * e[p].exp() - eps;
            let k = target / l1[p];
            let px = i1.pixel(x, y);
            [px[0] * k, px[1] * k, px[2] * k]
        });
        let loss = event_loss(&i1, &i2, &frame(8, 8, e), eps).unwrap();
        assert!(loss.abs() <= 1e-12, "{loss}");
    }

    #[test]
    fn event_loss_single_residual() {
        let i = random_image(6, 5, 2, 0.1, 0.9);
        let mut e = vec![0.0; 30];
        e[7] = 0.1;
        let loss = event_loss(&i, &i, &frame(6, 5, e), 1e-3).unwrap();
        assert!((loss - 0.01 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn event_loss_matches_per_pixel_recomputation() {
        let (i1, i2) = (random_image(8, 8, 3, 0.0, 1.0), random_image(8, 8, 4, 0.0, 1.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let e: Vec<f64> = (0..64).map(|_| 0.1 * rng.gen_range(-5..=5) as f64).collect();
        let loss = event_loss(&i1, &i2, &frame(8, 8, e.clone()), 1e-3).unwrap();
        let mut acc = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let (a, b) = (i1.pixel(x, y), i2.pixel(x, y));
                let la = 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2];
                let lb = 0.299 * b[0] + 0.587 * b[1] + 0.114 * b[2];
                let r = (lb + 1e-3).ln() - (la + 1e-3).ln() - e[y * 8 + x];
                acc += r * r;
            }
        }
        assert!((loss - acc / 64.0).abs() < 1e-12);
        assert!(event_loss(&i1, &random_image(8, 7, 1, 0.0, 1.0), &frame(8, 8, e.clone()), 1e-3).is_err());
        assert!(event_loss(&i1, &i2, &frame(4, 16, e), 1e-3).is_err());
    }

    #[test]
    fn event_loss_gradient_matches_finite_differences() {
        let (i1, i2) = (random_image(5, 4, 6, 0.05, 1.0), random_image(5, 4, 7, 0.05, 1.0));
        let e: Vec<f64> = (0..20).map(|k| 0.1 * (k as f64 - 10.0) / 3.0).collect();
        let f = frame(5, 4, e);
        for per_channel in [false, true] {
            let (_, g1, g2) = event_loss_with_grad(&i1, &i2, &f, 1e-3, per_channel).unwrap();
            let h = 1e-7;
            for k in 0..i1.data.len() {
                for (which, g) in [(0, &g1), (1, &g2)] {
                    let mut a = if which == 0 { i1.clone() } else { i2.clone() };
                    a.data[k] += h;
                    let lp = if which == 0 {
                        event_loss_with_grad(&a, &i2, &f, 1e-3, per_channel).unwrap().0
                    } else {
                        event_loss_with_grad(&i1, &a, &f, 1e-3, per_channel).unwrap().0
                    };
                    a.data[k] -= 2.0 * h;
                    let lm = if which == 0 {
                        event_loss_with_grad(&a, &i2, &f, 1e-3, per_channel).unwrap().0
                    } else {
                        event_loss_with_grad(&i1, &a, &f, 1e-3, per_channel).unwrap().0
                    };
                    let fd = (lp - lm) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0), "{fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn prior_l1_cases() {
        let a = random_image(4, 4, 8, 0.0, 1.0);
        assert_eq!(prior_l1_loss(&a, &a).unwrap(), 0.0);
        let z = Image::new(5, 3);
        let q = Image::filled(5, 3, [0.25; 3]);
        assert!((prior_l1_loss(&z, &q).unwrap() - 0.25).abs() < 1e-15);
        let b = random_image(4, 4, 9, 0.0, 1.0);
        let brute: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / 48.0;
        assert!((prior_l1_loss(&a, &b).unwrap() - brute).abs() < 1e-12);
        assert!(prior_l1_loss(&a, &z).is_err());
    }

    /// Direct windowed SSIM: explicit 2D window sums at every valid centre.
    fn reference_ssim(a: &Image, b: &Image) -> f64 {
        let half = 5i64;
        let mut w2 = [[0.0; 11]; 11];
        let mut s = 0.0;
        for i in 0..11 {
            for j in 0..11 {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                w2[i][j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                s += w2[i][j];
            }
        }
        let mut total = 0.0;
        for ch in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for cy in half..(a.height as i64 - half) {
                for cx in half..(a.width as i64 - half) {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let x = (cx - half + j as i64) as usize;
                            let y = (cy - half + i as i64) as usize;
                            let wgt = w2[i][j] / s;
                            let (va, vb) = (a.pixel(x, y)[ch], b.pixel(x, y)[ch]);
                            ma += wgt * va;
                            mb += wgt * vb;
                            saa += wgt * va * va;
                            sbb += wgt * vb * vb;
                            sab += wgt * va * vb;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    acc +=
                        ((2.0 * ma * mb + 1e-4) * (2.0 * cov + 9e-4)) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = random_image(20, 16, 10, 0.0, 1.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let z = Image::new(16, 16);
        let o = Image::filled(16, 16, [1.0; 3]);
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&z, &o).unwrap() - expected).abs() < 1e-6);
        assert!((reg_loss(&z, &o).unwrap() - (1.0 - expected)).abs() < 1e-6);
        assert!(reg_loss(&a, &a).unwrap().abs() < 1e-9);
        assert!(ssim(&Image::new(10, 30), &Image::new(10, 30)).is_err());
    }

    #[test]
    fn ssim_matches_direct_windowed_reference() {
        let a = random_image(32, 32, 11, 0.0, 1.0);
        let b = random_image(32, 32, 12, 0.0, 1.0);
        assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs() < 1e-6);
        let c = smooth_image(32, 32);
        assert!((ssim(&a, &c).unwrap() - reference_ssim(&a, &c)).abs() < 1e-6);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random_image(14, 13, 13, 0.0, 1.0);
        let b = random_image(14, 13, 14, 0.0, 1.0);
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        for k in (0..b.data.len()).step_by(7) {
            let mut bp = b.clone();
            bp.data[k] += h;
            let mut bm = b.clone();
            bm.data[k] -= h;
            let fd = (ssim(&a, &bp).unwrap() - ssim(&a, &bm).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "{k}: {fd} vs {}", g[k]);
        }
        let (r, rg) = reg_loss_with_grad(&a, &b).unwrap();
        assert!((r - (1.0 - ssim(&a, &b).unwrap())).abs() < 1e-15);
        assert!((rg[3] + g[3]).abs() < 1e-15);
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 1.0, &w) - 0.022).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, &w), 0.0);
    }

    #[test]
    fn psnr_cases() {
        let a = random_image(8, 8, 15, 0.0, 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let z = Image::new(8, 8);
        let o = Image::filled(8, 8, [0.1; 3]);
        assert!((psnr(&z, &o).unwrap() - 20.0).abs() < 1e-9);
        let b = random_image(8, 8, 16, 0.0, 1.0);
        let m: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 192.0;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-9);
    }

    #[test]
    fn alignment_identity() {
        let r = smooth_image(24, 24);
        let al = log_affine_align(&r, &r).unwrap();
        for ch in 0..3 {
            assert!((al.coeffs[ch].0 - 1.0).abs() < 1e-12);
            assert!(al.coeffs[ch].1.abs() < 1e-12);
        }
        for (a, b) in al.image.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(!al.degenerate);
    }

    #[test]
    fn alignment_removes_log_space_exposure_shift() {
        // Exposure halved on the floored intensity: (pred + eps) = 0.5 (ref + eps).
        let r = smooth_image(24, 24);
        let pred = r.map(|v| 0.5 * (v + ALIGN_EPSILON) - ALIGN_EPSILON);
        let al = log_affine_align(&pred, &r).unwrap();
        for (a, b) in al.image.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn alignment_removes_gamma_and_exposure() {
        let r = smooth_image(32, 32);
        let gamma = r.map(|v| v * v);
        let aligned = log_affine_align(&gamma, &r).unwrap().image;
        let p = psnr(&aligned, &r).unwrap();
        assert!(p >= 60.0, "gamma: {p}");
        let half = r.map(|v| 0.5 * v);
        let aligned = log_affine_align(&half, &r).unwrap().image;
        let p = psnr(&aligned, &r).unwrap();
        assert!(p >= 60.0, "exposure: {p}");
    }

    #[test]
    fn alignment_constant_prediction_is_flagged() {
        let r = smooth_image(16, 16);
        let al = log_affine_align(&Image::filled(16, 16, [0.3; 3]), &r).unwrap();
        assert!(al.degenerate);
        let first = al.image.pixel(0, 0);
        assert!(al.image.data.chunks_exact(3).all(|px| px == first));
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(seed in 0u64..500) {
            let a = random_image(12, 12, seed, 0.0, 1.0);
            let b = random_image(12, 12, seed + 1000, 0.0, 1.0);
            let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((s1 - s2).abs() <= 1e-12);
            prop_assert!(s1 <= 1.0 + 1e-9);
        }

        #[test]
        fn total_loss_monotone_and_linear(e in 0.0f64..10.0, r in 0.0f64..10.0, d in 0.0f64..1.0) {
            let w = LossWeights::default();
            prop_assert!(total_loss(e + d, r, &w) >= total_loss(e, r, &w));
            prop_assert!(total_loss(e, r + d, &w) >= total_loss(e, r, &w));
            let lin = total_loss(2.0 * e, 2.0 * r, &w) - 2.0 * total_loss(e, r, &w);
            prop_assert!(lin.abs() <= 1e-12);
        }

        #[test]
        fn event_loss_nonnegative(seed in 0u64..500) {
            let (i1, i2) = (random_image(6, 6, seed, 0.0, 1.0), random_image(6, 6, seed + 7, 0.0, 1.0));
            let e = (0..36).map(|k| 0.1 * ((k % 7) as f64 - 3.0)).collect();
            prop_assert!(event_loss(&i1, &i2, &frame(6, 6, e), 1e-3).unwrap() >= 0.0);
        }

        #[test]
        fn aligned_psnr_invariant_to_log_affine_distortion(a in 0.5f64..2.0, b in -1.0f64..0.5) {
            let r = smooth_image(20, 20);
            let base = log_affine_align(&r, &r).unwrap().image;
            let distorted = r.map(|v| (a * (v + ALIGN_EPSILON).ln() + b).exp() - ALIGN_EPSILON);
            prop_assume!(distorted.data.iter().all(|v| (0.0..=1.0).contains(v)));
            let p0 = psnr(&base, &r).unwrap();
            let p1 = psnr(&log_affine_align(&distorted, &r).unwrap().image, &r).unwrap();
            prop_assert!((p0 - p1).abs() <= 1e-6 || p1 >= 100.0 - 1e-6 && p0 >= 100.0 - 1e-6, "{} {}", p0, p1);
        }
    }
}
