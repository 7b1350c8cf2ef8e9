//! Adam with per-parameter-class learning rates over the flat Gaussian layout.

use serde::{Deserialize, Serialize};

use crate::error::{EvgsError, Result};
use crate::scene::{ParamClass, ParamLayout};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    /// Multiplies both position rates; the trainer sets it from the scene bounds.
    pub spatial_scale: f64,
    pub color: f64,
    /// Learning-rate divisor for SH coefficients above the DC term.
    pub color_rest_divisor: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            spatial_scale: 1.0,
            color: 2.5e-3,
            color_rest_divisor: 20.0,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("optim.position_init", self.position_init),
            ("optim.position_final", self.position_final),
            ("optim.spatial_scale", self.spatial_scale),
            ("optim.color", self.color),
            ("optim.color_rest_divisor", self.color_rest_divisor),
            ("optim.opacity", self.opacity),
            ("optim.scale", self.scale),
            ("optim.rotation", self.rotation),
            ("optim.epsilon", self.epsilon),
        ];
        for (key, v) in rates {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EvgsError::config(key, "must be a positive finite number"));
            }
        }
        for (key, v) in [("optim.beta1", self.beta1), ("optim.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(EvgsError::config(key, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Log-linear decay from `position_init` to `position_final` over `total` steps.
    pub fn position_at(&self, step: usize, total: usize) -> f64 {
        let frac = if total <= 1 {
            0.0
        } else {
            (step as f64 / (total - 1) as f64).clamp(0.0, 1.0)
        };
        let (a, b) = (self.position_init.ln(), self.position_final.ln());
        self.spatial_scale * (a + (b - a) * frac).exp()
    }
}

/// First and second moments for every parameter, one row per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    layout: ParamLayout,
    rates: LearningRates,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(layout: ParamLayout, num_gaussians: usize, rates: LearningRates) -> Self {
        let n = layout.stride() * num_gaussians;
        Self {
            layout,
            rates,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_gaussians(&self) -> usize {
        self.m.len() / self.layout.stride()
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    fn rate(&self, class: ParamClass, offset: usize, position_lr: f64) -> f64 {
        match class {
            ParamClass::Position => position_lr,
            ParamClass::LogScale => self.rates.scale,
            ParamClass::Rotation => self.rates.rotation,
            ParamClass::Opacity => self.rates.opacity,
            ParamClass::Color if offset < ParamLayout::COLOR + 3 => self.rates.color,
            ParamClass::Color => self.rates.color / self.rates.color_rest_divisor,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], position_lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(EvgsError::Shape(format!(
                "optimizer holds {} values, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (self.rates.beta1, self.rates.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let stride = self.layout.stride();
        let rates: Vec<f64> = (0..stride)
            .map(|o| self.rate(self.layout.class_of(o), o, position_lr))
            .collect();
        for (i, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= rates[i % stride] * m_hat / (v_hat.sqrt() + self.rates.epsilon);
        }
        Ok(())
    }

    /// Keeps the rows flagged in `keep`, then appends `added` zeroed rows.
    pub fn resize_rows(&mut self, keep: &[bool], added: usize) {
        let stride = self.layout.stride();
        let filter = |data: &[f64]| -> Vec<f64> {
            data.chunks_exact(stride)
                .zip(keep)
                .filter(|(_, k)| **k)
                .flat_map(|(row, _)| row.iter().copied())
                .chain(std::iter::repeat_n(0.0, added * stride))
                .collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_rate_decays_log_linearly() {
        let r = LearningRates::default();
        assert!((r.position_at(0, 101) - 1.6e-4).abs() < 1e-18);
        assert!((r.position_at(100, 101) - 1.6e-6).abs() < 1e-18);
        assert!((r.position_at(50, 101) - 1.6e-5).abs() < 1e-15);
        let scaled = LearningRates {
            spatial_scale: 2.0,
            ..r
        };
        assert!((scaled.position_at(0, 10) - 3.2e-4).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let layout = ParamLayout::new(0);
        let mut adam = Adam::new(layout, 1, LearningRates::default());
        let mut p = vec![0.0; layout.stride()];
        let g: Vec<f64> = (0..layout.stride())
            .map(|i| if i % 2 == 0 { 1.0 } else { -3.0 })
            .collect();
        adam.update(&mut p, &g, 1e-3).unwrap();
        // With bias correction the first step is lr * sign(g).
        assert!((p[ParamLayout::POSITION] + 1e-3).abs() < 1e-12);
        assert!((p[ParamLayout::LOG_SCALE] - 5e-3).abs() < 1e-12);
        assert!((p[ParamLayout::OPACITY] + 5e-2).abs() < 1e-12);
        assert!((p[ParamLayout::COLOR + 1] + 2.5e-3).abs() < 1e-12);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let layout = ParamLayout::new(1);
        let mut adam = Adam::new(layout, 3, LearningRates::default());
        let mut p: Vec<f64> = (0..layout.stride() * 3).map(|i| i as f64 * 0.1).collect();
        let before = p.clone();
        let zeros = vec![0.0; p.len()];
        for _ in 0..5 {
            adam.update(&mut p, &zeros, 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn resize_keeps_and_zeroes_rows() {
        let layout = ParamLayout::new(0);
        let s = layout.stride();
        let mut adam = Adam::new(layout, 3, LearningRates::default());
        let mut p = vec![0.0; 3 * s];
        let g: Vec<f64> = (0..3 * s).map(|i| (i / s + 1) as f64).collect();
        adam.update(&mut p, &g, 1e-3).unwrap();
        adam.resize_rows(&[true, false, true], 2);
        assert_eq!(adam.num_gaussians(), 4);
        let (m, _) = adam.moments();
        assert!((m[0] - 0.1).abs() < 1e-12);
        assert!((m[s] - 0.3).abs() < 1e-12);
        assert!(m[2 * s..].iter().all(|v| *v == 0.0));
        assert!(adam.update(&mut p, &g, 1e-3).is_err());
    }
}
