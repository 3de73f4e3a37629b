//! Adam updates and learning-rate schedules.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, sin, sqrt};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.step as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (sqrt(vhat) + eps);
        }
    }
}

/// Warm-started, log-linearly decaying learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LogLinearSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub warmup_steps: usize,
    /// Multiplier at step 0, ramped to 1 over the warmup with a quarter sine.
    pub warmup_mult: f64,
}

impl Default for LogLinearSchedule {
    fn default() -> Self {
        Self {
            lr_init: 2e-3,
            lr_final: 2e-5,
            warmup_steps: 500,
            warmup_mult: 0.01,
        }
    }
}

impl LogLinearSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        let p = if total <= 1 {
            0.0
        } else {
            (step as f64 / (total - 1) as f64).clamp(0.0, 1.0)
        };
        let base = exp(ln(self.lr_init) * (1.0 - p) + ln(self.lr_final) * p);
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            let r = (step as f64 / self.warmup_steps as f64).min(1.0);
            self.warmup_mult + (1.0 - self.warmup_mult) * sin(0.5 * core::f64::consts::PI * r)
        };
        base * warm
    }
}

/// Initial rate dropped by `factor` at evenly spaced steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StepSchedule {
    pub lr_init: f64,
    pub drops: usize,
    pub factor: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            lr_init: 1e-3,
            drops: 2,
            factor: 10.0,
        }
    }
}

impl StepSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        let phase = if total == 0 {
            0
        } else {
            (step * (self.drops + 1) / total).min(self.drops)
        };
        self.lr_init / libm::pow(self.factor, phase as f64)
    }
}
