//! Signed distance to volume density, and the annealing schedule for its scale.

use crate::error::{Error, Result};
use crate::math::{exp, powf};

/// Laplace scale `beta` of the density. The density scale `alpha` is tied to
/// `1 / beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    beta: f64,
}

impl DensityParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        1.0 / self.beta
    }
}

/// Zero-mean Laplace CDF with scale `beta`.
#[inline]
pub fn laplace_cdf(s: f64, beta: f64) -> f64 {
    if s <= 0.0 {
        0.5 * exp(s / beta)
    } else {
        1.0 - 0.5 * exp(-s / beta)
    }
}

/// `alpha * Psi_beta(-f)`: signed distance is positive outside, so density
/// tends to `alpha` inside objects and to zero in free space as beta shrinks.
#[inline]
pub fn density_from_sdf(f: f64, params: DensityParams) -> f64 {
    params.alpha() * laplace_cdf(-f, params.beta)
}

/// Derivative of [`density_from_sdf`] with respect to the signed distance.
#[inline]
pub fn density_derivative(f: f64, params: DensityParams) -> f64 {
    let b = params.beta;
    -exp(-f.abs() / b) / (2.0 * b * b)
}

/// `beta_t = beta0 / (1 + ((beta0 - beta1) / beta1) t^exponent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BetaSchedule {
    pub beta0: f64,
    pub beta1: f64,
    pub exponent: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            beta0: 0.1,
            beta1: 0.001,
            exponent: 0.8,
        }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0) || !(self.beta0 >= self.beta1) || !self.beta0.is_finite() {
            return Err(Error::InvalidSchedule {
                beta0: self.beta0,
                beta1: self.beta1,
            });
        }
        Ok(())
    }
}

pub fn beta_at(schedule: &BetaSchedule, t: f64) -> Result<f64> {
    schedule.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::ProgressOutOfRange(t));
    }
    let BetaSchedule { beta0, beta1, exponent } = *schedule;
    if t == 1.0 {
        // the general expression rounds; the endpoint is beta1 algebraically
        return Ok(beta1);
    }
    Ok(beta0 / (1.0 + ((beta0 - beta1) / beta1) * powf(t, exponent)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: f64) -> DensityParams {
        DensityParams::new(beta).unwrap()
    }

    #[test]
    fn alpha_times_beta_is_one() {
        let p = params(0.037);
        assert!((p.alpha() * p.beta() - 1.0).abs() < 1e-15);
        assert!(DensityParams::new(0.0).is_err());
        assert!(DensityParams::new(-1.0).is_err());
    }

    #[test]
    fn surface_density_is_half_alpha() {
        let p = params(0.01);
        assert_eq!(density_from_sdf(0.0, p), p.alpha() / 2.0);
    }

    #[test]
    fn saturation_inside_and_outside() {
        let p = params(0.001);
        assert!((density_from_sdf(-1.0, p) - p.alpha()).abs() < 1e-6);
        assert!(density_from_sdf(1.0, p).abs() < 1e-6);
    }

    #[test]
    fn monotone_and_continuous() {
        let p = params(0.05);
        let mut prev = f64::INFINITY;
        let mut f = -1.0;
        while f < 1.0 {
            let d = density_from_sdf(f, p);
            assert!(d < prev);
            prev = d;
            f += 1e-3;
        }
        let eps = 1e-12;
        assert!((density_from_sdf(eps, p) - density_from_sdf(-eps, p)).abs() < 1e-8);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let p = params(0.05);
        for &f in &[-0.2, -0.01, 0.013, 0.3] {
            let h = 1e-6;
            let fd = (density_from_sdf(f + h, p) - density_from_sdf(f - h, p)) / (2.0 * h);
            let an = density_derivative(f, p);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = BetaSchedule::default();
        assert_eq!(beta_at(&s, 0.0).unwrap(), 0.1);
        assert_eq!(beta_at(&s, 1.0).unwrap(), 0.001);
        let mid = beta_at(&s, 0.5).unwrap();
        assert!(mid > 0.001 && mid < 0.1);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let b = beta_at(&s, i as f64 / 100.0).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn schedule_rejects_bad_progress() {
        let s = BetaSchedule::default();
        assert!(matches!(beta_at(&s, -0.1), Err(Error::ProgressOutOfRange(_))));
        assert!(beta_at(&s, 1.5).is_err());
    }
}
