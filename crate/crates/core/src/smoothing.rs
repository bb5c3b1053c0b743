//! Gaussian-kernel surrogates for the kinks in quantile objectives.
//!
//! Every nonsmooth piece of the censored and binary objectives is built from
//! `max(t, 0)`. Convolving it with a centered Gaussian of scale `h` gives
//!
//! ```text
//! S(t; h) = t * Phi(t / h) + h * phi(t / h),      S'(t; h) = Phi(t / h)
//! ```
//!
//! which is convex, C-infinity and converges to `max(t, 0)` uniformly with
//! error at most `h * phi(0)`. The clamp and the check function are then
//! expressed through `S`.

use crate::error::{Error, Result};
use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1 / sqrt(2 pi)`, i.e. the standard normal density at zero.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Kernel smoothing bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Bandwidth(h))
        } else {
            Err(Error::InvalidInput(format!(
                "bandwidth must be positive and finite, got {h}"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// Same bandwidth expressed in units scaled by `factor` (> 0).
    pub fn scaled(self, factor: f64) -> Result<Self> {
        Bandwidth::new(self.0 * factor)
    }
}

/// Standard normal CDF via the complementary error function.
#[inline]
pub fn gauss_cdf(v: f64) -> f64 {
    if v == f64::INFINITY {
        return 1.0;
    }
    if v == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-v * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn gauss_pdf(v: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * v * v).exp()
}

/// Standard normal quantile, `Phi^-1(p)`.
///
/// statrs' inverse error function gives the starting value; one Newton step
/// against [`gauss_cdf`] brings it to full double precision.
pub fn gauss_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = Normal::standard().inverse_cdf(p);
    let dens = gauss_pdf(x);
    if dens > 1e-300 {
        x - (gauss_cdf(x) - p) / dens
    } else {
        x
    }
}

/// `ln Phi(v)`, accurate far into the lower tail where `Phi` underflows.
pub fn log_gauss_cdf(v: f64) -> f64 {
    if v > -30.0 {
        gauss_cdf(v).ln()
    } else {
        // Mills-ratio asymptotic series: Phi(v) ~ phi(v)/(-v) * (1 - 1/v^2 + 3/v^4 - 15/v^6)
        let z2 = 1.0 / (v * v);
        let series = 1.0 - z2 * (1.0 - z2 * (3.0 - 15.0 * z2));
        -0.5 * v * v - 0.5 * (2.0 * PI).ln() - (-v).ln() + series.ln()
    }
}

/// `phi(v) / Phi(v)`, the inverse Mills ratio, stable in both tails.
pub fn inv_mills(v: f64) -> f64 {
    if v > -30.0 {
        gauss_pdf(v) / gauss_cdf(v)
    } else {
        (-0.5 * v * v - 0.5 * (2.0 * PI).ln() - log_gauss_cdf(v)).exp()
    }
}

/// Gaussian-smoothed `max(t, 0)`.
#[inline]
pub fn smoothed_max(t: f64, h: f64) -> f64 {
    let s = t / h;
    t * gauss_cdf(s) + h * gauss_pdf(s)
}

/// Derivative of [`smoothed_max`] with respect to `t`.
#[inline]
pub fn smoothed_max_deriv(t: f64, h: f64) -> f64 {
    gauss_cdf(t / h)
}

/// Limits of a censored outcome, with `-inf`/`+inf` meaning no censoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub lower: f64,
    pub upper: f64,
}

impl Limits {
    pub const NONE: Limits = Limits {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::InvalidInput(format!(
                "censoring limits must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Limits { lower, upper })
    }

    pub fn is_uncensored(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }

    /// Hard clamp `min(max(u, lower), upper)`.
    #[inline]
    pub fn clamp(&self, u: f64) -> f64 {
        u.max(self.lower).min(self.upper)
    }

    /// Smoothed clamp and its derivative at `u`.
    #[inline]
    pub fn smoothed(&self, u: f64, h: f64) -> (f64, f64) {
        let lo_finite = self.lower.is_finite();
        let hi_finite = self.upper.is_finite();
        match (lo_finite, hi_finite) {
            (false, false) => (u, 1.0),
            (true, false) => {
                let t = u - self.lower;
                (self.lower + smoothed_max(t, h), smoothed_max_deriv(t, h))
            }
            (false, true) => {
                let t = u - self.upper;
                (u - smoothed_max(t, h), 1.0 - smoothed_max_deriv(t, h))
            }
            (true, true) => {
                let tl = u - self.lower;
                let th = u - self.upper;
                (
                    self.lower + smoothed_max(tl, h) - smoothed_max(th, h),
                    smoothed_max_deriv(tl, h) - smoothed_max_deriv(th, h),
                )
            }
        }
    }
}

/// Gaussian-smoothed `min(max(u, c_lo), c_hi)`.
pub fn smoothed_clamp(u: f64, c_lo: f64, c_hi: f64, h: f64) -> Result<f64> {
    Ok(Limits::new(c_lo, c_hi)?.smoothed(u, h).0)
}

/// Smoothed check function `tau*u + S(-u; h)`.
///
/// Uses the identity `rho_tau(u) = tau*u + max(-u, 0)`.
pub fn smoothed_check(u: f64, tau: f64, h: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(smoothed_check_unchecked(u, tau, h))
}

#[inline]
pub(crate) fn smoothed_check_unchecked(u: f64, tau: f64, h: f64) -> f64 {
    tau * u + smoothed_max(-u, h)
}

/// Derivative of the smoothed check function: `tau - Phi(-u/h)`.
#[inline]
pub fn smoothed_check_deriv(u: f64, tau: f64, h: f64) -> f64 {
    tau - gauss_cdf(-u / h)
}

/// Unsmoothed check function `u * (tau - 1{u < 0})`.
#[inline]
pub fn check(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Rule-of-thumb bandwidth `0.9 * sigma / n^(1/5)`.
pub fn bandwidth_rule(sigma_hat: f64, n: usize) -> Result<Bandwidth> {
    if !(sigma_hat.is_finite() && sigma_hat > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale estimate must be positive, got {sigma_hat}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    Bandwidth::new(0.9 * sigma_hat * (n as f64).powf(-0.2))
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "quantile index must lie in (0, 1), got {tau}"
        )))
    }
}
