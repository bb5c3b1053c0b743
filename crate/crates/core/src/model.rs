//! Model specification and estimation results.

use crate::data::ModelKind;
use crate::error::{Error, Result};
use crate::smoothing::{gauss_cdf, Bandwidth, Limits};
use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

/// Two-sided 95% normal critical value.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Default number of bootstrap replications.
pub const DEFAULT_REPS: usize = 50;

/// Everything needed to run a fit besides the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(rename = "ll", serialize_with = "finite_or_null")]
    pub lower: f64,
    #[serde(rename = "ul", serialize_with = "finite_or_null")]
    pub upper: f64,
    pub taus: Vec<f64>,
    pub reps: usize,
    pub bwidth: Option<f64>,
    pub pbwidth: Option<f64>,
    pub seed: u64,
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, taus: Vec<f64>) -> Self {
        ModelSpec {
            kind,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            taus,
            reps: DEFAULT_REPS,
            bwidth: None,
            pbwidth: None,
            seed: 0,
        }
    }

    pub fn censored(lower: f64, upper: f64, taus: Vec<f64>) -> Self {
        ModelSpec {
            lower,
            upper,
            ..ModelSpec::new(ModelKind::Censored, taus)
        }
    }

    pub fn binary(taus: Vec<f64>) -> Self {
        ModelSpec::new(ModelKind::Binary, taus)
    }

    pub fn plain(taus: Vec<f64>) -> Self {
        ModelSpec::new(ModelKind::Plain, taus)
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_bwidth(mut self, h: f64) -> Self {
        self.bwidth = Some(h);
        self
    }

    pub fn with_pbwidth(mut self, h: f64) -> Self {
        self.pbwidth = Some(h);
        self
    }

    /// Censoring limits in effect; binary and plain models are uncensored.
    pub fn limits(&self) -> Limits {
        match self.kind {
            ModelKind::Censored => Limits {
                lower: self.lower,
                upper: self.upper,
            },
            _ => Limits::NONE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() {
            return Err(Error::InvalidSpec("at least one quantile is required".into()));
        }
        for &t in &self.taus {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidSpec(format!("quantile {t} outside (0, 1)")));
            }
        }
        if self.taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec(
                "quantiles must be strictly increasing".into(),
            ));
        }
        if self.kind == ModelKind::Censored {
            if self.lower.is_nan() || self.upper.is_nan() || self.lower >= self.upper {
                return Err(Error::InvalidSpec(format!(
                    "censoring limits must satisfy ll < ul, got ll={} ul={}",
                    self.lower, self.upper
                )));
            }
            if self.lower == f64::INFINITY || self.upper == f64::NEG_INFINITY {
                return Err(Error::InvalidSpec("censoring limit out of range".into()));
            }
        }
        if self.reps == 0 {
            return Err(Error::InvalidSpec("reps must be positive".into()));
        }
        for (label, h) in [("bwidth", self.bwidth), ("pbwidth", self.pbwidth)] {
            if let Some(h) = h {
                if !(h.is_finite() && h > 0.0) {
                    return Err(Error::InvalidSpec(format!("{label} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Accept a quantile given either as a fraction in (0, 1) or as a percent
/// in (1, 100).
pub fn normalize_tau(v: f64) -> Result<f64> {
    let t = if v > 1.0 { v / 100.0 } else { v };
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(Error::InvalidSpec(format!("quantile {v} outside (0, 100)")))
    }
}

/// Short label `q20` for tau = 0.2.
pub fn tau_label(tau: f64) -> String {
    let pct = (tau * 100.0 * 1e6).round() / 1e6;
    format!("q{pct}")
}

/// Coefficients at one quantile, in design-matrix column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefVector {
    pub tau: f64,
    pub beta: Vec<f64>,
    pub unit_norm: bool,
}

impl CoefVector {
    pub fn new(tau: f64, beta: Vec<f64>) -> Self {
        CoefVector {
            tau,
            beta,
            unit_norm: false,
        }
    }

    /// Rescale to unit Euclidean norm.
    pub fn normalized(tau: f64, beta: &[f64]) -> Self {
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        CoefVector {
            tau,
            beta: beta.iter().map(|b| b / norm).collect(),
            unit_norm: true,
        }
    }

    pub fn index(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * DVector::from_column_slice(&self.beta)
    }
}

/// Inference summary for one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefStat {
    pub name: String,
    pub est: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl CoefStat {
    pub fn new(name: &str, est: f64, var: f64) -> Self {
        let se = var.max(0.0).sqrt();
        let z = est / se;
        let p = if z.is_nan() {
            f64::NAN
        } else {
            2.0 * gauss_cdf(-z.abs())
        };
        CoefStat {
            name: name.to_string(),
            est,
            se,
            z,
            p,
            ci_lo: est - Z_975 * se,
            ci_hi: est + Z_975 * se,
        }
    }
}

/// Where the latent scale estimate feeding the bandwidth came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSource {
    Tobit,
    ProbitNormalization,
    OlsResidualSd,
    UserBandwidth,
}

/// Multi-quantile point estimates with their joint bootstrap covariance.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub depvar: String,
    pub names: Vec<String>,
    pub intercept: Option<usize>,
    pub coefs: Vec<CoefVector>,
    /// Objective value reached at each quantile.
    pub objectives: Vec<f64>,
    pub converged: Vec<bool>,
    /// Joint covariance ordered by (tau, coefficient).
    pub v: DMatrix<f64>,
    pub bandwidth: Bandwidth,
    pub sigma_hat: f64,
    pub scale_source: ScaleSource,
    pub n: usize,
    pub reps_completed: usize,
    pub reps_failed: usize,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.coefs.iter().map(|c| c.tau).collect()
    }

    /// Stacked estimates `(beta(tau_1)', ..., beta(tau_m)')'`.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.coefs.len() * self.k(),
            self.coefs.iter().flat_map(|c| c.beta.iter().copied()),
        )
    }

    pub fn tau_position(&self, tau: f64) -> Option<usize> {
        self.coefs.iter().position(|c| (c.tau - tau).abs() < 1e-9)
    }

    pub fn coef(&self, tau: f64) -> Result<&CoefVector> {
        self.tau_position(tau)
            .map(|i| &self.coefs[i])
            .ok_or(Error::TauNotFitted(tau))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-quantile coefficient tables from the diagonal of `V`.
    pub fn stats(&self) -> Vec<Vec<CoefStat>> {
        let k = self.k();
        self.coefs
            .iter()
            .enumerate()
            .map(|(t, c)| {
                c.beta
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| {
                        let idx = t * k + j;
                        CoefStat::new(&self.names[j], b, self.v[(idx, idx)])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}
