//! Model fits: Tobit and Probit baselines, censored, binary and plain
//! smoothed quantile regression, and the multi-quantile driver.

mod probit;
mod quantile;
mod tobit;

pub use probit::{probit_fit, ProbitFit};
pub use quantile::{bqr_fit, cqr_fit, sqr_fit, BinaryObjective, CensoredObjective, QuantileFit};
pub use tobit::{censoring_counts, tobit_fit, TobitFit};

use crate::data::{is_dummy, Dataset, ModelKind};
use crate::error::{Error, Result};
use crate::inference;
use crate::model::{FitResult, ModelSpec, ScaleSource};
use crate::smoothing::{bandwidth_rule, gauss_quantile, Bandwidth, Limits};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Number of perturbed restarts added to the primary start.
pub const RESTARTS: usize = 3;

#[derive(Debug, Clone)]
pub(crate) struct Ols {
    pub beta: Vec<f64>,
    pub rss: f64,
    pub y_sd: f64,
}

pub(crate) fn ols(d: &Dataset) -> Ols {
    let svd = d.x().clone().svd(true, true);
    let beta = svd
        .solve(d.y(), 1e-12)
        .unwrap_or_else(|_| DVector::zeros(d.k()));
    let resid = d.y() - d.x() * &beta;
    let n = d.n() as f64;
    let mean = d.y().mean();
    let y_sd = (d.y().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    Ols {
        beta: beta.as_slice().to_vec(),
        rss: resid.norm_squared(),
        y_sd,
    }
}

/// Single-quantile estimates for every requested tau, before inference.
#[derive(Debug, Clone)]
pub struct PointFit {
    pub fits: Vec<QuantileFit>,
    pub bandwidth: Bandwidth,
    pub sigma_hat: f64,
    pub scale_source: ScaleSource,
    pub diagnostics: Vec<String>,
}

/// Check that the data can support the requested model.
pub(crate) fn check_data(d: &Dataset, spec: &ModelSpec) -> Result<()> {
    match spec.kind {
        ModelKind::Binary => {
            if !is_dummy(d.y().as_slice()) {
                return Err(Error::NotBinary);
            }
        }
        ModelKind::Censored => {
            let (lo, hi, unc) = censoring_counts(d, &spec.limits());
            if lo == d.n() {
                return Err(Error::DegenerateCensoring("lower"));
            }
            if hi == d.n() {
                return Err(Error::DegenerateCensoring("upper"));
            }
            if unc == 0 {
                return Err(Error::NoUncensored);
            }
        }
        ModelKind::Plain => {}
    }
    Ok(())
}

/// Fit one quantile from one start with the estimator matching `kind`.
pub(crate) fn fit_one(
    d: &Dataset,
    kind: ModelKind,
    limits: Limits,
    tau: f64,
    h: Bandwidth,
    b0: &[f64],
) -> Result<QuantileFit> {
    match kind {
        ModelKind::Censored => cqr_fit(d, tau, limits, h, b0),
        ModelKind::Plain => sqr_fit(d, tau, h, b0),
        ModelKind::Binary => bqr_fit(d, tau, h, b0),
    }
}

/// Primary start plus seeded Gaussian perturbations; the lowest objective wins.
fn multi_start(
    d: &Dataset,
    kind: ModelKind,
    limits: Limits,
    tau: f64,
    h: Bandwidth,
    start: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<QuantileFit> {
    let norm = start.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = if norm > 0.0 { 0.1 * norm } else { 0.1 };
    let mut best = fit_one(d, kind, limits, tau, h, start)?;
    for _ in 0..RESTARTS {
        let b0: Vec<f64> = start
            .iter()
            .map(|b| b + scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        match fit_one(d, kind, limits, tau, h, &b0) {
            Ok(fit) if fit.objective < best.objective && (fit.converged || !best.converged) => {
                best = fit
            }
            _ => {}
        }
    }
    Ok(best)
}

fn restart_rng(seed: u64, tau_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + tau_index as u64);
    rng
}

/// Scale estimate, bandwidth and primary start for each quantile.
struct Setup {
    sigma_hat: f64,
    source: ScaleSource,
    bandwidth: Bandwidth,
    starts: Vec<Vec<f64>>,
    diagnostics: Vec<String>,
}

fn setup(d: &Dataset, spec: &ModelSpec) -> Result<Setup> {
    let limits = spec.limits();
    let mut diagnostics = Vec::new();
    let (sigma_hat, source, base, shift) = match spec.kind {
        ModelKind::Censored => {
            let t = tobit_fit(d, limits)?;
            if !t.converged {
                diagnostics.push("tobit: optimizer did not converge".to_string());
            }
            (t.sigma, ScaleSource::Tobit, t.beta, t.sigma)
        }
        ModelKind::Plain => {
            let o = ols(d);
            let n = d.n() as f64;
            let sd = (o.rss / (n - 1.0).max(1.0)).sqrt();
            let mle = (o.rss / n).sqrt();
            diagnostics.push(
                "plain model: bandwidth scale is the OLS residual standard deviation".to_string(),
            );
            (sd, ScaleSource::OlsResidualSd, o.beta, mle)
        }
        ModelKind::Binary => {
            let p = probit_fit(d)?;
            if let Some(msg) = &p.diagnostic {
                diagnostics.push(msg.clone());
            }
            // unnormalized so the intercept shift below stays on the probit scale
            let mut start = p.beta.clone();
            if start.iter().any(|v| !v.is_finite()) || p.normalized().iter().any(|v| !v.is_finite()) {
                start = vec![0.0; d.k()];
                start[0] = 1.0;
            }
            (1.0, ScaleSource::ProbitNormalization, start, 1.0)
        }
    };

    let (bandwidth, source) = match spec.bwidth {
        Some(h) => (Bandwidth::new(h)?, ScaleSource::UserBandwidth),
        None => {
            let mut sigma = sigma_hat;
            let floor = 1e-6 * ols(d).y_sd.max(1.0);
            if !(sigma > floor) {
                diagnostics.push(format!(
                    "scale estimate {sigma_hat:.3e} is degenerate; bandwidth floored"
                ));
                sigma = floor;
            }
            (bandwidth_rule(sigma, d.n())?, source)
        }
    };

    let starts = spec
        .taus
        .iter()
        .map(|&tau| {
            let mut s = base.clone();
            // boundary where the fitted baseline quantile crosses zero
            if let Some(j) = d.intercept() {
                s[j] += shift * gauss_quantile(tau);
            }
            if spec.kind == ModelKind::Binary {
                let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    s.iter_mut().for_each(|v| *v /= norm);
                }
            }
            s
        })
        .collect();

    Ok(Setup {
        sigma_hat,
        source,
        bandwidth,
        starts,
        diagnostics,
    })
}

/// Point estimates at every quantile of `spec`, without the bootstrap.
pub fn fit_point(d: &Dataset, spec: &ModelSpec) -> Result<PointFit> {
    spec.validate()?;
    check_data(d, spec)?;
    let s = setup(d, spec)?;
    let limits = spec.limits();
    let fits = spec
        .taus
        .par_iter()
        .enumerate()
        .map(|(t, &tau)| {
            let mut rng = restart_rng(spec.seed, t);
            multi_start(d, spec.kind, limits, tau, s.bandwidth, &s.starts[t], &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut diagnostics = s.diagnostics;
    for f in &fits {
        if let Some(msg) = &f.diagnostic {
            diagnostics.push(format!("tau={}: {msg}", f.coef.tau));
        }
    }
    Ok(PointFit {
        fits,
        bandwidth: s.bandwidth,
        sigma_hat: s.sigma_hat,
        scale_source: s.source,
        diagnostics,
    })
}

impl PointFit {
    /// Wrap into a [`FitResult`] carrying a zero covariance.
    pub fn into_result(self, d: &Dataset, spec: &ModelSpec) -> FitResult {
        let dim = d.k() * self.fits.len();
        let mut diagnostics = d.warnings().to_vec();
        diagnostics.extend(self.diagnostics);
        FitResult {
            spec: spec.clone(),
            depvar: d.depvar().to_string(),
            names: d.names().to_vec(),
            intercept: d.intercept(),
            objectives: self.fits.iter().map(|f| f.objective).collect(),
            converged: self.fits.iter().map(|f| f.converged).collect(),
            coefs: self.fits.into_iter().map(|f| f.coef).collect(),
            v: DMatrix::zeros(dim, dim),
            bandwidth: self.bandwidth,
            sigma_hat: self.sigma_hat,
            scale_source: self.scale_source,
            n: d.n(),
            reps_completed: 0,
            reps_failed: 0,
            diagnostics,
        }
    }
}

/// Point estimates at every quantile plus the joint bootstrap covariance.
pub fn fit_all(d: &Dataset, spec: &ModelSpec) -> Result<FitResult> {
    let mut fit = fit_point(d, spec)?.into_result(d, spec);
    let (v, record) = inference::bootstrap(d, spec, &fit)?;
    fit.v = v;
    fit.reps_completed = record.completed();
    fit.reps_failed = record.failed;
    if record.failed > 0 {
        fit.diagnostics.push(format!(
            "{} of {} bootstrap replicates failed and were excluded",
            record.failed, spec.reps
        ));
    }
    Ok(fit)
}
