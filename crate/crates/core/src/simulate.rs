//! Simulated censored and binary designs with their analytic quantile
//! lines, and a naive-versus-corrected Monte Carlo benchmark.
//!
//! Gaussian draws use the ziggurat sampler from `rand_distr`; chi-square(1)
//! draws are squared standard normals.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::fit_point;
use crate::model::ModelSpec;
use crate::smoothing::{gauss_cdf, gauss_quantile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::SQRT_2;
use std::io::Write;

pub const CENSOR_LOWER: f64 = 0.0;
pub const CENSOR_UPPER: f64 = 1.0;
const BINARY_CONST: f64 = -2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    Censored { heter: bool },
    /// First half homoscedastic, second half heteroscedastic.
    CensoredPooled,
    Binary,
}

impl Dgp {
    pub fn label(self) -> &'static str {
        match self {
            Dgp::Censored { heter: false } => "censored_homo",
            Dgp::Censored { heter: true } => "censored_heter",
            Dgp::CensoredPooled => "censored_pooled",
            Dgp::Binary => "binary",
        }
    }

    /// Observed-outcome variable name.
    pub fn observed_name(self) -> &'static str {
        match self {
            Dgp::Binary => "y_b",
            _ => "y_c",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgpOutput {
    pub dgp: Dgp,
    pub seed: u64,
    pub x: Vec<f64>,
    /// Latent outcome.
    pub y: Vec<f64>,
    /// Censored `y_c` or binary `y_b`.
    pub observed: Vec<f64>,
}

impl DgpOutput {
    pub fn latent_dataset(&self) -> Result<Dataset> {
        Ok(Dataset::from_columns(self.y.clone(), &[("x", &self.x)])?.with_depvar("y"))
    }

    pub fn observed_dataset(&self) -> Result<Dataset> {
        Ok(Dataset::from_columns(self.observed.clone(), &[("x", &self.x)])?
            .with_depvar(self.dgp.observed_name()))
    }

    /// Columns `x, y, <observed>` as CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", self.dgp.observed_name()])?;
        for i in 0..self.x.len() {
            wr.write_record([
                self.x[i].to_string(),
                self.y[i].to_string(),
                self.observed[i].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn censored_draws(rng: &mut ChaCha8Rng, n: usize, heter: bool, out: &mut DgpOutput) {
    for _ in 0..n {
        let x: f64 = rng.random();
        let e: f64 = rng.sample(StandardNormal);
        let scale = if heter { 1.0 + x } else { 1.0 };
        let y = x + scale * e / 3.0;
        out.x.push(x);
        out.y.push(y);
        out.observed.push(y.clamp(CENSOR_LOWER, CENSOR_UPPER));
    }
}

fn empty(dgp: Dgp, seed: u64, n: usize) -> DgpOutput {
    DgpOutput {
        dgp,
        seed,
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        observed: Vec::with_capacity(n),
    }
}

/// `x ~ U(0,1)`, `y = x + s(x) N(0,1)/3` with `s = 1` or `1 + x`, `y_c` clamped to [0, 1].
pub fn dgp_censored(n: usize, heter: bool, seed: u64) -> DgpOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = empty(Dgp::Censored { heter }, seed, n);
    censored_draws(&mut rng, n, heter, &mut out);
    out
}

pub fn dgp_censored_pooled(n: usize, seed: u64) -> DgpOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = empty(Dgp::CensoredPooled, seed, n);
    let half = n / 2;
    censored_draws(&mut rng, half, false, &mut out);
    censored_draws(&mut rng, n - half, true, &mut out);
    out
}

/// `x ~ U(0,10)`, `y = -2.5 + x + x (chi2_1 - 1)/sqrt(2)`, `y_b = 1{y > 0}`.
pub fn dgp_binary(n: usize, seed: u64) -> DgpOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = empty(Dgp::Binary, seed, n);
    for _ in 0..n {
        let x = 10.0 * rng.random::<f64>();
        let z: f64 = rng.sample(StandardNormal);
        let y = BINARY_CONST + x + x * (z * z - 1.0) / SQRT_2;
        out.x.push(x);
        out.y.push(y);
        out.observed.push(f64::from(y > 0.0));
    }
    out
}

pub fn generate(dgp: Dgp, n: usize, seed: u64) -> DgpOutput {
    match dgp {
        Dgp::Censored { heter } => dgp_censored(n, heter, seed),
        Dgp::CensoredPooled => dgp_censored_pooled(n, seed),
        Dgp::Binary => dgp_binary(n, seed),
    }
}

/// Latent-quantile (intercept, slope) of the censored design.
pub fn true_coef_censored(tau: f64, heter: bool) -> (f64, f64) {
    let z = gauss_quantile(tau);
    if heter {
        (z / 3.0, 1.0 + z / 3.0)
    } else {
        (z / 3.0, 1.0)
    }
}

/// Chi-square(1) quantile.
pub fn chi2_1_quantile(tau: f64) -> f64 {
    gauss_quantile(0.5 * (1.0 + tau)).powi(2)
}

/// Unit-norm (slope, intercept) of the binary design's latent quantile.
pub fn true_coef_binary(tau: f64) -> (f64, f64) {
    let s = 1.0 + (chi2_1_quantile(tau) - 1.0) / SQRT_2;
    let norm = (s * s + BINARY_CONST * BINARY_CONST).sqrt();
    (s / norm, BINARY_CONST / norm)
}

/// `P(y = 1 | x)` in the binary design; 0 for `x <= 0`.
pub fn true_prob_one(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let t = 1.0 + SQRT_2 * (-BINARY_CONST - x) / x;
    if t <= 0.0 {
        1.0
    } else {
        2.0 * gauss_cdf(-t.sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub dgp: Dgp,
    pub n: usize,
    /// Monte Carlo repetitions.
    pub mc: usize,
    pub taus: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub dgp: &'static str,
    pub tau: f64,
    pub estimator: &'static str,
    /// Slope of the latent quantile line; NaN when it is not linear.
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mc_se: f64,
    pub n: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub diagnostics: Vec<String>,
}

fn true_slope(dgp: Dgp, tau: f64) -> f64 {
    match dgp {
        Dgp::Censored { heter } => true_coef_censored(tau, heter).1,
        // mixture quantiles are not linear in x
        Dgp::CensoredPooled => f64::NAN,
        Dgp::Binary => true_coef_binary(tau).0,
    }
}

fn corrected_spec(dgp: Dgp, taus: &[f64]) -> ModelSpec {
    match dgp {
        Dgp::Binary => ModelSpec::binary(taus.to_vec()),
        _ => ModelSpec::censored(CENSOR_LOWER, CENSOR_UPPER, taus.to_vec()),
    }
}

/// One repetition: (naive slopes, corrected slopes, notes).
fn bench_rep(cfg: &BenchConfig, rep: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<String>)> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let data = generate(cfg.dgp, cfg.n, seed).observed_dataset()?;
    let naive = fit_point(&data, &ModelSpec::plain(cfg.taus.clone()).with_seed(seed))?;
    let corrected = fit_point(&data, &corrected_spec(cfg.dgp, &cfg.taus).with_seed(seed))?;
    let mut notes = Vec::new();
    for (label, pf) in [("naive", &naive), ("corrected", &corrected)] {
        for f in &pf.fits {
            if !f.converged {
                notes.push(format!("rep {rep}: {label} fit at tau {} did not converge", f.coef.tau));
            }
        }
    }
    let naive_slopes = naive
        .fits
        .iter()
        .map(|f| {
            let b = &f.coef.beta;
            if cfg.dgp == Dgp::Binary {
                b[0] / b.iter().map(|v| v * v).sum::<f64>().sqrt()
            } else {
                b[0]
            }
        })
        .collect();
    let corr_slopes = corrected.fits.iter().map(|f| f.coef.beta[0]).collect();
    Ok((naive_slopes, corr_slopes, notes))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Slope bias of the naive smoothed QR and the corrected estimator.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchTable> {
    if cfg.mc == 0 || cfg.n < 10 {
        return Err(Error::InvalidSpec("benchmark needs mc >= 1 and n >= 10".into()));
    }
    corrected_spec(cfg.dgp, &cfg.taus).validate()?;
    let reps: Vec<_> = (0..cfg.mc)
        .into_par_iter()
        .map(|r| bench_rep(cfg, r))
        .collect::<Result<_>>()?;
    let corrected_name = if cfg.dgp == Dgp::Binary { "bqr" } else { "cqr" };
    let mut rows = Vec::new();
    for (t, &tau) in cfg.taus.iter().enumerate() {
        let truth = true_slope(cfg.dgp, tau);
        for (name, pick) in [("naive", 0usize), (corrected_name, 1)] {
            let est: Vec<f64> = reps
                .iter()
                .map(|r| if pick == 0 { r.0[t] } else { r.1[t] })
                .collect();
            let (mean, se) = mean_se(&est);
            rows.push(BenchRow {
                dgp: cfg.dgp.label(),
                tau,
                estimator: name,
                truth,
                mean_estimate: mean,
                bias: mean - truth,
                mc_se: se,
                n: cfg.n,
                reps: cfg.mc,
            });
        }
    }
    let diagnostics = reps.into_iter().flat_map(|r| r.2).collect();
    Ok(BenchTable { rows, diagnostics })
}

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

impl BenchTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "dgp", "tau", "estimator", "truth", "mean_estimate", "bias", "mc_se", "n", "reps",
        ])?;
        for r in &self.rows {
            wr.write_record([
                r.dgp.to_string(),
                csv_num(r.tau),
                r.estimator.to_string(),
                csv_num(r.truth),
                csv_num(r.mean_estimate),
                csv_num(r.bias),
                csv_num(r.mc_se),
                r.n.to_string(),
                r.reps.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
