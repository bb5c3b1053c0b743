//! Pairs bootstrap covariance and Wald tests across quantiles.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{check_data, fit_one};
use crate::model::{tau_label, FitResult, ModelSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma_ur;

/// Redraws allowed per replicate before it is counted as failed.
pub const MAX_ATTEMPTS: usize = 5;

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

const STREAM_SALT: u64 = 0x6a09_e667_f3bc_c909;

/// Stacked replicate estimates, one row per completed replicate.
#[derive(Debug, Clone)]
pub struct BootstrapRecord {
    pub draws: DMatrix<f64>,
    pub failed: usize,
    pub seed: u64,
}

impl BootstrapRecord {
    pub fn completed(&self) -> usize {
        self.draws.nrows()
    }
}

fn replicate_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STREAM_SALT);
    rng.set_stream(rep as u64);
    rng
}

fn run_replicate(d: &Dataset, spec: &ModelSpec, fit: &FitResult, rep: usize) -> Option<Vec<f64>> {
    let mut rng = replicate_rng(spec.seed, rep);
    let n = d.n();
    let limits = spec.limits();
    let mut idx = vec![0; n];
    'attempt: for _ in 0..MAX_ATTEMPTS {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let sample = d.resample(&idx);
        if check_data(&sample, spec).is_err() {
            continue;
        }
        let mut row = Vec::with_capacity(fit.coefs.len() * d.k());
        for c in &fit.coefs {
            match fit_one(&sample, spec.kind, limits, c.tau, fit.bandwidth, &c.beta) {
                Ok(q) if q.converged && q.coef.beta.iter().all(|v| v.is_finite()) => {
                    row.extend_from_slice(&q.coef.beta)
                }
                _ => continue 'attempt,
            }
        }
        return Some(row);
    }
    None
}

/// Sample covariance of the rows of `draws` (divisor `B - 1`).
pub fn sample_covariance(draws: &DMatrix<f64>) -> DMatrix<f64> {
    let (b, dim) = draws.shape();
    let mean = draws.row_mean();
    let mut v = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let mut acc = 0.0;
            for r in 0..b {
                acc += (draws[(r, i)] - mean[i]) * (draws[(r, j)] - mean[j]);
            }
            let c = acc / (b as f64 - 1.0);
            v[(i, j)] = c;
            v[(j, i)] = c;
        }
    }
    v
}

/// Pairs bootstrap: every replicate refits all quantiles on one resample, so
/// the covariance couples estimates across quantiles.
pub fn bootstrap(
    d: &Dataset,
    spec: &ModelSpec,
    point_fit: &FitResult,
) -> Result<(DMatrix<f64>, BootstrapRecord)> {
    if spec.reps < 2 {
        return Err(Error::InvalidSpec(
            "bootstrap needs at least 2 replications".into(),
        ));
    }
    let dim = point_fit.coefs.len() * d.k();
    if point_fit.theta().len() != dim {
        return Err(Error::DimensionMismatch(
            "point fit does not match the dataset".into(),
        ));
    }
    let rows: Vec<Option<Vec<f64>>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| run_replicate(d, spec, point_fit, rep))
        .collect();
    let failed = rows.iter().filter(|r| r.is_none()).count();
    let done: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    if failed as f64 > MAX_FAILED_FRACTION * spec.reps as f64 || done.len() < 2 {
        return Err(Error::BootstrapUnreliable {
            failed,
            total: spec.reps,
        });
    }
    let draws = DMatrix::from_fn(done.len(), dim, |r, c| done[r][c]);
    let v = sample_covariance(&draws);
    Ok((
        v,
        BootstrapRecord {
            draws,
            failed,
            seed: spec.seed,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub constraints: Vec<String>,
    pub warnings: Vec<String>,
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x == f64::INFINITY {
        0.0
    } else {
        gamma_ur(df as f64 / 2.0, x / 2.0)
    }
}

/// `W = (R theta - r)' (R V R')^+ (R theta - r)` with the rank of `R V R'`
/// as degrees of freedom.
pub fn wald_test(
    theta: &DVector<f64>,
    v: &DMatrix<f64>,
    r_mat: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<WaldResult> {
    let dim = theta.len();
    if v.shape() != (dim, dim) || r_mat.ncols() != dim || r_mat.nrows() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "theta {dim}, V {:?}, R {:?}, r {}",
            v.shape(),
            r_mat.shape(),
            r.len()
        )));
    }
    let q = r_mat.nrows();
    if q == 0 {
        return Err(Error::InvalidInput("no constraints given".into()));
    }
    let diff = r_mat * theta - r;
    let mut m = r_mat * v * r_mat.transpose();
    m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = lmax * 1e-10;
    let mut stat = 0.0;
    let mut rank = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > tol {
            let proj = eig.eigenvectors.column(k).dot(&diff);
            stat += proj * proj / lam;
            rank += 1;
        }
    }
    if rank == 0 {
        return Err(Error::InvalidInput(
            "constraint covariance R V R' is zero".into(),
        ));
    }
    let mut warnings = Vec::new();
    if rank < q {
        warnings.push(format!(
            "R V R' is singular; {} of {q} constraints are linearly dependent, df reduced to {rank}",
            q - rank
        ));
    }
    Ok(WaldResult {
        statistic: stat,
        df: rank,
        p_value: chi2_sf(stat, rank),
        constraints: Vec::new(),
        warnings,
    })
}

/// Which covariates a homogeneity test covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovariateSel {
    Named(String),
    /// Every covariate except the intercept.
    All,
}

fn coef_name(fit: &FitResult, t: usize, j: usize) -> String {
    format!("[{}]{}", tau_label(fit.coefs[t].tau), fit.names[j])
}

fn run(fit: &FitResult, rows: Vec<(Vec<(usize, f64)>, String)>) -> Result<WaldResult> {
    let dim = fit.theta().len();
    let mut r_mat = DMatrix::zeros(rows.len(), dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (i, (entries, label)) in rows.into_iter().enumerate() {
        for (c, w) in entries {
            r_mat[(i, c)] += w;
        }
        labels.push(label);
    }
    let mut res = wald_test(&fit.theta(), &fit.v, &r_mat, &DVector::zeros(labels.len()))?;
    res.constraints = labels;
    Ok(res)
}

/// Equality of a covariate's coefficient across all fitted quantiles.
pub fn homogeneity_test(fit: &FitResult, covariate: &CovariateSel) -> Result<WaldResult> {
    let m = fit.coefs.len();
    if m < 2 {
        return Err(Error::InvalidInput(
            "homogeneity test needs at least two quantiles".into(),
        ));
    }
    let cols: Vec<usize> = match covariate {
        CovariateSel::Named(name) => vec![fit
            .column(name)
            .ok_or_else(|| Error::UnknownCovariate(name.clone()))?],
        CovariateSel::All => (0..fit.k()).filter(|&j| Some(j) != fit.intercept).collect(),
    };
    if cols.is_empty() {
        return Err(Error::InvalidInput("no covariates to test".into()));
    }
    let k = fit.k();
    let mut rows = Vec::new();
    for &j in &cols {
        for t in 1..m {
            rows.push((
                vec![(j, 1.0), (t * k + j, -1.0)],
                format!("{} - {} = 0", coef_name(fit, 0, j), coef_name(fit, t, j)),
            ));
        }
    }
    run(fit, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryMode {
    /// K constraints for each delta, tested jointly.
    PerDelta,
    /// One set of K constraints averaging over the deltas.
    Averaged,
}

fn fmt_weight(w: f64) -> String {
    let s = format!("{w}");
    s.strip_prefix("0.").map_or(s.clone(), |rest| format!(".{rest}"))
}

/// Tests `beta(0.5 - d)/2 + beta(0.5 + d)/2 - beta(0.5) = 0`.
pub fn symmetry_test(fit: &FitResult, deltas: &[f64], mode: SymmetryMode) -> Result<WaldResult> {
    if deltas.is_empty() {
        return Err(Error::InvalidInput("no symmetry deltas given".into()));
    }
    let find = |tau: f64| fit.tau_position(tau).ok_or(Error::TauNotFitted(tau));
    let mid = find(0.5)?;
    let mut pairs = Vec::with_capacity(deltas.len());
    for &d in deltas {
        if !(d > 0.0 && d < 0.5) {
            return Err(Error::InvalidInput(format!(
                "symmetry delta {d} outside (0, 0.5)"
            )));
        }
        pairs.push((find(0.5 - d)?, find(0.5 + d)?));
    }
    let k = fit.k();
    let mut rows = Vec::new();
    let mut push = |groups: &[(usize, usize)], weight: f64| {
        for j in 0..k {
            let mut entries = Vec::new();
            let mut terms = Vec::new();
            let mut taus: Vec<usize> = groups.iter().flat_map(|&(lo, hi)| [lo, hi]).collect();
            taus.sort_unstable();
            for &t in &taus {
                entries.push((t * k + j, weight));
            }
            entries.push((mid * k + j, -1.0));
            let mut all = taus.clone();
            all.push(mid);
            all.sort_unstable();
            for t in all {
                if t == mid {
                    terms.push(format!("- {}", coef_name(fit, t, j)));
                } else {
                    let prefix = if terms.is_empty() { "" } else { "+ " };
                    terms.push(format!("{prefix}{}*{}", fmt_weight(weight), coef_name(fit, t, j)));
                }
            }
            rows.push((entries, format!("{} = 0", terms.join(" "))));
        }
    };
    match mode {
        SymmetryMode::PerDelta => {
            for &p in &pairs {
                push(&[p], 0.5);
            }
        }
        SymmetryMode::Averaged => push(&pairs, 0.5 / pairs.len() as f64),
    }
    run(fit, rows)
}
