use super::ols;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optimize::{minimize_qn, QnOptions};
use crate::smoothing::{inv_mills, log_gauss_cdf, Limits};
use nalgebra::DVector;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct TobitFit {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub loglik: f64,
    pub converged: bool,
    pub n_lower: usize,
    pub n_upper: usize,
    pub n_uncensored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Censoring {
    Lower,
    Upper,
    None,
}

pub(crate) fn classify(y: f64, limits: &Limits) -> Censoring {
    if y <= limits.lower {
        Censoring::Lower
    } else if y >= limits.upper {
        Censoring::Upper
    } else {
        Censoring::None
    }
}

/// Counts of (lower-censored, upper-censored, uncensored) observations.
pub fn censoring_counts(d: &Dataset, limits: &Limits) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for &y in d.y().iter() {
        match classify(y, limits) {
            Censoring::Lower => counts.0 += 1,
            Censoring::Upper => counts.1 += 1,
            Censoring::None => counts.2 += 1,
        }
    }
    counts
}

/// Gaussian censored-regression negative mean log-likelihood over
/// `(beta, ln sigma)`, with gradient.
struct TobitObjective<'a> {
    d: &'a Dataset,
    limits: Limits,
    kinds: Vec<Censoring>,
}

impl TobitObjective<'_> {
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.d.k();
        let n = self.d.n() as f64;
        let beta = DVector::from_column_slice(&theta[..k]);
        let log_sigma = theta[k];
        let sigma = log_sigma.exp();
        let eta = self.d.x() * &beta;
        let y = self.d.y();

        let mut ll = 0.0;
        let mut w = DVector::zeros(self.d.n());
        let mut g_log_sigma = 0.0;
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        for i in 0..self.d.n() {
            match self.kinds[i] {
                Censoring::None => {
                    let z = (y[i] - eta[i]) / sigma;
                    ll += -0.5 * z * z - log_sigma - half_log_2pi;
                    w[i] = z / sigma;
                    g_log_sigma += z * z - 1.0;
                }
                Censoring::Lower => {
                    let a = (self.limits.lower - eta[i]) / sigma;
                    ll += log_gauss_cdf(a);
                    let lam = inv_mills(a);
                    w[i] = -lam / sigma;
                    g_log_sigma += -lam * a;
                }
                Censoring::Upper => {
                    let b = (eta[i] - self.limits.upper) / sigma;
                    ll += log_gauss_cdf(b);
                    let lam = inv_mills(b);
                    w[i] = lam / sigma;
                    g_log_sigma += -lam * b;
                }
            }
        }
        let gb = self.d.x().tr_mul(&w);
        for j in 0..k {
            grad[j] = -gb[j] / n;
        }
        grad[k] = -g_log_sigma / n;
        -ll / n
    }
}

/// Tobit maximum likelihood with lower and/or upper censoring.
pub fn tobit_fit(d: &Dataset, limits: Limits) -> Result<TobitFit> {
    let kinds: Vec<Censoring> = d.y().iter().map(|&y| classify(y, &limits)).collect();
    let n_lower = kinds.iter().filter(|&&c| c == Censoring::Lower).count();
    let n_upper = kinds.iter().filter(|&&c| c == Censoring::Upper).count();
    let n_unc = d.n() - n_lower - n_upper;
    if n_unc == 0 {
        return Err(Error::NoUncensored);
    }

    let unc: Vec<usize> = (0..d.n()).filter(|&i| kinds[i] == Censoring::None).collect();
    let start_data = if unc.len() >= d.k() {
        d.resample(&unc)
    } else {
        d.clone()
    };
    let start = ols(&start_data);
    let sigma0 = (start.rss / start_data.n() as f64).sqrt().max(1e-3 * (1.0 + start.y_sd));

    let mut theta0 = start.beta.clone();
    theta0.push(sigma0.ln());
    let obj = TobitObjective { d, limits, kinds };
    let res = minimize_qn(|t, g| obj.eval(t, g), &theta0, QnOptions::default());
    let k = d.k();
    let mut scratch = vec![0.0; k + 1];
    let nll = obj.eval(&res.x_opt, &mut scratch);
    Ok(TobitFit {
        beta: res.x_opt[..k].to_vec(),
        sigma: res.x_opt[k].exp(),
        loglik: -nll * d.n() as f64,
        converged: res.converged,
        n_lower,
        n_upper,
        n_uncensored: n_unc,
    })
}
