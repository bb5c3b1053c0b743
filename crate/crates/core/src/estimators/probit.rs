use crate::data::{is_dummy, Dataset};
use crate::error::{Error, Result};
use crate::optimize::{minimize_qn, QnOptions};
use crate::smoothing::{inv_mills, log_gauss_cdf};
use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct ProbitFit {
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl ProbitFit {
    /// Coefficients rescaled to unit Euclidean norm.
    pub fn normalized(&self) -> Vec<f64> {
        let norm = self.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        self.beta.iter().map(|b| b / norm).collect()
    }
}

fn probit_nll(d: &Dataset, beta: &[f64], grad: &mut [f64]) -> f64 {
    let n = d.n() as f64;
    let eta = d.x() * DVector::from_column_slice(beta);
    let y = d.y();
    let mut ll = 0.0;
    let mut w = DVector::zeros(d.n());
    for i in 0..d.n() {
        if y[i] > 0.5 {
            ll += log_gauss_cdf(eta[i]);
            w[i] = inv_mills(eta[i]);
        } else {
            ll += log_gauss_cdf(-eta[i]);
            w[i] = -inv_mills(-eta[i]);
        }
    }
    let g = d.x().tr_mul(&w);
    for (gj, v) in grad.iter_mut().zip(g.iter()) {
        *gj = -v / n;
    }
    -ll / n
}

/// Probit maximum likelihood started from zero.
pub fn probit_fit(d: &Dataset) -> Result<ProbitFit> {
    if !is_dummy(d.y().as_slice()) {
        return Err(Error::NotBinary);
    }
    let res = minimize_qn(
        |b, g| probit_nll(d, b, g),
        &vec![0.0; d.k()],
        QnOptions::default(),
    );
    let mut diagnostic = (!res.converged).then(|| format!("probit: {}", res.message));
    let mut converged = res.converged;
    // the likelihood only approaches its supremum of 1 under separation
    if res.f_opt < 1e-6 {
        converged = false;
        diagnostic = Some("probit: perfect separation, coefficients diverge".into());
    }
    Ok(ProbitFit {
        beta: res.x_opt,
        loglik: -res.f_opt * d.n() as f64,
        converged,
        diagnostic,
    })
}
