//! Smoothed quantile objectives and single-start fits.

use crate::data::{is_dummy, Dataset};
use crate::error::{Error, Result};
use crate::model::CoefVector;
use crate::optimize::{minimize_qn, minimize_simplex, OptimResult, QnOptions, SimplexOptions};
use crate::smoothing::{
    check_tau, gauss_cdf, gauss_pdf, smoothed_check_deriv, smoothed_check_unchecked, Bandwidth,
    Limits,
};
use nalgebra::DVector;

/// Outcome of one optimization from one start.
#[derive(Debug, Clone)]
pub struct QuantileFit {
    pub coef: CoefVector,
    /// Minimized objective (the negated score for binary fits).
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostic: Option<String>,
}

/// `n^-1 sum rho~_tau(y_i - C~(x_i'b))`, the smoothed Powell objective.
pub struct CensoredObjective<'a> {
    d: &'a Dataset,
    tau: f64,
    limits: Limits,
    h: f64,
}

impl<'a> CensoredObjective<'a> {
    pub fn new(d: &'a Dataset, tau: f64, limits: Limits, h: Bandwidth) -> Self {
        CensoredObjective {
            d,
            tau,
            limits,
            h: h.get(),
        }
    }

    pub fn value(&self, b: &[f64]) -> f64 {
        let idx = self.d.x() * DVector::from_column_slice(b);
        let y = self.d.y();
        let mut acc = 0.0;
        for i in 0..self.d.n() {
            let (c, _) = self.limits.smoothed(idx[i], self.h);
            acc += smoothed_check_unchecked(y[i] - c, self.tau, self.h);
        }
        acc / self.d.n() as f64
    }

    pub fn value_grad(&self, b: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.d.n();
        let idx = self.d.x() * DVector::from_column_slice(b);
        let y = self.d.y();
        let mut acc = 0.0;
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let (c, dc) = self.limits.smoothed(idx[i], self.h);
            let r = y[i] - c;
            acc += smoothed_check_unchecked(r, self.tau, self.h);
            w[i] = -smoothed_check_deriv(r, self.tau, self.h) * dc;
        }
        let g = self.d.x().tr_mul(&w);
        for (gj, v) in grad.iter_mut().zip(g.iter()) {
            *gj = v / n as f64;
        }
        acc / n as f64
    }
}

/// Negated smoothed maximum score `-n^-1 sum (y_i - (1 - tau)) Phi(x_i'b / (|b| h))`.
///
/// Evaluated at `b / |b|`, so it is invariant to positive rescaling of `b`.
pub struct BinaryObjective<'a> {
    d: &'a Dataset,
    tau: f64,
    h: f64,
}

impl<'a> BinaryObjective<'a> {
    pub fn new(d: &'a Dataset, tau: f64, h: Bandwidth) -> Self {
        BinaryObjective { d, tau, h: h.get() }
    }

    fn unit(b: &[f64]) -> (DVector<f64>, f64) {
        let v = DVector::from_column_slice(b);
        let norm = v.norm();
        (v / norm, norm)
    }

    pub fn value(&self, b: &[f64]) -> f64 {
        let (u, _) = Self::unit(b);
        let idx = self.d.x() * u;
        let y = self.d.y();
        let shift = 1.0 - self.tau;
        let mut acc = 0.0;
        for i in 0..self.d.n() {
            acc += (y[i] - shift) * gauss_cdf(idx[i] / self.h);
        }
        -acc / self.d.n() as f64
    }

    pub fn value_grad(&self, b: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.d.n();
        let (u, norm) = Self::unit(b);
        let idx = self.d.x() * &u;
        let y = self.d.y();
        let shift = 1.0 - self.tau;
        let mut acc = 0.0;
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let s = idx[i] / self.h;
            let wt = y[i] - shift;
            acc += wt * gauss_cdf(s);
            w[i] = -wt * gauss_pdf(s) / self.h;
        }
        // gradient in u, then projected onto the tangent space of the sphere
        let gu = self.d.x().tr_mul(&w) / n as f64;
        let radial = u.dot(&gu);
        for j in 0..b.len() {
            grad[j] = (gu[j] - radial * u[j]) / norm;
        }
        -acc / n as f64
    }
}

const POLISH: SimplexOptions = SimplexOptions {
    scale: 1e-3,
    tol_x: 1e-8,
    max_iter: 2000,
};

/// Gradient norm below which a stalled line search still counts as a
/// solution; the objectives are means, so 1e-7 is well below sampling noise.
const STALL_TOL: f64 = 1e-7;

fn qn_then_polish(
    value: impl Fn(&[f64]) -> f64,
    value_grad: impl Fn(&[f64], &mut [f64]) -> f64,
    b0: &[f64],
) -> (OptimResult, Vec<f64>, f64) {
    let qn = minimize_qn(&value_grad, b0, QnOptions::default());
    let polish = minimize_simplex(&value, &qn.x_opt, POLISH);
    if polish.f_opt < qn.f_opt {
        let f = polish.f_opt;
        (qn, polish.x_opt, f)
    } else {
        let (x, f) = (qn.x_opt.clone(), qn.f_opt);
        (qn, x, f)
    }
}

fn qn_diagnostic(qn: &OptimResult) -> (bool, Option<String>) {
    let ok = qn.converged || (qn.residual.is_finite() && qn.residual <= STALL_TOL);
    let diag = (!ok).then(|| {
        format!(
            "optimizer did not converge ({}, gradient norm {:.3e})",
            qn.message, qn.residual
        )
    });
    (ok, diag)
}

/// Censored quantile regression from a single start.
pub fn cqr_fit(
    d: &Dataset,
    tau: f64,
    limits: Limits,
    h: Bandwidth,
    b0: &[f64],
) -> Result<QuantileFit> {
    check_tau(tau)?;
    if b0.len() != d.k() {
        return Err(Error::DimensionMismatch(format!(
            "start has {} entries, model has {}",
            b0.len(),
            d.k()
        )));
    }
    let limits = Limits::new(limits.lower, limits.upper)?;
    if !d.y().iter().any(|&y| y > limits.lower && y < limits.upper) {
        return Err(Error::NoUncensored);
    }
    let obj = CensoredObjective::new(d, tau, limits, h);
    let (qn, x, f) = qn_then_polish(|b| obj.value(b), |b, g| obj.value_grad(b, g), b0);
    let (converged, diagnostic) = qn_diagnostic(&qn);
    Ok(QuantileFit {
        coef: CoefVector::new(tau, x),
        objective: f,
        converged,
        iterations: qn.iterations,
        diagnostic,
    })
}

/// Plain smoothed quantile regression: [`cqr_fit`] with no censoring.
pub fn sqr_fit(d: &Dataset, tau: f64, h: Bandwidth, b0: &[f64]) -> Result<QuantileFit> {
    cqr_fit(d, tau, Limits::NONE, h, b0)
}

const MIN_NORM: f64 = 1e-12;

/// Smoothed binary quantile regression on the unit sphere.
pub fn bqr_fit(d: &Dataset, tau: f64, h: Bandwidth, b0: &[f64]) -> Result<QuantileFit> {
    check_tau(tau)?;
    if !is_dummy(d.y().as_slice()) {
        return Err(Error::NotBinary);
    }
    if b0.len() != d.k() {
        return Err(Error::DimensionMismatch(format!(
            "start has {} entries, model has {}",
            b0.len(),
            d.k()
        )));
    }
    let norm0 = b0.iter().map(|b| b * b).sum::<f64>().sqrt();
    if !(norm0 > MIN_NORM) {
        return Err(Error::InvalidInput("binary start vector has zero norm".into()));
    }
    let obj = BinaryObjective::new(d, tau, h);
    let start: Vec<f64> = b0.iter().map(|b| b / norm0).collect();
    let (mut qn, mut x, mut f) =
        qn_then_polish(|b| obj.value(b), |b, g| obj.value_grad(b, g), &start);

    let norm = |v: &[f64]| v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if !(norm(&x) > MIN_NORM) {
        // restart from a deterministic perturbation of the start
        let perturbed: Vec<f64> = start
            .iter()
            .enumerate()
            .map(|(j, b)| b + 0.01 * if j % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        (qn, x, f) = qn_then_polish(|b| obj.value(b), |b, g| obj.value_grad(b, g), &perturbed);
        if !(norm(&x) > MIN_NORM) {
            return Err(Error::NonConvergence(
                "binary coefficient vector collapsed to zero".into(),
            ));
        }
    }
    let (converged, diagnostic) = qn_diagnostic(&qn);
    Ok(QuantileFit {
        coef: CoefVector::normalized(tau, &x),
        objective: f,
        converged,
        iterations: qn.iterations,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::fd_gradient;
    use crate::smoothing::gauss_quantile;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn censored_data(n: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = x
            .iter()
            .map(|&xi| (xi + (1.0 + xi) * rng.sample::<f64, _>(StandardNormal) / 3.0).clamp(0.0, 1.0))
            .collect();
        Dataset::from_columns(y, &[("x", &x)]).unwrap()
    }

    fn binary_data(n: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| 10.0 * rng.random::<f64>()).collect();
        let y = x
            .iter()
            .map(|&xi| {
                let z: f64 = rng.sample(StandardNormal);
                f64::from(-2.5 + xi + xi * (z * z - 1.0) / 2f64.sqrt() > 0.0)
            })
            .collect();
        Dataset::from_columns(y, &[("x", &x)]).unwrap()
    }

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn censored_gradient_matches_finite_differences() {
        let d = censored_data(300, 1);
        let h = Bandwidth::new(0.07).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for limits in [Limits::new(0.0, 1.0).unwrap(), Limits::NONE] {
            let obj = CensoredObjective::new(&d, 0.3, limits, h);
            for _ in 0..20 {
                let b = [rng.random_range(0.0..2.0), rng.random_range(-0.5..0.5)];
                let mut g = [0.0; 2];
                let v = obj.value_grad(&b, &mut g);
                assert_eq!(v.to_bits(), obj.value(&b).to_bits());
                let fd = fd_gradient(|p| obj.value(p), &b, 1e-6);
                for j in 0..2 {
                    assert!(rel_close(g[j], fd[j]), "{g:?} vs {fd:?}");
                }
            }
        }
    }

    #[test]
    fn binary_gradient_matches_finite_differences() {
        let d = binary_data(300, 3);
        let h = Bandwidth::new(0.2).unwrap();
        let obj = BinaryObjective::new(&d, 0.5, h);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let b = [rng.random_range(0.05..0.6), rng.random_range(-1.5..-0.5)];
            let mut g = [0.0; 2];
            obj.value_grad(&b, &mut g);
            let fd = fd_gradient(|p| obj.value(p), &b, 1e-6);
            for j in 0..2 {
                assert!(rel_close(g[j], fd[j]), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn binary_objective_scale_invariant() {
        let d = binary_data(200, 5);
        let obj = BinaryObjective::new(&d, 0.3, Bandwidth::new(0.2).unwrap());
        for b in [[0.2, -0.9], [1.3, 0.4], [-0.01, 2.0]] {
            let b2 = [2.0 * b[0], 2.0 * b[1]];
            assert_eq!(obj.value(&b).to_bits(), obj.value(&b2).to_bits());
        }
    }

    #[test]
    fn interpolates_noiseless_data() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let d = Dataset::from_columns(y, &[("x", &x)]).unwrap();
        let h = Bandwidth::new(0.05).unwrap();
        // smoothing moves the intercept to the minimizer of tau*u + S(-u), u = -h z_tau
        for tau in [0.2, 0.5, 0.8] {
            let fit = sqr_fit(&d, tau, h, &[1.0, 0.0]).unwrap();
            let shift = h.get() * gauss_quantile(tau);
            assert!(fit.converged, "{:?}", fit.diagnostic);
            assert!((fit.coef.beta[0] - 2.0).abs() < 1e-6, "{:?}", fit.coef);
            assert!((fit.coef.beta[1] - 0.5 - shift).abs() < 1e-6, "{:?}", fit.coef);
        }
    }

    #[test]
    fn constant_response() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = Dataset::from_columns(vec![3.0; 100], &[("x", &x)]).unwrap();
        let fit = sqr_fit(&d, 0.5, Bandwidth::new(0.1).unwrap(), &[0.0, 0.0]).unwrap();
        assert!((fit.coef.beta[1] - 3.0).abs() < 1e-6);
        assert!(fit.coef.beta[0].abs() < 1e-6);
    }

    #[test]
    fn plain_equals_uncensored_cqr() {
        let d = censored_data(200, 7);
        let h = Bandwidth::new(0.08).unwrap();
        let a = sqr_fit(&d, 0.4, h, &[0.5, 0.1]).unwrap();
        let b = cqr_fit(&d, 0.4, Limits::NONE, h, &[0.5, 0.1]).unwrap();
        for j in 0..2 {
            assert_eq!(a.coef.beta[j].to_bits(), b.coef.beta[j].to_bits());
        }
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }

    #[test]
    fn separated_binary_direction() {
        // y = 1 exactly when x1 - 0.5 x2 - 0.2 > 0
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let n = 400;
        let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| f64::from(x1[i] - 0.5 * x2[i] > 0.0)).collect();
        // brute force over the unit circle for a design without intercept
        let mut x = nalgebra::DMatrix::zeros(n, 2);
        for i in 0..n {
            x[(i, 0)] = x1[i];
            x[(i, 1)] = x2[i];
        }
        let d = Dataset::new(y, x, vec!["x1".into(), "x2".into()], None).unwrap();
        let h = Bandwidth::new(0.05).unwrap();
        let obj = BinaryObjective::new(&d, 0.5, h);
        let grid_best = (0..20_000)
            .map(|i| {
                let a = i as f64 / 20_000.0 * std::f64::consts::TAU;
                (a, obj.value(&[a.cos(), a.sin()]))
            })
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap()
            .0;
        let truth = (-0.5f64).atan2(1.0);
        let fit = bqr_fit(&d, 0.5, h, &[1.0, 0.0]).unwrap();
        let angle = fit.coef.beta[1].atan2(fit.coef.beta[0]);
        let gap = |a: f64, b: f64| (a - b).rem_euclid(std::f64::consts::TAU).min((b - a).rem_euclid(std::f64::consts::TAU));
        assert!(fit.coef.unit_norm);
        assert!(gap(angle, truth) < 0.05, "angle {angle} truth {truth}");
        assert!(gap(angle, grid_best) < 0.01, "angle {angle} grid {grid_best}");
    }

    #[test]
    fn binary_input_checks() {
        let d = censored_data(50, 9);
        let h = Bandwidth::new(0.1).unwrap();
        assert!(matches!(bqr_fit(&d, 0.5, h, &[1.0, 0.0]), Err(Error::NotBinary)));
        let b = binary_data(50, 10);
        assert!(bqr_fit(&b, 0.5, h, &[0.0, 0.0]).is_err());
        assert!(bqr_fit(&b, 1.5, h, &[0.0, 1.0]).is_err());
        assert!(cqr_fit(&b, 0.5, Limits::NONE, h, &[0.0]).is_err());
    }

    #[test]
    fn cqr_needs_interior_observations() {
        let d = Dataset::from_columns(vec![0.0, 1.0, 0.0, 1.0], &[("x", &[1.0, 2.0, 3.0, 4.0])])
            .unwrap();
        let r = cqr_fit(
            &d,
            0.5,
            Limits::new(0.0, 1.0).unwrap(),
            Bandwidth::new(0.1).unwrap(),
            &[0.0, 0.5],
        );
        assert!(matches!(r, Err(Error::NoUncensored)));
    }
}
