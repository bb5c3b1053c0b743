//! Post-estimation predictions from a grid of fitted quantiles.

use crate::data::ModelKind;
use crate::error::{Error, Result};
use crate::model::{tau_label, FitResult};
use crate::smoothing::{gauss_cdf, Bandwidth};
use nalgebra::{DMatrix, DVector};

fn check_design(fit: &FitResult, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != fit.k() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, fit has {}",
            x.ncols(),
            fit.k()
        )));
    }
    Ok(())
}

fn grid_size(fit: &FitResult, what: &str) -> Result<usize> {
    let m = fit.coefs.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "{what} needs at least 2 fitted quantiles, got {m}"
        )));
    }
    Ok(m)
}

fn pbw_or_default(fit: &FitResult, pbw: Option<Bandwidth>) -> Result<Bandwidth> {
    match (pbw, fit.spec.pbwidth) {
        (Some(h), _) => Ok(h),
        (None, Some(h)) => Bandwidth::new(h),
        (None, None) => Ok(fit.bandwidth),
    }
}

fn indices(fit: &FitResult, x: &DMatrix<f64>) -> Vec<DVector<f64>> {
    fit.coefs.iter().map(|c| c.index(x)).collect()
}

/// `min(max(x'b(tau), c_L), c_H)` for every row of `x`.
pub fn predict_censored_quantile(fit: &FitResult, x: &DMatrix<f64>, tau: f64) -> Result<Vec<f64>> {
    check_design(fit, x)?;
    let limits = fit.spec.limits();
    let idx = fit.coef(tau)?.index(x);
    Ok(idx.iter().map(|&v| limits.clamp(v)).collect())
}

/// Naive and smoothed censoring probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CensorProbs {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub total: Vec<f64>,
    pub lo_s: Vec<f64>,
    pub hi_s: Vec<f64>,
    pub total_s: Vec<f64>,
}

pub fn censoring_probability(
    fit: &FitResult,
    x: &DMatrix<f64>,
    pbw: Option<Bandwidth>,
) -> Result<CensorProbs> {
    check_design(fit, x)?;
    let m = grid_size(fit, "censoring probability")?;
    let h = pbw_or_default(fit, pbw)?.get();
    let limits = fit.spec.limits();
    let (c_lo, c_hi) = (limits.lower, limits.upper);
    let idx = indices(fit, x);
    let n = x.nrows();
    let mut out = CensorProbs {
        lo: vec![0.0; n],
        hi: vec![0.0; n],
        total: vec![0.0; n],
        lo_s: vec![0.0; n],
        hi_s: vec![0.0; n],
        total_s: vec![0.0; n],
    };
    for i in 0..n {
        let (mut lo, mut hi, mut lo_s, mut hi_s) = (0usize, 0usize, 0.0, 0.0);
        for line in &idx {
            let v = line[i];
            if c_lo.is_finite() {
                lo += usize::from(v < c_lo);
                lo_s += gauss_cdf((c_lo - v) / h);
            }
            if c_hi.is_finite() {
                hi += usize::from(v > c_hi);
                hi_s += gauss_cdf((v - c_hi) / h);
            }
        }
        let mf = m as f64;
        out.lo[i] = lo as f64 / mf;
        out.hi[i] = hi as f64 / mf;
        out.total[i] = (lo + hi) as f64 / mf;
        out.lo_s[i] = lo_s / mf;
        out.hi_s[i] = hi_s / mf;
        out.total_s[i] = (lo_s + hi_s) / mf;
    }
    Ok(out)
}

/// `P(y = 1 | x)` as (naive, smoothed) grid averages.
pub fn prob_one(
    fit: &FitResult,
    x: &DMatrix<f64>,
    pbw: Option<Bandwidth>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if fit.spec.kind != ModelKind::Binary {
        return Err(Error::InvalidInput(
            "P(y=1|x) needs a binary quantile fit".into(),
        ));
    }
    check_design(fit, x)?;
    let m = grid_size(fit, "P(y=1|x)")? as f64;
    let h = pbw_or_default(fit, pbw)?.get();
    let idx = indices(fit, x);
    let n = x.nrows();
    let mut naive = vec![0.0; n];
    let mut smooth = vec![0.0; n];
    for i in 0..n {
        let mut count = 0usize;
        let mut s = 0.0;
        for line in &idx {
            count += usize::from(line[i] > 0.0);
            s += gauss_cdf(line[i] / h);
        }
        naive[i] = count as f64 / m;
        smooth[i] = s / m;
    }
    Ok((naive, smooth))
}

/// Output column prefixes; `None` skips that prediction.
#[derive(Debug, Clone, Default)]
pub struct PredictRequest {
    pub qcen: Option<String>,
    pub pcen: Option<String>,
    pub p1: Option<String>,
    pub pbw: Option<Bandwidth>,
}

impl PredictRequest {
    pub fn is_empty(&self) -> bool {
        self.qcen.is_none() && self.pcen.is_none() && self.p1.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub columns: Vec<(String, Vec<f64>)>,
    /// Number of quantiles in the grid.
    pub m: usize,
    pub pbw: f64,
    /// Share of rows whose censored-quantile predictions decrease in tau.
    pub crossing_fraction: Option<f64>,
}

impl PredictionSet {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Share of rows where some consecutive pair of quantile predictions decreases.
pub fn crossing_fraction(preds: &[Vec<f64>]) -> f64 {
    let Some(n) = preds.first().map(Vec::len) else {
        return 0.0;
    };
    if n == 0 {
        return 0.0;
    }
    let crossed = (0..n)
        .filter(|&i| preds.windows(2).any(|w| w[1][i] < w[0][i] - 1e-12))
        .count();
    crossed as f64 / n as f64
}

pub fn predict(fit: &FitResult, x: &DMatrix<f64>, req: &PredictRequest) -> Result<PredictionSet> {
    check_design(fit, x)?;
    let pbw = pbw_or_default(fit, req.pbw)?;
    let mut set = PredictionSet {
        columns: Vec::new(),
        m: fit.coefs.len(),
        pbw: pbw.get(),
        crossing_fraction: None,
    };
    if let Some(prefix) = &req.qcen {
        let mut preds = Vec::with_capacity(fit.coefs.len());
        for c in &fit.coefs {
            let q = predict_censored_quantile(fit, x, c.tau)?;
            set.columns
                .push((format!("{prefix}_{}", tau_label(c.tau)), q.clone()));
            preds.push(q);
        }
        set.crossing_fraction = Some(crossing_fraction(&preds));
    }
    if let Some(prefix) = &req.pcen {
        if fit.spec.kind != ModelKind::Censored {
            return Err(Error::InvalidInput(
                "censoring probabilities need a censored fit".into(),
            ));
        }
        let p = censoring_probability(fit, x, Some(pbw))?;
        set.columns.push((prefix.clone(), p.total));
        set.columns.push((format!("{prefix}_s"), p.total_s));
        set.columns.push((format!("{prefix}_lo"), p.lo));
        set.columns.push((format!("{prefix}_hi"), p.hi));
        set.columns.push((format!("{prefix}_lo_s"), p.lo_s));
        set.columns.push((format!("{prefix}_hi_s"), p.hi_s));
    }
    if let Some(prefix) = &req.p1 {
        let (naive, smooth) = prob_one(fit, x, Some(pbw))?;
        set.columns.push((prefix.clone(), naive));
        set.columns.push((format!("{prefix}_s"), smooth));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefVector, ModelSpec, ScaleSource};
    use proptest::prelude::*;

    fn fit_with(spec: ModelSpec, lines: &[(f64, f64)]) -> FitResult {
        let m = lines.len();
        let taus: Vec<f64> = (1..=m).map(|j| j as f64 / (m + 1) as f64).collect();
        FitResult {
            spec: ModelSpec { taus: taus.clone(), ..spec },
            depvar: "y".into(),
            names: vec!["x".into(), "_cons".into()],
            intercept: Some(1),
            coefs: taus
                .iter()
                .zip(lines)
                .map(|(&t, &(s, c))| CoefVector::new(t, vec![s, c]))
                .collect(),
            objectives: vec![0.0; m],
            converged: vec![true; m],
            v: DMatrix::zeros(2 * m, 2 * m),
            bandwidth: Bandwidth::new(0.1).unwrap(),
            sigma_hat: 1.0,
            scale_source: ScaleSource::Tobit,
            n: 10,
            reps_completed: 0,
            reps_failed: 0,
            diagnostics: vec![],
        }
    }

    fn design(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { xs[i] } else { 1.0 })
    }

    fn censored(lines: &[(f64, f64)]) -> FitResult {
        fit_with(ModelSpec::censored(0.0, 1.0, vec![0.5]), lines)
    }

    #[test]
    fn hard_clamp() {
        let fit = censored(&[(0.0, -0.4), (0.0, 0.37), (0.0, 1.3)]);
        let x = design(&[0.0]);
        let taus = fit.taus();
        assert_eq!(predict_censored_quantile(&fit, &x, taus[0]).unwrap(), vec![0.0]);
        assert_eq!(predict_censored_quantile(&fit, &x, taus[1]).unwrap(), vec![0.37]);
        assert_eq!(predict_censored_quantile(&fit, &x, taus[2]).unwrap(), vec![1.0]);
        assert!(matches!(
            predict_censored_quantile(&fit, &x, 0.33),
            Err(Error::TauNotFitted(_))
        ));
    }

    #[test]
    fn five_of_nine_below() {
        let lines: Vec<(f64, f64)> = (0..9)
            .map(|j| (0.0, if j < 5 { -0.2 } else { 0.5 }))
            .collect();
        let fit = censored(&lines);
        let p = censoring_probability(&fit, &design(&[1.0]), None).unwrap();
        assert_eq!(p.lo[0], 5.0 / 9.0);
        assert!((p.total[0] - 0.5556).abs() < 1e-4);
        assert_eq!(p.hi[0], 0.0);
    }

    #[test]
    fn interior_lines_and_boundary_kernel() {
        let inside: Vec<(f64, f64)> = (0..9).map(|j| (0.0, 0.1 + 0.08 * j as f64)).collect();
        let p = censoring_probability(&censored(&inside), &design(&[0.0]), None).unwrap();
        assert_eq!(p.total[0], 0.0);
        let on_limit = vec![(0.0, 0.0); 9];
        let p = censoring_probability(&censored(&on_limit), &design(&[0.0]), None).unwrap();
        assert_eq!(p.total[0], 0.0);
        assert!((p.total_s[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infinite_limits_contribute_nothing() {
        let fit = fit_with(ModelSpec::censored(0.0, f64::INFINITY, vec![0.5]), &[(0.0, 5.0), (0.0, -1.0)]);
        let p = censoring_probability(&fit, &design(&[0.0]), None).unwrap();
        assert_eq!(p.hi[0], 0.0);
        assert_eq!(p.hi_s[0], 0.0);
        assert_eq!(p.lo[0], 0.5);
    }

    #[test]
    fn needs_two_quantiles() {
        let fit = censored(&[(0.0, 0.5)]);
        assert!(censoring_probability(&fit, &design(&[0.0]), None).is_err());
    }

    #[test]
    fn prob_one_rules() {
        let fit = fit_with(ModelSpec::binary(vec![0.5]), &[(0.3, 0.1), (0.5, 0.2), (0.7, 0.4)]);
        let (naive, smooth) = prob_one(&fit, &design(&[1.0, 2.0]), None).unwrap();
        assert_eq!(naive, vec![1.0, 1.0]);
        assert!(smooth.iter().all(|&p| p > 0.9 && p <= 1.0));
        assert!(prob_one(&censored(&[(0.0, 0.1), (0.0, 0.2)]), &design(&[0.0]), None).is_err());
    }

    #[test]
    fn prediction_columns_named_by_quantile() {
        let lines: Vec<(f64, f64)> = (0..9).map(|j| (1.0, -0.3 + 0.1 * j as f64)).collect();
        let fit = censored(&lines);
        let req = PredictRequest {
            qcen: Some("myqcen".into()),
            pcen: Some("mypcen".into()),
            ..Default::default()
        };
        let set = predict(&fit, &design(&[0.0, 0.5, 1.0]), &req).unwrap();
        let names: Vec<&str> = set.columns.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(&names[..2], &["myqcen_q10", "myqcen_q20"]);
        assert_eq!(names[8], "myqcen_q90");
        assert!(names.contains(&"mypcen") && names.contains(&"mypcen_s"));
        assert_eq!(set.crossing_fraction, Some(0.0));
        assert_eq!(set.m, 9);
        for (_, col) in &set.columns {
            assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let p1 = PredictRequest { p1: Some("p".into()), ..Default::default() };
        assert!(predict(&fit, &design(&[0.0]), &p1).is_err());
    }

    #[test]
    fn crossing_detected() {
        let fit = censored(&[(1.0, 0.2), (-1.0, 0.5)]);
        let req = PredictRequest { qcen: Some("q".into()), ..Default::default() };
        // lines cross at x = 0.15
        let set = predict(&fit, &design(&[0.0, 0.1, 0.2, 0.4]), &req).unwrap();
        assert_eq!(set.crossing_fraction, Some(0.5));
    }

    proptest! {
        #[test]
        fn naive_multiple_of_inverse_m(
            lines in prop::collection::vec((-2.0f64..2.0, -1.0f64..2.0), 2..12),
            xs in prop::collection::vec(-1.0f64..1.0, 1..20),
        ) {
            let m = lines.len() as f64;
            let fit = censored(&lines);
            let p = censoring_probability(&fit, &design(&xs), None).unwrap();
            for v in p.lo.iter().chain(&p.hi).chain(&p.total) {
                prop_assert_eq!((v * m).round() / m, *v);
                prop_assert!((0.0..=1.0).contains(v));
            }
            for v in p.lo_s.iter().chain(&p.hi_s).chain(&p.total_s) {
                prop_assert!((0.0..=1.0).contains(v));
            }
            let bfit = fit_with(ModelSpec::binary(vec![0.5]), &lines);
            let (naive, _) = prob_one(&bfit, &design(&xs), None).unwrap();
            for v in naive {
                prop_assert_eq!((v * m).round() / m, v);
            }
        }

        #[test]
        fn smoothed_tends_to_naive(
            lines in prop::collection::vec((-2.0f64..2.0, -1.0f64..2.0), 2..10),
            xs in prop::collection::vec(-1.0f64..1.0, 1..10),
        ) {
            let x = design(&xs);
            let fit = censored(&lines);
            let tiny = Some(Bandwidth::new(1e-8).unwrap());
            // skip points with an index within 1e-6 of a limit
            let near = |v: f64| v.abs() < 1e-6 || (v - 1.0).abs() < 1e-6;
            let p = censoring_probability(&fit, &x, tiny).unwrap();
            let bfit = fit_with(ModelSpec::binary(vec![0.5]), &lines);
            let (naive, smooth) = prob_one(&bfit, &x, tiny).unwrap();
            for i in 0..xs.len() {
                if lines.iter().any(|&(s, c)| near(s * xs[i] + c)) {
                    continue;
                }
                prop_assert!((p.total[i] - p.total_s[i]).abs() < 1e-12);
                prop_assert!((p.lo[i] - p.lo_s[i]).abs() < 1e-12);
                prop_assert!((naive[i] - smooth[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_in_x_with_common_sign(
            slopes in prop::collection::vec(0.1f64..2.0, 2..9),
            cons in prop::collection::vec(-1.0f64..1.0, 9),
        ) {
            let lines: Vec<(f64, f64)> = slopes.iter().zip(&cons).map(|(&s, &c)| (s, c)).collect();
            let xs: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
            let x = design(&xs);
            let p = censoring_probability(&censored(&lines), &x, None).unwrap();
            let (naive, _) = prob_one(&fit_with(ModelSpec::binary(vec![0.5]), &lines), &x, None).unwrap();
            for i in 1..xs.len() {
                prop_assert!(p.lo[i] <= p.lo[i - 1]);
                prop_assert!(p.lo_s[i] <= p.lo_s[i - 1] + 1e-15);
                prop_assert!(naive[i] >= naive[i - 1]);
            }
        }
    }
}
