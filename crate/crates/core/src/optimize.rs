//! Unconstrained minimizers: BFGS with Armijo backtracking, Nelder-Mead,
//! and a central-difference gradient.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    QuasiNewton,
    Simplex,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x_opt: Vec<f64>,
    pub f_opt: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
    /// Final gradient norm (quasi-Newton) or simplex diameter.
    pub residual: f64,
    pub message: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct QnOptions {
    pub tol_g: f64,
    /// Gradient norm accepted as converged once `f` stops moving at
    /// rounding level.
    pub tol_stall: f64,
    pub max_iter: usize,
}

impl Default for QnOptions {
    fn default() -> Self {
        QnOptions {
            tol_g: 1e-8,
            tol_stall: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub scale: f64,
    pub tol_x: f64,
    pub max_iter: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            scale: 0.1,
            tol_x: 1e-8,
            max_iter: 2000,
        }
    }
}

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 40;
const STALL_STEPS: usize = 3;

/// BFGS on the inverse Hessian. `f` returns the objective and writes the
/// gradient into its second argument.
pub fn minimize_qn<F>(f: F, x0: &[f64], opts: QnOptions) -> OptimResult
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let d = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut g = DVector::zeros(d);
    let mut fx = f(x.as_slice(), g.as_mut_slice());
    let fail = |x: &DVector<f64>, fx: f64, it: usize, res: f64, msg| OptimResult {
        x_opt: x.as_slice().to_vec(),
        f_opt: fx,
        iterations: it,
        converged: false,
        method: Method::QuasiNewton,
        residual: res,
        message: msg,
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return fail(&x, fx, 0, f64::NAN, "non-finite objective at start");
    }

    let mut h_inv = DMatrix::<f64>::identity(d, d);
    let mut h_is_identity = true;
    let mut x_new = DVector::zeros(d);
    let mut g_new = DVector::zeros(d);
    let mut stalled = 0;

    for it in 0..opts.max_iter {
        let gnorm = g.norm();
        if gnorm <= opts.tol_g {
            return OptimResult {
                x_opt: x.as_slice().to_vec(),
                f_opt: fx,
                iterations: it,
                converged: true,
                method: Method::QuasiNewton,
                residual: gnorm,
                message: "gradient tolerance reached",
            };
        }

        let mut p = -(&h_inv * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h_inv.fill_with_identity();
            h_is_identity = true;
            p = -&g;
            slope = -gnorm * gnorm;
        }
        // first step of steepest descent is capped to unit length
        let mut alpha = if h_is_identity { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let mut accepted = false;
        let mut saw_non_finite = false;
        for _ in 0..=MAX_HALVINGS {
            x_new.copy_from(&x);
            x_new.axpy(alpha, &p, 1.0);
            let f_new = f(x_new.as_slice(), g_new.as_mut_slice());
            if f_new.is_finite() && g_new.iter().all(|v| v.is_finite()) {
                if f_new <= fx + ARMIJO_C * alpha * slope {
                    accepted = true;
                    let s = &x_new - &x;
                    let yv = &g_new - &g;
                    let sy = s.dot(&yv);
                    if sy > 1e-12 * s.norm() * yv.norm() && sy > 0.0 {
                        if h_is_identity {
                            // Nocedal-Wright scaling of the first inverse Hessian
                            h_inv *= sy / yv.dot(&yv);
                        }
                        let rho = 1.0 / sy;
                        let hy = &h_inv * &yv;
                        let yhy = yv.dot(&hy);
                        // H <- (I - rho s y') H (I - rho y s') + rho s s'
                        h_inv.ger(-rho, &hy, &s, 1.0);
                        h_inv.ger(-rho, &s, &hy, 1.0);
                        h_inv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
                        h_is_identity = false;
                    }
                    if fx - f_new <= 4.0 * f64::EPSILON * fx.abs().max(f64::MIN_POSITIVE) {
                        stalled += 1;
                    } else {
                        stalled = 0;
                    }
                    std::mem::swap(&mut x, &mut x_new);
                    std::mem::swap(&mut g, &mut g_new);
                    fx = f_new;
                    break;
                }
            } else {
                saw_non_finite = true;
            }
            alpha *= BACKTRACK;
        }

        if accepted && stalled >= STALL_STEPS {
            let gnorm = g.norm();
            return OptimResult {
                x_opt: x.as_slice().to_vec(),
                f_opt: fx,
                iterations: it + 1,
                converged: gnorm <= opts.tol_stall,
                method: Method::QuasiNewton,
                residual: gnorm,
                message: "objective stalled at rounding level",
            };
        }
        if !accepted {
            if gnorm <= opts.tol_stall {
                return OptimResult {
                    x_opt: x.as_slice().to_vec(),
                    f_opt: fx,
                    iterations: it,
                    converged: true,
                    method: Method::QuasiNewton,
                    residual: gnorm,
                    message: "line search failed at rounding level",
                };
            }
            if saw_non_finite && it == 0 {
                return fail(&x, fx, it, gnorm, "non-finite objective along search direction");
            }
            if !h_is_identity {
                h_inv.fill_with_identity();
                h_is_identity = true;
                continue;
            }
            return fail(&x, fx, it, gnorm, "line search failed");
        }
    }
    let gnorm = g.norm();
    OptimResult {
        x_opt: x.as_slice().to_vec(),
        f_opt: fx,
        iterations: opts.max_iter,
        converged: gnorm <= opts.tol_g,
        method: Method::QuasiNewton,
        residual: gnorm,
        message: "iteration limit reached",
    }
}

/// Nelder-Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5.
pub fn minimize_simplex<F>(f: F, x0: &[f64], opts: SimplexOptions) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let d = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    pts.push(x0.to_vec());
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += opts.scale;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut order: Vec<usize> = (0..=d).collect();

    let diameter = |pts: &[Vec<f64>], best: usize| {
        pts.iter()
            .map(|p| {
                p.iter()
                    .zip(&pts[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };

    let mut it = 0;
    loop {
        // stable sort keeps earlier vertices ahead on ties
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let best = order[0];
        let diam = diameter(&pts, best);
        if diam <= opts.tol_x || it >= opts.max_iter {
            return OptimResult {
                x_opt: pts[best].clone(),
                f_opt: vals[best],
                iterations: it,
                converged: diam <= opts.tol_x,
                method: Method::Simplex,
                residual: diam,
                message: if diam <= opts.tol_x {
                    "simplex diameter tolerance reached"
                } else {
                    "iteration limit reached"
                },
            };
        }
        it += 1;

        let worst = order[d];
        let second = order[d - usize::from(d > 0)];
        let mut centroid = vec![0.0; d];
        for &i in &order[..d] {
            for (c, v) in centroid.iter_mut().zip(&pts[i]) {
                *c += v / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[worst])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < vals[best] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        let (xc, fc, target) = if fr < vals[worst] {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc, fr)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc, vals[worst])
        };
        if fc < target {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        let anchor = pts[best].clone();
        for &i in &order[1..] {
            for (p, a) in pts[i].iter_mut().zip(&anchor) {
                *p = a + 0.5 * (*p - a);
            }
            vals[i] = eval(&pts[i]);
        }
    }
}

/// Central-difference gradient.
pub fn fd_gradient<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::{gauss_cdf, smoothed_check};

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn qn_quadratic() {
        let a = [1.5, -2.0, 0.25];
        let r = minimize_qn(
            |x, g| {
                let mut f = 0.0;
                for i in 0..3 {
                    g[i] = 2.0 * (x[i] - a[i]);
                    f += (x[i] - a[i]).powi(2);
                }
                f
            },
            &[0.0; 3],
            QnOptions::default(),
        );
        assert!(r.converged);
        for i in 0..3 {
            assert!((r.x_opt[i] - a[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn qn_rosenbrock() {
        let r = minimize_qn(rosenbrock, &[-1.2, 1.0], QnOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x_opt[0] - 1.0).abs() < 1e-6);
        assert!((r.x_opt[1] - 1.0).abs() < 1e-6);
        assert!(r.f_opt <= rosenbrock(&[-1.2, 1.0], &mut [0.0; 2]));
    }

    #[test]
    fn qn_nan_path() {
        let r = minimize_qn(
            |x, g| {
                g[0] = 1.0;
                if x[0] == 0.0 {
                    x[0]
                } else {
                    f64::NAN
                }
            },
            &[0.0],
            QnOptions::default(),
        );
        assert!(!r.converged);
        let r = minimize_qn(|_, _| f64::NAN, &[0.0], QnOptions::default());
        assert!(!r.converged);
    }

    #[test]
    fn qn_deterministic() {
        let a = minimize_qn(rosenbrock, &[-1.2, 1.0], QnOptions::default());
        let b = minimize_qn(rosenbrock, &[-1.2, 1.0], QnOptions::default());
        assert_eq!(a.x_opt[0].to_bits(), b.x_opt[0].to_bits());
        assert_eq!(a.x_opt[1].to_bits(), b.x_opt[1].to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn simplex_abs() {
        let r = minimize_simplex(|x| x[0].abs(), &[3.0], SimplexOptions::default());
        assert!(r.converged);
        assert!(r.x_opt[0].abs() <= 1e-6);
    }

    #[test]
    fn simplex_l1() {
        let a = [0.3, -1.1, 2.0];
        let f = |x: &[f64]| x.iter().zip(&a).map(|(u, v)| (u - v).abs()).sum::<f64>();
        let r = minimize_simplex(
            f,
            &[0.0; 3],
            SimplexOptions {
                scale: 0.5,
                ..Default::default()
            },
        );
        assert!(r.converged);
        for i in 0..3 {
            assert!((r.x_opt[i] - a[i]).abs() < 1e-6, "{:?}", r.x_opt);
        }
    }

    #[test]
    fn simplex_constant() {
        let r = minimize_simplex(|_| 2.0, &[0.5, -0.5], SimplexOptions::default());
        assert!(r.converged);
        assert_eq!(r.x_opt, vec![0.5, -0.5]);
    }

    #[test]
    fn simplex_iteration_limit() {
        let r = minimize_simplex(
            |x| (x[0] - 100.0).powi(2),
            &[0.0],
            SimplexOptions {
                max_iter: 3,
                ..Default::default()
            },
        );
        assert!(!r.converged);
        assert!(r.f_opt < 100.0f64.powi(2));
    }

    #[test]
    fn fd_examples() {
        let g = fd_gradient(|x| x[0] * x[0], &[3.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = fd_gradient(|x| x[0].sin(), &[0.0], 1e-6);
        assert!((g[0] - 1.0).abs() < 1e-8);
        let (u, tau, h) = (0.3, 0.2, 0.2);
        let g = fd_gradient(|x| smoothed_check(x[0], tau, h).unwrap(), &[u], 1e-6);
        assert!((g[0] - (tau - gauss_cdf(-u / h))).abs() < 1e-6);
    }
}
