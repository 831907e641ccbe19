//! Bound-constrained limited-memory quasi-Newton minimizer.
//!
//! Projected L-BFGS: the two-loop recursion runs on the free variables
//! (those not pinned at a bound by an outward-pointing gradient), steps are
//! projected back onto the box and accepted by an Armijo backtracking search.
//! Termination follows the L-BFGS-B conventions: projected-gradient
//! infinity norm below `pgtol`, or relative decrease
//! `(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` below `ftol`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsbOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub max_fev: usize,
    pub pgtol: f64,
    pub ftol: f64,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 1000,
            max_fev: 2000,
            pgtol: 1e-7,
            ftol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ProjectedGradient,
    FunctionTolerance,
    IterationLimit,
    EvaluationLimit,
    LineSearchFailed,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::ProjectedGradient | Termination::FunctionTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(l, u);
    }
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&l, &u))| ((xi - gi).clamp(l, u) - xi).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `objective` (returning value and gradient) over the box
/// `[lower, upper]` starting from `x0`.
pub fn minimize<F>(mut objective: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LbfgsbOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    assert!(
        lower.len() == n && upper.len() == n,
        "bounds must match the parameter count"
    );
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut f, mut g) = objective(&x);
    let mut fev = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();

    let mut iter = 0;
    let termination = loop {
        if projected_gradient_norm(&x, &g, lower, upper) <= opts.pgtol {
            break Termination::ProjectedGradient;
        }
        if iter >= opts.max_iter {
            break Termination::IterationLimit;
        }
        if fev >= opts.max_fev {
            break Termination::EvaluationLimit;
        }
        iter += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let gf: Vec<f64> = g
            .iter()
            .zip(&free)
            .map(|(&gi, &fr)| if fr { gi } else { 0.0 })
            .collect();

        // two-loop recursion on the free subspace
        let mut q = gf.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y) in history.iter().rev() {
            let sy = dot_masked(s, y, &free);
            if sy <= 0.0 {
                alphas.push(0.0);
                continue;
            }
            let a = dot_masked(s, &q, &free) / sy;
            for i in 0..n {
                if free[i] {
                    q[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, y)| {
                let yy = dot_masked(y, y, &free);
                if yy > 0.0 {
                    dot_masked(s, y, &free) / yy
                } else {
                    1.0
                }
            })
            .filter(|g| g.is_finite() && *g > 0.0)
            .unwrap_or(1.0);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), a) in history.iter().zip(alphas.iter().rev()) {
            let sy = dot_masked(s, y, &free);
            if sy <= 0.0 {
                continue;
            }
            let b = dot_masked(y, &q, &free) / sy;
            for i in 0..n {
                if free[i] {
                    q[i] += s[i] * (a - b);
                }
            }
        }
        let mut d: Vec<f64> = q.iter().zip(&free).map(|(&v, &fr)| if fr { -v } else { 0.0 }).collect();
        let mut slope: f64 = d.iter().zip(&gf).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            history.clear();
            d = gf.iter().map(|v| -v).collect();
            slope = -gf.iter().map(|v| v * v).sum::<f64>();
            if slope == 0.0 {
                break Termination::ProjectedGradient;
            }
        }

        let mut t = if history.is_empty() {
            let gmax = gf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / gmax).min(1.0)
        } else {
            1.0
        };
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        let mut shrunk = false;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut xn, lower, upper);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            let (fn_, gn) = objective(&xn);
            fev += 1;
            let decrease: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            if fn_.is_finite() && fn_ <= f + 1e-4 * decrease.min(0.0) {
                accepted = Some((xn, fn_, gn));
                break;
            }
            shrunk = true;
            if fev >= opts.max_fev {
                break;
            }
            t *= 0.5;
        }
        // Expand while the curvature condition fails and the value keeps
        // dropping (weak Wolfe search along the projected path).
        if !shrunk {
            for _ in 0..30 {
                let Some((xa, fa, ga)) = &accepted else { break };
                if fev >= opts.max_fev {
                    break;
                }
                let step: Vec<f64> = xa.iter().zip(&x).map(|(a, b)| a - b).collect();
                let d0: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
                let d1: f64 = ga.iter().zip(&step).map(|(a, b)| a * b).sum();
                if d1 >= 0.9 * d0 {
                    break;
                }
                t *= 2.0;
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut xn, lower, upper);
                if xn == *xa {
                    break;
                }
                let (fn_, gn) = objective(&xn);
                fev += 1;
                if !(fn_.is_finite() && fn_ < *fa) {
                    break;
                }
                accepted = Some((xn, fn_, gn));
            }
        }

        let Some((xn, fn_, gn)) = accepted else {
            if !history.is_empty() && fev < opts.max_fev {
                history.clear();
                continue;
            }
            break if fev >= opts.max_fev {
                Termination::EvaluationLimit
            } else {
                Termination::LineSearchFailed
            };
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.max(f64::MIN_POSITIVE) {
            history.push_back((s, y));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        let rel = (f - fn_) / f.abs().max(fn_.abs()).max(1.0);
        x = xn;
        f = fn_;
        g = gn;
        if rel <= opts.ftol {
            break Termination::FunctionTolerance;
        }
    };

    Minimum {
        x,
        f,
        iterations: iter,
        evaluations: fev,
        termination,
    }
}

/// Damped Newton refinement of a bounded minimum. `objective` returns the
/// value, gradient and a positive semi-definite curvature matrix (exact or
/// Gauss-Newton). Each accepted step lowers the value.
pub fn newton_polish<F>(mut objective: F, x0: &[f64], lower: &[f64], upper: &[f64], max_iter: usize) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>, DMatrix<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut f, mut g, mut hess) = objective(&x);
    let mut fev = 1;
    let mut iter = 0;
    let mut lambda = 1e-10;
    let termination = loop {
        if iter >= max_iter {
            break Termination::IterationLimit;
        }
        if projected_gradient_norm(&x, &g, lower, upper) == 0.0 {
            break Termination::ProjectedGradient;
        }
        iter += 1;
        // variables pinned at a bound with an outward gradient stay fixed
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let grad = DVector::from_iterator(n, (0..n).map(|i| if free[i] { g[i] } else { 0.0 }));
        let mut improved = false;
        for _ in 0..40 {
            let mut damped = hess.clone();
            for i in 0..n {
                for j in 0..n {
                    if !(free[i] && free[j]) {
                        damped[(i, j)] = if i == j { 1.0 } else { 0.0 };
                    }
                }
                damped[(i, i)] += lambda * hess[(i, i)].abs().max(1e-300);
            }
            let Some(chol) = damped.cholesky() else {
                lambda = (lambda * 10.0).max(1e-10);
                continue;
            };
            let step = chol.solve(&(-&grad));
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + step[i]).collect();
            project(&mut xn, lower, upper);
            if xn == x {
                break;
            }
            let (fn_, gn, hn) = objective(&xn);
            fev += 1;
            if fn_.is_finite() && fn_ < f {
                x = xn;
                f = fn_;
                g = gn;
                hess = hn;
                lambda = (lambda * 0.1).max(1e-14);
                improved = true;
                break;
            }
            lambda = (lambda * 10.0).max(1e-10);
        }
        if !improved {
            break Termination::LineSearchFailed;
        }
    };
    Minimum {
        x,
        f,
        iterations: iter,
        evaluations: fev,
        termination,
    }
}

/// Value and gradient of `sum_i (model(x_i; p) - y_i)^2`, with the model
/// returning its value and parameter gradient.
pub fn squared_residuals<M>(model: &M, xs: &[f64], ys: &[f64], params: &[f64]) -> (f64, Vec<f64>)
where
    M: Fn(f64, &[f64]) -> (f64, Vec<f64>),
{
    let mut sse = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (&x, &y) in xs.iter().zip(ys) {
        let (v, dv) = model(x, params);
        let r = v - y;
        sse += r * r;
        for (g, d) in grad.iter_mut().zip(&dv) {
            *g += 2.0 * r * d;
        }
    }
    (sse, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let opts = LbfgsbOptions {
            pgtol: 1e-10,
            ftol: 0.0,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts);
        assert!(r.termination.converged(), "{:?}", r.termination);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn active_bound() {
        // minimum of (x-3)^2 + (y+1)^2 on [0,2]x[0,2] is (2, 0)
        let f = |x: &[f64]| {
            (
                (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
                vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)],
            )
        };
        let r = minimize(f, &[1.0, 1.0], &[0.0, 0.0], &[2.0, 2.0], &LbfgsbOptions::default());
        assert_eq!(r.x, vec![2.0, 0.0]);
        assert_eq!(r.termination, Termination::ProjectedGradient);
    }

    #[test]
    fn polish_finishes_a_curved_valley() {
        let opts = LbfgsbOptions {
            max_iter: 3,
            ..Default::default()
        };
        let rough = minimize(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts);
        let with_hessian = |x: &[f64]| {
            let (f, g) = rosenbrock(x);
            let (a, b) = (x[0], x[1]);
            let h = DMatrix::from_row_slice(2, 2, &[2.0 - 400.0 * (b - 3.0 * a * a), -400.0 * a, -400.0 * a, 200.0]);
            (f, g, h)
        };
        let fine = newton_polish(with_hessian, &rough.x, &[-5.0, -5.0], &[5.0, 5.0], 100);
        assert!(fine.f <= rough.f);
        assert!(
            (fine.x[0] - 1.0).abs() < 1e-8 && (fine.x[1] - 1.0).abs() < 1e-8,
            "{:?}",
            fine.x
        );
    }

    #[test]
    fn respects_evaluation_cap() {
        let opts = LbfgsbOptions {
            max_fev: 5,
            pgtol: 0.0,
            ftol: 0.0,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts);
        assert!(r.evaluations <= 5);
        assert!(!r.termination.converged());
    }
}
