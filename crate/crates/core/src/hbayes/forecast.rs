//! Forecasts derived from a fitted model: transience time, logistic fits of
//! d_rel along training, crossover curvature and the trend of beta with
//! model width.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{odds_from_terms, DiversityTerms, FitParams};
use crate::complexity::delta_k;
use crate::error::{Error, Result};
use crate::optim::{self, LbfgsbOptions};
use crate::stats::sigmoid;

/// Bracket (in N) searched by the root finder.
pub const ROOT_FIND_RANGE: (f64, f64) = (1.0, 1e12);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransienceStatus {
    /// Crossover at a finite N > 0.
    Finite,
    /// M is already favoured at N = 0 (its complexity is no larger).
    Immediate,
    /// G never loses its advantage (delta L <= 0).
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransienceForecast {
    /// Overflows to inf for alpha near 1 even when the status is `Finite`.
    pub n_star: f64,
    pub status: TransienceStatus,
    pub closed_form: f64,
    /// Zero of eta by bisection in log N, when it lies in [`ROOT_FIND_RANGE`].
    pub root_find: Option<f64>,
    /// |closed_form - root_find| / closed_form.
    pub agreement: Option<f64>,
}

fn bisect_log_n(params: &FitParams, delta_l: f64, term: f64) -> Option<f64> {
    let eta = |ln_n: f64| odds_from_terms(params, ln_n.exp(), delta_l, term);
    let (mut lo, mut hi) = (ROOT_FIND_RANGE.0.ln(), ROOT_FIND_RANGE.1.ln());
    let (f_lo, f_hi) = (eta(lo), eta(hi));
    if f_lo > 0.0 || f_hi < 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eta(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((0.5 * (lo + hi)).exp())
}

/// Training time at which the log-posterior odds cross zero.
pub fn transience_time(params: &FitParams, terms: &DiversityTerms) -> TransienceForecast {
    if !(terms.delta_l > 0.0) {
        return TransienceForecast {
            n_star: f64::INFINITY,
            status: TransienceStatus::Never,
            closed_form: f64::INFINITY,
            root_find: None,
            agreement: None,
        };
    }
    let term = delta_k(terms.k_m_bits, terms.k_g_bits, params.beta);
    if term <= 0.0 {
        return TransienceForecast {
            n_star: 0.0,
            status: TransienceStatus::Immediate,
            closed_form: 0.0,
            root_find: None,
            agreement: None,
        };
    }
    let closed_form = (term / (params.gamma * terms.delta_l)).powf(1.0 / (1.0 - params.alpha));
    let root_find = bisect_log_n(params, terms.delta_l, term);
    TransienceForecast {
        n_star: closed_form,
        status: TransienceStatus::Finite,
        closed_form,
        root_find,
        agreement: root_find.map(|r| (closed_form - r).abs() / closed_form),
    }
}

/// `a / (1 + exp(-b (u - n0)))` with `u = N^(1 - alpha)`; `n0` is in `u` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub a: f64,
    pub b: f64,
    pub n0: f64,
    pub alpha: f64,
    pub sse: f64,
    pub n_points: usize,
    /// Constant input: `a` holds the level and `b` is zero.
    pub degenerate: bool,
}

pub fn logistic_value(fit: &LogisticFit, n: f64) -> f64 {
    let u = n.powf(1.0 - fit.alpha);
    fit.a * sigmoid(fit.b * (u - fit.n0))
}

/// Second derivative of the logistic in `u`.
pub fn logistic_d2_du2(fit: &LogisticFit, u: f64) -> f64 {
    let s = sigmoid(fit.b * (u - fit.n0));
    fit.a * fit.b * fit.b * s * (1.0 - s) * (1.0 - 2.0 * s)
}

fn logistic_model(v: f64, p: &[f64]) -> (f64, Vec<f64>) {
    let (a, b, v0) = (p[0], p[1], p[2]);
    let s = sigmoid(b * (v - v0));
    let ds = s * (1.0 - s);
    (a * s, vec![s, a * ds * (v - v0), -a * ds * b])
}

fn sse_of(vs: &[f64], ys: &[f64], p: &[f64]) -> f64 {
    vs.iter()
        .zip(ys)
        .map(|(&v, &y)| {
            let r = logistic_model(v, p).0 - y;
            r * r
        })
        .sum()
}

/// Damped Gauss-Newton steps from `p`, kept only while they lower the SSE.
fn levenberg_marquardt(vs: &[f64], ys: &[f64], mut p: [f64; 3], lower: &[f64; 3], upper: &[f64; 3]) -> [f64; 3] {
    let mut lambda = 1e-6;
    let mut current = sse_of(vs, ys, &p);
    for _ in 0..200 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (&v, &y) in vs.iter().zip(ys) {
            let (f, g) = logistic_model(v, &p);
            let j = Vector3::new(g[0], g[1], g[2]);
            jtj += j * j.transpose();
            jtr += j * (f - y);
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = p;
            for k in 0..3 {
                cand[k] = (p[k] + step[k]).clamp(lower[k], upper[k]);
            }
            let s = sse_of(vs, ys, &cand);
            if s < current {
                p = cand;
                current = s;
                lambda = (lambda * 0.1).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || current == 0.0 {
            break;
        }
    }
    p
}

/// Fits the logistic to a d_rel series `(N, value)` along training.
pub fn fit_logistic(series: &[(f64, f64)], alpha: f64) -> Result<LogisticFit> {
    if series.len() < 4 {
        return Err(Error::Precondition(format!(
            "logistic fit needs at least 4 points, got {}",
            series.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Precondition(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if series
        .iter()
        .any(|(n, y)| !(n.is_finite() && *n > 0.0 && y.is_finite()))
    {
        return Err(Error::NonFinite("logistic fit input".into()));
    }
    let us: Vec<f64> = series.iter().map(|(n, _)| n.powf(1.0 - alpha)).collect();
    let ys: Vec<f64> = series.iter().map(|(_, y)| *y).collect();
    let n_points = ys.len();

    let y_mean = ys.iter().sum::<f64>() / n_points as f64;
    let y_var: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let y_scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if y_var <= 1e-24 * y_scale.max(1.0).powi(2) * n_points as f64 {
        return Ok(LogisticFit {
            a: y_mean,
            b: 0.0,
            n0: us.iter().sum::<f64>() / n_points as f64,
            alpha,
            sse: 0.0,
            n_points,
            degenerate: true,
        });
    }

    let u_scale = us.iter().fold(0.0f64, |m, u| m.max(*u));
    let vs: Vec<f64> = us.iter().map(|u| u / u_scale).collect();
    let v_min = vs.iter().copied().fold(f64::INFINITY, f64::min);
    let v_range = (1.0 - v_min).max(1e-12);

    let a_bound = 10.0 * y_scale + 1.0;
    let lower = [-a_bound, -1e4 / v_range, v_min - 2.0 * v_range];
    let upper = [a_bound, 1e4 / v_range, 1.0 + 2.0 * v_range];

    // profile start: for fixed (b, v0) the best `a` is linear least squares
    let mut start = [0.0, 0.0, 0.0];
    let mut best = f64::INFINITY;
    for &steep in &[0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
        for sign in [1.0, -1.0] {
            let b = sign * steep / v_range;
            for k in 0..=40 {
                let v0 = v_min - 0.5 * v_range + 2.0 * v_range * k as f64 / 40.0;
                let s: Vec<f64> = vs.iter().map(|v| sigmoid(b * (v - v0))).collect();
                let ss: f64 = s.iter().map(|x| x * x).sum();
                if ss <= 0.0 {
                    continue;
                }
                let a = (s.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / ss).clamp(lower[0], upper[0]);
                let sse = sse_of(&vs, &ys, &[a, b, v0]);
                if sse < best {
                    best = sse;
                    start = [a, b, v0];
                }
            }
        }
    }

    let opts = LbfgsbOptions {
        max_iter: 3000,
        max_fev: 6000,
        pgtol: 1e-15,
        ftol: 0.0,
        ..Default::default()
    };
    let objective = |p: &[f64]| {
        let (f, g) = optim::squared_residuals(&logistic_model, &vs, &ys, p);
        (f / y_var, g.into_iter().map(|v| v / y_var).collect())
    };
    let res = optim::minimize(objective, &start, &lower, &upper, &opts);
    let p = levenberg_marquardt(&vs, &ys, [res.x[0], res.x[1], res.x[2]], &lower, &upper);
    Ok(LogisticFit {
        a: p[0],
        b: p[1] / u_scale,
        n0: p[2] * u_scale,
        alpha,
        sse: sse_of(&vs, &ys, &p),
        n_points,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub n: Vec<f64>,
    pub second_derivative: Vec<f64>,
    /// Largest |d^2 f / dN^2| over the grid.
    pub peak_abs: f64,
    pub peak_n: f64,
}

/// Second derivative in N of the fitted logistic, evaluated on `n_grid`.
pub fn crossover_curvature(fit: &LogisticFit, n_grid: &[f64]) -> Result<CurvatureProfile> {
    if n_grid.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(Error::Precondition("curvature grid must be positive".into()));
    }
    let alpha = fit.alpha;
    let second_derivative: Vec<f64> = n_grid
        .iter()
        .map(|&n| {
            let u = n.powf(1.0 - alpha);
            let s = sigmoid(fit.b * (u - fit.n0));
            let f1 = fit.a * fit.b * s * (1.0 - s);
            let f2 = logistic_d2_du2(fit, u);
            let du = (1.0 - alpha) * n.powf(-alpha);
            let d2u = -alpha * (1.0 - alpha) * n.powf(-alpha - 1.0);
            f2 * du * du + f1 * d2u
        })
        .collect();
    let (mut peak_abs, mut peak_n) = (0.0, n_grid.first().copied().unwrap_or(f64::NAN));
    for (&n, &c) in n_grid.iter().zip(&second_derivative) {
        if c.abs() > peak_abs {
            peak_abs = c.abs();
            peak_n = n;
        }
    }
    Ok(CurvatureProfile {
        n: n_grid.to_vec(),
        second_derivative,
        peak_abs,
        peak_n,
    })
}

/// `c0 exp(-c1 w) + c2` fitted to (width, beta) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaTrend {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub sse: f64,
    /// No detectable decay: constant input or a fitted rate of ~0.
    pub flat: bool,
}

fn exp_model(v: f64, p: &[f64]) -> (f64, Vec<f64>) {
    let e = (-p[1] * v).exp();
    (p[0] * e + p[2], vec![e, -p[0] * v * e, 1.0])
}

/// Least-squares `(c0, c2)` for a fixed decay rate.
fn linear_part(vs: &[f64], ys: &[f64], rate: f64) -> Option<(f64, f64)> {
    let n = vs.len() as f64;
    let es: Vec<f64> = vs.iter().map(|v| (-rate * v).exp()).collect();
    let se: f64 = es.iter().sum();
    let see: f64 = es.iter().map(|e| e * e).sum();
    let sy: f64 = ys.iter().sum();
    let sey: f64 = es.iter().zip(ys).map(|(e, y)| e * y).sum();
    let det = n * see - se * se;
    if det.abs() <= 1e-14 * n * see {
        return None;
    }
    let c0 = (n * sey - se * sy) / det;
    let c2 = (sy - c0 * se) / n;
    Some((c0, c2))
}

pub fn beta_trend(points: &[(f64, f64)]) -> Result<BetaTrend> {
    if points.len() < 3 {
        return Err(Error::Precondition(format!(
            "beta trend needs at least 3 widths, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|(w, b)| !(w.is_finite() && *w > 0.0 && b.is_finite()))
    {
        return Err(Error::NonFinite("beta trend input".into()));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let y_scale = ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
    if var <= 1e-24 * y_scale * y_scale * n {
        return Ok(BetaTrend {
            c0: 0.0,
            c1: 0.0,
            c2: mean,
            sse: 0.0,
            flat: true,
        });
    }
    let w_scale = points.iter().fold(0.0f64, |m, p| m.max(p.0));
    let vs: Vec<f64> = points.iter().map(|p| p.0 / w_scale).collect();

    let mut start = [0.0, 0.0, mean];
    let mut best = var;
    for k in 0..=60 {
        let rate = 10f64.powf(-2.0 + 4.5 * k as f64 / 60.0);
        if let Some((c0, c2)) = linear_part(&vs, &ys, rate) {
            let p = [c0, rate, c2];
            let sse: f64 = vs
                .iter()
                .zip(&ys)
                .map(|(&v, &y)| (exp_model(v, &p).0 - y).powi(2))
                .sum();
            if sse < best {
                best = sse;
                start = p;
            }
        }
    }
    let bound = 1e6 * y_scale;
    let lower = [-bound, 0.0, -bound];
    let upper = [bound, 1e3, bound];
    let opts = LbfgsbOptions {
        max_iter: 2000,
        max_fev: 4000,
        pgtol: 1e-14,
        ftol: 0.0,
        ..Default::default()
    };
    let objective = |p: &[f64]| {
        let (f, g) = optim::squared_residuals(&exp_model, &vs, &ys, p);
        (f / var, g.into_iter().map(|v| v / var).collect())
    };
    let res = optim::minimize(objective, &start, &lower, &upper, &opts);
    let (p, sse) = if res.f * var <= best {
        (res.x.clone(), res.f * var)
    } else {
        (start.to_vec(), best)
    };
    Ok(BetaTrend {
        c0: p[0],
        c1: p[1] / w_scale,
        c2: p[2],
        sse,
        flat: p[1].abs() < 1e-8 || p[0].abs() < 1e-12 * y_scale,
    })
}

/// First N at which an increasing d_rel series reaches 0.5, linearly
/// interpolated between checkpoints. `None` if it never does.
pub fn empirical_transience(series: &[(f64, f64)]) -> Option<f64> {
    let first = series.first()?;
    if first.1 >= 0.5 {
        return Some(first.0);
    }
    series.windows(2).find_map(|w| {
        let ((n0, y0), (n1, y1)) = (w[0], w[1]);
        (y0 < 0.5 && y1 >= 0.5).then(|| n0 + (0.5 - y0) * (n1 - n0) / (y1 - y0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transience_closed_form_matches_root() {
        let p = FitParams::new(0.3, 0.9, 0.01).unwrap();
        let t = DiversityTerms {
            delta_l: 0.05,
            k_m_bits: 3.0e4,
            k_g_bits: 2.0e3,
        };
        let f = transience_time(&p, &t);
        assert_eq!(f.status, TransienceStatus::Finite);
        assert!(f.agreement.unwrap() < 1e-9, "{f:?}");
        let eta = odds_from_terms(&p, f.n_star, t.delta_l, delta_k(t.k_m_bits, t.k_g_bits, p.beta));
        assert!(eta.abs() < 1e-6);
    }

    #[test]
    fn transience_edge_cases() {
        let p = FitParams::new(0.5, 1.0, 1.0).unwrap();
        let never = transience_time(
            &p,
            &DiversityTerms {
                delta_l: 0.0,
                k_m_bits: 10.0,
                k_g_bits: 1.0,
            },
        );
        assert_eq!(never.status, TransienceStatus::Never);
        assert!(never.n_star.is_infinite());
        let now = transience_time(
            &p,
            &DiversityTerms {
                delta_l: 0.1,
                k_m_bits: 1.0,
                k_g_bits: 10.0,
            },
        );
        assert_eq!(now.status, TransienceStatus::Immediate);
        assert_eq!(now.n_star, 0.0);
    }

    #[test]
    fn logistic_recovers_exact_curve() {
        let truth = LogisticFit {
            a: 0.95,
            b: 0.02,
            n0: 300.0,
            alpha: 0.4,
            sse: 0.0,
            n_points: 0,
            degenerate: false,
        };
        let series: Vec<(f64, f64)> = (0..16)
            .map(|i| {
                let n = 100.0 * 1.8f64.powi(i);
                (n, logistic_value(&truth, n))
            })
            .collect();
        let fit = fit_logistic(&series, 0.4).unwrap();
        for (got, want) in [(fit.a, truth.a), (fit.b, truth.b), (fit.n0, truth.n0)] {
            assert!(((got - want) / want).abs() < 1e-6, "{fit:?}");
        }
    }

    #[test]
    fn constant_series_is_degenerate() {
        let series: Vec<(f64, f64)> = (1..8).map(|i| (i as f64 * 10.0, 0.3)).collect();
        let fit = fit_logistic(&series, 0.5).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.b, 0.0);
        assert_eq!(fit.a, 0.3);
    }

    #[test]
    fn logistic_needs_four_points() {
        assert!(fit_logistic(&[(1.0, 0.0), (2.0, 0.5), (3.0, 1.0)], 0.5).is_err());
    }

    #[test]
    fn curvature_matches_finite_differences() {
        let fit = LogisticFit {
            a: 1.0,
            b: 0.05,
            n0: 100.0,
            alpha: 0.3,
            sse: 0.0,
            n_points: 0,
            degenerate: false,
        };
        let grid = [500.0, 700.0, 800.0, 1000.0, 2000.0];
        let prof = crossover_curvature(&fit, &grid).unwrap();
        for (&n, &c) in grid.iter().zip(&prof.second_derivative) {
            let h = n * 1e-3;
            let fd =
                (logistic_value(&fit, n + h) - 2.0 * logistic_value(&fit, n) + logistic_value(&fit, n - h)) / (h * h);
            assert!((fd - c).abs() <= 1e-5 * c.abs().max(1e-9), "N={n}: {fd} vs {c}");
        }
    }

    #[test]
    fn beta_trend_recovers_decay() {
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0, 1024.0]
            .iter()
            .map(|&w: &f64| (w, 1.5 * (-0.004 * w).exp() + 0.3))
            .collect();
        let t = beta_trend(&pts).unwrap();
        assert!(
            (t.c0 - 1.5).abs() < 1e-5 && (t.c1 - 0.004).abs() < 1e-7 && (t.c2 - 0.3).abs() < 1e-5,
            "{t:?}"
        );
        assert!(!t.flat);
    }

    #[test]
    fn flat_beta() {
        let t = beta_trend(&[(1.0, 0.5), (2.0, 0.5), (4.0, 0.5)]).unwrap();
        assert!(t.flat);
        assert_eq!(t.c1, 0.0);
    }

    #[test]
    fn empirical_crossing() {
        let s = [(10.0, 0.1), (20.0, 0.3), (30.0, 0.7), (40.0, 0.9)];
        assert!((empirical_transience(&s).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(empirical_transience(&[(1.0, 0.1), (2.0, 0.2)]), None);
    }
}
