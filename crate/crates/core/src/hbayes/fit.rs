//! Fitting (alpha, beta, gamma) to a trained model's predictions.
//!
//! The optimizer works on `theta = (alpha, beta, ln gamma)`. The objective is
//! the mean over training cells of the forward divergence from the observed
//! predictions to `sigma(eta) M + (1 - sigma(eta)) G`, divided by the loss at
//! the best starting point so tolerances mean the same thing across
//! settings and data scales.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_posterior_odds, DiversityTerms, FitParams, OddsInput};
use crate::error::{Error, Result};
use crate::metrics::{self, DistanceKind, RelDistResult, ThresholdReport, PROB_FLOOR};
use crate::optim::{self, LbfgsbOptions};
use crate::predictors::{PredictionSet, PredictiveOutput};
use crate::rng::{stream, Domain};
use crate::stats::{self, sigmoid};
use crate::taskgen::SettingKind;

/// Below this many valid cells the fit is reported as unreliable.
const RELIABLE_CELLS: usize = 8;

const POLISH_ITERATIONS: usize = 50;

#[derive(Debug, Clone)]
pub struct CellObservation {
    pub n: u64,
    pub d: usize,
    pub h: PredictionSet,
}

#[derive(Debug, Clone)]
pub struct PredictorPair {
    pub memorizing: PredictionSet,
    pub generalizing: PredictionSet,
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub setting: SettingKind,
    pub distance: DistanceKind,
    pub cells: Vec<CellObservation>,
    pub predictors: BTreeMap<usize, PredictorPair>,
    pub terms: BTreeMap<usize, DiversityTerms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            alpha: (0.01, 0.99),
            beta: (0.01, 5.0),
            gamma: (1e-6, 1e6),
        }
    }
}

impl ParamBounds {
    fn lower(&self) -> [f64; 3] {
        [self.alpha.0, self.beta.0, self.gamma.0.ln()]
    }

    fn upper(&self) -> [f64; 3] {
        [self.alpha.1, self.beta.1, self.gamma.1.ln()]
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub split_seed: u64,
    pub train_fraction: f64,
    pub restarts: usize,
    pub apply_threshold: bool,
    pub bounds: ParamBounds,
    pub optimizer: LbfgsbOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            split_seed: 0,
            train_fraction: 0.8,
            restarts: 8,
            apply_threshold: true,
            bounds: ParamBounds::default(),
            optimizer: LbfgsbOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "D")]
    pub d: usize,
    pub rel: RelDistResult,
    pub interp_loss: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Sorted by (D, N).
    pub cells: Vec<CellDiagnostics>,
    pub thresholds: BTreeMap<usize, ThresholdReport>,
    /// Diversities where M and G coincide (zero distance); their cells
    /// have no position between the two and are left out.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub start: FitParams,
    pub params: FitParams,
    pub loss: f64,
    pub iterations: usize,
    pub termination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: FitParams,
    pub bounds: ParamBounds,
    pub split_seed: u64,
    pub train_cells: Vec<(u64, usize)>,
    pub val_cells: Vec<(u64, usize)>,
    pub excluded_cells: Vec<(u64, usize)>,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub goodness_metrics: BTreeMap<String, f64>,
    pub restarts: Vec<RestartOutcome>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub report: FitReport,
    pub diagnostics: Diagnostics,
}

fn pair_for<'a>(problem: &'a FitProblem, d: usize) -> Result<&'a PredictorPair> {
    problem
        .predictors
        .get(&d)
        .ok_or_else(|| Error::Precondition(format!("no M/G predictions for D={d}")))
}

/// Relative distance and interpolation loss for every cell, plus the
/// per-diversity threshold that marks early checkpoints invalid.
pub fn cell_diagnostics(problem: &FitProblem, apply_threshold: bool) -> Result<Diagnostics> {
    let mut degenerate = Vec::new();
    let mut diversities: Vec<usize> = problem.cells.iter().map(|c| c.d).collect();
    diversities.sort_unstable();
    diversities.dedup();
    for &d in &diversities {
        let pair = pair_for(problem, d)?;
        if metrics::distance(&pair.memorizing, &pair.generalizing, problem.distance)? <= 0.0 {
            degenerate.push(d);
        }
    }
    let mut order: Vec<usize> = (0..problem.cells.len())
        .filter(|&i| !degenerate.contains(&problem.cells[i].d))
        .collect();
    order.sort_by_key(|&i| (problem.cells[i].d, problem.cells[i].n));

    let mut cells = order
        .par_iter()
        .map(|&i| {
            let c = &problem.cells[i];
            let pair = pair_for(problem, c.d)?;
            let rel = metrics::relative_distance(&c.h, &pair.memorizing, &pair.generalizing, problem.distance)?;
            let interp_loss = metrics::interpolation_loss_at(&c.h, &pair.memorizing, &pair.generalizing, rel.d_rel)?;
            Ok(CellDiagnostics {
                n: c.n,
                d: c.d,
                rel,
                interp_loss,
                valid: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut thresholds = BTreeMap::new();
    let mut start = 0;
    while start < cells.len() {
        let d = cells[start].d;
        let end = start + cells[start..].iter().take_while(|c| c.d == d).count();
        if end - start >= 2 {
            let losses: Vec<f64> = cells[start..end].iter().map(|c| c.interp_loss).collect();
            let report = metrics::two_hypotheses_threshold(&losses, problem.setting)?;
            if apply_threshold {
                for c in &mut cells[start..start + report.first_valid_checkpoint] {
                    c.valid = false;
                }
            }
            thresholds.insert(d, report);
        }
        start = end;
    }
    Ok(Diagnostics {
        cells,
        thresholds,
        degenerate,
    })
}

/// Observed/M/G element arrays of one cell, flattened for fast evaluation.
enum Elements {
    Categorical {
        h: Vec<f64>,
        mm: Vec<f64>,
        gg: Vec<f64>,
        /// sum of h ln h over all elements
        neg_entropy: f64,
    },
    Bernoulli {
        h: Vec<f64>,
        mm: Vec<f64>,
        gg: Vec<f64>,
    },
    Scalar {
        dim: f64,
        h: Vec<f64>,
        mm: Vec<f64>,
        gg: Vec<f64>,
    },
}

struct Compiled {
    key: (u64, usize),
    ln_n: f64,
    terms: DiversityTerms,
    count: usize,
    elems: Elements,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn compile(c: &CellObservation, pair: &PredictorPair, terms: DiversityTerms) -> Result<Compiled> {
    let count = c.h.n_elements();
    if count == 0 || pair.memorizing.n_elements() != count || pair.generalizing.n_elements() != count {
        return Err(Error::ShapeMismatch(format!(
            "cell (N={}, D={}) does not align with its M/G predictions",
            c.n, c.d
        )));
    }
    let triples =
        c.h.outputs()
            .zip(pair.memorizing.outputs())
            .zip(pair.generalizing.outputs());
    let elems = match c.h.setting {
        SettingKind::BallsUrns => {
            let m = c.h.m;
            let (mut h, mut mm, mut gg) = (Vec::new(), Vec::new(), Vec::new());
            for ((a, b), g) in triples {
                match (a, b, g) {
                    (
                        PredictiveOutput::Categorical(a),
                        PredictiveOutput::Categorical(b),
                        PredictiveOutput::Categorical(g),
                    ) if a.len() == m && b.len() == m && g.len() == m => {
                        h.extend(metrics::smooth(a));
                        mm.extend(metrics::smooth(b));
                        gg.extend(metrics::smooth(g));
                    }
                    _ => return Err(Error::ShapeMismatch("expected categorical outputs of length m".into())),
                }
            }
            let neg_entropy = h.iter().map(|&x| x * x.ln()).sum();
            Elements::Categorical { h, mm, gg, neg_entropy }
        }
        SettingKind::Classification => {
            let (mut h, mut mm, mut gg) = (Vec::new(), Vec::new(), Vec::new());
            for ((a, b), g) in triples {
                match (a, b, g) {
                    (
                        PredictiveOutput::Bernoulli(a),
                        PredictiveOutput::Bernoulli(b),
                        PredictiveOutput::Bernoulli(g),
                    ) => {
                        h.push(clamp_prob(*a));
                        mm.push(clamp_prob(*b));
                        gg.push(clamp_prob(*g));
                    }
                    _ => return Err(Error::ShapeMismatch("expected Bernoulli outputs".into())),
                }
            }
            Elements::Bernoulli { h, mm, gg }
        }
        SettingKind::LinearRegression => {
            let (mut h, mut mm, mut gg) = (Vec::new(), Vec::new(), Vec::new());
            for ((a, b), g) in triples {
                match (a, b, g) {
                    (PredictiveOutput::Scalar(a), PredictiveOutput::Scalar(b), PredictiveOutput::Scalar(g)) => {
                        h.push(*a);
                        mm.push(*b);
                        gg.push(*g);
                    }
                    _ => return Err(Error::ShapeMismatch("expected scalar outputs".into())),
                }
            }
            Elements::Scalar {
                dim: c.h.m as f64,
                h,
                mm,
                gg,
            }
        }
    };
    Ok(Compiled {
        key: (c.n, c.d),
        ln_n: (c.n.max(1) as f64).ln(),
        terms,
        count,
        elems,
    })
}

impl Compiled {
    /// Mean forward divergence to the blend with weight `p` on M, and its
    /// derivative in `p`.
    fn loss(&self, p: f64) -> (f64, f64) {
        let q = 1.0 - p;
        let (total, dtotal) = match &self.elems {
            Elements::Categorical { h, mm, gg, neg_entropy } => {
                let mut cross = 0.0;
                let mut d = 0.0;
                for i in 0..h.len() {
                    let b = p * mm[i] + q * gg[i];
                    cross += h[i] * b.ln();
                    d -= h[i] * (mm[i] - gg[i]) / b;
                }
                (neg_entropy - cross, d)
            }
            Elements::Bernoulli { h, mm, gg } => {
                let mut l = 0.0;
                let mut d = 0.0;
                for i in 0..h.len() {
                    let b = p * mm[i] + q * gg[i];
                    let y = h[i];
                    l += y * (y / b).ln() + (1.0 - y) * ((1.0 - y) / (1.0 - b)).ln();
                    d += (-y / b + (1.0 - y) / (1.0 - b)) * (mm[i] - gg[i]);
                }
                (l, d)
            }
            Elements::Scalar { dim, h, mm, gg } => {
                let mut l = 0.0;
                let mut d = 0.0;
                for i in 0..h.len() {
                    let r = h[i] - (p * mm[i] + q * gg[i]);
                    l += r * r;
                    d -= 2.0 * r * (mm[i] - gg[i]);
                }
                (l / dim, d / dim)
            }
        };
        let n = self.count as f64;
        (total / n, dtotal / n)
    }

    /// Loss and gradient in theta = (alpha, beta, ln gamma).
    fn loss_grad(&self, theta: &[f64]) -> (f64, [f64; 3]) {
        let (alpha, beta, ln_gamma) = (theta[0], theta[1], theta[2]);
        let t = &self.terms;
        let a = (ln_gamma + (1.0 - alpha) * self.ln_n).exp() * t.delta_l;
        let km = t.k_m_bits.powf(beta);
        let kg = t.k_g_bits.powf(beta);
        let eta = a - LN_2 * (km - kg);
        let p = sigmoid(eta);
        let dp = p * sigmoid(-eta);
        let (l, dl) = self.loss(p);
        let chain = dl * dp;
        let d_alpha = -a * self.ln_n;
        let d_beta = -LN_2 * (km * t.k_m_bits.ln() - kg * t.k_g_bits.ln());
        (l, [chain * d_alpha, chain * d_beta, chain * a])
    }
}

impl Compiled {
    /// Second derivative of the mean loss in `p`.
    fn loss_curvature(&self, p: f64) -> f64 {
        let q = 1.0 - p;
        let total: f64 = match &self.elems {
            Elements::Categorical { h, mm, gg, .. } => (0..h.len())
                .map(|i| {
                    let b = p * mm[i] + q * gg[i];
                    h[i] * ((mm[i] - gg[i]) / b).powi(2)
                })
                .sum(),
            Elements::Bernoulli { h, mm, gg } => (0..h.len())
                .map(|i| {
                    let b = p * mm[i] + q * gg[i];
                    (h[i] / (b * b) + (1.0 - h[i]) / ((1.0 - b) * (1.0 - b))) * (mm[i] - gg[i]).powi(2)
                })
                .sum(),
            Elements::Scalar { dim, h, mm, gg } => {
                (0..h.len()).map(|i| 2.0 * (mm[i] - gg[i]).powi(2)).sum::<f64>() / dim
            }
        };
        total / self.count as f64
    }

    /// Loss, gradient and Gauss-Newton curvature in theta.
    fn loss_grad_curvature(&self, theta: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let (alpha, beta, ln_gamma) = (theta[0], theta[1], theta[2]);
        let t = &self.terms;
        let a = (ln_gamma + (1.0 - alpha) * self.ln_n).exp() * t.delta_l;
        let km = t.k_m_bits.powf(beta);
        let kg = t.k_g_bits.powf(beta);
        let eta = a - LN_2 * (km - kg);
        let p = sigmoid(eta);
        let dp = p * sigmoid(-eta);
        let (l, dl) = self.loss(p);
        let d2 = self.loss_curvature(p) * dp * dp;
        let deta = [-a * self.ln_n, -LN_2 * (km * t.k_m_bits.ln() - kg * t.k_g_bits.ln()), a];
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] = d2 * deta[i] * deta[j];
            }
        }
        (l, deta.map(|v| dl * dp * v), h)
    }

    /// Blend weight minimizing this cell's loss (the loss is convex in p).
    fn best_weight(&self) -> f64 {
        if self.loss(0.0).1 >= 0.0 {
            return 0.0;
        }
        if self.loss(1.0).1 <= 0.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.loss(mid).1 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn mean_loss(cells: &[&Compiled], theta: &[f64]) -> (f64, Vec<f64>) {
    let mut f = 0.0;
    let mut g = vec![0.0; 3];
    for c in cells {
        let (l, dl) = c.loss_grad(theta);
        f += l;
        for k in 0..3 {
            g[k] += dl[k];
        }
    }
    let n = cells.len() as f64;
    (f / n, g.into_iter().map(|v| v / n).collect())
}

fn mean_loss_curvature(cells: &[&Compiled], theta: &[f64]) -> (f64, Vec<f64>, nalgebra::DMatrix<f64>) {
    let mut f = 0.0;
    let mut g = vec![0.0; 3];
    let mut h = nalgebra::DMatrix::<f64>::zeros(3, 3);
    for c in cells {
        let (l, dl, hl) = c.loss_grad_curvature(theta);
        f += l;
        for i in 0..3 {
            g[i] += dl[i];
            for j in 0..3 {
                h[(i, j)] += hl[i][j];
            }
        }
    }
    let n = cells.len() as f64;
    (f / n, g.into_iter().map(|v| v / n).collect(), h / n)
}

fn theta_to_params(theta: &[f64]) -> FitParams {
    FitParams {
        alpha: theta[0],
        beta: theta[1],
        gamma: theta[2].exp(),
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

/// Best point of a coarse grid over the box; rows are scanned in a fixed order
/// and ties keep the first point.
fn grid_start(cells: &[&Compiled], lower: &[f64; 3], upper: &[f64; 3]) -> Vec<f64> {
    let alphas = linspace(lower[0], upper[0], 7);
    let betas: Vec<f64> = linspace(lower[1].ln(), upper[1].ln(), 10)
        .into_iter()
        .map(f64::exp)
        .collect();
    let gammas = linspace(lower[2], upper[2], 13);
    let mut points = Vec::with_capacity(alphas.len() * betas.len() * gammas.len());
    for &a in &alphas {
        for &b in &betas {
            for &g in &gammas {
                points.push([a, b, g]);
            }
        }
    }
    let losses: Vec<f64> = points.par_iter().map(|p| mean_loss(cells, p).0).collect();
    let mut best = 0;
    for (i, l) in losses.iter().enumerate() {
        if *l < losses[best] {
            best = i;
        }
    }
    points[best].to_vec()
}

/// Start from per-cell target odds: each cell's best blend weight gives a
/// target eta, and for fixed (alpha, beta) the eta model is linear in gamma,
/// so gamma has a closed form. Candidates are ranked by the true loss.
fn profile_start(cells: &[&Compiled], lower: &[f64; 3], upper: &[f64; 3]) -> Vec<f64> {
    let targets: Vec<(f64, f64)> = cells
        .iter()
        .map(|c| {
            let p = c.best_weight().clamp(1e-3, 1.0 - 1e-3);
            ((p / (1.0 - p)).ln(), p * (1.0 - p))
        })
        .collect();
    let alphas = linspace(lower[0], upper[0], 25);
    let betas: Vec<f64> = linspace(lower[1].ln(), upper[1].ln(), 30)
        .into_iter()
        .map(f64::exp)
        .collect();
    let mut points = Vec::with_capacity(alphas.len() * betas.len());
    for &a in &alphas {
        for &b in &betas {
            let (mut num, mut den) = (0.0, 0.0);
            for (c, &(eta, w)) in cells.iter().zip(&targets) {
                let t = &c.terms;
                let slope = ((1.0 - a) * c.ln_n).exp() * t.delta_l;
                let offset = LN_2 * (t.k_m_bits.powf(b) - t.k_g_bits.powf(b));
                num += w * slope * (eta + offset);
                den += w * slope * slope;
            }
            let ln_gamma = if den > 0.0 && num > 0.0 {
                (num / den).ln()
            } else {
                lower[2]
            };
            points.push([a, b, ln_gamma.clamp(lower[2], upper[2])]);
        }
    }
    let losses: Vec<f64> = points.par_iter().map(|p| mean_loss(cells, p).0).collect();
    let mut best = 0;
    for (i, l) in losses.iter().enumerate() {
        if *l < losses[best] {
            best = i;
        }
    }
    points[best].to_vec()
}

fn pooled_goodness(
    setting: SettingKind,
    cells: &[&Compiled],
    params: &FitParams,
    diag: &BTreeMap<(u64, usize), f64>,
) -> BTreeMap<String, f64> {
    let mut observed = Vec::new();
    let mut fitted = Vec::new();
    let mut p_ms = Vec::new();
    let mut d_rels = Vec::new();
    for c in cells {
        let p = sigmoid(log_posterior_odds(params, &OddsInput::new(c.key.0, c.key.1, c.terms)));
        p_ms.push(p);
        d_rels.push(diag[&c.key]);
        let (h, mm, gg) = match &c.elems {
            Elements::Categorical { h, mm, gg, .. } => (h, mm, gg),
            Elements::Bernoulli { h, mm, gg } => (h, mm, gg),
            Elements::Scalar { h, mm, gg, .. } => (h, mm, gg),
        };
        observed.extend_from_slice(h);
        fitted.extend(mm.iter().zip(gg).map(|(a, b)| p * a + (1.0 - p) * b));
    }
    let mut out = BTreeMap::new();
    match setting {
        SettingKind::LinearRegression => {
            out.insert("r_squared".to_string(), stats::r_squared(&observed, &fitted));
        }
        SettingKind::Classification => {
            let agree = observed
                .iter()
                .zip(&fitted)
                .filter(|(a, b)| (**a > 0.5) == (**b > 0.5))
                .count();
            out.insert("agreement".to_string(), agree as f64 / observed.len() as f64);
        }
        SettingKind::BallsUrns => {
            out.insert("spearman".to_string(), stats::spearman(&observed, &fitted));
        }
    }
    if p_ms.len() >= 2 {
        let r = stats::pearson(&p_ms, &d_rels);
        if r.is_finite() {
            out.insert("pearson_p_m_d_rel".to_string(), r);
        }
    }
    out
}

/// Fits (alpha, beta, gamma) on a seeded 80/20 split of the valid cells:
/// profile and grid starts plus seeded random restarts, best loss wins.
pub fn fit_params(problem: &FitProblem, opts: &FitOptions) -> Result<FitOutcome> {
    let diagnostics = cell_diagnostics(problem, opts.apply_threshold)?;
    let valid: BTreeMap<(u64, usize), bool> = diagnostics.cells.iter().map(|c| ((c.n, c.d), c.valid)).collect();
    let d_rel: BTreeMap<(u64, usize), f64> = diagnostics.cells.iter().map(|c| ((c.n, c.d), c.rel.d_rel)).collect();

    let mut compiled = Vec::new();
    let mut excluded_cells = Vec::new();
    let mut order: Vec<&CellObservation> = problem.cells.iter().collect();
    order.sort_by_key(|c| (c.d, c.n));
    for c in order {
        if !valid.get(&(c.n, c.d)).copied().unwrap_or(false) {
            excluded_cells.push((c.n, c.d));
            continue;
        }
        let terms = *problem
            .terms
            .get(&c.d)
            .ok_or_else(|| Error::Precondition(format!("no delta L / complexity terms for D={}", c.d)))?;
        compiled.push(compile(c, pair_for(problem, c.d)?, terms)?);
    }
    if compiled.len() < 3 {
        return Err(Error::Underdetermined {
            cells: compiled.len(),
            params: 3,
        });
    }

    let mut warnings: Vec<String> = diagnostics
        .degenerate
        .iter()
        .map(|d| format!("D={d}: memorizing and generalizing predictions coincide; cells excluded"))
        .collect();
    if compiled.len() < RELIABLE_CELLS {
        warnings.push(format!(
            "only {} valid cells; the fit is unreliable with fewer than {RELIABLE_CELLS}",
            compiled.len()
        ));
    }

    let mut idx: Vec<usize> = (0..compiled.len()).collect();
    idx.shuffle(&mut stream(opts.split_seed, Domain::Split, 0, 0));
    let n_train = ((opts.train_fraction * compiled.len() as f64).round() as usize).clamp(3, compiled.len());
    let (train_idx, val_idx) = idx.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let train: Vec<&Compiled> = train_idx.iter().map(|&i| &compiled[i]).collect();
    let val: Vec<&Compiled> = val_idx.iter().map(|&i| &compiled[i]).collect();

    let lower = opts.bounds.lower();
    let upper = opts.bounds.upper();
    let mut starts = vec![
        profile_start(&train, &lower, &upper),
        grid_start(&train, &lower, &upper),
    ];
    // Scale so the best start sits at 1: the relative function tolerance
    // then measures progress against the starting misfit.
    let scale = {
        let s = starts
            .iter()
            .map(|x| mean_loss(&train, x).0)
            .fold(f64::INFINITY, f64::min);
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    };
    for r in 0..opts.restarts {
        let mut rng = stream(opts.split_seed, Domain::Restart, r as u64, 0);
        starts.push(vec![
            rng.random_range(lower[0]..=upper[0]),
            rng.random_range(lower[1].ln()..=upper[1].ln()).exp(),
            rng.random_range(lower[2]..=upper[2]),
        ]);
    }

    let results: Vec<optim::Minimum> = starts
        .par_iter()
        .map(|x0| {
            let objective = |theta: &[f64]| {
                let (f, g) = mean_loss(&train, theta);
                (f / scale, g.into_iter().map(|v| v / scale).collect())
            };
            optim::minimize(objective, x0, &lower, &upper, &opts.optimizer)
        })
        .collect();

    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.f < results[best].f {
            best = i;
        }
    }
    let converged = results.iter().any(|r| r.termination.converged());
    if !converged {
        warnings.push("optimizer did not converge from any start; reporting the best point found".into());
    }
    // L-BFGS stops on the function tolerance in curved valleys well before
    // the parameters settle; a short Gauss-Newton polish finishes the job.
    let polished = optim::newton_polish(
        |theta: &[f64]| {
            let (f, g, h) = mean_loss_curvature(&train, theta);
            (f / scale, g.into_iter().map(|v| v / scale).collect(), h / scale)
        },
        &results[best].x,
        &lower,
        &upper,
        POLISH_ITERATIONS,
    );
    let theta = if polished.f <= results[best].f {
        &polished.x
    } else {
        &results[best].x
    };
    let params = theta_to_params(theta);

    let train_loss = mean_loss(&train, theta).0;
    let val_loss = (!val.is_empty()).then(|| mean_loss(&val, theta).0);
    let all: Vec<&Compiled> = compiled.iter().collect();
    let goodness_metrics = pooled_goodness(problem.setting, &all, &params, &d_rel);

    let restarts = starts
        .iter()
        .zip(&results)
        .map(|(s, r)| RestartOutcome {
            start: theta_to_params(s),
            params: theta_to_params(&r.x),
            loss: r.f * scale,
            iterations: r.iterations,
            termination: format!("{:?}", r.termination),
        })
        .collect();

    let report = FitReport {
        params,
        bounds: opts.bounds,
        split_seed: opts.split_seed,
        train_cells: train.iter().map(|c| c.key).collect(),
        val_cells: val.iter().map(|c| c.key).collect(),
        excluded_cells,
        train_loss,
        val_loss,
        goodness_metrics,
        restarts,
        converged,
        warnings,
    };
    Ok(FitOutcome { report, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::SequencePredictions;

    fn bernoulli_set(values: &[f64]) -> PredictionSet {
        PredictionSet {
            setting: SettingKind::Classification,
            m: 4,
            sequences: values
                .iter()
                .enumerate()
                .map(|(i, &v)| SequencePredictions {
                    seq_id: i,
                    positions: vec![(3, PredictiveOutput::Bernoulli(v))],
                })
                .collect(),
        }
    }

    fn synthetic(truth: FitParams, checkpoints: &[u64]) -> FitProblem {
        let m_vals = [0.9, 0.2, 0.7, 0.05, 0.6, 0.95];
        let g_vals = [0.3, 0.8, 0.1, 0.5, 0.4, 0.35];
        let mut predictors = BTreeMap::new();
        let mut terms = BTreeMap::new();
        let mut cells = Vec::new();
        for (j, d) in [2usize, 8, 32].into_iter().enumerate() {
            let t = DiversityTerms {
                delta_l: 0.2 / (j + 1) as f64,
                k_m_bits: 2000.0 * (j + 1) as f64,
                k_g_bits: 1500.0,
            };
            terms.insert(d, t);
            predictors.insert(
                d,
                PredictorPair {
                    memorizing: bernoulli_set(&m_vals),
                    generalizing: bernoulli_set(&g_vals),
                },
            );
            for &n in checkpoints {
                let p = sigmoid(log_posterior_odds(&truth, &OddsInput::new(n, d, t)));
                let h: Vec<f64> = m_vals.iter().zip(&g_vals).map(|(a, b)| p * a + (1.0 - p) * b).collect();
                cells.push(CellObservation {
                    n,
                    d,
                    h: bernoulli_set(&h),
                });
            }
        }
        FitProblem {
            setting: SettingKind::Classification,
            distance: DistanceKind::BernoulliSymKL,
            cells,
            predictors,
            terms,
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let truth = FitParams::new(0.4, 0.7, 2.0).unwrap();
        let problem = synthetic(truth, &[1000, 10_000]);
        let c = &problem.cells[1];
        let compiled = compile(c, &problem.predictors[&c.d], problem.terms[&c.d]).unwrap();
        let theta = [0.45, 0.6, 0.3];
        let (_, g) = compiled.loss_grad(&theta);
        for k in 0..3 {
            let h = 1e-6;
            let mut up = theta;
            let mut dn = theta;
            up[k] += h;
            dn[k] -= h;
            let fd = (compiled.loss_grad(&up).0 - compiled.loss_grad(&dn).0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn recovers_planted_parameters() {
        let truth = FitParams::new(0.5, 0.6, 0.5).unwrap();
        let checkpoints: Vec<u64> = (0..10).map(|i| 10u64.pow(2) * 3u64.pow(i)).collect();
        let problem = synthetic(truth, &checkpoints);
        let opts = FitOptions {
            apply_threshold: false,
            ..Default::default()
        };
        let out = fit_params(&problem, &opts).unwrap();
        let p = out.report.params;
        assert!((p.alpha - truth.alpha).abs() / truth.alpha < 0.05, "{p:?}");
        assert!((p.beta - truth.beta).abs() / truth.beta < 0.05, "{p:?}");
        assert!((p.gamma - truth.gamma).abs() / truth.gamma < 0.05, "{p:?}");
        assert!(out.report.train_loss < 1e-8);
    }

    #[test]
    fn too_few_cells() {
        let truth = FitParams::new(0.5, 0.6, 0.5).unwrap();
        let mut problem = synthetic(truth, &[100]);
        problem.cells.truncate(2);
        let err = fit_params(&problem, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Underdetermined { cells: 2, params: 3 }));
    }

    #[test]
    fn few_cells_warn() {
        let truth = FitParams::new(0.5, 0.6, 0.5).unwrap();
        let problem = synthetic(truth, &[100, 1000]);
        let opts = FitOptions {
            apply_threshold: false,
            ..Default::default()
        };
        let out = fit_params(&problem, &opts).unwrap();
        assert!(out.report.warnings.iter().any(|w| w.contains("unreliable")));
    }

    #[test]
    fn split_is_seeded() {
        let truth = FitParams::new(0.5, 0.6, 0.5).unwrap();
        let checkpoints: Vec<u64> = (1..6).map(|i| 10u64.pow(i)).collect();
        let problem = synthetic(truth, &checkpoints);
        let opts = FitOptions {
            apply_threshold: false,
            ..Default::default()
        };
        let a = fit_params(&problem, &opts).unwrap().report;
        let b = fit_params(&problem, &opts).unwrap().report;
        assert_eq!(a, b);
        assert_eq!(a.train_cells.len(), 12);
        assert_eq!(a.val_cells.len(), 3);
    }

    #[test]
    fn coinciding_predictors_drop_their_diversity() {
        let truth = FitParams::new(0.5, 0.6, 0.5).unwrap();
        let checkpoints: Vec<u64> = (1..6).map(|i| 10u64.pow(i)).collect();
        let mut problem = synthetic(truth, &checkpoints);
        let d0 = *problem.predictors.keys().next().unwrap();
        let pair = problem.predictors.get_mut(&d0).unwrap();
        pair.generalizing = pair.memorizing.clone();
        let opts = FitOptions {
            apply_threshold: false,
            ..Default::default()
        };
        let out = fit_params(&problem, &opts).unwrap();
        assert_eq!(out.diagnostics.degenerate, vec![d0]);
        assert!(out.diagnostics.cells.iter().all(|c| c.d != d0));
        assert_eq!(
            out.report.excluded_cells.iter().filter(|c| c.1 == d0).count(),
            checkpoints.len()
        );
        assert!(out.report.warnings[0].contains("coincide"));
    }
}
