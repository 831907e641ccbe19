//! Hierarchical Bayesian model over the memorizing and generalizing
//! predictors: log-posterior odds, posterior-weighted prediction, fitting
//! and forecasts.

mod fit;
mod forecast;

pub use fit::{
    cell_diagnostics, fit_params, CellDiagnostics, CellObservation, Diagnostics, FitOptions, FitOutcome, FitProblem,
    FitReport, ParamBounds, PredictorPair, RestartOutcome,
};
pub use forecast::{
    beta_trend, crossover_curvature, empirical_transience, fit_logistic, logistic_d2_du2, logistic_value,
    transience_time, BetaTrend, CurvatureProfile, LogisticFit, TransienceForecast, TransienceStatus, ROOT_FIND_RANGE,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::complexity::delta_k;
use crate::error::{Error, Result};
use crate::metrics;
use crate::predictors::{self, PredictionSet, PredictorKind};
use crate::stats::sigmoid;
use crate::taskgen::{EvalMode, EvalSet, TaskMixture};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FitParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Precondition(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Precondition(format!("beta must be positive, got {beta}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Precondition(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { alpha, beta, gamma })
    }
}

/// Per-diversity quantities the odds depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityTerms {
    /// `L_G - L_M` in nats per predicted element.
    pub delta_l: f64,
    pub k_m_bits: f64,
    pub k_g_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsInput {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "D")]
    pub d: usize,
    pub delta_l: f64,
    pub k_m_bits: f64,
    pub k_g_bits: f64,
}

impl OddsInput {
    pub fn new(n: u64, d: usize, terms: DiversityTerms) -> Self {
        Self {
            n,
            d,
            delta_l: terms.delta_l,
            k_m_bits: terms.k_m_bits,
            k_g_bits: terms.k_g_bits,
        }
    }

    pub fn terms(&self) -> DiversityTerms {
        DiversityTerms {
            delta_l: self.delta_l,
            k_m_bits: self.k_m_bits,
            k_g_bits: self.k_g_bits,
        }
    }
}

/// `gamma * N^(1-alpha) * delta_l - complexity_term`.
pub fn odds_from_terms(params: &FitParams, n: f64, delta_l: f64, complexity_term: f64) -> f64 {
    params.gamma * n.powf(1.0 - params.alpha) * delta_l - complexity_term
}

/// Log-posterior odds of M over G after N training iterations.
pub fn log_posterior_odds(params: &FitParams, inp: &OddsInput) -> f64 {
    let term = delta_k(inp.k_m_bits, inp.k_g_bits, params.beta);
    odds_from_terms(params, inp.n as f64, inp.delta_l, term)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPoint {
    pub eta: f64,
    pub p_m: f64,
    pub p_g: f64,
}

impl PosteriorPoint {
    pub fn from_eta(eta: f64) -> Self {
        Self {
            eta,
            p_m: sigmoid(eta),
            p_g: sigmoid(-eta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorGrid {
    pub entries: BTreeMap<(u64, usize), PosteriorPoint>,
}

pub fn posterior_grid(
    params: &FitParams,
    checkpoints: &[u64],
    terms: &BTreeMap<usize, DiversityTerms>,
) -> PosteriorGrid {
    let mut entries = BTreeMap::new();
    for (&d, t) in terms {
        for &n in checkpoints {
            let eta = log_posterior_odds(params, &OddsInput::new(n, d, *t));
            entries.insert((n, d), PosteriorPoint::from_eta(eta));
        }
    }
    PosteriorGrid { entries }
}

/// `sigma(eta) * M + (1 - sigma(eta)) * G`, element-wise.
pub fn blend_predictions(
    params: &FitParams,
    inp: &OddsInput,
    m_out: &PredictionSet,
    g_out: &PredictionSet,
) -> Result<PredictionSet> {
    let p = sigmoid(log_posterior_odds(params, inp));
    metrics::blend(m_out, g_out, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaL {
    pub l_m: f64,
    pub l_g: f64,
    pub delta_l: f64,
    pub n_blocks: usize,
}

/// Median-of-means NLL gap `L_G - L_M` on standard in-distribution sequences.
pub fn compute_delta_l(mixture: &TaskMixture, eval_id: &EvalSet) -> Result<DeltaL> {
    compute_delta_l_with(mixture, eval_id, None)
}

pub fn compute_delta_l_with(mixture: &TaskMixture, eval_id: &EvalSet, n_blocks: Option<usize>) -> Result<DeltaL> {
    if eval_id.mode != EvalMode::Id {
        return Err(Error::Precondition(format!(
            "delta L uses ID sequences, got {:?}",
            eval_id.mode
        )));
    }
    let m_preds = predictors::predict_eval_set(PredictorKind::Memorizing, mixture, eval_id)?;
    let g_preds = predictors::predict_eval_set(PredictorKind::Generalizing, mixture, eval_id)?;
    delta_l_from_predictions(&m_preds, &g_preds, eval_id, n_blocks)
}

pub fn delta_l_from_predictions(
    m_preds: &PredictionSet,
    g_preds: &PredictionSet,
    eval_id: &EvalSet,
    n_blocks: Option<usize>,
) -> Result<DeltaL> {
    let l_m = predictors::likelihood_of(m_preds, eval_id, n_blocks)?;
    let l_g = predictors::likelihood_of(g_preds, eval_id, n_blocks)?;
    Ok(DeltaL {
        l_m: l_m.mean_nll,
        l_g: l_g.mean_nll,
        delta_l: l_g.mean_nll - l_m.mean_nll,
        n_blocks: l_m.n_blocks,
    })
}
