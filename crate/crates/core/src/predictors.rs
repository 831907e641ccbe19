//! Closed-form memorizing and generalizing Bayesian predictors.
//!
//! The memorizing predictor (M) places a discrete prior on the D training
//! tasks; the generalizing predictor (G) places a continuous prior on the
//! task-generating distribution. Every posterior sum over tasks is taken in
//! log space.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, logsumexp};
use crate::taskgen::{EvalSet, Payload, Sequence, SettingKind, TaskMixture};

/// Per-element NLL cap for zero-probability outcomes, in nats.
pub const NLL_CAP: f64 = 700.0;

/// Relative singular-value cutoff for the unregularized ridge solve.
pub const PINV_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictorKind {
    Memorizing,
    Generalizing,
}

impl PredictorKind {
    pub fn tag(self) -> &'static str {
        match self {
            PredictorKind::Memorizing => "M",
            PredictorKind::Generalizing => "G",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictiveOutput {
    Categorical(Vec<f64>),
    Scalar(f64),
    Bernoulli(f64),
}

impl PredictiveOutput {
    pub fn same_variant(&self, other: &PredictiveOutput) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }

    pub fn is_finite(&self) -> bool {
        match self {
            PredictiveOutput::Categorical(p) => p.iter().all(|x| x.is_finite()),
            PredictiveOutput::Scalar(x) | PredictiveOutput::Bernoulli(x) => x.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePredictions {
    pub seq_id: usize,
    pub positions: Vec<(usize, PredictiveOutput)>,
}

/// Predictions for a whole eval set, in sequence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub setting: SettingKind,
    pub m: usize,
    pub sequences: Vec<SequencePredictions>,
}

impl PredictionSet {
    pub fn n_elements(&self) -> usize {
        self.sequences.iter().map(|s| s.positions.len()).sum()
    }

    pub fn outputs(&self) -> impl Iterator<Item = &PredictiveOutput> {
        self.sequences.iter().flat_map(|s| s.positions.iter().map(|(_, o)| o))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEstimate {
    pub mean_nll: f64,
    pub n_blocks: usize,
    pub block_medians_used: bool,
    pub n_elements: usize,
    /// Elements whose NLL hit [`NLL_CAP`].
    pub saturated: usize,
}

fn check_tokens(prefix: &[usize], m: usize) -> Result<()> {
    match prefix.iter().find(|&&t| t >= m) {
        Some(t) => Err(Error::Precondition(format!("token {t} outside [0, {m})"))),
        None => Ok(()),
    }
}

fn token_counts(prefix: &[usize], m: usize) -> Vec<usize> {
    let mut n = vec![0usize; m];
    for &t in prefix {
        n[t] += 1;
    }
    n
}

fn urn_log_likelihood(w: &[f64], counts: &[usize]) -> f64 {
    let mut ll = 0.0;
    for (&wk, &nk) in w.iter().zip(counts) {
        if nk > 0 {
            // 0^n = 0 for an observed type: ln gives -inf
            ll += nk as f64 * wk.ln();
        }
    }
    ll
}

fn urn_mixture_predictive(mixture: &TaskMixture, log_lik: &[f64]) -> Result<Vec<f64>> {
    let norm = logsumexp(log_lik);
    if norm == f64::NEG_INFINITY {
        return Err(Error::DegeneratePosterior);
    }
    let m = mixture.spec.m;
    let mut p = vec![0.0; m];
    for (task, &ll) in mixture.tasks.iter().zip(log_lik) {
        let weight = (ll - norm).exp();
        if weight == 0.0 {
            continue;
        }
        for (pk, wk) in p.iter_mut().zip(&task.w) {
            *pk += weight * wk;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Posterior-weighted average of the training urns given the prefix counts.
pub fn bu_memorizing(mixture: &TaskMixture, prefix: &[usize]) -> Result<Vec<f64>> {
    let m = mixture.spec.m;
    check_tokens(prefix, m)?;
    let counts = token_counts(prefix, m);
    let log_lik: Vec<f64> = mixture
        .tasks
        .iter()
        .map(|t| urn_log_likelihood(&t.w, &counts))
        .collect();
    urn_mixture_predictive(mixture, &log_lik)
}

/// Dirichlet(1)-categorical posterior predictive `(n_k + 1) / (t + m)`.
pub fn bu_generalizing(prefix: &[usize], m: usize) -> Result<Vec<f64>> {
    check_tokens(prefix, m)?;
    let counts = token_counts(prefix, m);
    let denom = (prefix.len() + m) as f64;
    Ok(counts.into_iter().map(|n| (n + 1) as f64 / denom).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(xs: &[Vec<f64>], ys: &[f64], x_query: &[f64]) -> Result<usize> {
    let m = x_query.len();
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != m) {
        return Err(Error::ShapeMismatch(format!(
            "input of dim {} but query of dim {m}",
            x.len()
        )));
    }
    Ok(m)
}

fn ridge_solve(gram: &DMatrix<f64>, xty: &DVector<f64>, sigma2: f64) -> DVector<f64> {
    let m = xty.len();
    let a = gram + DMatrix::<f64>::identity(m, m) * sigma2;
    if sigma2 > 0.0 {
        if let Some(chol) = a.clone().cholesky() {
            return chol.solve(xty);
        }
    }
    let svd = a.svd(true, true);
    let tol = PINV_RTOL * svd.singular_values.max();
    svd.solve(xty, tol).unwrap_or_else(|_| DVector::zeros(m))
}

/// Ridge estimate `(X^T X + sigma2 I)^-1 X^T y` over the given pairs.
pub fn ridge_weights(xs: &[Vec<f64>], ys: &[f64], m: usize, sigma2: f64) -> DVector<f64> {
    if xs.is_empty() {
        return DVector::zeros(m);
    }
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut xty = DVector::<f64>::zeros(m);
    for (x, &y) in xs.iter().zip(ys) {
        accumulate_pair(&mut gram, &mut xty, x, y);
    }
    ridge_solve(&gram, &xty, sigma2)
}

fn accumulate_pair(gram: &mut DMatrix<f64>, xty: &mut DVector<f64>, x: &[f64], y: f64) {
    let m = x.len();
    for i in 0..m {
        xty[i] += x[i] * y;
        for j in 0..m {
            gram[(i, j)] += x[i] * x[j];
        }
    }
}

/// Ridge-regression prediction at `x_query`.
pub fn lr_generalizing(xs: &[Vec<f64>], ys: &[f64], x_query: &[f64], sigma2: f64) -> Result<f64> {
    let m = check_dims(xs, ys, x_query)?;
    let w = ridge_weights(xs, ys, m, sigma2);
    Ok(dot(w.as_slice(), x_query))
}

fn posterior_mean_task(mixture: &TaskMixture, sse: &[f64], sigma2: f64, n_pairs: usize) -> Vec<f64> {
    let m = mixture.spec.m;
    let mut w = vec![0.0; m];
    if n_pairs == 0 {
        let d = mixture.tasks.len() as f64;
        for t in &mixture.tasks {
            for (a, b) in w.iter_mut().zip(&t.w) {
                *a += b / d;
            }
        }
        return w;
    }
    if sigma2 == 0.0 {
        // hard argmin, first index wins ties
        let mut best = 0;
        for (i, &e) in sse.iter().enumerate() {
            if e < sse[best] {
                best = i;
            }
        }
        return mixture.tasks[best].w.clone();
    }
    let log_w: Vec<f64> = sse.iter().map(|e| -e / (2.0 * sigma2)).collect();
    let norm = logsumexp(&log_w);
    for (t, lw) in mixture.tasks.iter().zip(&log_w) {
        let weight = (lw - norm).exp();
        for (a, b) in w.iter_mut().zip(&t.w) {
            *a += weight * b;
        }
    }
    w
}

/// Posterior-weighted average of the training regression vectors.
pub fn lr_memorizing(mixture: &TaskMixture, xs: &[Vec<f64>], ys: &[f64], x_query: &[f64], sigma2: f64) -> Result<f64> {
    let m = check_dims(xs, ys, x_query)?;
    if m != mixture.spec.m {
        return Err(Error::ShapeMismatch(format!(
            "query dim {m}, mixture dim {}",
            mixture.spec.m
        )));
    }
    let sse: Vec<f64> = mixture
        .tasks
        .iter()
        .map(|t| {
            xs.iter()
                .zip(ys)
                .map(|(x, &y)| {
                    let r = y - dot(&t.w, x);
                    r * r
                })
                .sum()
        })
        .collect();
    let w = posterior_mean_task(mixture, &sse, sigma2, xs.len());
    Ok(dot(&w, x_query))
}

fn require_positive_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "classification needs sigma2 > 0, got {sigma2}"
        )))
    }
}

fn squared_distance_scaled(query: &[f64], item: &[f64], scale: f64) -> f64 {
    query
        .iter()
        .zip(item)
        .map(|(q, w)| {
            let r = q - w * scale;
            r * r
        })
        .sum()
}

/// `p(1 | log_weights)` from per-hypothesis log weights and labels.
fn label_posterior(log_w: &[f64], labels: impl Iterator<Item = u8>) -> f64 {
    let ones: Vec<f64> = log_w
        .iter()
        .zip(labels)
        .filter(|(_, l)| *l == 1)
        .map(|(w, _)| *w)
        .collect();
    if ones.is_empty() {
        return 0.0;
    }
    let p = (logsumexp(&ones) - logsumexp(log_w)).exp();
    p.clamp(0.0, 1.0)
}

/// Gaussian-kernel vote over the training item-label pairs; ignores context.
pub fn cls_memorizing(mixture: &TaskMixture, query_item: &[f64], sigma2: f64) -> Result<f64> {
    require_positive_sigma2(sigma2)?;
    let m = query_item.len();
    if m != mixture.spec.m {
        return Err(Error::ShapeMismatch(format!(
            "query dim {m}, mixture dim {}",
            mixture.spec.m
        )));
    }
    let coef = m as f64 * (1.0 + sigma2) / (2.0 * sigma2);
    let scale = 1.0 / (1.0 + sigma2).sqrt();
    let log_w: Vec<f64> = mixture
        .tasks
        .iter()
        .map(|t| -coef * squared_distance_scaled(query_item, &t.w, scale))
        .collect();
    Ok(label_posterior(
        &log_w,
        mixture.tasks.iter().map(|t| t.label.unwrap_or(0)),
    ))
}

/// Noisy-copy vote over the in-context item-label pairs.
pub fn cls_generalizing(items: &[Vec<f64>], labels: &[u8], query_item: &[f64], sigma2: f64) -> Result<f64> {
    require_positive_sigma2(sigma2)?;
    if items.is_empty() {
        return Err(Error::Precondition(
            "generalizing classifier needs a nonempty context".into(),
        ));
    }
    if items.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} items but {} labels",
            items.len(),
            labels.len()
        )));
    }
    let m = query_item.len();
    let s1 = 1.0 + sigma2;
    let coef = m as f64 * s1 * s1 / (2.0 * sigma2 * (2.0 + sigma2));
    let log_w: Vec<f64> = items
        .iter()
        .map(|item| -coef * squared_distance_scaled(query_item, item, 1.0 / s1))
        .collect();
    Ok(label_posterior(&log_w, labels.iter().copied()))
}

/// Predictions at every scored position of `seq`.
pub fn predict_sequence(
    kind: PredictorKind,
    mixture: &TaskMixture,
    seq: &Sequence,
    seq_id: usize,
) -> Result<SequencePredictions> {
    let spec = &mixture.spec;
    if seq.setting != spec.setting {
        return Err(Error::SettingMismatch {
            expected: spec.setting,
            found: seq.setting,
        });
    }
    let positions = match (&seq.payload, kind) {
        (Payload::BallsUrns { tokens }, PredictorKind::Generalizing) => {
            check_tokens(tokens, spec.m)?;
            let m = spec.m;
            let mut counts = vec![0usize; m];
            let mut out = Vec::with_capacity(tokens.len());
            for (i, &t) in tokens.iter().enumerate() {
                let denom = (i + m) as f64;
                let p = counts.iter().map(|&n| (n + 1) as f64 / denom).collect();
                out.push((i, PredictiveOutput::Categorical(p)));
                counts[t] += 1;
            }
            out
        }
        (Payload::BallsUrns { tokens }, PredictorKind::Memorizing) => {
            check_tokens(tokens, spec.m)?;
            let mut log_lik = vec![0.0; mixture.tasks.len()];
            let mut out = Vec::with_capacity(tokens.len());
            for (i, &t) in tokens.iter().enumerate() {
                let p = urn_mixture_predictive(mixture, &log_lik)?;
                out.push((i, PredictiveOutput::Categorical(p)));
                for (ll, task) in log_lik.iter_mut().zip(&mixture.tasks) {
                    *ll += task.w[t].ln();
                }
            }
            out
        }
        (Payload::LinearRegression { xs, ys }, PredictorKind::Generalizing) => {
            let m = spec.m;
            let mut gram = DMatrix::<f64>::zeros(m, m);
            let mut xty = DVector::<f64>::zeros(m);
            let mut out = Vec::with_capacity(ys.len());
            for (c, (x, &y)) in xs.iter().zip(ys).enumerate() {
                if x.len() != m {
                    return Err(Error::ShapeMismatch(format!("input of dim {}, expected {m}", x.len())));
                }
                let y_hat = if c == 0 {
                    0.0
                } else {
                    dot(ridge_solve(&gram, &xty, spec.sigma2).as_slice(), x)
                };
                out.push((c, PredictiveOutput::Scalar(y_hat)));
                accumulate_pair(&mut gram, &mut xty, x, y);
            }
            out
        }
        (Payload::LinearRegression { xs, ys }, PredictorKind::Memorizing) => {
            let mut sse = vec![0.0; mixture.tasks.len()];
            let mut out = Vec::with_capacity(ys.len());
            for (c, (x, &y)) in xs.iter().zip(ys).enumerate() {
                if x.len() != spec.m {
                    return Err(Error::ShapeMismatch(format!(
                        "input of dim {}, expected {}",
                        x.len(),
                        spec.m
                    )));
                }
                let w = posterior_mean_task(mixture, &sse, spec.sigma2, c);
                out.push((c, PredictiveOutput::Scalar(dot(&w, x))));
                for (e, t) in sse.iter_mut().zip(&mixture.tasks) {
                    let r = y - dot(&t.w, x);
                    *e += r * r;
                }
            }
            out
        }
        (
            Payload::Classification {
                items, labels, query, ..
            },
            kind,
        ) => {
            let p = match kind {
                PredictorKind::Memorizing => cls_memorizing(mixture, query, spec.sigma2)?,
                PredictorKind::Generalizing => cls_generalizing(items, labels, query, spec.sigma2)?,
            };
            vec![(items.len(), PredictiveOutput::Bernoulli(p))]
        }
    };
    Ok(SequencePredictions { seq_id, positions })
}

pub fn predict_eval_set(kind: PredictorKind, mixture: &TaskMixture, eval: &EvalSet) -> Result<PredictionSet> {
    let sequences = eval
        .sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| predict_sequence(kind, mixture, seq, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet {
        setting: mixture.spec.setting,
        m: mixture.spec.m,
        sequences,
    })
}

/// Per-element NLLs in nats, capped at [`NLL_CAP`]. Returns the values
/// and how many were capped.
pub fn element_nlls(seq: &Sequence, preds: &SequencePredictions, sigma2: f64) -> Result<(Vec<f64>, usize)> {
    let mut out = Vec::with_capacity(preds.positions.len());
    let mut saturated = 0;
    let mut push = |nll: f64| {
        if nll.is_nan() || nll >= NLL_CAP {
            saturated += 1;
            out.push(NLL_CAP);
        } else {
            out.push(nll);
        }
    };
    match &seq.payload {
        Payload::BallsUrns { tokens } => {
            for (pos, o) in &preds.positions {
                let PredictiveOutput::Categorical(p) = o else {
                    return Err(Error::ShapeMismatch("expected categorical output".into()));
                };
                let token = *tokens
                    .get(*pos)
                    .ok_or_else(|| Error::ShapeMismatch(format!("position {pos} past sequence end")))?;
                push(-p[token].ln());
            }
        }
        Payload::LinearRegression { ys, .. } => {
            if sigma2 <= 0.0 {
                return Err(Error::Precondition("Gaussian NLL needs sigma2 > 0".into()));
            }
            let offset = 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
            for (pos, o) in &preds.positions {
                let PredictiveOutput::Scalar(y_hat) = o else {
                    return Err(Error::ShapeMismatch("expected scalar output".into()));
                };
                let y = *ys
                    .get(*pos)
                    .ok_or_else(|| Error::ShapeMismatch(format!("position {pos} past sequence end")))?;
                let r = y - y_hat;
                push(offset + r * r / (2.0 * sigma2));
            }
        }
        Payload::Classification { target, .. } => {
            for (_, o) in &preds.positions {
                let PredictiveOutput::Bernoulli(p) = o else {
                    return Err(Error::ShapeMismatch("expected Bernoulli output".into()));
                };
                let q = if *target == 1 { *p } else { 1.0 - p };
                push(-q.ln());
            }
        }
    }
    Ok((out, saturated))
}

/// Median-of-means NLL of a prediction set on its eval set.
pub fn likelihood_of(preds: &PredictionSet, eval: &EvalSet, n_blocks: Option<usize>) -> Result<LikelihoodEstimate> {
    if eval.is_empty() {
        return Err(Error::Precondition("empty eval set".into()));
    }
    if preds.sequences.len() != eval.sequences.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction rows for {} sequences",
            preds.sequences.len(),
            eval.sequences.len()
        )));
    }
    let mut pooled = Vec::new();
    let mut saturated = 0;
    for (seq, p) in eval.sequences.iter().zip(&preds.sequences) {
        let (nll, sat) = element_nlls(seq, p, eval.spec.sigma2)?;
        pooled.extend(nll);
        saturated += sat;
    }
    let blocks = n_blocks
        .unwrap_or_else(|| stats::default_blocks(pooled.len()))
        .clamp(1, pooled.len());
    Ok(LikelihoodEstimate {
        mean_nll: stats::median_of_means(&pooled, blocks),
        n_blocks: blocks,
        block_medians_used: blocks > 1,
        n_elements: pooled.len(),
        saturated,
    })
}

pub fn avg_log_likelihood(kind: PredictorKind, mixture: &TaskMixture, eval: &EvalSet) -> Result<LikelihoodEstimate> {
    let preds = predict_eval_set(kind, mixture, eval)?;
    likelihood_of(&preds, eval, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{sample_mixture, MixtureSpec, Task};

    fn urns(ws: &[&[f64]]) -> TaskMixture {
        TaskMixture {
            spec: MixtureSpec::new(SettingKind::BallsUrns, ws.len(), ws[0].len(), 8, 0),
            tasks: ws
                .iter()
                .map(|w| Task {
                    w: w.to_vec(),
                    label: None,
                })
                .collect(),
        }
    }

    #[test]
    fn single_urn_posterior_collapses() {
        let mix = urns(&[&[0.1, 0.2, 0.3, 0.4]]);
        let p = bu_memorizing(&mix, &[3, 3, 0, 1]).unwrap();
        for (a, b) in p.iter().zip(&[0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_prefix_averages_urns() {
        let mix = urns(&[&[0.5, 0.5, 0.0], &[0.1, 0.2, 0.7]]);
        let p = bu_memorizing(&mix, &[]).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15);
        assert!((p[1] - 0.35).abs() < 1e-15);
        assert!((p[2] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_urn_is_excluded() {
        let mix = urns(&[&[0.5, 0.5, 0.0], &[0.1, 0.2, 0.7]]);
        let p = bu_memorizing(&mix, &[2]).unwrap();
        assert_eq!(p, vec![0.1, 0.2, 0.7]);
        let only_zero = urns(&[&[0.5, 0.5, 0.0]]);
        assert!(matches!(
            bu_memorizing(&only_zero, &[2]),
            Err(Error::DegeneratePosterior)
        ));
        assert!(matches!(bu_memorizing(&only_zero, &[5]), Err(Error::Precondition(_))));
    }

    #[test]
    fn laplace_rule() {
        assert_eq!(bu_generalizing(&[], 4).unwrap(), vec![0.25; 4]);
        assert_eq!(
            bu_generalizing(&[0, 0, 1, 2], 4).unwrap(),
            vec![3.0 / 8.0, 2.0 / 8.0, 2.0 / 8.0, 1.0 / 8.0]
        );
        let p = bu_generalizing(&[1; 98], 2).unwrap();
        assert_eq!(p[1], 99.0 / 100.0);
    }

    #[test]
    fn ridge_single_pair_closed_form() {
        let x = vec![0.3, -1.2, 2.0];
        let y = 0.7;
        let s2 = 3.0 / 256.0;
        let q = vec![1.0, 0.5, -0.25];
        let nx2: f64 = x.iter().map(|v| v * v).sum();
        let expected: f64 = x.iter().zip(&q).map(|(a, b)| a * y / (nx2 + s2) * b).sum();
        let got = lr_generalizing(&[x], &[y], &q, s2).unwrap();
        assert!((got - expected).abs() < 1e-14 * expected.abs().max(1.0));
        assert_eq!(lr_generalizing(&[], &[], &q, s2).unwrap(), 0.0);
    }

    #[test]
    fn unregularized_ridge_uses_pseudo_inverse() {
        // two identical inputs in 2D: X^T X is rank one
        let xs = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let ys = vec![2.0, 2.0];
        let w = ridge_weights(&xs, &ys, 2, 0.0);
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lr_memorizing_limits() {
        let spec = MixtureSpec::new(SettingKind::LinearRegression, 1, 2, 4, 1);
        let single = sample_mixture(&spec).unwrap();
        let q = vec![0.4, -0.9];
        let xs = vec![vec![1.0, 2.0]];
        let got = lr_memorizing(&single, &xs, &[5.0], &q, spec.sigma2).unwrap();
        assert_eq!(got, dot(&single.tasks[0].w, &q));

        let four = sample_mixture(&spec.with_diversity(4)).unwrap();
        let mean: Vec<f64> = (0..2)
            .map(|k| four.tasks.iter().map(|t| t.w[k]).sum::<f64>() / 4.0)
            .collect();
        let got = lr_memorizing(&four, &[], &[], &q, spec.sigma2).unwrap();
        assert!((got - dot(&mean, &q)).abs() < 1e-15);
    }

    #[test]
    fn lr_memorizing_hard_argmin_breaks_ties_low() {
        let mix = TaskMixture {
            spec: MixtureSpec::new(SettingKind::LinearRegression, 3, 1, 4, 0).with_sigma2(0.0),
            tasks: vec![
                Task {
                    w: vec![1.0],
                    label: None,
                },
                Task {
                    w: vec![3.0],
                    label: None,
                },
                Task {
                    w: vec![3.0],
                    label: None,
                },
            ],
        };
        // y = 2x: tasks 0 and 1 tie on squared error
        let got = lr_memorizing(&mix, &[vec![1.0]], &[2.0], &[1.0], 0.0).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn classification_edge_cases() {
        let s2 = 0.5;
        let one = TaskMixture {
            spec: MixtureSpec::new(SettingKind::Classification, 1, 2, 4, 0),
            tasks: vec![Task {
                w: vec![0.3, 0.1],
                label: Some(1),
            }],
        };
        assert_eq!(cls_memorizing(&one, &[5.0, -3.0], s2).unwrap(), 1.0);

        let sym = TaskMixture {
            spec: MixtureSpec::new(SettingKind::Classification, 2, 2, 4, 0),
            tasks: vec![
                Task {
                    w: vec![0.4, -0.2],
                    label: Some(1),
                },
                Task {
                    w: vec![-0.4, 0.2],
                    label: Some(0),
                },
            ],
        };
        assert!((cls_memorizing(&sym, &[0.0, 0.0], s2).unwrap() - 0.5).abs() < 1e-15);

        assert_eq!(cls_generalizing(&[vec![0.2, 0.2]], &[1], &[9.0, 9.0], s2).unwrap(), 1.0);
        let p = cls_generalizing(&[vec![1.5, 0.0], vec![-1.5, 0.0]], &[1, 0], &[0.0, 0.7], s2).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(matches!(
            cls_generalizing(&[], &[], &[0.0], s2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn far_query_does_not_underflow() {
        let sym = TaskMixture {
            spec: MixtureSpec::new(SettingKind::Classification, 2, 2, 4, 0),
            tasks: vec![
                Task {
                    w: vec![1.0, 0.0],
                    label: Some(1),
                },
                Task {
                    w: vec![-1.0, 0.0],
                    label: Some(0),
                },
            ],
        };
        let p = cls_memorizing(&sym, &[1e3, 0.0], 0.5).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn sequence_shapes_and_first_positions() {
        use crate::taskgen::{make_eval_set, EvalMode};
        for setting in [
            SettingKind::BallsUrns,
            SettingKind::LinearRegression,
            SettingKind::Classification,
        ] {
            let spec = MixtureSpec::new(setting, 4, 3, 6, 2);
            let mix = sample_mixture(&spec).unwrap();
            let eval = make_eval_set(&mix, 5, EvalMode::Id, 1).unwrap();
            for kind in [PredictorKind::Memorizing, PredictorKind::Generalizing] {
                for (i, seq) in eval.sequences.iter().enumerate() {
                    let p = predict_sequence(kind, &mix, seq, i).unwrap();
                    assert_eq!(p.positions.len(), seq.predicted_len());
                    let first = &p.positions[0].1;
                    match (setting, kind) {
                        (SettingKind::BallsUrns, PredictorKind::Generalizing) => {
                            assert_eq!(first, &PredictiveOutput::Categorical(vec![1.0 / 3.0; 3]))
                        }
                        (SettingKind::LinearRegression, PredictorKind::Generalizing) => {
                            assert_eq!(first, &PredictiveOutput::Scalar(0.0))
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    #[test]
    fn setting_mismatch_is_rejected() {
        let bu = sample_mixture(&MixtureSpec::new(SettingKind::BallsUrns, 2, 3, 4, 0)).unwrap();
        let lr = sample_mixture(&MixtureSpec::new(SettingKind::LinearRegression, 2, 3, 4, 0)).unwrap();
        let seq = crate::taskgen::training_sequence(&lr, 0);
        assert!(matches!(
            predict_sequence(PredictorKind::Memorizing, &bu, &seq, 0),
            Err(Error::SettingMismatch { .. })
        ));
    }

    #[test]
    fn laplace_nll_on_constant_sequence() {
        let spec = MixtureSpec::new(SettingKind::BallsUrns, 1, 2, 6, 0);
        let mix = sample_mixture(&spec).unwrap();
        let seq = Sequence {
            setting: SettingKind::BallsUrns,
            payload: Payload::BallsUrns { tokens: vec![1; 6] },
            source_task_ids: vec![0],
        };
        let preds = predict_sequence(PredictorKind::Generalizing, &mix, &seq, 0).unwrap();
        let (nll, sat) = element_nlls(&seq, &preds, 0.0).unwrap();
        assert_eq!(sat, 0);
        for (t, v) in nll.iter().enumerate() {
            let expected = -(((t + 1) as f64) / ((t + 2) as f64)).ln();
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_predictor_scores_zero_and_zero_mass_saturates() {
        let seq = Sequence {
            setting: SettingKind::BallsUrns,
            payload: Payload::BallsUrns { tokens: vec![0, 1] },
            source_task_ids: vec![0],
        };
        let exact = SequencePredictions {
            seq_id: 0,
            positions: vec![
                (0, PredictiveOutput::Categorical(vec![1.0, 0.0])),
                (1, PredictiveOutput::Categorical(vec![0.0, 1.0])),
            ],
        };
        let (nll, sat) = element_nlls(&seq, &exact, 0.0).unwrap();
        assert_eq!((nll, sat), (vec![0.0, 0.0], 0));
        let wrong = SequencePredictions {
            seq_id: 0,
            positions: vec![(0, PredictiveOutput::Categorical(vec![0.0, 1.0]))],
        };
        let (nll, sat) = element_nlls(&seq, &wrong, 0.0).unwrap();
        assert_eq!((nll, sat), (vec![NLL_CAP], 1));
    }
}
