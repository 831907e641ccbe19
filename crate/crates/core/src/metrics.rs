//! Distances between prediction sets, the relative-distance diagnostic and
//! the two-hypotheses threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::{PredictionSet, PredictiveOutput};
use crate::taskgen::SettingKind;

/// Probability floor applied before any KL evaluation.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceKind {
    SymmetrizedKL,
    DimNormalizedMSE,
    BernoulliSymKL,
}

impl DistanceKind {
    pub fn for_setting(setting: SettingKind) -> Self {
        match setting {
            SettingKind::BallsUrns => DistanceKind::SymmetrizedKL,
            SettingKind::LinearRegression => DistanceKind::DimNormalizedMSE,
            SettingKind::Classification => DistanceKind::BernoulliSymKL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelDistResult {
    pub d_hm: f64,
    pub d_hg: f64,
    pub d_mg: f64,
    pub r: f64,
    pub d_rel: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub losses: Vec<f64>,
    pub frac: f64,
    pub threshold_value: f64,
    pub first_valid_checkpoint: usize,
}

/// Floors at [`PROB_FLOOR`] and renormalizes.
pub fn smooth(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|&x| x.max(PROB_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|x| x / total).collect()
}

fn kl_smoothed(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

/// KL(p || q) after smoothing both arguments.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    kl_smoothed(&smooth(p), &smooth(q))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

fn sym(a: f64, b: f64) -> f64 {
    0.5 * (a + b)
}

fn element_distance(a: &PredictiveOutput, b: &PredictiveOutput, kind: DistanceKind, m: usize) -> Result<f64> {
    use PredictiveOutput::*;
    match (kind, a, b) {
        (DistanceKind::SymmetrizedKL, Categorical(p), Categorical(q)) => {
            if p.len() != q.len() {
                return Err(Error::ShapeMismatch(format!(
                    "categorical lengths {} and {}",
                    p.len(),
                    q.len()
                )));
            }
            let (p, q) = (smooth(p), smooth(q));
            Ok(sym(kl_smoothed(&p, &q), kl_smoothed(&q, &p)))
        }
        (DistanceKind::BernoulliSymKL, Bernoulli(p), Bernoulli(q)) => {
            Ok(sym(bernoulli_kl(*p, *q), bernoulli_kl(*q, *p)))
        }
        (DistanceKind::DimNormalizedMSE, Scalar(x), Scalar(y)) => Ok((x - y) * (x - y) / m as f64),
        _ => Err(Error::ShapeMismatch(format!("{kind:?} cannot compare these outputs"))),
    }
}

/// Divergence from `h` to `b`: KL(h || b) for probability outputs,
/// dimension-normalized squared error for scalars.
fn element_forward(h: &PredictiveOutput, b: &PredictiveOutput, m: usize) -> Result<f64> {
    use PredictiveOutput::*;
    match (h, b) {
        (Categorical(p), Categorical(q)) if p.len() == q.len() => Ok(kl(p, q)),
        (Bernoulli(p), Bernoulli(q)) => Ok(bernoulli_kl(*p, *q)),
        (Scalar(x), Scalar(y)) => Ok((x - y) * (x - y) / m as f64),
        _ => Err(Error::ShapeMismatch(
            "forward divergence between incompatible outputs".into(),
        )),
    }
}

fn check_aligned(a: &PredictionSet, b: &PredictionSet) -> Result<()> {
    if a.sequences.len() != b.sequences.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} sequences",
            a.sequences.len(),
            b.sequences.len()
        )));
    }
    if a.m != b.m {
        return Err(Error::ShapeMismatch(format!("dimension {} vs {}", a.m, b.m)));
    }
    for (sa, sb) in a.sequences.iter().zip(&b.sequences) {
        if sa.seq_id != sb.seq_id {
            return Err(Error::ShapeMismatch(format!("seq_id {} vs {}", sa.seq_id, sb.seq_id)));
        }
        if sa.positions.len() != sb.positions.len() || sa.positions.iter().zip(&sb.positions).any(|(x, y)| x.0 != y.0) {
            return Err(Error::ShapeMismatch(format!(
                "positions differ in sequence {}",
                sa.seq_id
            )));
        }
    }
    Ok(())
}

fn mean_over_elements(
    a: &PredictionSet,
    b: &PredictionSet,
    mut f: impl FnMut(&PredictiveOutput, &PredictiveOutput) -> Result<f64>,
) -> Result<f64> {
    check_aligned(a, b)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in a.outputs().zip(b.outputs()) {
        total += f(x, y)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::ShapeMismatch("no predicted elements".into()));
    }
    Ok(total / count as f64)
}

/// Mean per-element distance. Symmetric in its arguments, bit for bit.
pub fn distance(a: &PredictionSet, b: &PredictionSet, kind: DistanceKind) -> Result<f64> {
    let m = a.m;
    mean_over_elements(a, b, |x, y| element_distance(x, y, kind, m))
}

/// Mean forward divergence from `h` to `b` (see [`DistanceKind`] docs).
pub fn forward_divergence(h: &PredictionSet, b: &PredictionSet) -> Result<f64> {
    let m = h.m;
    mean_over_elements(h, b, |x, y| element_forward(x, y, m))
}

fn blend_output(m_out: &PredictiveOutput, g_out: &PredictiveOutput, weight_m: f64) -> Result<PredictiveOutput> {
    use PredictiveOutput::*;
    let wg = 1.0 - weight_m;
    Ok(match (m_out, g_out) {
        (Categorical(p), Categorical(q)) if p.len() == q.len() => {
            let mixed: Vec<f64> = p.iter().zip(q).map(|(a, b)| weight_m * a + wg * b).collect();
            let total: f64 = mixed.iter().sum();
            Categorical(mixed.into_iter().map(|x| x / total).collect())
        }
        (Scalar(x), Scalar(y)) => Scalar(weight_m * x + wg * y),
        (Bernoulli(x), Bernoulli(y)) => Bernoulli((weight_m * x + wg * y).clamp(0.0, 1.0)),
        _ => return Err(Error::ShapeMismatch("cannot blend incompatible outputs".into())),
    })
}

/// Element-wise `weight_m * M + (1 - weight_m) * G`.
pub fn blend(m_out: &PredictionSet, g_out: &PredictionSet, weight_m: f64) -> Result<PredictionSet> {
    check_aligned(m_out, g_out)?;
    let mut sequences = Vec::with_capacity(m_out.sequences.len());
    for (sm, sg) in m_out.sequences.iter().zip(&g_out.sequences) {
        let positions = sm
            .positions
            .iter()
            .zip(&sg.positions)
            .map(|((pos, a), (_, b))| Ok((*pos, blend_output(a, b, weight_m)?)))
            .collect::<Result<Vec<_>>>()?;
        sequences.push(crate::predictors::SequencePredictions {
            seq_id: sm.seq_id,
            positions,
        });
    }
    Ok(PredictionSet {
        setting: m_out.setting,
        m: m_out.m,
        sequences,
    })
}

/// Relative position of `h` between G (0) and M (1), clamped to [0, 1].
pub fn relative_distance(
    h_out: &PredictionSet,
    m_out: &PredictionSet,
    g_out: &PredictionSet,
    kind: DistanceKind,
) -> Result<RelDistResult> {
    let d_mg = distance(m_out, g_out, kind)?;
    if d_mg <= 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    let d_hm = distance(h_out, m_out, kind)?;
    let d_hg = distance(h_out, g_out, kind)?;
    Ok(rel_from_distances(d_hm, d_hg, d_mg))
}

pub fn rel_from_distances(d_hm: f64, d_hg: f64, d_mg: f64) -> RelDistResult {
    let r = (d_hg - d_hm) / d_mg;
    let raw = (r + 1.0) / 2.0;
    let d_rel = raw.clamp(0.0, 1.0);
    RelDistResult {
        d_hm,
        d_hg,
        d_mg,
        r,
        d_rel,
        clamped: raw != d_rel,
    }
}

/// Forward divergence from `h` to the blend weighted by its own d_rel.
pub fn optimal_interpolation_loss(
    h_out: &PredictionSet,
    m_out: &PredictionSet,
    g_out: &PredictionSet,
    kind: DistanceKind,
) -> Result<f64> {
    let rel = relative_distance(h_out, m_out, g_out, kind)?;
    interpolation_loss_at(h_out, m_out, g_out, rel.d_rel)
}

pub fn interpolation_loss_at(
    h_out: &PredictionSet,
    m_out: &PredictionSet,
    g_out: &PredictionSet,
    weight_m: f64,
) -> Result<f64> {
    let b = blend(m_out, g_out, weight_m)?;
    forward_divergence(h_out, &b)
}

pub fn threshold_fraction(setting: SettingKind) -> f64 {
    match setting {
        SettingKind::LinearRegression => 0.1,
        SettingKind::BallsUrns | SettingKind::Classification => 0.2,
    }
}

/// Earliest checkpoint whose interpolation loss is within `frac` of the
/// loss range above the minimum.
pub fn two_hypotheses_threshold(losses: &[f64], setting: SettingKind) -> Result<ThresholdReport> {
    threshold_with_fraction(losses, threshold_fraction(setting))
}

pub fn threshold_with_fraction(losses: &[f64], frac: f64) -> Result<ThresholdReport> {
    if losses.len() < 2 {
        return Err(Error::Precondition(format!(
            "threshold needs at least 2 checkpoints, got {}",
            losses.len()
        )));
    }
    if let Some(bad) = losses.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("interpolation loss {bad}")));
    }
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold_value = min + frac * (max - min);
    let first_valid_checkpoint = losses
        .iter()
        .position(|&l| l <= threshold_value)
        .expect("the minimum is always within the threshold");
    Ok(ThresholdReport {
        losses: losses.to_vec(),
        frac,
        threshold_value,
        first_valid_checkpoint,
    })
}
