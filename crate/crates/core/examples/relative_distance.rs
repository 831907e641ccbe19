//! Place outputs on the [0, 1] scale between G and M. Blends land close to
//! their mixing weight (KL is not linear along the segment) with a tiny
//! interpolation loss; an output far off the segment (here the uniform
//! distribution) clamps and leaves a large loss.

use icl_bayes::metrics::{blend, interpolation_loss_at, relative_distance, DistanceKind};
use icl_bayes::predictors::{predict_eval_set, PredictionSet, SequencePredictions};
use icl_bayes::taskgen::{make_eval_set, sample_mixture};
use icl_bayes::{EvalMode, MixtureSpec, PredictiveOutput, PredictorKind, SettingKind};

fn uniform_like(set: &PredictionSet) -> PredictionSet {
    let mut out = set.clone();
    for SequencePredictions { positions, .. } in &mut out.sequences {
        for (_, o) in positions {
            *o = PredictiveOutput::Categorical(vec![1.0 / set.m as f64; set.m]);
        }
    }
    out
}

fn main() -> icl_bayes::Result<()> {
    let mix = sample_mixture(&MixtureSpec::new(SettingKind::BallsUrns, 8, 8, 32, 0))?;
    let eval = make_eval_set(&mix, 200, EvalMode::Id, 1)?;
    let m = predict_eval_set(PredictorKind::Memorizing, &mix, &eval)?;
    let g = predict_eval_set(PredictorKind::Generalizing, &mix, &eval)?;
    let kind = DistanceKind::for_setting(SettingKind::BallsUrns);

    println!("{:>10} {:>8} {:>8} {:>12}", "output", "d_rel", "clamped", "interp loss");
    let show = |name: String, h: &PredictionSet| -> icl_bayes::Result<()> {
        let rel = relative_distance(h, &m, &g, kind)?;
        let loss = interpolation_loss_at(h, &m, &g, rel.d_rel)?;
        println!("{name:>10} {:>8.4} {:>8} {loss:>12.3e}", rel.d_rel, rel.clamped);
        Ok(())
    };
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        show(format!("blend {w}"), &blend(&m, &g, w)?)?;
    }
    show("uniform".into(), &uniform_like(&m))?;
    Ok(())
}
