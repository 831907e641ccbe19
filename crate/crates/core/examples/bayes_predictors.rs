//! The memorizing and generalizing predictors on in- and out-of-distribution
//! sequences: M wins on tasks it has seen, G on new ones.

use icl_bayes::predictors::avg_log_likelihood;
use icl_bayes::taskgen::{make_eval_set, sample_mixture};
use icl_bayes::{EvalMode, MixtureSpec, PredictorKind, SettingKind};

fn main() -> icl_bayes::Result<()> {
    println!(
        "{:<18} {:>5} {:>6} {:>10} {:>10}",
        "setting", "D", "eval", "NLL M", "NLL G"
    );
    for setting in [
        SettingKind::BallsUrns,
        SettingKind::LinearRegression,
        SettingKind::Classification,
    ] {
        for d in [2, 64] {
            let mix = sample_mixture(&MixtureSpec::new(setting, d, 8, 16, 3))?;
            for mode in [EvalMode::Id, EvalMode::Ood] {
                let eval = make_eval_set(&mix, 300, mode, 4)?;
                let m = avg_log_likelihood(PredictorKind::Memorizing, &mix, &eval)?;
                let g = avg_log_likelihood(PredictorKind::Generalizing, &mix, &eval)?;
                println!(
                    "{:<18} {:>5} {:>6} {:>10.4} {:>10.4}",
                    format!("{setting:?}"),
                    d,
                    format!("{mode:?}"),
                    m.mean_nll,
                    g.mean_nll
                );
            }
        }
    }
    Ok(())
}
