//! Sample a task mixture in each setting and look at one sequence from the
//! ID, OOD and (for classification) IWL eval sets.

use icl_bayes::taskgen::{make_eval_set, sample_mixture, Payload};
use icl_bayes::{EvalMode, MixtureSpec, SettingKind};

fn main() -> icl_bayes::Result<()> {
    for setting in [
        SettingKind::BallsUrns,
        SettingKind::LinearRegression,
        SettingKind::Classification,
    ] {
        let spec = MixtureSpec::new(setting, 4, 4, 8, 0);
        let mix = sample_mixture(&spec)?;
        println!(
            "{setting:?}: D={} m={} C={} sigma2={}",
            spec.d, spec.m, spec.c, spec.sigma2
        );

        let mut modes = vec![EvalMode::Id, EvalMode::Ood];
        if setting == SettingKind::Classification {
            modes.push(EvalMode::Iwl);
        }
        for mode in modes {
            let eval = make_eval_set(&mix, 3, mode, 1)?;
            let seq = &eval.sequences[0];
            let summary = match &seq.payload {
                Payload::BallsUrns { tokens } => format!("tokens {tokens:?}"),
                Payload::LinearRegression { ys, .. } => format!("y[0..3] {:.3?}", &ys[..3]),
                Payload::Classification {
                    labels, target, twin, ..
                } => {
                    format!("labels {labels:?}, query label {target}, twin {twin:?}")
                }
            };
            println!("  {mode:?} tasks {:?}: {summary}", seq.source_task_ids);
        }
    }
    Ok(())
}
