//! Synthesize a prediction log from known (alpha, beta, gamma), write it to
//! disk, load it back and recover the parameters.

use icl_bayes::hbayes::fit_params;
use icl_bayes::io::{load_prediction_log, pipeline, RunConfig};
use icl_bayes::FitParams;

const CONFIG: &str = r#"
[mixture]
setting = "linear_regression"
m = 4
context = 16
seed = 2

[grid]
diversities = [1, 4, 16]
checkpoints = [1, 10, 100, 1000, 10000, 100000]

[eval]
size = 100
"#;

fn main() -> icl_bayes::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG)?;
    let mut prepared = pipeline::prepare(&cfg)?;
    // small complexities keep the crossover gradual over the grid
    for (t, k_m) in prepared.terms.values_mut().zip([10.0, 14.0, 20.0]) {
        t.k_m_bits = k_m;
        t.k_g_bits = 8.0;
    }
    let truth = FitParams::new(0.4, 0.8, 0.5)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("log.jsonl");
    pipeline::synthesize_log(&prepared, &truth, 1e-3, 0, &path)?;

    let log = load_prediction_log(&path)?;
    let outcome = fit_params(&prepared.problem(prepared.observations(&log)?), &cfg.fit_options())?;
    let r = &outcome.report;
    println!(
        "truth     alpha={:.4} beta={:.4} gamma={:.4}",
        truth.alpha, truth.beta, truth.gamma
    );
    println!(
        "recovered alpha={:.4} beta={:.4} gamma={:.4}",
        r.params.alpha, r.params.beta, r.params.gamma
    );
    println!(
        "train loss {:.3e}, held-out {:.3e}",
        r.train_loss,
        r.val_loss.unwrap_or(f64::NAN)
    );
    for (name, v) in &r.goodness_metrics {
        println!("  {name} = {v:.4}");
    }
    Ok(())
}
