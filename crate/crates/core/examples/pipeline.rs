//! Whole analysis in one call: eval sets, predictors, complexity, the
//! fit on a (synthetic) model log, posterior grid and forecasts, all as
//! files in one directory.

use icl_bayes::io::{pipeline, RunConfig};
use icl_bayes::FitParams;

const CONFIG: &str = r#"
[mixture]
setting = "classification"
m = 8
context = 8
seed = 1

[grid]
diversities = [2, 8, 32]
checkpoints = [100, 1000, 10000, 100000, 1000000]

[eval]
size = 200
"#;

fn main() -> icl_bayes::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG)?;
    let dir = tempfile::tempdir()?;
    let log = dir.path().join("model_log.jsonl");
    // stand-in for a trained network's log
    let prepared = pipeline::prepare(&cfg)?;
    pipeline::synthesize_log(&prepared, &FitParams::new(0.2, 0.3, 0.05)?, 1e-3, 0, &log)?;

    let out = dir.path().join("analysis");
    let summary = pipeline::run_pipeline(&cfg, &log, &out)?;
    let p = summary.params;
    println!("fitted alpha={:.3} beta={:.3} gamma={:.3e}", p.alpha, p.beta, p.gamma);
    for w in &summary.warnings {
        println!("warning: {w}");
    }
    for f in &summary.files {
        let bytes = std::fs::metadata(out.join(f))?.len();
        println!("  {f:<24} {bytes:>9} bytes");
    }
    println!("\n{}", std::fs::read_to_string(out.join("forecasts.csv"))?);
    Ok(())
}
