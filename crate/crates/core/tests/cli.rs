use std::path::Path;
use std::process::Command;

use icl_bayes::io::tables::{self, parse_f64};

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_icl-bayes"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, checkpoints: &str) -> String {
    let path = dir.join(format!("cfg{}.toml", checkpoints.len()));
    std::fs::write(
        &path,
        format!(
            "[mixture]\nsetting = \"balls_urns\"\nm = 4\ncontext = 16\nseed = 1\n\n\
             [grid]\ndiversities = [1, 4, 16]\ncheckpoints = {checkpoints}\n\n[eval]\nsize = 30\n"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn predictor_logs_sit_at_the_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[]");
    let out = dir.path().join("out");

    let files = run(&[
        "generate",
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--modes",
        "id,ood",
        "--train",
        "3",
    ]);
    assert_eq!(files.lines().count(), 3 * 4);
    assert!(out.join("eval_ood_D4.jsonl").exists());

    run(&["predict", "--config", &cfg, "--out", s(&out), "--predictor", "m"]);
    run(&["predict", "--config", &cfg, "--out", s(&out), "--predictor", "g"]);
    for (tag, want) in [("M", 1.0), ("G", 0.0)] {
        let log = out.join(format!("predictions_{tag}.jsonl"));
        let d = dir.path().join(tag);
        run(&["distance", "--config", &cfg, "--out", s(&d), "--log", s(&log)]);
        let rows = tables::read_table(&d.join("metrics.csv"), &tables::METRICS).unwrap();
        assert_eq!(rows.len(), 3);
        for row in rows {
            assert_eq!(row[0], "0");
            assert_eq!(parse_f64(&row[5]).unwrap(), want, "{tag}: {row:?}");
        }
    }
}

#[test]
fn synthesize_fit_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[10, 100, 1000, 10000, 100000]");
    let out = dir.path().join("out");
    run(&[
        "synthesize",
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--alpha",
        "0.4",
        "--beta",
        "0.5",
        "--gamma",
        "1.0",
    ]);
    let log = out.join("synthetic_log.jsonl");

    let stdout = run(&["fit", "--config", &cfg, "--out", s(&out), "--log", s(&log)]);
    assert!(stdout.starts_with("alpha="));
    let report = out.join("fit_report.json");
    run(&[
        "forecast",
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--report",
        s(&report),
        "--log",
        s(&log),
    ]);
    let rows = tables::read_table(&out.join("forecasts.csv"), &tables::FORECASTS).unwrap();
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["1", "4", "16"]);

    run(&["complexity", "--config", &cfg, "--out", s(&out)]);
    let rows = tables::read_table(&out.join("complexity.csv"), &tables::COMPLEXITY).unwrap();
    assert_eq!(rows.len(), 6);

    let p = dir.path().join("pipe");
    let listed = run(&["pipeline", "--config", &cfg, "--out", s(&p), "--log", s(&log)]);
    for l in listed.lines() {
        assert!(Path::new(l).exists(), "{l}");
    }
    assert!(p.join("posterior_grid.csv").exists());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[]");
    let out = Command::new(env!("CARGO_BIN_EXE_icl-bayes"))
        .args([
            "synthesize",
            "--config",
            &cfg,
            "--alpha",
            "0.3",
            "--beta",
            "1",
            "--gamma",
            "1",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoints"));
}
