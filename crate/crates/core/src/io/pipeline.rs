//! End-to-end run: eval sets, predictors, complexity and delta L per
//! diversity, then metrics, fit and forecasts over a prediction log.
//!
//! Outputs are deterministic: same config and log, same bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::evalset::{write_eval_set, write_mixture};
use super::json::{self, fmt_f64};
use super::predlog::{self, LogHeader, PredictionLog, PredictionLogWriter};
use super::tables::{self, opt_cell};
use crate::complexity::{self, Codec, ComplexityEstimate};
use crate::error::{Error, Result};
use crate::hbayes::{
    self, transience_time, CellObservation, DeltaL, Diagnostics, DiversityTerms, FitOutcome, FitParams, FitProblem,
    OddsInput, PredictorPair,
};
use crate::metrics;
use crate::predictors::{self, PredictionSet, PredictiveOutput, PredictorKind};
use crate::rng::{stream, Domain};
use crate::stats::sigmoid;
use crate::taskgen::{self, EvalMode, EvalSet, TaskMixture};

/// Everything that depends only on the config, per diversity.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub mixtures: BTreeMap<usize, TaskMixture>,
    pub evals: BTreeMap<usize, EvalSet>,
    pub predictors: BTreeMap<usize, PredictorPair>,
    pub complexity: BTreeMap<usize, (ComplexityEstimate, ComplexityEstimate)>,
    pub delta_l: BTreeMap<usize, DeltaL>,
    pub terms: BTreeMap<usize, DiversityTerms>,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let ds = &config.grid.diversities;

    let mixtures: BTreeMap<usize, TaskMixture> = ds
        .iter()
        .map(|&d| Ok((d, taskgen::sample_mixture(&config.spec(d))?)))
        .collect::<Result<_>>()
        .map_err(Error::in_stage("eval_sets"))?;
    let evals: BTreeMap<usize, EvalSet> = mixtures
        .iter()
        .map(|(&d, mix)| {
            Ok((
                d,
                taskgen::make_eval_set(mix, config.eval.size, EvalMode::Id, config.eval.seed)?,
            ))
        })
        .collect::<Result<_>>()
        .map_err(Error::in_stage("eval_sets"))?;

    let predictors: BTreeMap<usize, PredictorPair> = mixtures
        .iter()
        .map(|(&d, mix)| {
            let eval = &evals[&d];
            Ok((
                d,
                PredictorPair {
                    memorizing: predictors::predict_eval_set(PredictorKind::Memorizing, mix, eval)?,
                    generalizing: predictors::predict_eval_set(PredictorKind::Generalizing, mix, eval)?,
                },
            ))
        })
        .collect::<Result<_>>()
        .map_err(Error::in_stage("predictors"))?;

    let k_g = complexity::estimate_k(&complexity::generalizing_bundle(config.mixture.setting))
        .map_err(Error::in_stage("complexity"))?;
    let complexity: BTreeMap<usize, (ComplexityEstimate, ComplexityEstimate)> = mixtures
        .par_iter()
        .map(|(&d, mix)| {
            Ok((
                d,
                (
                    complexity::estimate_k(&complexity::memorizing_bundle(mix))?,
                    k_g.clone(),
                ),
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::in_stage("complexity"))?
        .into_iter()
        .collect();

    let delta_l: BTreeMap<usize, DeltaL> = ds
        .iter()
        .map(|&d| {
            let pair = &predictors[&d];
            Ok((
                d,
                hbayes::delta_l_from_predictions(
                    &pair.memorizing,
                    &pair.generalizing,
                    &evals[&d],
                    config.eval.n_blocks,
                )?,
            ))
        })
        .collect::<Result<_>>()
        .map_err(Error::in_stage("delta_l"))?;

    let terms = ds
        .iter()
        .map(|&d| {
            let (km, kg) = &complexity[&d];
            (
                d,
                DiversityTerms {
                    delta_l: delta_l[&d].delta_l,
                    k_m_bits: km.bits,
                    k_g_bits: kg.bits * config.fit.complexity_multiplier,
                },
            )
        })
        .collect();

    Ok(Prepared {
        config: config.clone(),
        mixtures,
        evals,
        predictors,
        complexity,
        delta_l,
        terms,
    })
}

impl Prepared {
    /// Cells to analyse: the config grid, or the log's own checkpoints when
    /// the config lists none.
    pub fn cells_for(&self, log: &PredictionLog) -> Vec<(u64, usize)> {
        if !self.config.grid.checkpoints.is_empty() {
            return self.config.cells();
        }
        let mut out = Vec::new();
        for &d in &self.config.grid.diversities {
            for n in log.checkpoints(d) {
                out.push((n, d));
            }
        }
        out
    }

    pub fn observations(&self, log: &PredictionLog) -> Result<Vec<CellObservation>> {
        let cfg = &self.config;
        let h = &log.header;
        if h.setting != cfg.mixture.setting {
            return Err(Error::SettingMismatch {
                expected: cfg.mixture.setting,
                found: h.setting,
            });
        }
        if h.m != cfg.mixture.m || h.c != cfg.mixture.context {
            return Err(Error::ShapeMismatch(format!(
                "log has m={}, C={}; config has m={}, C={}",
                h.m, h.c, cfg.mixture.m, cfg.mixture.context
            )));
        }
        self.cells_for(log)
            .into_iter()
            .map(|(n, d)| {
                Ok(CellObservation {
                    n,
                    d,
                    h: log.cell_prediction_set(n, d, &self.evals[&d])?,
                })
            })
            .collect()
    }

    pub fn problem(&self, cells: Vec<CellObservation>) -> FitProblem {
        FitProblem {
            setting: self.config.mixture.setting,
            distance: self.config.distance(),
            cells,
            predictors: self.predictors.clone(),
            terms: self.terms.clone(),
        }
    }

    /// Blend of M and G under `params` for one cell.
    pub fn blended(&self, params: &FitParams, n: u64, d: usize) -> Result<PredictionSet> {
        let pair = &self.predictors[&d];
        hbayes::blend_predictions(
            params,
            &OddsInput::new(n, d, self.terms[&d]),
            &pair.memorizing,
            &pair.generalizing,
        )
    }
}

fn perturb(out: &PredictiveOutput, jitter: f64, rng: &mut impl Rng) -> PredictiveOutput {
    let mut noise = || -> f64 { jitter * rng.sample::<f64, _>(StandardNormal) };
    match out {
        PredictiveOutput::Categorical(p) => {
            let raw: Vec<f64> = p.iter().map(|x| x * noise().exp()).collect();
            let total: f64 = raw.iter().sum();
            PredictiveOutput::Categorical(raw.into_iter().map(|x| x / total).collect())
        }
        PredictiveOutput::Scalar(x) => PredictiveOutput::Scalar(x + noise()),
        PredictiveOutput::Bernoulli(p) => {
            let q = p.clamp(metrics::PROB_FLOOR, 1.0 - metrics::PROB_FLOOR);
            PredictiveOutput::Bernoulli(sigmoid((q / (1.0 - q)).ln() + noise()))
        }
    }
}

/// Writes a prediction log whose cells are `sigma(eta) M + (1 - sigma(eta)) G`
/// under `params`, optionally perturbed by seeded noise of scale `jitter`.
pub fn synthesize_log(prepared: &Prepared, params: &FitParams, jitter: f64, seed: u64, path: &Path) -> Result<()> {
    let cfg = &prepared.config;
    if cfg.grid.checkpoints.is_empty() {
        return Err(Error::Config("synthesizing a log needs grid.checkpoints".into()));
    }
    let grid = cfg.cells();
    let header = LogHeader::new(
        cfg.mixture.setting,
        cfg.mixture.m,
        cfg.mixture.context,
        grid.clone(),
        "icl-bayes synthesize",
    );
    let mut w = PredictionLogWriter::create(path, &header)?;
    for (n, d) in grid {
        let mut set = prepared.blended(params, n, d)?;
        if jitter > 0.0 {
            let mut rng = stream(seed, Domain::Jitter, d as u64, n);
            for seq in &mut set.sequences {
                for (_, out) in &mut seq.positions {
                    *out = perturb(out, jitter, &mut rng);
                }
            }
        }
        w.write_cell("synthetic", n, d, &set)?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub params: FitParams,
    pub warnings: Vec<String>,
}

fn codec_name(c: Codec) -> String {
    serde_json::to_value(c)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_else(|| format!("{c:?}"))
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

pub fn metrics_rows(diag: &Diagnostics) -> Vec<Vec<String>> {
    diag.cells
        .iter()
        .map(|c| {
            vec![
                c.n.to_string(),
                c.d.to_string(),
                fmt_f64(c.rel.d_hm),
                fmt_f64(c.rel.d_hg),
                fmt_f64(c.rel.d_mg),
                fmt_f64(c.rel.d_rel),
                fmt_f64(c.interp_loss),
                flag(c.valid),
            ]
        })
        .collect()
}

pub fn complexity_rows(prepared: &Prepared) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (&d, (km, kg)) in &prepared.complexity {
        for (tag, est) in [("M", km), ("G", kg)] {
            let mut row = vec![
                tag.to_string(),
                d.to_string(),
                fmt_f64(est.bits),
                codec_name(est.codec_chosen),
            ];
            for codec in Codec::ALL {
                row.push(opt_cell(est.per_codec_bits.get(&codec).copied()));
            }
            rows.push(row);
        }
    }
    rows
}

fn delta_l_rows(prepared: &Prepared) -> Vec<Vec<String>> {
    prepared
        .terms
        .iter()
        .map(|(&d, t)| {
            let dl = &prepared.delta_l[&d];
            vec![
                d.to_string(),
                fmt_f64(dl.l_m),
                fmt_f64(dl.l_g),
                fmt_f64(t.delta_l),
                fmt_f64(t.k_m_bits),
                fmt_f64(t.k_g_bits),
                dl.n_blocks.to_string(),
            ]
        })
        .collect()
}

/// Writes the mixture and ID eval set of every diversity into `dir`, named
/// so that the prediction-log `eval_set_ref` resolves.
pub fn write_eval_sets(prepared: &Prepared, dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for (&d, eval) in &prepared.evals {
        let name = super::EVAL_SET_REF.replace("{D}", &d.to_string());
        write_eval_set(&dir.join(&name), eval)?;
        files.push(name);
        let name = format!("mixture_D{d}.json");
        write_mixture(&dir.join(&name), &prepared.mixtures[&d])?;
        files.push(name);
    }
    Ok(files)
}

/// Mixtures, eval sets in the requested modes and optionally the first
/// `train_count` training sequences, for every diversity.
pub fn write_generated(config: &RunConfig, dir: &Path, modes: &[EvalMode], train_count: u64) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for &d in &config.grid.diversities {
        let mix = taskgen::sample_mixture(&config.spec(d))?;
        let name = format!("mixture_D{d}.json");
        write_mixture(&dir.join(&name), &mix)?;
        files.push(name);
        for &mode in modes {
            if mode == EvalMode::Iwl && config.mixture.setting != taskgen::SettingKind::Classification {
                continue;
            }
            let eval = taskgen::make_eval_set(&mix, config.eval.size, mode, config.eval.seed)?;
            let tag = match mode {
                EvalMode::Id => "id",
                EvalMode::Ood => "ood",
                EvalMode::Iwl => "iwl",
            };
            let name = format!("eval_{tag}_D{d}.jsonl");
            write_eval_set(&dir.join(&name), &eval)?;
            files.push(name);
        }
        if train_count > 0 {
            let name = format!("train_D{d}.jsonl");
            super::evalset::write_training_sequences(&dir.join(&name), &mix, 0, train_count)?;
            files.push(name);
        }
    }
    Ok(files)
}

/// One predictor's outputs on every ID eval set, as a prediction log with
/// N = 0 and run id `M` or `G`.
pub fn write_predictor_log(prepared: &Prepared, kind: PredictorKind, path: &Path) -> Result<()> {
    let cfg = &prepared.config;
    let grid: Vec<(u64, usize)> = cfg.grid.diversities.iter().map(|&d| (0, d)).collect();
    let producer = format!("icl-bayes predict {}", kind.tag());
    let header = LogHeader::new(cfg.mixture.setting, cfg.mixture.m, cfg.mixture.context, grid, &producer);
    let mut w = PredictionLogWriter::create(path, &header)?;
    for (&d, pair) in &prepared.predictors {
        let set = match kind {
            PredictorKind::Memorizing => &pair.memorizing,
            PredictorKind::Generalizing => &pair.generalizing,
        };
        w.write_cell(kind.tag(), 0, d, set)?;
    }
    w.finish()
}

pub fn write_complexity(prepared: &Prepared, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    tables::write_table(dir, &tables::COMPLEXITY, &complexity_rows(prepared))?;
    tables::write_table(dir, &tables::DELTA_L, &delta_l_rows(prepared))
}

/// Relative distances and thresholds for every cell of a log.
pub fn diagnose(config: &RunConfig, log_path: &Path) -> Result<(Prepared, Diagnostics)> {
    let prepared = prepare(config)?;
    let log = predlog::load_prediction_log(log_path).map_err(Error::in_stage("load_log"))?;
    let cells = prepared.observations(&log).map_err(Error::in_stage("load_log"))?;
    let diag = hbayes::cell_diagnostics(&prepared.problem(cells), config.fit.apply_threshold)
        .map_err(Error::in_stage("metrics"))?;
    Ok((prepared, diag))
}

/// Fits a log and writes `metrics.csv` and `fit_report.json`.
pub fn run_fit(config: &RunConfig, log_path: &Path, out_dir: &Path) -> Result<FitOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let prepared = prepare(config)?;
    let log = predlog::load_prediction_log(log_path).map_err(Error::in_stage("load_log"))?;
    let cells = prepared.observations(&log).map_err(Error::in_stage("load_log"))?;
    let outcome =
        hbayes::fit_params(&prepared.problem(cells), &config.fit_options()).map_err(Error::in_stage("fit"))?;
    tables::write_table(out_dir, &tables::METRICS, &metrics_rows(&outcome.diagnostics))?;
    json::write_pretty(&out_dir.join("fit_report.json"), &outcome.report)?;
    Ok(outcome)
}

pub fn read_fit_params(path: &Path) -> Result<FitParams> {
    let report: hbayes::FitReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(report.params)
}

/// Transience forecasts for every diversity under `params`.
pub fn forecast_rows(prepared: &Prepared, params: &FitParams, empirical: Option<&Diagnostics>) -> Vec<Vec<String>> {
    prepared
        .terms
        .iter()
        .map(|(&d, t)| {
            let f = transience_time(params, t);
            let series: Vec<(f64, f64)> = empirical
                .map(|diag| {
                    diag.cells
                        .iter()
                        .filter(|c| c.d == d)
                        .map(|c| (c.n as f64, c.rel.d_rel))
                        .collect()
                })
                .unwrap_or_default();
            let status = match f.status {
                hbayes::TransienceStatus::Finite => "finite",
                hbayes::TransienceStatus::Immediate => "immediate",
                hbayes::TransienceStatus::Never => "never",
            };
            vec![
                d.to_string(),
                fmt_f64(f.n_star),
                status.to_string(),
                fmt_f64(f.closed_form),
                opt_cell(f.root_find),
                opt_cell(f.agreement),
                opt_cell(hbayes::empirical_transience(&series)),
            ]
        })
        .collect()
}

pub fn run_pipeline(config: &RunConfig, log_path: &Path, out_dir: &Path) -> Result<PipelineSummary> {
    std::fs::create_dir_all(out_dir)?;
    let prepared = prepare(config)?;
    let log = predlog::load_prediction_log(log_path).map_err(Error::in_stage("load_log"))?;
    let mut warnings: Vec<String> = log
        .warnings
        .iter()
        .map(|w| format!("prediction log line {}: {}", w.line, w.message))
        .collect();
    let cells = prepared.observations(&log).map_err(Error::in_stage("load_log"))?;
    let problem = prepared.problem(cells);

    let FitOutcome { report, diagnostics } =
        hbayes::fit_params(&problem, &config.fit_options()).map_err(Error::in_stage("fit"))?;
    warnings.extend(report.warnings.iter().cloned());
    let params = report.params;

    let mut files = write_eval_sets(&prepared, out_dir).map_err(Error::in_stage("write"))?;
    let mut write = |schema: &tables::TableSchema, rows: Vec<Vec<String>>| -> Result<()> {
        tables::write_table(out_dir, schema, &rows)?;
        files.push(schema.file.to_string());
        Ok(())
    };

    write(&tables::METRICS, metrics_rows(&diagnostics))?;
    write(&tables::DELTA_L, delta_l_rows(&prepared))?;
    write(&tables::COMPLEXITY, complexity_rows(&prepared))?;

    let cell_keys: Vec<(u64, usize)> = diagnostics.cells.iter().map(|c| (c.n, c.d)).collect();
    let mut posterior = Vec::new();
    for &(n, d) in &cell_keys {
        let eta = hbayes::log_posterior_odds(&params, &OddsInput::new(n, d, prepared.terms[&d]));
        let pt = hbayes::PosteriorPoint::from_eta(eta);
        posterior.push(vec![
            n.to_string(),
            d.to_string(),
            fmt_f64(pt.eta),
            fmt_f64(pt.p_m),
            fmt_f64(pt.p_g),
        ]);
    }
    write(&tables::POSTERIOR_GRID, posterior)?;

    let forecasts = forecast_rows(&prepared, &params, Some(&diagnostics));
    let mut logistic = Vec::new();
    for &d in prepared.terms.keys() {
        let series: Vec<(f64, f64)> = diagnostics
            .cells
            .iter()
            .filter(|c| c.d == d)
            .map(|c| (c.n as f64, c.rel.d_rel))
            .collect();
        if series.len() >= 4 && series.iter().all(|(n, _)| *n > 0.0) {
            let fit = hbayes::fit_logistic(&series, params.alpha).map_err(Error::in_stage("forecast"))?;
            logistic.push(vec![
                d.to_string(),
                fmt_f64(fit.a),
                fmt_f64(fit.b),
                fmt_f64(fit.n0),
                fmt_f64(fit.alpha),
                fmt_f64(fit.sse),
                flag(fit.degenerate),
            ]);
        } else {
            warnings.push(format!("D={d}: fewer than 4 checkpoints, no logistic fit"));
        }
    }
    write(&tables::FORECASTS, forecasts)?;
    write(&tables::LOGISTIC_FITS, logistic)?;

    json::write_pretty(&out_dir.join("fit_report.json"), &report)?;
    files.push("fit_report.json".into());
    json::write_pretty(&out_dir.join("schema.json"), &tables::schema_document())?;
    files.push("schema.json".into());
    std::fs::write(out_dir.join("run_config.toml"), config.to_toml()?)?;
    files.push("run_config.toml".into());

    let summary = PipelineSummary {
        out_dir: out_dir.to_path_buf(),
        files,
        params,
        warnings,
    };
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> RunConfig {
        RunConfig::from_toml(
            r#"
[mixture]
setting = "balls_urns"
m = 4
context = 8
seed = 2

[grid]
diversities = [1, 8]
checkpoints = [10, 100, 1000]

[eval]
size = 12
"#,
        )
        .unwrap()
    }

    #[test]
    fn prepare_is_consistent() {
        let p = prepare(&config()).unwrap();
        assert_eq!(p.terms.len(), 2);
        let kg: Vec<f64> = p.complexity.values().map(|c| c.1.bits).collect();
        assert_eq!(kg[0], kg[1]);
        assert!(p.complexity[&8].0.bits > p.complexity[&1].0.bits);
    }

    #[test]
    fn synthetic_log_reproduces_blends() {
        let dir = tempfile::tempdir().unwrap();
        let p = prepare(&config()).unwrap();
        let params = FitParams::new(0.5, 0.5, 1.0).unwrap();
        let path = dir.path().join("log.jsonl");
        synthesize_log(&p, &params, 0.0, 0, &path).unwrap();
        let log = predlog::load_prediction_log(&path).unwrap();
        assert!(log.warnings.is_empty());
        let cells = p.observations(&log).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[4].h, p.blended(&params, cells[4].n, cells[4].d).unwrap());
    }

    #[test]
    fn missing_cell_halts_with_its_id() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config();
        let p = prepare(&cfg).unwrap();
        let path = dir.path().join("log.jsonl");
        synthesize_log(&p, &FitParams::new(0.5, 0.5, 1.0).unwrap(), 0.0, 0, &path).unwrap();
        let mut wider = cfg.clone();
        wider.grid.checkpoints.push(5000);
        let err = run_pipeline(&wider, &path, dir.path()).unwrap_err();
        match err {
            Error::Stage {
                stage: "load_log",
                source,
            } => {
                assert!(matches!(*source, Error::MissingCell { n: 5000, d: 1 }), "{source:?}")
            }
            other => panic!("{other:?}"),
        }
    }
}
