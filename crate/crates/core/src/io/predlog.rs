//! Prediction logs: a model's predictive outputs on eval sequences, one JSONL
//! record per predicted element, grouped in (N, D) cells by checkpoint N and
//! task diversity D.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::json;
use super::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::predictors::{PredictionSet, PredictiveOutput, SequencePredictions};
use crate::taskgen::{EvalSet, SettingKind};

/// Categorical rows may miss 1 by this much and are renormalized.
pub const SUM_TOLERANCE: f64 = 1e-6;
/// Deviations below this are float noise and pass silently.
const SUM_SILENT: f64 = 1e-9;

const LOG_KIND: &str = "prediction_log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub kind: String,
    pub format_version: u32,
    pub setting: SettingKind,
    pub m: usize,
    #[serde(rename = "C")]
    pub c: usize,
    /// Every (N, D) cell the log contains.
    pub grid: Vec<(u64, usize)>,
    /// Eval-set file each D refers to; `{D}` is replaced by the diversity.
    pub eval_set_ref: String,
    pub producer: String,
}

impl LogHeader {
    pub fn new(setting: SettingKind, m: usize, c: usize, grid: Vec<(u64, usize)>, producer: &str) -> Self {
        Self {
            kind: LOG_KIND.into(),
            format_version: FORMAT_VERSION,
            setting,
            m,
            c,
            grid,
            eval_set_ref: super::EVAL_SET_REF.into(),
            producer: producer.into(),
        }
    }

    pub fn eval_set_file(&self, d: usize) -> String {
        self.eval_set_ref.replace("{D}", &d.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub run_id: String,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "D")]
    pub d: usize,
    pub seq_id: usize,
    pub position: usize,
    pub output: PredictiveOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogWarning {
    pub line: usize,
    pub message: String,
}

pub type CellOutputs = BTreeMap<(usize, usize), PredictiveOutput>;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLog {
    pub header: LogHeader,
    pub cells: BTreeMap<(u64, usize), CellOutputs>,
    pub run_ids: BTreeMap<(u64, usize), String>,
    pub warnings: Vec<LogWarning>,
}

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

/// Checks one output against the header; may renormalize a categorical row.
fn check_output(header: &LogHeader, out: &mut PredictiveOutput) -> std::result::Result<Option<String>, String> {
    if !out.is_finite() {
        return Err("non-finite output".into());
    }
    match (header.setting, out) {
        (SettingKind::BallsUrns, PredictiveOutput::Categorical(p)) => {
            if p.len() != header.m {
                return Err(format!("categorical of length {}, expected {}", p.len(), header.m));
            }
            if p.iter().any(|&x| x < 0.0) {
                return Err("negative probability".into());
            }
            let total: f64 = p.iter().sum();
            let dev = (total - 1.0).abs();
            if dev > SUM_TOLERANCE {
                return Err(format!("categorical sums to {total}"));
            }
            if dev > SUM_SILENT {
                p.iter_mut().for_each(|x| *x /= total);
                return Ok(Some(format!("categorical summed to {total}; renormalized")));
            }
            Ok(None)
        }
        (SettingKind::Classification, PredictiveOutput::Bernoulli(p)) => {
            if !(0.0..=1.0).contains(p) {
                return Err(format!("Bernoulli probability {p} outside [0, 1]"));
            }
            Ok(None)
        }
        (SettingKind::LinearRegression, PredictiveOutput::Scalar(_)) => Ok(None),
        (setting, _) => Err(format!("output kind does not match setting {setting:?}")),
    }
}

pub fn load_prediction_log(path: &Path) -> Result<PredictionLog> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: LogHeader = loop {
        let Some((i, line)) = lines.next() else {
            return Err(malformed(1, "empty file"));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
        if let Some(v) = value.get("format_version").and_then(|v| v.as_u64()) {
            if v != FORMAT_VERSION as u64 {
                return Err(Error::VersionMismatch {
                    expected: FORMAT_VERSION,
                    found: v as u32,
                });
            }
        }
        let header: LogHeader = serde_json::from_value(value).map_err(|e| malformed(i + 1, e.to_string()))?;
        if header.kind != LOG_KIND {
            return Err(malformed(
                i + 1,
                format!("expected a {LOG_KIND} header, found {:?}", header.kind),
            ));
        }
        break header;
    };

    let grid: BTreeMap<(u64, usize), ()> = header.grid.iter().map(|&k| (k, ())).collect();
    let mut cells: BTreeMap<(u64, usize), CellOutputs> = BTreeMap::new();
    let mut run_ids: BTreeMap<(u64, usize), String> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (i, line) in lines {
        let no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: LogRecord = serde_json::from_str(&line).map_err(|e| malformed(no, e.to_string()))?;
        let key = (rec.n, rec.d);
        if !grid.contains_key(&key) {
            return Err(malformed(
                no,
                format!("cell (N={}, D={}) is not in the header grid", rec.n, rec.d),
            ));
        }
        if let Some(note) = check_output(&header, &mut rec.output).map_err(|m| malformed(no, m))? {
            warnings.push(LogWarning {
                line: no,
                message: note,
            });
        }
        match run_ids.get(&key) {
            Some(id) if *id != rec.run_id => {
                return Err(malformed(
                    no,
                    format!("run_id {:?} differs from {:?} in the same cell", rec.run_id, id),
                ))
            }
            Some(_) => {}
            None => {
                run_ids.insert(key, rec.run_id.clone());
            }
        }
        let slot = cells.entry(key).or_default();
        if slot.insert((rec.seq_id, rec.position), rec.output).is_some() {
            return Err(malformed(
                no,
                format!(
                    "duplicate record for seq {} position {} in (N={}, D={})",
                    rec.seq_id, rec.position, rec.n, rec.d
                ),
            ));
        }
    }
    for &(n, d) in &header.grid {
        if !cells.contains_key(&(n, d)) {
            return Err(Error::MissingCell { n, d });
        }
    }
    Ok(PredictionLog {
        header,
        cells,
        run_ids,
        warnings,
    })
}

impl PredictionLog {
    pub fn diversities(&self) -> Vec<usize> {
        let mut ds: Vec<usize> = self.header.grid.iter().map(|g| g.1).collect();
        ds.sort_unstable();
        ds.dedup();
        ds
    }

    pub fn checkpoints(&self, d: usize) -> Vec<u64> {
        let mut ns: Vec<u64> = self.header.grid.iter().filter(|g| g.1 == d).map(|g| g.0).collect();
        ns.sort_unstable();
        ns
    }

    /// The cell's outputs laid out along `eval`; every predicted element of
    /// every sequence must be present and nothing else.
    pub fn cell_prediction_set(&self, n: u64, d: usize, eval: &EvalSet) -> Result<PredictionSet> {
        let cell = self.cells.get(&(n, d)).ok_or(Error::MissingCell { n, d })?;
        if eval.spec.setting != self.header.setting {
            return Err(Error::SettingMismatch {
                expected: self.header.setting,
                found: eval.spec.setting,
            });
        }
        let mut sequences = Vec::with_capacity(eval.len());
        let mut used = 0;
        for (seq_id, seq) in eval.sequences.iter().enumerate() {
            let positions = seq
                .predicted_positions()
                .into_iter()
                .map(|pos| {
                    cell.get(&(seq_id, pos)).cloned().map(|o| (pos, o)).ok_or_else(|| {
                        Error::ShapeMismatch(format!("(N={n}, D={d}) lacks seq {seq_id} position {pos}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            used += positions.len();
            sequences.push(SequencePredictions { seq_id, positions });
        }
        if used != cell.len() {
            return Err(Error::ShapeMismatch(format!(
                "(N={n}, D={d}) has {} records but the eval set predicts {used} elements",
                cell.len()
            )));
        }
        Ok(PredictionSet {
            setting: self.header.setting,
            m: self.header.m,
            sequences,
        })
    }
}

/// Streams records to disk cell by cell.
pub struct PredictionLogWriter {
    out: BufWriter<File>,
}

impl PredictionLogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", json::to_line(header)?)?;
        Ok(Self { out })
    }

    pub fn write_cell(&mut self, run_id: &str, n: u64, d: usize, set: &PredictionSet) -> Result<()> {
        for seq in &set.sequences {
            for (position, output) in &seq.positions {
                if !output.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "output for seq {} position {position}",
                        seq.seq_id
                    )));
                }
                let rec = LogRecord {
                    run_id: run_id.to_string(),
                    n,
                    d,
                    seq_id: seq.seq_id,
                    position: *position,
                    output: output.clone(),
                };
                writeln!(self.out, "{}", json::to_line(&rec)?)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{predict_eval_set, PredictorKind};
    use crate::taskgen::{make_eval_set, sample_mixture, EvalMode, MixtureSpec};

    fn fixture(dir: &Path) -> (std::path::PathBuf, EvalSet, PredictionSet) {
        let mix = sample_mixture(&MixtureSpec::new(SettingKind::BallsUrns, 3, 4, 5, 1)).unwrap();
        let eval = make_eval_set(&mix, 4, EvalMode::Id, 2).unwrap();
        let preds = predict_eval_set(PredictorKind::Generalizing, &mix, &eval).unwrap();
        let path = dir.join("log.jsonl");
        let header = LogHeader::new(SettingKind::BallsUrns, 4, 5, vec![(10, 3), (20, 3)], "test");
        let mut w = PredictionLogWriter::create(&path, &header).unwrap();
        w.write_cell("run", 10, 3, &preds).unwrap();
        w.write_cell("run", 20, 3, &preds).unwrap();
        w.finish().unwrap();
        (path, eval, preds)
    }

    fn edit_line(path: &Path, idx: usize, f: impl FnOnce(&mut serde_json::Value)) {
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[idx]).unwrap();
        f(&mut v);
        lines[idx] = v.to_string();
        std::fs::write(path, lines.join("\n")).unwrap();
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (path, eval, preds) = fixture(dir.path());
        let log = load_prediction_log(&path).unwrap();
        assert!(log.warnings.is_empty());
        assert_eq!(log.cell_prediction_set(20, 3, &eval).unwrap(), preds);
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, _) = fixture(dir.path());
        edit_line(&path, 0, |v| v["format_version"] = 2.into());
        assert!(matches!(
            load_prediction_log(&path),
            Err(Error::VersionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn slightly_off_rows_are_renormalized() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, _) = fixture(dir.path());
        edit_line(&path, 1, |v| {
            v["output"]["categorical"] = serde_json::json!([0.25, 0.25, 0.25, 0.2500005]);
        });
        let log = load_prediction_log(&path).unwrap();
        assert_eq!(log.warnings.len(), 1);
        assert_eq!(log.warnings[0].line, 2);
        let row = log.cells[&(10, 3)].values().next().unwrap();
        let PredictiveOutput::Categorical(p) = row else {
            panic!()
        };
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn badly_off_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, _) = fixture(dir.path());
        edit_line(&path, 3, |v| {
            v["output"]["categorical"] = serde_json::json!([0.25, 0.25, 0.25, 0.26]);
        });
        assert!(matches!(
            load_prediction_log(&path),
            Err(Error::Malformed { line: 4, .. })
        ));
    }

    #[test]
    fn duplicates_and_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, _) = fixture(dir.path());
        let text = std::fs::read_to_string(&path).unwrap();
        let second = text.lines().nth(1).unwrap().to_string();
        std::fs::write(&path, format!("{text}{second}\n")).unwrap();
        assert!(matches!(load_prediction_log(&path), Err(Error::Malformed { .. })));

        let (path, _, _) = fixture(dir.path());
        edit_line(&path, 0, |v| v["grid"] = serde_json::json!([[10, 3], [20, 3], [40, 3]]));
        assert!(matches!(
            load_prediction_log(&path),
            Err(Error::MissingCell { n: 40, d: 3 })
        ));
    }

    #[test]
    fn cells_must_cover_the_eval_set() {
        let dir = tempfile::tempdir().unwrap();
        let (path, eval, _) = fixture(dir.path());
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text
            .lines()
            .enumerate()
            .filter(|(i, _)| *i != 2)
            .map(|(_, l)| l)
            .collect();
        std::fs::write(&path, kept.join("\n")).unwrap();
        let log = load_prediction_log(&path).unwrap();
        assert!(matches!(
            log.cell_prediction_set(10, 3, &eval),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(log.cell_prediction_set(20, 3, &eval).is_ok());
    }
}
