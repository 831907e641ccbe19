//! Eval-set, training-sequence and mixture files.
//!
//! JSONL: the first line is a header naming the mixture spec, every further
//! line one sequence. The trainer consumes these files unchanged.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::json;
use super::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::taskgen::{self, EvalMode, EvalSet, MixtureSpec, Payload, Sequence, SettingKind, Task, TaskMixture};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalHeader {
    kind: String,
    format_version: u32,
    spec: MixtureSpec,
    mode: EvalMode,
    n_sequences: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ood_tasks: Vec<Task>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceLine {
    seq_id: usize,
    setting: SettingKind,
    mode: EvalMode,
    task_ids: Vec<usize>,
    payload: Payload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainingHeader {
    kind: String,
    format_version: u32,
    spec: MixtureSpec,
    first_index: u64,
    count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainingLine {
    index: u64,
    task_ids: Vec<usize>,
    payload: Payload,
}

const EVAL_KIND: &str = "eval_set";
const TRAIN_KIND: &str = "training_sequences";

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

/// Checks that a sequence's payload has the shapes its spec implies.
pub fn validate_sequence(spec: &MixtureSpec, seq: &Sequence) -> std::result::Result<(), String> {
    if seq.setting != spec.setting {
        return Err(format!(
            "sequence setting {:?} in a {:?} file",
            seq.setting, spec.setting
        ));
    }
    let m = spec.m;
    match (&seq.payload, spec.setting) {
        (Payload::BallsUrns { tokens }, SettingKind::BallsUrns) => {
            if tokens.len() != spec.c {
                return Err(format!("{} tokens, expected {}", tokens.len(), spec.c));
            }
            if let Some(t) = tokens.iter().find(|&&t| t >= m) {
                return Err(format!("token {t} outside 0..{m}"));
            }
        }
        (Payload::LinearRegression { xs, ys }, SettingKind::LinearRegression) => {
            if xs.len() != spec.c || ys.len() != spec.c {
                return Err(format!(
                    "{} inputs / {} targets, expected {}",
                    xs.len(),
                    ys.len(),
                    spec.c
                ));
            }
            if xs.iter().any(|x| x.len() != m) {
                return Err(format!("input of dimension other than {m}"));
            }
            if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
                return Err("non-finite value".into());
            }
        }
        (
            Payload::Classification {
                items,
                labels,
                query,
                target,
                twin,
            },
            SettingKind::Classification,
        ) => {
            if items.len() + 1 != spec.c || labels.len() != items.len() {
                return Err(format!(
                    "{} items / {} labels for context {}",
                    items.len(),
                    labels.len(),
                    spec.c
                ));
            }
            if items.iter().chain(std::iter::once(query)).any(|x| x.len() != m) {
                return Err(format!("item of dimension other than {m}"));
            }
            if labels.iter().chain(std::iter::once(target)).any(|&l| l > 1) {
                return Err("labels must be 0 or 1".into());
            }
            if twin.is_some_and(|t| t >= items.len()) {
                return Err("twin index outside the context".into());
            }
            if seq.source_task_ids.len() != spec.c {
                return Err(format!("{} task ids, expected {}", seq.source_task_ids.len(), spec.c));
            }
        }
        _ => return Err("payload does not match the setting".into()),
    }
    if seq.source_task_ids.is_empty() {
        return Err("no task ids".into());
    }
    Ok(())
}

pub fn write_eval_set(path: &Path, eval: &EvalSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = EvalHeader {
        kind: EVAL_KIND.into(),
        format_version: FORMAT_VERSION,
        spec: eval.spec.clone(),
        mode: eval.mode,
        n_sequences: eval.sequences.len(),
        ood_tasks: eval.ood_tasks.clone(),
    };
    writeln!(w, "{}", json::to_line(&header)?)?;
    for (seq_id, seq) in eval.sequences.iter().enumerate() {
        let line = SequenceLine {
            seq_id,
            setting: seq.setting,
            mode: eval.mode,
            task_ids: seq.source_task_ids.clone(),
            payload: seq.payload.clone(),
        };
        writeln!(w, "{}", json::to_line(&line)?)?;
    }
    w.flush()?;
    Ok(())
}

fn non_empty_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>>> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty())))
}

pub fn read_eval_set(path: &Path) -> Result<EvalSet> {
    let mut lines = non_empty_lines(path)?;
    let (_, first) = lines.next().ok_or_else(|| malformed(1, "empty file"))??;
    let header: EvalHeader = serde_json::from_str(&first).map_err(|e| malformed(1, e.to_string()))?;
    if header.kind != EVAL_KIND {
        return Err(malformed(
            1,
            format!("expected an {EVAL_KIND} header, found {:?}", header.kind),
        ));
    }
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: header.format_version,
        });
    }
    header.spec.validate()?;

    let mut sequences = Vec::with_capacity(header.n_sequences);
    for item in lines {
        let (no, text) = item?;
        let line: SequenceLine = serde_json::from_str(&text).map_err(|e| malformed(no, e.to_string()))?;
        if line.seq_id != sequences.len() {
            return Err(malformed(
                no,
                format!("seq_id {} out of order, expected {}", line.seq_id, sequences.len()),
            ));
        }
        if line.mode != header.mode {
            return Err(malformed(
                no,
                format!("mode {:?} in a {:?} file", line.mode, header.mode),
            ));
        }
        let seq = Sequence {
            setting: line.setting,
            payload: line.payload,
            source_task_ids: line.task_ids,
        };
        validate_sequence(&header.spec, &seq).map_err(|m| malformed(no, m))?;
        sequences.push(seq);
    }
    if sequences.len() != header.n_sequences {
        return Err(malformed(
            0,
            format!(
                "header announces {} sequences, file has {}",
                header.n_sequences,
                sequences.len()
            ),
        ));
    }
    Ok(EvalSet {
        spec: header.spec,
        mode: header.mode,
        sequences,
        ood_tasks: header.ood_tasks,
    })
}

/// Writes `count` training sequences starting at `first_index`; they are
/// the same sequences [`taskgen::training_sequence`] returns.
pub fn write_training_sequences(path: &Path, mixture: &TaskMixture, first_index: u64, count: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = TrainingHeader {
        kind: TRAIN_KIND.into(),
        format_version: FORMAT_VERSION,
        spec: mixture.spec.clone(),
        first_index,
        count,
    };
    writeln!(w, "{}", json::to_line(&header)?)?;
    for index in first_index..first_index + count {
        let seq = taskgen::training_sequence(mixture, index);
        let line = TrainingLine {
            index,
            task_ids: seq.source_task_ids,
            payload: seq.payload,
        };
        writeln!(w, "{}", json::to_line(&line)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_sequences(path: &Path) -> Result<(MixtureSpec, Vec<(u64, Sequence)>)> {
    let mut lines = non_empty_lines(path)?;
    let (_, first) = lines.next().ok_or_else(|| malformed(1, "empty file"))??;
    let header: TrainingHeader = serde_json::from_str(&first).map_err(|e| malformed(1, e.to_string()))?;
    if header.kind != TRAIN_KIND {
        return Err(malformed(
            1,
            format!("expected a {TRAIN_KIND} header, found {:?}", header.kind),
        ));
    }
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: header.format_version,
        });
    }
    let mut out = Vec::new();
    for item in lines {
        let (no, text) = item?;
        let line: TrainingLine = serde_json::from_str(&text).map_err(|e| malformed(no, e.to_string()))?;
        let seq = Sequence {
            setting: header.spec.setting,
            payload: line.payload,
            source_task_ids: line.task_ids,
        };
        validate_sequence(&header.spec, &seq).map_err(|m| malformed(no, m))?;
        out.push((line.index, seq));
    }
    Ok((header.spec, out))
}

pub fn write_mixture(path: &Path, mixture: &TaskMixture) -> Result<()> {
    json::write_pretty(path, mixture)
}

pub fn read_mixture(path: &Path) -> Result<TaskMixture> {
    let text = std::fs::read_to_string(path)?;
    let mixture: TaskMixture = serde_json::from_str(&text)?;
    mixture.spec.validate()?;
    if mixture.tasks.len() != mixture.spec.d {
        return Err(Error::InvalidSpec(format!(
            "{} tasks stored for D={}",
            mixture.tasks.len(),
            mixture.spec.d
        )));
    }
    Ok(mixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use taskgen::{make_eval_set, sample_mixture};

    #[test]
    fn eval_sets_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for setting in [
            SettingKind::BallsUrns,
            SettingKind::LinearRegression,
            SettingKind::Classification,
        ] {
            let mix = sample_mixture(&MixtureSpec::new(setting, 4, 5, 6, 3)).unwrap();
            for mode in [EvalMode::Id, EvalMode::Ood] {
                let eval = make_eval_set(&mix, 7, mode, 11).unwrap();
                let path = dir.path().join("e.jsonl");
                write_eval_set(&path, &eval).unwrap();
                assert_eq!(read_eval_set(&path).unwrap(), eval);
            }
        }
    }

    #[test]
    fn training_file_matches_generator() {
        let dir = tempfile::tempdir().unwrap();
        let mix = sample_mixture(&MixtureSpec::new(SettingKind::LinearRegression, 3, 2, 4, 9)).unwrap();
        let path = dir.path().join("t.jsonl");
        write_training_sequences(&path, &mix, 10, 5).unwrap();
        let (spec, seqs) = read_training_sequences(&path).unwrap();
        assert_eq!(spec, mix.spec);
        for (i, s) in seqs {
            assert_eq!(s, taskgen::training_sequence(&mix, i));
        }
    }

    #[test]
    fn rejects_out_of_range_token() {
        let dir = tempfile::tempdir().unwrap();
        let mix = sample_mixture(&MixtureSpec::new(SettingKind::BallsUrns, 2, 3, 4, 1)).unwrap();
        let eval = make_eval_set(&mix, 2, EvalMode::Id, 1).unwrap();
        let path = dir.path().join("e.jsonl");
        write_eval_set(&path, &eval).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
        v["payload"]["balls_urns"]["tokens"][0] = 9.into();
        lines[2] = v.to_string();
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_eval_set(&path) {
            Err(Error::Malformed { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mix = sample_mixture(&MixtureSpec::new(SettingKind::Classification, 3, 4, 5, 2)).unwrap();
        let path = dir.path().join("m.json");
        write_mixture(&path, &mix).unwrap();
        assert_eq!(read_mixture(&path).unwrap(), mix);
    }
}
