//! Compression upper bounds on predictor complexity.
//!
//! A predictor is summarized as a [`CodeBundle`]: a canonical pseudo-code
//! rendering of its inference routine plus the arrays it reads at inference
//! time. The pseudo-code lives in `assets/predictors/<setting>_<kind>.py`.
//!
//! Preprocessed byte layout, sections in order:
//!
//! ```text
//! "SRC" u64le(len) <normalized source bytes>          (omitted if empty)
//! "ARR" u64le(name_len) <name> u64le(rows) u64le(cols) <rows*cols f64le, delta-encoded>
//! ```
//!
//! The 16 bytes `rows, cols` form the shape header. Arrays are row-major and
//! delta-encoded along the leading axis.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::PredictorKind;
use crate::taskgen::{SettingKind, TaskMixture};

const LZMA_PRESET_EXTREME: u32 = 0x8000_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeBundle {
    pub source_text: String,
    pub arrays: Vec<NamedArray>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Lzma,
    Bzip2,
    Brotli,
    Zstd,
}

impl Codec {
    pub const ALL: [Codec; 4] = [Codec::Lzma, Codec::Bzip2, Codec::Brotli, Codec::Zstd];

    pub fn compress(self, data: &[u8]) -> std::io::Result<Vec<u8>> {
        match self {
            Codec::Lzma => {
                let stream = xz2::stream::Stream::new_easy_encoder(9 | LZMA_PRESET_EXTREME, xz2::stream::Check::Crc64)
                    .map_err(std::io::Error::other)?;
                let mut enc = xz2::write::XzEncoder::new_stream(Vec::new(), stream);
                enc.write_all(data)?;
                enc.finish()
            }
            Codec::Bzip2 => {
                let mut enc = bzip2::write::BzEncoder::new(Vec::new(), bzip2::Compression::new(9));
                enc.write_all(data)?;
                enc.finish()
            }
            Codec::Brotli => {
                let params = brotli::enc::BrotliEncoderParams {
                    quality: 11,
                    mode: brotli::enc::backward_references::BrotliEncoderMode::BROTLI_MODE_TEXT,
                    ..Default::default()
                };
                let mut out = Vec::new();
                brotli::BrotliCompress(&mut &data[..], &mut out, &params)?;
                Ok(out)
            }
            Codec::Zstd => zstd::bulk::compress(data, 22),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub bits: f64,
    pub per_codec_bits: BTreeMap<Codec, f64>,
    pub codec_chosen: Codec,
    /// Codecs that failed on this input, with their error messages.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failed: BTreeMap<Codec, String>,
}

/// Strips docstrings, `#` comments, blank lines and redundant spaces.
/// Leading indentation is kept.
pub fn normalize_source(text: &str) -> String {
    let mut without_docs = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("\"\"\"") {
        without_docs.push_str(&rest[..start]);
        match rest[start + 3..].find("\"\"\"") {
            Some(end) => rest = &rest[start + 3 + end + 3..],
            None => {
                rest = "";
                break;
            }
        }
    }
    without_docs.push_str(rest);

    let mut lines = Vec::new();
    for line in without_docs.lines() {
        let code = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        };
        let code = code.trim_end();
        if code.trim().is_empty() {
            continue;
        }
        let indent = code.len() - code.trim_start().len();
        let body = code.split_whitespace().collect::<Vec<_>>().join(" ");
        lines.push(format!("{}{}", &code[..indent], body));
    }
    lines.join("\n")
}

/// Successive differences along the leading axis; the first row is kept.
pub fn delta_encode(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let mut out = data.to_vec();
    for r in (1..rows).rev() {
        for c in 0..cols {
            out[r * cols + c] -= data[(r - 1) * cols + c];
        }
    }
    out
}

pub fn preprocess(bundle: &CodeBundle) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let source = normalize_source(&bundle.source_text);
    if !source.is_empty() {
        out.extend_from_slice(b"SRC");
        out.extend_from_slice(&(source.len() as u64).to_le_bytes());
        out.extend_from_slice(source.as_bytes());
    }
    for arr in &bundle.arrays {
        if arr.data.len() != arr.rows * arr.cols {
            return Err(Error::ShapeMismatch(format!(
                "array `{}` has {} entries for shape {}x{}",
                arr.name,
                arr.data.len(),
                arr.rows,
                arr.cols
            )));
        }
        if arr.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("array `{}`", arr.name)));
        }
        out.extend_from_slice(b"ARR");
        out.extend_from_slice(&(arr.name.len() as u64).to_le_bytes());
        out.extend_from_slice(arr.name.as_bytes());
        out.extend_from_slice(&(arr.rows as u64).to_le_bytes());
        out.extend_from_slice(&(arr.cols as u64).to_le_bytes());
        for x in delta_encode(arr.rows, arr.cols, &arr.data) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Smallest compressed size over [`Codec::ALL`], in bits.
pub fn estimate_bytes(data: &[u8]) -> Result<ComplexityEstimate> {
    let mut per_codec_bits = BTreeMap::new();
    let mut failed = BTreeMap::new();
    for codec in Codec::ALL {
        match codec.compress(data) {
            Ok(c) => {
                per_codec_bits.insert(codec, 8.0 * c.len() as f64);
            }
            Err(e) => {
                failed.insert(codec, e.to_string());
            }
        }
    }
    let (codec_chosen, bits) = per_codec_bits
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(c, b)| (*c, *b))
        .ok_or_else(|| Error::AllCodecsFailed(format!("{failed:?}")))?;
    Ok(ComplexityEstimate {
        bits,
        per_codec_bits,
        codec_chosen,
        failed,
    })
}

pub fn estimate_k(bundle: &CodeBundle) -> Result<ComplexityEstimate> {
    estimate_bytes(&preprocess(bundle)?)
}

/// `ln 2 * (K_M^beta - K_G^beta)`.
pub fn delta_k(k_m_bits: f64, k_g_bits: f64, beta: f64) -> f64 {
    std::f64::consts::LN_2 * (k_m_bits.powf(beta) - k_g_bits.powf(beta))
}

pub fn predictor_source(setting: SettingKind, kind: PredictorKind) -> &'static str {
    use PredictorKind::*;
    use SettingKind::*;
    match (setting, kind) {
        (BallsUrns, Memorizing) => include_str!("../assets/predictors/balls_urns_memorizing.py"),
        (BallsUrns, Generalizing) => include_str!("../assets/predictors/balls_urns_generalizing.py"),
        (LinearRegression, Memorizing) => include_str!("../assets/predictors/linear_regression_memorizing.py"),
        (LinearRegression, Generalizing) => include_str!("../assets/predictors/linear_regression_generalizing.py"),
        (Classification, Memorizing) => include_str!("../assets/predictors/classification_memorizing.py"),
        (Classification, Generalizing) => include_str!("../assets/predictors/classification_generalizing.py"),
    }
}

/// Source plus the full task table.
pub fn memorizing_bundle(mixture: &TaskMixture) -> CodeBundle {
    let setting = mixture.spec.setting;
    let rows = mixture.tasks.len();
    let cols = mixture.spec.m;
    let table: Vec<f64> = mixture.tasks.iter().flat_map(|t| t.w.iter().copied()).collect();
    let table_name = match setting {
        SettingKind::BallsUrns => "urns",
        SettingKind::LinearRegression => "weights",
        SettingKind::Classification => "items",
    };
    let mut arrays = vec![NamedArray {
        name: table_name.into(),
        rows,
        cols,
        data: table,
    }];
    if setting == SettingKind::Classification {
        arrays.push(NamedArray {
            name: "labels".into(),
            rows,
            cols: 1,
            data: mixture.tasks.iter().map(|t| f64::from(t.label.unwrap_or(0))).collect(),
        });
    }
    CodeBundle {
        source_text: predictor_source(setting, PredictorKind::Memorizing).to_string(),
        arrays,
    }
}

/// Source only: the generalizing predictor carries no task table.
pub fn generalizing_bundle(setting: SettingKind) -> CodeBundle {
    CodeBundle {
        source_text: predictor_source(setting, PredictorKind::Generalizing).to_string(),
        arrays: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRecord {
    pub predictor: String,
    #[serde(rename = "D")]
    pub d: usize,
    pub bits: f64,
    pub per_codec_bits: BTreeMap<Codec, f64>,
}

impl ComplexityRecord {
    pub fn new(kind: PredictorKind, d: usize, est: &ComplexityEstimate) -> Self {
        Self {
            predictor: kind.tag().into(),
            d,
            bits: est.bits,
            per_codec_bits: est.per_codec_bits.clone(),
        }
    }
}
