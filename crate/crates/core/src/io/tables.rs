//! CSV outputs and their column schema.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Column {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub description: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TableSchema {
    pub file: &'static str,
    pub columns: &'static [Column],
}

const fn col(name: &'static str, kind: &'static str, description: &'static str) -> Column {
    Column {
        name,
        kind,
        description,
    }
}

pub const METRICS: TableSchema = TableSchema {
    file: "metrics.csv",
    columns: &[
        col("N", "int", "training checkpoint"),
        col("D", "int", "task diversity"),
        col("d_hM", "float", "distance from the model to the memorizing predictor"),
        col("d_hG", "float", "distance from the model to the generalizing predictor"),
        col("d_MG", "float", "distance between the two predictors"),
        col("d_rel", "float", "relative distance, 0 = generalizing, 1 = memorizing"),
        col("interp_loss", "float", "forward divergence to the d_rel-weighted blend"),
        col("valid_flag", "int", "1 if the cell passes the two-hypotheses threshold"),
    ],
};

pub const DELTA_L: TableSchema = TableSchema {
    file: "delta_l.csv",
    columns: &[
        col("D", "int", "task diversity"),
        col(
            "L_M",
            "float",
            "median-of-means NLL of the memorizing predictor (nats/element)",
        ),
        col(
            "L_G",
            "float",
            "median-of-means NLL of the generalizing predictor (nats/element)",
        ),
        col("delta_L", "float", "L_G - L_M"),
        col(
            "K_M_bits",
            "float",
            "compressed size of the memorizing predictor in bits",
        ),
        col(
            "K_G_bits",
            "float",
            "compressed size of the generalizing predictor in bits (after multiplier)",
        ),
        col("n_blocks", "int", "median-of-means blocks"),
    ],
};

pub const POSTERIOR_GRID: TableSchema = TableSchema {
    file: "posterior_grid.csv",
    columns: &[
        col("N", "int", "training checkpoint"),
        col("D", "int", "task diversity"),
        col("eta", "float", "log-posterior odds of memorizing over generalizing"),
        col("p_M", "float", "posterior weight of the memorizing predictor"),
        col("p_G", "float", "posterior weight of the generalizing predictor"),
    ],
};

pub const FORECASTS: TableSchema = TableSchema {
    file: "forecasts.csv",
    columns: &[
        col("D", "int", "task diversity"),
        col("N_star", "float", "predicted crossover checkpoint; inf if never"),
        col("status", "string", "finite, immediate or never"),
        col("closed_form", "float", "closed-form crossover"),
        col(
            "root_find",
            "float",
            "crossover by bisection; empty outside the search range",
        ),
        col("agreement", "float", "relative gap between closed form and bisection"),
        col(
            "empirical_N_half",
            "float",
            "first checkpoint where d_rel reaches 0.5 (interpolated); empty if never",
        ),
    ],
};

pub const LOGISTIC_FITS: TableSchema = TableSchema {
    file: "logistic_fits.csv",
    columns: &[
        col("D", "int", "task diversity"),
        col("a", "float", "plateau"),
        col("b", "float", "steepness in u = N^(1-alpha)"),
        col("N0", "float", "midpoint in u units"),
        col("alpha", "float", "exponent used for u"),
        col("sse", "float", "residual sum of squares"),
        col("degenerate", "int", "1 if the series was constant"),
    ],
};

pub const COMPLEXITY: TableSchema = TableSchema {
    file: "complexity.csv",
    columns: &[
        col("predictor", "string", "M or G"),
        col("D", "int", "task diversity"),
        col("bits", "float", "smallest compressed size in bits"),
        col("codec", "string", "codec achieving it"),
        col("lzma_bits", "float", "xz size in bits"),
        col("bzip2_bits", "float", "bzip2 size in bits"),
        col("brotli_bits", "float", "brotli size in bits"),
        col("zstd_bits", "float", "zstd size in bits"),
    ],
};

pub const ALL_TABLES: [TableSchema; 6] = [METRICS, DELTA_L, POSTERIOR_GRID, FORECASTS, LOGISTIC_FITS, COMPLEXITY];

pub fn schema_document() -> serde_json::Value {
    let tables: serde_json::Map<String, serde_json::Value> = ALL_TABLES
        .iter()
        .map(|t| {
            (
                t.file.to_string(),
                serde_json::to_value(t.columns).expect("static schema"),
            )
        })
        .collect();
    serde_json::json!({ "format_version": super::FORMAT_VERSION, "tables": tables })
}

pub fn write_table(dir: &Path, schema: &TableSchema, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(schema.file))?;
    w.write_record(schema.columns.iter().map(|c| c.name))?;
    for row in rows {
        if row.len() != schema.columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: row of {} cells, schema has {}",
                schema.file,
                row.len(),
                schema.columns.len()
            )));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table, returning rows in schema column order. The header must
/// name exactly the schema's columns (in any order).
pub fn read_table(path: &Path, schema: &TableSchema) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if let Some(unknown) = header
        .iter()
        .find(|h| !schema.columns.iter().any(|c| c.name == h.as_str()))
    {
        return Err(Error::Malformed {
            line: 1,
            message: format!("{}: unknown column {unknown:?}", schema.file),
        });
    }
    let mut index = Vec::with_capacity(schema.columns.len());
    for c in schema.columns {
        let pos = header
            .iter()
            .position(|h| h == c.name)
            .ok_or_else(|| Error::Malformed {
                line: 1,
                message: format!("{}: missing column {:?}", schema.file, c.name),
            })?;
        index.push(pos);
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(index.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect());
    }
    Ok(rows)
}

/// Parses a float cell; accepts `inf`, `-inf`, `nan`.
pub fn parse_f64(cell: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Malformed {
        line: 0,
        message: format!("not a number: {cell:?}"),
    })
}

pub fn opt_cell(value: Option<f64>) -> String {
    value.map(super::json::fmt_f64).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![
            "1".to_string(),
            "8".into(),
            "0.5".into(),
            "inf".into(),
            "1".into(),
        ]];
        write_table(dir.path(), &POSTERIOR_GRID, &rows).unwrap();
        assert_eq!(
            read_table(&dir.path().join("posterior_grid.csv"), &POSTERIOR_GRID).unwrap(),
            rows
        );
        assert_eq!(parse_f64("inf").unwrap(), f64::INFINITY);
    }

    #[test]
    fn unknown_columns_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        std::fs::write(&path, "N,D,d_hM,d_hG,d_MG,d_rel,interp_loss,valid_flag,extra\n").unwrap();
        assert!(matches!(
            read_table(&path, &METRICS),
            Err(Error::Malformed { line: 1, .. })
        ));
        std::fs::write(&path, "N,D,d_hM\n").unwrap();
        assert!(read_table(&path, &METRICS).is_err());
    }

    #[test]
    fn columns_may_come_in_any_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("posterior_grid.csv");
        std::fs::write(&path, "p_G,p_M,eta,D,N\n0.25,0.75,1.0,4,100\n").unwrap();
        let rows = read_table(&path, &POSTERIOR_GRID).unwrap();
        assert_eq!(rows[0], vec!["100", "4", "1.0", "0.75", "0.25"]);
    }

    #[test]
    fn schema_lists_every_table() {
        let doc = schema_document();
        for t in ALL_TABLES {
            assert!(doc["tables"][t.file].is_array());
        }
        let names: Vec<&str> = METRICS.columns.iter().map(|c| c.name).collect();
        assert_eq!(
            names,
            ["N", "D", "d_hM", "d_hG", "d_MG", "d_rel", "interp_loss", "valid_flag"]
        );
    }
}
