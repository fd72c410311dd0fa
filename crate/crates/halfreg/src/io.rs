//! On-disk formats: degree matrix JSON, realization JSON/CSV, NDJSON sample
//! lines and the diagnostics report. Field layouts are stable; JSON
//! round-trips are bit-exact for files this module wrote.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Diagnostics;
use crate::model::{ColoredRealization, DegreeMatrix, ModelError};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Csv(String),
}

/// Degree matrix file: `{"n":..,"m":..,"k":..,"d":[..],"f":[[..]..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d: Vec<usize>,
    pub f: Vec<Vec<usize>>,
}

impl From<&DegreeMatrix> for MatrixFile {
    fn from(mat: &DegreeMatrix) -> Self {
        Self {
            n: mat.n(),
            m: mat.m(),
            k: mat.k(),
            d: mat.row_degrees().to_vec(),
            f: mat.col_degrees().to_vec(),
        }
    }
}

impl TryFrom<MatrixFile> for DegreeMatrix {
    type Error = ModelError;

    fn try_from(file: MatrixFile) -> Result<Self, ModelError> {
        DegreeMatrix::new(file.n, file.m, file.k, file.d, file.f)
    }
}

pub fn matrix_from_json(text: &str) -> Result<DegreeMatrix, SchemaError> {
    let file: MatrixFile = serde_json::from_str(text)?;
    Ok(DegreeMatrix::try_from(file)?)
}

pub fn matrix_to_json(mat: &DegreeMatrix) -> String {
    serde_json::to_string(&MatrixFile::from(mat)).expect("matrix files always serialize")
}

/// Realization file: `{"n":..,"m":..,"k":..,"matrix":[[..]..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationFile {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub matrix: Vec<Vec<usize>>,
}

impl From<&ColoredRealization> for RealizationFile {
    fn from(real: &ColoredRealization) -> Self {
        Self {
            n: real.n(),
            m: real.m(),
            k: real.k(),
            matrix: (0..real.n()).map(|u| real.row(u).to_vec()).collect(),
        }
    }
}

impl TryFrom<RealizationFile> for ColoredRealization {
    type Error = ModelError;

    fn try_from(file: RealizationFile) -> Result<Self, ModelError> {
        if file.matrix.len() != file.n {
            return Err(ModelError::DimensionMismatch(format!(
                "matrix has {} rows, expected n={}",
                file.matrix.len(),
                file.n
            )));
        }
        for (u, row) in file.matrix.iter().enumerate() {
            if row.len() != file.m {
                return Err(ModelError::DimensionMismatch(format!(
                    "matrix row {u} has {} entries, expected m={}",
                    row.len(),
                    file.m
                )));
            }
        }
        ColoredRealization::from_cells(file.n, file.m, file.k, file.matrix.concat())
    }
}

pub fn realization_from_json(text: &str) -> Result<ColoredRealization, SchemaError> {
    let file: RealizationFile = serde_json::from_str(text)?;
    Ok(ColoredRealization::try_from(file)?)
}

pub fn realization_to_json(real: &ColoredRealization) -> String {
    serde_json::to_string(&RealizationFile::from(real)).expect("realizations always serialize")
}

/// CSV form: `n` lines of `m` comma-separated color ids.
pub fn realization_to_csv(real: &ColoredRealization) -> String {
    let mut out = String::new();
    for u in 0..real.n() {
        let row: Vec<String> = real.row(u).iter().map(|c| c.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses the CSV form. The color count is not stored in CSV; pass it when
/// known, otherwise the smallest consistent value (max id + 1) is used.
pub fn realization_from_csv(
    text: &str,
    k: Option<usize>,
) -> Result<ColoredRealization, SchemaError> {
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<usize>, _> = line.split(',').map(|s| s.trim().parse()).collect();
        rows.push(row.map_err(|e| SchemaError::Csv(format!("line {}: {e}", idx + 1)))?);
    }
    if rows.is_empty() {
        return Err(SchemaError::Csv("no rows".into()));
    }
    let m = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != m) {
        return Err(SchemaError::Csv(format!(
            "row {} has {} entries, expected {m}",
            bad + 1,
            rows[bad].len()
        )));
    }
    let n = rows.len();
    let cells = rows.concat();
    let k = k.unwrap_or_else(|| cells.iter().max().map_or(1, |&c| c + 1));
    Ok(ColoredRealization::from_cells(n, m, k, cells)?)
}

/// One NDJSON sample line: a realization tagged with its chain index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleLine {
    #[serde(default)]
    pub chain: u32,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub matrix: Vec<Vec<usize>>,
}

impl SampleLine {
    pub fn new(chain: u32, real: &ColoredRealization) -> Self {
        let file = RealizationFile::from(real);
        Self {
            chain,
            n: file.n,
            m: file.m,
            k: file.k,
            matrix: file.matrix,
        }
    }

    pub fn into_realization(self) -> Result<ColoredRealization, SchemaError> {
        let file = RealizationFile {
            n: self.n,
            m: self.m,
            k: self.k,
            matrix: self.matrix,
        };
        Ok(ColoredRealization::try_from(file)?)
    }
}

/// Diagnostics report; ratio extremes are exact rationals rendered as
/// `"numerator/denominator"` strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiagnosticsFile {
    pub total_steps: u64,
    pub lazy_steps: u64,
    pub identity_bails: u64,
    pub circuit_moves: u64,
    pub triple_moves: u64,
    pub accepted: u64,
    pub min_ratio: Option<String>,
    pub max_ratio: Option<String>,
    pub empty_v_prime: u64,
}

impl From<&Diagnostics> for DiagnosticsFile {
    fn from(d: &Diagnostics) -> Self {
        let show = |r: &num_rational::BigRational| format!("{}/{}", r.numer(), r.denom());
        Self {
            total_steps: d.total_steps,
            lazy_steps: d.lazy_steps,
            identity_bails: d.identity_bails,
            circuit_moves: d.circuit_moves,
            triple_moves: d.triple_moves,
            accepted: d.accepted,
            min_ratio: d.min_ratio.as_ref().map(show),
            max_ratio: d.max_ratio.as_ref().map(show),
            empty_v_prime: d.empty_v_prime,
        }
    }
}
