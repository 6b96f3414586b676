//! Matrix files: the binary `MOAT` format, headered CSV, and the JSON
//! sidecar that accompanies a stored association matrix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::association::{AssociationMatrix, LogBase, ScoreKind, StudyData};
use crate::error::{MoatError, Result};
use crate::graph::RegionPairIndex;

pub const MAGIC: &[u8; 4] = b"MOAT";
pub const FORMAT_VERSION: u32 = 1;

/// Writes `m` as magic, u32 version, u64 rows, u64 cols, then row-major
/// little-endian f64 values.
pub fn write_binary(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary_to(&mut w, m.nrows(), m.ncols(), |r, c| m[(r, c)])?;
    w.flush()?;
    Ok(())
}

fn write_binary_to(
    w: &mut impl Write,
    rows: usize,
    cols: usize,
    value: impl Fn(usize, usize) -> f64,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for r in 0..rows {
        for c in 0..cols {
            w.write_all(&value(r, c).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 24];
    r.read_exact(&mut header)
        .map_err(|_| MoatError::Format(format!("{}: truncated header", path.display())))?;
    if &header[..4] != MAGIC {
        return Err(MoatError::Format(format!(
            "{}: bad magic bytes",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(MoatError::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| MoatError::Format(format!("{}: dimensions overflow", path.display())))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len {
        return Err(MoatError::Format(format!(
            "{}: expected {len} data bytes for {rows} x {cols}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// A CSV with one header row naming the columns; rows are subjects.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MoatError::Format(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| MoatError::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| MoatError::Format(format!("{}: {e}", path.display())))?;
        if rec.len() != names.len() {
            return Err(MoatError::Format(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                line + 1,
                rec.len(),
                names.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                MoatError::Format(format!(
                    "{}: row {}, column {:?}: cannot parse {field:?}",
                    path.display(),
                    line + 1,
                    names[c]
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((
        names.clone(),
        DMatrix::from_row_slice(rows, names.len(), &values),
    ))
}

pub fn write_csv(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| MoatError::Format(e.to_string()))?;
    let fmt = |e: csv::Error| MoatError::Format(e.to_string());
    w.write_record(names).map_err(fmt)?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))
            .map_err(fmt)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix by extension: `.csv` as headered CSV, anything else as
/// the binary format (with generated column names).
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    if is_csv(path) {
        read_csv(path)
    } else {
        let m = read_binary(path)?;
        let names = (1..=m.ncols()).map(|c| format!("c{c}")).collect();
        Ok((names, m))
    }
}

pub fn write_matrix(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    if is_csv(path) {
        write_csv(path, names, m)
    } else {
        write_binary(path, m)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("tsv"))
}

/// Loads predictors, outcomes and optional confounders and validates them
/// together.
pub fn load_study(
    predictors: &Path,
    outcomes: &Path,
    confounders: Option<&Path>,
) -> Result<StudyData> {
    let (x_names, x) = read_matrix(predictors)?;
    let (_, y) = read_matrix(outcomes)?;
    let (eta_names, eta) = match confounders {
        Some(p) => read_matrix(p)?,
        None => (Vec::new(), DMatrix::zeros(x.nrows(), 0)),
    };
    StudyData::new(x, y, eta)?.with_names(x_names, eta_names)
}

/// JSON stored next to a binary association matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub score_kind: ScoreKind,
    pub log_base: LogBase,
    pub n_regions: usize,
    pub predictor_names: Vec<String>,
    pub epsilon: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_scores(path: &Path, a: &AssociationMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let s = a.as_slice();
    let f = a.n_edges();
    write_binary_to(&mut w, a.n_predictors(), f, |k, e| s[k * f + e])?;
    w.flush()?;
    let sidecar = ScoreSidecar {
        score_kind: a.kind(),
        log_base: a.log_base(),
        n_regions: a.n_regions(),
        predictor_names: a.predictor_names.clone(),
        epsilon: a.epsilon,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<AssociationMatrix> {
    let sidecar: ScoreSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let m = read_binary(path)?;
    let index = RegionPairIndex::new(sidecar.n_regions)?;
    if m.ncols() != index.len() || sidecar.predictor_names.len() != m.nrows() {
        return Err(MoatError::DimensionMismatch(format!(
            "{}: {} x {} scores disagree with sidecar ({} predictors, {} regions)",
            path.display(),
            m.nrows(),
            m.ncols(),
            sidecar.predictor_names.len(),
            sidecar.n_regions
        )));
    }
    let scores = m.transpose().as_slice().to_vec();
    let mut a = AssociationMatrix::from_scores(sidecar.score_kind, index, m.nrows(), scores)?
        .with_log_base(sidecar.log_base);
    a.predictor_names = sidecar.predictor_names;
    a.epsilon = sidecar.epsilon;
    Ok(a)
}
