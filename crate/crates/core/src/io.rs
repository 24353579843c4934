//! Plain-text exports: vectors, matrices and spectra as CSV, plus atomic
//! writes and file digests for run manifests.
//!
//! Floats are written in shortest round-trip exponent form, so reading a
//! file back yields bit-identical values.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use faer::{Mat, MatRef};
use sha2::{Digest, Sha256};

use crate::algebra::SingularSpectrum;
use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

pub fn vector_csv(values: &[f64]) -> String {
    let mut out = String::from("token_id,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v:e}");
    }
    out
}

pub fn write_vector_csv(path: &Path, values: &[f64]) -> Result<()> {
    write_atomic(path, vector_csv(values).as_bytes())
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: {field:?} is not a number")))
}

fn data_lines(text: &str, header_prefix: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim_start().starts_with(header_prefix) => {}
        _ => return Err(Error::Format(format!("missing header starting with {header_prefix:?}"))),
    }
    Ok(lines
        .map(|(i, l)| (i + 1, l.split(',').map(str::to_string).collect()))
        .collect())
}

pub fn parse_vector_csv(text: &str) -> Result<Vec<f64>> {
    data_lines(text, "token_id")?
        .into_iter()
        .enumerate()
        .map(|(expected, (line, fields))| {
            if fields.len() != 2 {
                return Err(Error::Format(format!("line {line}: expected 2 fields")));
            }
            let id: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: bad token id {:?}", fields[0])))?;
            if id != expected {
                return Err(Error::Format(format!("line {line}: token ids must run 0..v in order")));
            }
            parse_f64(&fields[1], line)
        })
        .collect()
}

pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    parse_vector_csv(&fs::read_to_string(path)?)
}

/// `index,sigma` with 1-based indices.
pub fn spectrum_csv(spectrum: &SingularSpectrum) -> String {
    let mut out = String::from("index,sigma\n");
    for (i, s) in spectrum.values.iter().enumerate() {
        let _ = writeln!(out, "{},{s:e}", i + 1);
    }
    out
}

pub fn write_spectrum_csv(path: &Path, spectrum: &SingularSpectrum) -> Result<()> {
    write_atomic(path, spectrum_csv(spectrum).as_bytes())
}

/// Row-major matrix CSV: one row per token, one column per output.
pub fn matrix_csv(m: MatRef<'_, f64>) -> String {
    let mut out = String::from("token_id");
    for j in 0..m.ncols() {
        let _ = write!(out, ",c{j}");
    }
    out.push('\n');
    for i in 0..m.nrows() {
        let _ = write!(out, "{i}");
        for j in 0..m.ncols() {
            let _ = write!(out, ",{:e}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: MatRef<'_, f64>) -> Result<()> {
    write_atomic(path, matrix_csv(m).as_bytes())
}

pub fn parse_matrix_csv(text: &str) -> Result<Mat<f64>> {
    let rows = data_lines(text, "token_id")?;
    let cols = rows.first().map(|(_, f)| f.len().saturating_sub(1)).unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Format("matrix CSV has no data".into()));
    }
    let mut values = Vec::with_capacity(rows.len() * cols);
    for (line, fields) in &rows {
        if fields.len() != cols + 1 {
            return Err(Error::Format(format!("line {line}: expected {} fields", cols + 1)));
        }
        for f in &fields[1..] {
            values.push(parse_f64(f, *line)?);
        }
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| values[i * cols + j]))
}

pub fn read_matrix_csv(path: &Path) -> Result<Mat<f64>> {
    parse_matrix_csv(&fs::read_to_string(path)?)
}
