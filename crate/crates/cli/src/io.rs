use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use blocksel_core::Matrix;
use ndarray::Array2;
use tempfile::NamedTempFile;

use crate::CliError;

/// Reads a headerless numeric CSV into a dense matrix.
pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(CliError::user(format!("{}: row {} has {} fields", path.display(), r + 1, record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::user(format!("{}: row {}, column {}: {field:?} is not a number", path.display(), r + 1, c + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| CliError::user(format!("{}: no rows", path.display())))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("rectangular by construction"))
}

pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn indicator_csv(delta: &Array2<bool>) -> String {
    let mut out = String::new();
    for row in delta.rows() {
        let cells: Vec<&str> = row.iter().map(|&d| if d { "1" } else { "0" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Output files held in memory until the run has succeeded.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.add(name, text);
    }

    /// Writes every file through a temporary sibling and renames it into place.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::user(format!("{}: {e}", dir.display())))?;
        let staged = self
            .files
            .into_iter()
            .map(|(name, bytes)| {
                let mut tmp = NamedTempFile::new_in(dir)?;
                tmp.write_all(&bytes)?;
                tmp.flush()?;
                Ok((dir.join(name), tmp))
            })
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| CliError::user(format!("{}: {e}", dir.display())))?;
        staged
            .into_iter()
            .map(|(path, tmp)| {
                tmp.persist(&path)
                    .map_err(|e| CliError::user(format!("{}: {}", path.display(), e.error)))?;
                Ok(path)
            })
            .collect()
    }
}
