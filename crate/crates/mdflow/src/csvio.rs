//! CSV artifacts: comma separated, one header row, reals written with 17
//! significant digits so that they read back bit for bit.

use std::path::Path;

use mdflow_core::Field;

use crate::error::{CliError, Result};

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per cell, columns `(x, <value>)`.
pub fn write_field(path: &Path, value_name: &str, field: &Field) -> Result<()> {
    let rows: Vec<Vec<String>> = field
        .grid()
        .centers()
        .iter()
        .zip(field.values())
        .map(|(x, v)| vec![fmt_real(*x), fmt_real(*v)])
        .collect();
    write_table(path, &["x", value_name], &rows)
}

/// A numeric CSV read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| CliError::Artifact {
                        path: path.display().to_string(),
                        reason: format!("non-numeric entry `{s}`"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}
