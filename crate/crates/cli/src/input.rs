//! CSV ingestion: comma separated, header required, '.' decimals.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

/// A parsed CSV file held as raw string columns.
pub struct Table {
    source: String,
    header: HashMap<String, usize>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, String> {
        let source = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| format!("cannot open {source}: {e}"))?;
        let header = reader
            .headers()
            .map_err(|e| format!("{source}: bad header: {e}"))?
            .iter()
            .enumerate()
            .map(|(j, name)| (name.trim().to_string(), j))
            .collect();
        let records = reader
            .records()
            .enumerate()
            .map(|(r, rec)| rec.map_err(|e| format!("{source}: row {}: {e}", r + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if records.is_empty() {
            return Err(format!("{source}: no data rows"));
        }
        Ok(Table { source, header, records })
    }

    pub fn rows(&self) -> usize {
        self.records.len()
    }

    fn index(&self, name: &str) -> Result<usize, String> {
        self.header
            .get(name)
            .copied()
            .ok_or_else(|| format!("{}: column '{name}' not found in header", self.source))
    }

    /// Raw labels of a column.
    pub fn labels(&self, name: &str) -> Result<Vec<String>, String> {
        let j = self.index(name)?;
        Ok(self.records.iter().map(|r| r.get(j).unwrap_or("").trim().to_string()).collect())
    }

    /// A column parsed as finite numbers; errors name the row and column.
    pub fn numeric(&self, name: &str) -> Result<DVector<f64>, String> {
        let j = self.index(name)?;
        let mut out = DVector::zeros(self.rows());
        for (r, rec) in self.records.iter().enumerate() {
            let raw = rec.get(j).unwrap_or("").trim();
            let value: f64 = raw.parse().map_err(|_| {
                format!("{}: row {}, column '{name}': cannot parse '{raw}' as a number", self.source, r + 1)
            })?;
            if !value.is_finite() {
                return Err(format!("{}: row {}, column '{name}': value '{raw}' is not finite", self.source, r + 1));
            }
            out[r] = value;
        }
        Ok(out)
    }

    /// A column parsed as nonnegative integers.
    pub fn integer(&self, name: &str) -> Result<Vec<usize>, String> {
        let j = self.index(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(r, rec)| {
                let raw = rec.get(j).unwrap_or("").trim();
                raw.parse().map_err(|_| {
                    format!(
                        "{}: row {}, column '{name}': cannot parse '{raw}' as a nonnegative integer",
                        self.source,
                        r + 1
                    )
                })
            })
            .collect()
    }

    /// Several numeric columns side by side.
    pub fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>, String> {
        let mut m = DMatrix::zeros(self.rows(), names.len());
        for (j, name) in names.iter().enumerate() {
            m.set_column(j, &self.numeric(name)?);
        }
        Ok(m)
    }
}
