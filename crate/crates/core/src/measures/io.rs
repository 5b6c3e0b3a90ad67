//! CSV loading for discrete measures and grid test functions.

use std::path::Path;

use super::{DiscreteMeasure, TestFunction};
use crate::error::{Error, Result};

fn read_pairs(path: &Path, second: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["z", second] {
        return Err(Error::Csv(format!(
            "{}: expected header `z,{second}`, found `{}`",
            path.display(),
            names.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            let field = record.get(i).unwrap_or("");
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Csv(format!("{}: row {}: cannot parse `{field}`", path.display(), line + 2)))?;
            if !v.is_finite() {
                return Err(Error::Csv(format!("{}: row {}: non-finite value", path.display(), line + 2)));
            }
            Ok(v)
        };
        rows.push((parse(0)?, parse(1)?));
    }
    Ok(rows)
}

impl DiscreteMeasure {
    /// Loads a measure from a CSV file with header `z,weight`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows = read_pairs(path, "weight")?;
        if let Some((z, w)) = rows.iter().find(|(_, w)| *w <= 0.0) {
            return Err(Error::Csv(format!("{}: weight {w} at z = {z} is not positive", path.display())));
        }
        let (points, weights) = rows.into_iter().unzip();
        DiscreteMeasure::new(points, weights)
    }
}

impl TestFunction {
    /// Loads grid values from a CSV file with header `z,value`; the `z`
    /// column must list the atoms of `measure` in order.
    pub fn grid_from_csv(path: impl AsRef<Path>, measure: &DiscreteMeasure) -> Result<Self> {
        let path = path.as_ref();
        let rows = read_pairs(path, "value")?;
        if rows.len() != measure.len() {
            return Err(Error::Csv(format!(
                "{}: {} rows for a measure with {} atoms",
                path.display(),
                rows.len(),
                measure.len()
            )));
        }
        for ((z, _), zm) in rows.iter().zip(measure.points()) {
            if (z - zm).abs() > 1e-12 * (1.0 + zm.abs()) {
                return Err(Error::Csv(format!("{}: z = {z} does not match atom {zm}", path.display())));
            }
        }
        Ok(TestFunction::GridValues { values: rows.into_iter().map(|(_, v)| v).collect() })
    }
}
