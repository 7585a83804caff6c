//! CSV ingestion and the table type used for CSV output.

use std::path::Path;

use trapdet_core::fit::{CurveLabel, MeasuredCurve};

use crate::error::{CliError, Result};

// exact decimal scaling: divide into SI, multiply out of it
const PER_UA: f64 = 1e6;

/// Rows of named columns. Numbers are printed in shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        // writing into memory cannot fail
        w.write_record(&self.headers).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Shortest round-trip text; exponent form for very small or large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn read_rows(path: &Path, required: &[&str], optional: &[&str]) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let what = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("{what}: {e}")))?;
    let headers = reader.headers().map_err(|e| CliError::Validation(format!("{what}: {e}")))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let expected: Vec<&str> = required.iter().chain(optional).copied().collect();
    if names.len() < required.len() || names.len() > expected.len() || names.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(CliError::Validation(format!("{what}: header must be `{}` (optional trailing: {optional:?}), found `{}`", required.join(","), names.join(","))));
    }
    let present: Vec<bool> = (0..expected.len()).map(|i| i < names.len()).collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Validation(format!("{what}: {e}")))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| CliError::Validation(format!("{what}: row {}: `{f}` is not a number", line + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((rows, present))
}

/// Reads `bias_uA,rate_cps[,counts]`.
pub fn read_measured(path: &Path, label: CurveLabel) -> Result<MeasuredCurve> {
    let (rows, present) = read_rows(path, &["bias_uA", "rate_cps"], &["counts"])?;
    let samples = rows.iter().map(|r| (r[0] / PER_UA, r[1])).collect();
    let counts = present[2].then(|| rows.iter().map(|r| r[2]).collect());
    let curve = MeasuredCurve { samples, counts, label };
    curve.validate().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(curve)
}

pub fn write_measured(curve: &MeasuredCurve) -> String {
    let mut t = Table::new(if curve.counts.is_some() { vec!["bias_uA", "rate_cps", "counts"] } else { vec!["bias_uA", "rate_cps"] });
    for (i, &(b, r)) in curve.samples.iter().enumerate() {
        let mut row = vec![num(b * PER_UA), num(r)];
        if let Some(c) = &curve.counts {
            row.push(num(c[i]));
        }
        t.push(row);
    }
    t.to_csv()
}

/// Reads `wavelength_nm,n,k` into `(m, n, k)` rows.
pub fn read_index_table(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let (rows, _) = read_rows(path, &["wavelength_nm", "n", "k"], &[])?;
    Ok(rows.iter().map(|r| (r[0] / 1e9, r[1], r[2])).collect())
}

/// Reads `bias_uA,sde` into amperes and efficiencies.
pub fn read_sde_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (rows, _) = read_rows(path, &["bias_uA", "sde"], &[])?;
    Ok((rows.iter().map(|r| r[0] / PER_UA).collect(), rows.iter().map(|r| r[1]).collect()))
}
