//! CSV input and output of datasets.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use gdfcv_core::{Dataset, Family};
use nalgebra::{DMatrix, DVector};

/// Reads a dataset whose covariates are every column except `response`, in
/// file order. Row numbers in errors count data rows from 1.
pub fn ingest_csv(path: &Path, response: &str, family: Family) -> Result<Dataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_csv(file, response, family).with_context(|| format!("reading {}", path.display()))
}

pub fn read_csv(reader: impl Read, response: &str, family: Family) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().context("missing header row")?.clone();
    let target = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| anyhow!("response column {response:?} not found in header"))?;
    let covariates: Vec<usize> = (0..headers.len()).filter(|&c| c != target).collect();
    if covariates.is_empty() {
        bail!("no covariate columns besides {response:?}");
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.with_context(|| format!("row {row}"))?;
        let cell = |c: usize| -> Result<f64> {
            let name = &headers[c];
            let text = record.get(c).unwrap_or("");
            if text.is_empty() || text.eq_ignore_ascii_case("na") {
                bail!("missing value at row {row}, column {name:?}");
            }
            let v: f64 = text
                .parse()
                .map_err(|_| anyhow!("non-numeric value {text:?} at row {row}, column {name:?}"))?;
            if !v.is_finite() {
                bail!("non-finite value at row {row}, column {name:?}");
            }
            Ok(v)
        };
        let y = cell(target)?;
        if family == Family::Bernoulli && y != 0.0 && y != 1.0 {
            bail!("response {y} at row {row} is not 0 or 1");
        }
        ys.push(y);
        for &c in &covariates {
            xs.push(cell(c)?);
        }
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, covariates.len(), &xs);
    Ok(Dataset::new(x, DVector::from_vec(ys), family)?)
}

/// Writes covariates `x1..xd` followed by `y`.
pub fn write_csv(data: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=data.d()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.x().row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.y()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
