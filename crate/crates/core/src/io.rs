//! CSV sample files: a header `x1,...,xd` (or `q1,...,qd`) and one sample per
//! row. Values are written with 17 significant digits so a save/load round
//! trip is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::samples::SampleSet;

/// `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_header(path: &str, header: &csv::StringRecord) -> Result<usize> {
    let bad = |msg: String| Error::Parse { path: path.to_string(), line: 1, msg };
    if header.is_empty() {
        return Err(bad("missing header".into()));
    }
    let first = header.get(0).unwrap_or_default();
    let prefix = first.chars().next().ok_or_else(|| bad("empty column name".into()))?;
    for (k, name) in header.iter().enumerate() {
        if name.trim() != format!("{prefix}{}", k + 1) {
            return Err(bad(format!("expected column {prefix}{}, found {name:?}", k + 1)));
        }
    }
    Ok(header.len())
}

/// Reads a sample file. An empty body is an error.
pub fn read_samples(path: impl AsRef<Path>) -> Result<SampleSet<f64>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let dim = parse_header(&name, rdr.headers()?)?;
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != dim {
            return Err(Error::Parse { path: name, line, msg: format!("expected {dim} fields, found {}", rec.len()) });
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: name.clone(),
                line,
                msg: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { path: name, line, msg: format!("non-finite value {field:?}") });
            }
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(Error::EmptySamples);
    }
    SampleSet::from_flat(dim, data)
}

/// Writes `samples` with column names `{prefix}1..{prefix}d`.
pub fn write_samples(path: impl AsRef<Path>, samples: &SampleSet<f64>, prefix: char) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (1..=samples.dim()).map(|k| format!("{prefix}{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for p in samples.iter() {
        let row: Vec<String> = p.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Row-aligned parameter and data files.
pub fn load_pairs(param_csv: impl AsRef<Path>, data_csv: impl AsRef<Path>) -> Result<(SampleSet<f64>, SampleSet<f64>)> {
    let params = read_samples(param_csv)?;
    let data = read_samples(data_csv)?;
    if params.len() != data.len() {
        return Err(Error::RowMismatch { params: params.len(), data: data.len() });
    }
    Ok((params, data))
}
