//! Result files. Everything here is a pure function of its inputs, so
//! repeated runs write identical bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use dci_core::edf::{DistributionFunction, StepCdf1d};
use dci_core::io::fmt_f64;
use dci_core::{BoxScaler, Result, SampleSet, WeightedEdf};
use serde_json::Value;

/// `index,x1..,q1..,weight,mass`; an empty `mass` field marks a weight that
/// has no probability interpretation.
pub fn write_weights(
    path: &Path,
    params: &SampleSet<f64>,
    data: &SampleSet<f64>,
    weight: &[f64],
    mass: Option<&[f64]>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["index".to_string()];
    header.extend((1..=params.dim()).map(|k| format!("x{k}")));
    header.extend((1..=data.dim()).map(|k| format!("q{k}")));
    header.push("weight".into());
    header.push("mass".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..params.len() {
        let mut row = vec![i.to_string()];
        row.extend(params.point(i).iter().map(|&v| fmt_f64(v)));
        row.extend(data.point(i).iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(weight[i]));
        row.push(mass.map(|m| fmt_f64(m[i])).unwrap_or_default());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// A distribution function to tabulate, with a fast path for 1-D step
/// functions.
pub enum Column {
    Step(StepCdf1d<f64>),
    Edf(WeightedEdf<f64>),
    Other(Box<dyn DistributionFunction<f64>>),
}

impl Column {
    pub fn edf(edf: WeightedEdf<f64>) -> Result<Self> {
        Ok(if edf.dim() == 1 { Column::Step(StepCdf1d::from_wedf(&edf)?) } else { Column::Edf(edf) })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Column::Step(s) => s.eval_at(x[0]),
            Column::Edf(e) => e.eval(x),
            Column::Other(f) => f.eval(x),
        }
    }
}

/// Evaluates each column on a tensor grid of `per_dim` nodes per dimension
/// spanning `bbox`, first dimension fastest.
pub fn write_table(path: &Path, bbox: &BoxScaler<f64>, per_dim: usize, columns: &[(&str, Column)]) -> Result<()> {
    let d = bbox.dim();
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = (1..=d).map(|k| format!("q{k}")).collect();
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    writeln!(w, "{}", header.join(","))?;
    let total = per_dim.pow(d as u32);
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut rem = idx;
        for k in 0..d {
            let j = rem % per_dim;
            rem /= per_dim;
            x[k] = bbox.lower()[k] + bbox.width(k) * j as f64 / (per_dim - 1) as f64;
        }
        let mut row: Vec<String> = x.iter().map(|&v| fmt_f64(v)).collect();
        row.extend(columns.iter().map(|(_, c)| fmt_f64(c.eval(&x))));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
