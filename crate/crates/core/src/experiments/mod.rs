//! Convergence studies and method comparisons, written out as CSV and JSON.

mod compare;
mod convergence;

pub use compare::{compare_methods, compare_on, write_comparison, CompareOptions, CompareSpec, Comparison, MethodRow};
pub use convergence::{
    run_baseline, run_convergence, write_convergence, Baseline, BaselineSpec, BaselineTrial, CellStats, ConvergenceResult,
    ConvergenceSpec, Estimate, StudyPartition, Surface, TrialValues,
};

use crate::error::Result;
use crate::models::QoiMap;
use crate::samples::{Region, SampleSet};

/// Component-wise bounds of `model` over `region`, from a tensor grid with
/// `per_dim` nodes per dimension (corners included).
pub fn image_box(model: &dyn QoiMap, region: &Region<f64>, per_dim: usize) -> Result<Region<f64>> {
    let d = region.dim();
    let per_dim = per_dim.max(2);
    let total = per_dim.pow(d as u32);
    let mut pts = Vec::with_capacity(total * d);
    for idx in 0..total {
        let mut rem = idx;
        for k in 0..d {
            let j = rem % per_dim;
            rem /= per_dim;
            let t = j as f64 / (per_dim - 1) as f64;
            pts.push(region.lower[k] + t * (region.upper[k] - region.lower[k]));
        }
    }
    let data = model.push_forward(&SampleSet::from_flat(d, pts)?)?;
    let mut lower = vec![f64::INFINITY; data.dim()];
    let mut upper = vec![f64::NEG_INFINITY; data.dim()];
    for q in data.iter() {
        for k in 0..q.len() {
            lower[k] = lower[k].min(q[k]);
            upper[k] = upper[k].max(q[k]);
        }
    }
    Region::new(lower, upper)
}

/// Mean and sample standard deviation (zero for a single value).
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
