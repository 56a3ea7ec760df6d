use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_box, mean_std};
use crate::binning::{bin_samples, BinningOptions, FitOptions};
use crate::config::{parse_json, InitialConfig, ModelConfig, Source, TargetConfig, TargetKind};
use crate::density::{density_ratios, diagnostic, kde_fit_with, update_probability, DensityOptions, KdeModel};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::partition::{make_kmeans, make_regular_grid, Partition};
use crate::samples::{fit_box, Region, SampleSet};
use crate::target::{ExactCdf, TargetDistribution};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyPartition {
    #[default]
    Grid,
    Kmeans,
}

/// Reference values from the density method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub n: usize,
    pub trials: usize,
    /// Trial `t` draws its initial samples with `seed + t`.
    pub seed: u64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { n: 100_000, trials: 10, seed: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    /// Needs observed samples (`m` or a sample file) for the baseline.
    pub target: TargetConfig,
    pub n_grid: Vec<usize>,
    pub p_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub region_a: Region<f64>,
    /// Defaults to the image of `region_a` under the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_b: Option<Region<f64>>,
    #[serde(default)]
    pub partition: StudyPartition,
    #[serde(default = "default_kmeans_iter")]
    pub kmeans_max_iter: usize,
    #[serde(default)]
    pub baseline: BaselineSpec,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub density: DensityOptions,
    #[serde(default = "default_floor")]
    pub weight_floor: f64,
    /// Grid nodes per dimension used to compute the image of `region_a`.
    #[serde(default = "default_image_grid")]
    pub image_grid: usize,
}

fn default_trials() -> usize {
    20
}

fn default_kmeans_iter() -> usize {
    300
}

fn default_floor() -> f64 {
    1e-6
}

fn default_image_grid() -> usize {
    201
}

fn check_increasing(v: &[usize], pointer: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(pointer, "must not be empty"));
    }
    if v[0] == 0 {
        return Err(Error::config(format!("{pointer}/0"), "must be positive"));
    }
    for (i, w) in v.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::config(format!("{pointer}/{}", i + 1), "must be strictly increasing"));
        }
    }
    Ok(())
}

fn check_region(r: &Region<f64>, dim: usize, pointer: &str) -> Result<()> {
    if r.lower.len() != dim || r.upper.len() != dim {
        return Err(Error::config(pointer, format!("expected a box of dimension {dim}")));
    }
    if r.lower.iter().zip(&r.upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::config(pointer, "lower bounds must not exceed upper bounds"));
    }
    Ok(())
}

impl ConvergenceSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = parse_json(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks that need no model evaluation.
    pub fn validate(&self) -> Result<()> {
        check_increasing(&self.n_grid, "/n_grid")?;
        check_increasing(&self.p_grid, "/p_grid")?;
        if self.trials == 0 {
            return Err(Error::config("/trials", "trials must be at least 1"));
        }
        if self.baseline.trials == 0 {
            return Err(Error::config("/baseline/trials", "trials must be at least 1"));
        }
        if self.baseline.n < 2 {
            return Err(Error::config("/baseline/n", "need at least two samples"));
        }
        if self.target.kind != TargetKind::Samples && self.target.m.is_none() {
            return Err(Error::config("/target/m", "the baseline needs observed samples; set m"));
        }
        if matches!(self.model, ModelConfig::Pairs { .. }) {
            return Err(Error::config("/model/kind", "the study draws fresh samples; pairs are not supported"));
        }
        if self.partition == StudyPartition::Kmeans && self.p_grid[self.p_grid.len() - 1] > self.n_grid[0] {
            return Err(Error::config("/p_grid", "k-means needs at least p samples at every n"));
        }
        if !(self.weight_floor >= 0.0) {
            return Err(Error::config("/weight_floor", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineTrial {
    pub seed: u64,
    pub diagnostic: f64,
    pub violations: usize,
    pub p_obs_b: f64,
    pub p_update_a: f64,
    pub p_update_a_raw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    /// `P_obs(B)`: the r-weighted share of predicted samples in `B`, averaged
    /// over trials.
    pub p_obs_b: f64,
    /// `P_update(A)` with self-normalized ratios, averaged over trials.
    pub p_update_a: f64,
    /// `P_update(A)` as `(1/n) Σ r_i I(λ^i ∈ A)`.
    pub p_update_a_raw: f64,
    /// Share of observed samples in `B`.
    pub p_obs_b_observed: f64,
    /// From the exact target CDF, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_obs_b_exact: Option<f64>,
    pub binned_kde: bool,
    pub trials: Vec<BaselineTrial>,
}

/// Mass of the closed box `r` under an exact CDF, by inclusion-exclusion.
fn exact_mass(cdf: &dyn ExactCdf<f64>, r: &Region<f64>) -> f64 {
    let d = r.dim();
    let mut total = 0.0;
    let mut corner = vec![0.0; d];
    for mask in 0..(1usize << d) {
        let mut sign = 1.0;
        for k in 0..d {
            if mask >> k & 1 == 1 {
                corner[k] = r.upper[k];
            } else {
                corner[k] = r.lower[k];
                sign = -sign;
            }
        }
        total += sign * cdf.cdf(&corner);
    }
    total.clamp(0.0, 1.0)
}

/// Density-method reference values for `P_obs(B)` and `P_update(A)`.
///
/// Fails with [`Error::BaselineDiagnostic`] when any trial's diagnostic lies
/// outside `[0.8, 1.2]`.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline(
    source: &Source,
    observed: &SampleSet<f64>,
    exact: Option<&Arc<dyn ExactCdf<f64>>>,
    region_a: &Region<f64>,
    region_b: &Region<f64>,
    spec: &BaselineSpec,
    density: &DensityOptions,
) -> Result<Baseline> {
    let obs: KdeModel<f64> = kde_fit_with(observed, density.bandwidth, density.eval)?;
    let mut trials = Vec::with_capacity(spec.trials);
    let mut binned = obs.is_binned();
    for t in 0..spec.trials {
        let seed = spec.seed + t as u64;
        let (params, data) = source.draw(spec.n, seed)?;
        let pred = kde_fit_with(&data, density.bandwidth, density.eval)?;
        binned |= pred.is_binned();
        let (r, violations) = density_ratios(&obs, &pred, &data)?;
        let diag = diagnostic(&r)?;
        log::info!("baseline trial {t}: diagnostic {diag:.4}");
        if !(0.8..=1.2).contains(&diag) {
            return Err(Error::BaselineDiagnostic(diag));
        }
        let a = update_probability(region_a, &params, &r)?;
        let b = update_probability(region_b, &data, &r)?;
        trials.push(BaselineTrial {
            seed,
            diagnostic: diag,
            violations,
            p_obs_b: b.self_normalized,
            p_update_a: a.self_normalized,
            p_update_a_raw: a.raw,
        });
    }
    let avg = |f: fn(&BaselineTrial) -> f64| trials.iter().map(f).sum::<f64>() / trials.len() as f64;
    Ok(Baseline {
        n: spec.n,
        m: observed.len(),
        seed: spec.seed,
        p_obs_b: avg(|t| t.p_obs_b),
        p_update_a: avg(|t| t.p_update_a),
        p_update_a_raw: avg(|t| t.p_update_a_raw),
        p_obs_b_observed: region_b.count(observed) as f64 / observed.len() as f64,
        p_obs_b_exact: exact.filter(|c| c.dim() == region_b.dim()).map(|c| exact_mass(c.as_ref(), region_b)),
        binned_kde: binned,
        trials,
    })
}

/// One trial's estimates at one `(n, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialValues {
    /// `Σ w_k / p` over cells whose representative lies in `B`.
    pub p_b: f64,
    /// `Σ u_i` over samples with `Q(λ^i) ∈ B`.
    pub p_b_samples: f64,
    /// `Σ u_i` over samples with `λ^i ∈ A`.
    pub p_a: f64,
    /// Cells left after dropping empty ones.
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std: f64,
    /// Mean over trials of `|P − P_ref|`.
    pub mean_abs_error: f64,
    /// `|mean P − P_ref|`.
    pub abs_mean_error: f64,
}

impl Estimate {
    fn new(values: &[f64], reference: f64) -> Self {
        let (mean, std) = mean_std(values);
        let mean_abs_error = values.iter().map(|v| (v - reference).abs()).sum::<f64>() / values.len() as f64;
        Self { mean, std, mean_abs_error, abs_mean_error: (mean - reference).abs() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub n: usize,
    pub p: usize,
    pub b: Estimate,
    pub b_samples: Estimate,
    pub a: Estimate,
    pub trials: Vec<TrialValues>,
}

/// Values at every `(n, p)`: `values[i][j]` belongs to `n_grid[i]`,
/// `p_grid[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub name: String,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub spec: ConvergenceSpec,
    pub region_b: Region<f64>,
    pub baseline: Baseline,
    /// Row-major over `(n_grid, p_grid)`.
    pub cells: Vec<CellStats>,
    pub surfaces: Vec<Surface>,
}

impl ConvergenceResult {
    pub fn cell(&self, n: usize, p: usize) -> Option<&CellStats> {
        self.cells.iter().find(|c| c.n == n && c.p == p)
    }

    pub fn surface(&self, name: &str) -> Option<&Surface> {
        self.surfaces.iter().find(|s| s.name == name)
    }
}

fn study_partition(spec: &ConvergenceSpec, data: &SampleSet<f64>, p: usize, seed: u64) -> Result<(Partition<f64>, crate::samples::BoxScaler<f64>)> {
    let bbox = fit_box(data, spec.fit.padding)?;
    let partition = match spec.partition {
        StudyPartition::Grid => {
            let d = data.dim();
            let per = if d == 1 { p } else { ((p as f64).powf(1.0 / d as f64).round() as usize).max(1) };
            make_regular_grid(&bbox, &vec![per; d])?
        }
        StudyPartition::Kmeans => make_kmeans(data, p, seed, spec.kmeans_max_iter)?,
    };
    Ok((partition, bbox))
}

fn run_trial(
    spec: &ConvergenceSpec,
    source: &Source,
    target: &TargetDistribution<f64>,
    region_b: &Region<f64>,
    trial: usize,
) -> Result<Vec<TrialValues>> {
    let seed = spec.seed + trial as u64;
    let n_max = spec.n_grid[spec.n_grid.len() - 1];
    let (params_all, data_all) = source.draw(n_max, seed)?;
    let opts = BinningOptions { weight_floor: spec.weight_floor, fit: spec.fit.clone(), ..Default::default() };
    let mut out = Vec::with_capacity(spec.n_grid.len() * spec.p_grid.len());
    for &n in &spec.n_grid {
        let params = params_all.prefix(n);
        let data = data_all.prefix(n);
        for &p in &spec.p_grid {
            let (partition, bbox) = study_partition(spec, &data, p, seed)?;
            let sol = bin_samples(&params, &data, &partition, &bbox, target, &opts, true)?;
            let w = sol.cell_weights.as_slice();
            let cells = w.len() as f64;
            let reps = sol.partition.reps();
            let p_b: f64 = (0..w.len()).filter(|&k| region_b.contains(reps.point(k))).map(|k| w[k] / cells).sum();
            let u = sol.sample_weights.as_slice();
            let p_b_samples: f64 = (0..n).filter(|&i| region_b.contains(data.point(i))).map(|i| u[i]).sum();
            let p_a: f64 = (0..n).filter(|&i| spec.region_a.contains(params.point(i))).map(|i| u[i]).sum();
            out.push(TrialValues {
                p_b: p_b.clamp(0.0, 1.0),
                p_b_samples: p_b_samples.clamp(0.0, 1.0),
                p_a: p_a.clamp(0.0, 1.0),
                cells: w.len(),
            });
        }
    }
    log::info!("trial {trial} done");
    Ok(out)
}

/// Runs the baseline and every trial, then aggregates.
pub fn run_convergence(spec: &ConvergenceSpec) -> Result<ConvergenceResult> {
    spec.validate()?;
    let source = spec.model.resolve(spec.initial.as_ref(), "")?;
    let resolved = spec.target.resolve("/target")?;
    let Source::Model { model, sampler } = &source else {
        return Err(Error::config("/model/kind", "the study draws fresh samples; pairs are not supported"));
    };
    check_region(&spec.region_a, sampler.dim(), "/region_a")?;
    let region_b = match &spec.region_b {
        Some(b) => {
            check_region(b, model.data_dim(), "/region_b")?;
            b.clone()
        }
        None => image_box(model.as_ref(), &spec.region_a, spec.image_grid)?,
    };
    let observed = resolved.observed.as_ref().expect("validated: observed samples present");
    if observed.dim() != model.data_dim() {
        return Err(Error::config("/target", format!("target has dimension {}, data has {}", observed.dim(), model.data_dim())));
    }
    let baseline = run_baseline(
        &source,
        observed,
        resolved.exact.as_ref(),
        &spec.region_a,
        &region_b,
        &spec.baseline,
        &spec.density,
    )?;
    log::info!("baseline: P_obs(B) = {:.5}, P_update(A) = {:.5}", baseline.p_obs_b, baseline.p_update_a);

    let per_trial: Vec<Vec<TrialValues>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, &source, &resolved.target, &region_b, t))
        .collect::<Result<_>>()?;

    let np = spec.p_grid.len();
    let mut cells = Vec::with_capacity(spec.n_grid.len() * np);
    for (i, &n) in spec.n_grid.iter().enumerate() {
        for (j, &p) in spec.p_grid.iter().enumerate() {
            let trials: Vec<TrialValues> = per_trial.iter().map(|t| t[i * np + j].clone()).collect();
            let col = |f: fn(&TrialValues) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
            cells.push(CellStats {
                n,
                p,
                b: Estimate::new(&col(|t| t.p_b), baseline.p_obs_b),
                b_samples: Estimate::new(&col(|t| t.p_b_samples), baseline.p_obs_b),
                a: Estimate::new(&col(|t| t.p_a), baseline.p_update_a),
                trials,
            });
        }
    }
    let surface = |name: &str, f: fn(&CellStats) -> f64| Surface {
        name: name.to_string(),
        values: cells.chunks(np).map(|row| row.iter().map(f).collect()).collect(),
    };
    let surfaces = vec![
        surface("error_b", |c| c.b.mean_abs_error),
        surface("mean_error_b", |c| c.b.abs_mean_error),
        surface("std_b", |c| c.b.std),
        surface("error_b_samples", |c| c.b_samples.mean_abs_error),
        surface("std_b_samples", |c| c.b_samples.std),
        surface("error_a", |c| c.a.mean_abs_error),
        surface("mean_error_a", |c| c.a.abs_mean_error),
        surface("std_a", |c| c.a.std),
        surface("mean_b", |c| c.b.mean),
        surface("mean_a", |c| c.a.mean),
    ];
    Ok(ConvergenceResult { spec: spec.clone(), region_b, baseline, cells, surfaces })
}

/// Writes `result.json` and one `surface_<name>.csv` per surface.
pub fn write_convergence(result: &ConvergenceResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(result)?;
    json.push('\n');
    fs::write(dir.join("result.json"), json)?;
    for s in &result.surfaces {
        let mut text = String::from("n");
        for p in &result.spec.p_grid {
            text.push_str(&format!(",{p}"));
        }
        text.push('\n');
        for (n, row) in result.spec.n_grid.iter().zip(&s.values) {
            text.push_str(&n.to_string());
            for v in row {
                text.push(',');
                text.push_str(&fmt_f64(*v));
            }
            text.push('\n');
        }
        fs::write(dir.join(format!("surface_{}.csv", s.name)), text)?;
    }
    Ok(())
}
