use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::binning::{bin_samples, pushforward_binned, solve_naive, BinnedSolution, BinningOptions, FitOptions};
use crate::config::{parse_json, InitialConfig, ModelConfig, TargetConfig};
use crate::density::{solve_density, DensityOptions};
use crate::edf::{l2_distance, sup_distance, sup_distance_step_vs_continuous, DistributionFunction, StepCdf1d};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::partition::{make_kmeans, make_regular_grid};
use crate::samples::{fit_box, BoxScaler, Region, SampleSet, WeightVector, WeightedEdf};
use crate::target::{ExactCdf, TargetDistribution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    /// Needs observed samples (`m` or a sample file) for the density row.
    pub target: TargetConfig,
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmeans_seed: Option<u64>,
    #[serde(default = "default_kmeans_iter")]
    pub kmeans_max_iter: usize,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub density: DensityOptions,
    #[serde(default = "default_floor")]
    pub weight_floor: f64,
    /// Midpoint cells per dimension for L² distances.
    #[serde(default = "default_grid")]
    pub grid_per_dim: usize,
    #[serde(default = "default_naive_max")]
    pub naive_max_n: usize,
}

fn default_kmeans_iter() -> usize {
    300
}

fn default_floor() -> f64 {
    1e-6
}

fn default_grid() -> usize {
    4096
}

fn default_naive_max() -> usize {
    5000
}

impl CompareSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = parse_json(text)?;
        if spec.n == 0 {
            return Err(Error::config("/n", "n must be positive"));
        }
        if spec.p == 0 {
            return Err(Error::config("/p", "p must be positive"));
        }
        if spec.grid_per_dim == 0 {
            return Err(Error::config("/grid_per_dim", "must be positive"));
        }
        Ok(spec)
    }
}

/// One method's push-forward against the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// L² distance to the target the QP fits, over the data box.
    pub l2: f64,
    /// Sup distance to the target the QP fits.
    pub sup: f64,
    /// Distances to the exact target CDF, when there is one.
    pub l2_exact: Option<f64>,
    pub sup_exact: Option<f64>,
    /// Binning only: distances of the w-weighted EDF over representatives.
    pub l2_reps: Option<f64>,
    pub sup_reps: Option<f64>,
    /// Population variance of the weights rescaled to mean one.
    pub weight_variance: f64,
    pub diagnostic: Option<f64>,
    pub cells: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: usize,
    pub p: usize,
    pub data_box: Region<f64>,
    pub rows: Vec<MethodRow>,
}

impl Comparison {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Sup distance between two 1-D step functions over the real line.
fn sup_step_vs_step(a: &StepCdf1d<f64>, b: &StepCdf1d<f64>) -> f64 {
    // Both are constant between consecutive jumps of either, so checking
    // every jump location of both covers every piece.
    a.jumps()
        .chain(b.jumps())
        .map(|(x, _, _)| (a.eval_at(x) - b.eval_at(x)).abs())
        .fold(0.0, f64::max)
}

/// A 1-D step view when possible, for fast evaluation.
enum Cdf {
    Step(StepCdf1d<f64>),
    General(WeightedEdf<f64>),
}

impl Cdf {
    fn new(edf: &WeightedEdf<f64>) -> Result<Self> {
        Ok(if edf.dim() == 1 { Cdf::Step(StepCdf1d::from_wedf(edf)?) } else { Cdf::General(edf.clone()) })
    }

    fn as_dyn(&self) -> &dyn DistributionFunction<f64> {
        match self {
            Cdf::Step(s) => s,
            Cdf::General(g) => g,
        }
    }
}

struct Scorer<'a> {
    target_cdf: Option<Cdf>,
    exact: Option<&'a Arc<dyn ExactCdf<f64>>>,
    bbox: BoxScaler<f64>,
    grid: usize,
}

impl<'a> Scorer<'a> {
    fn new(
        target: &'a TargetDistribution<f64>,
        exact: Option<&'a Arc<dyn ExactCdf<f64>>>,
        bbox: BoxScaler<f64>,
        grid: usize,
    ) -> Result<Self> {
        let target_cdf = match target {
            TargetDistribution::Empirical(s) => Some(Cdf::new(&WeightedEdf::unweighted(s.clone())?)?),
            TargetDistribution::Exact(_) => None,
        };
        Ok(Self { target_cdf, exact, bbox, grid })
    }

    /// `(l2, sup)` to the QP's target and to the exact CDF.
    fn score(&self, edf: &WeightedEdf<f64>) -> Result<(f64, f64, Option<f64>, Option<f64>)> {
        let f = Cdf::new(edf)?;
        let (l2, sup) = match (&f, &self.target_cdf) {
            (Cdf::Step(a), Some(Cdf::Step(b))) => (l2_distance(a, b, &self.bbox, self.grid)?, sup_step_vs_step(a, b)),
            (_, Some(t)) => (
                l2_distance(f.as_dyn(), t.as_dyn(), &self.bbox, self.grid)?,
                sup_distance(f.as_dyn(), t.as_dyn(), &self.bbox, self.grid)?,
            ),
            (_, None) => self.exact_pair(&f)?,
        };
        let (l2_exact, sup_exact) = match self.exact {
            Some(_) => {
                let (a, b) = self.exact_pair(&f)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        Ok((l2, sup, l2_exact, sup_exact))
    }

    fn exact_pair(&self, f: &Cdf) -> Result<(f64, f64)> {
        let exact = self.exact.expect("exact CDF present");
        let g = TargetDistribution::Exact(exact.clone());
        let l2 = l2_distance(f.as_dyn(), &g, &self.bbox, self.grid)?;
        let sup = match f {
            Cdf::Step(s) => sup_distance_step_vs_continuous(s, |x| exact.cdf(&[x])),
            Cdf::General(_) => sup_distance(f.as_dyn(), &g, &self.bbox, self.grid)?,
        };
        Ok((l2, sup))
    }
}

fn variance(w: &WeightVector<f64>) -> f64 {
    w.variance()
}

/// Settings for [`compare_on`].
#[derive(Clone, Debug, PartialEq)]
pub struct CompareOptions {
    pub p: usize,
    pub kmeans_seed: u64,
    pub kmeans_max_iter: usize,
    pub fit: FitOptions,
    pub density: DensityOptions,
    pub weight_floor: f64,
    pub grid_per_dim: usize,
    /// The naive row is skipped above this many samples; its QP is dense in n.
    pub naive_max_n: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            p: 35,
            kmeans_seed: 0,
            kmeans_max_iter: default_kmeans_iter(),
            fit: FitOptions::default(),
            density: DensityOptions::default(),
            weight_floor: default_floor(),
            grid_per_dim: default_grid(),
            naive_max_n: default_naive_max(),
        }
    }
}

/// Runs every method on one shared set of `(λ, q)` samples.
///
/// `observed` feeds the density row, which is omitted without it.
pub fn compare_on(
    params: &SampleSet<f64>,
    data: &SampleSet<f64>,
    target: &TargetDistribution<f64>,
    exact: Option<&Arc<dyn ExactCdf<f64>>>,
    observed: Option<&SampleSet<f64>>,
    opts: &CompareOptions,
) -> Result<Comparison> {
    let CompareOptions { p, kmeans_seed, kmeans_max_iter, ref fit, ref density, weight_floor, grid_per_dim, naive_max_n } = *opts;
    let bbox = fit_box(data, fit.padding)?;
    let scorer = Scorer::new(target, exact, bbox.clone(), grid_per_dim)?;
    let mut rows = Vec::new();
    let row = |method: &str, edf: &WeightedEdf<f64>, weight_variance: f64| -> Result<MethodRow> {
        let (l2, sup, l2_exact, sup_exact) = scorer.score(edf)?;
        Ok(MethodRow {
            method: method.to_string(),
            l2,
            sup,
            l2_exact,
            sup_exact,
            l2_reps: None,
            sup_reps: None,
            weight_variance,
            diagnostic: None,
            cells: None,
        })
    };

    rows.push(row("unweighted", &WeightedEdf::unweighted(data.clone())?, 0.0)?);

    if data.len() <= naive_max_n {
        let naive = solve_naive(params, data, target, None, fit)?;
        rows.push(row("naive", &naive.pushforward(), variance(&naive.weights))?);
    } else {
        log::info!("skipping the naive method at n = {} (naive_max_n = {naive_max_n})", data.len());
    }

    let opts = BinningOptions { weight_floor, fit: fit.clone(), ..Default::default() };
    let binned_row = |name: &str, sol: &BinnedSolution<f64>| -> Result<MethodRow> {
        let mut r = row(name, &sol.pushforward_samples(), variance(&sol.sample_weights))?;
        let (l2, sup, _, _) = scorer.score(&pushforward_binned(sol, &sol.partition)?)?;
        r.l2_reps = Some(l2);
        r.sup_reps = Some(sup);
        r.cells = Some(sol.p());
        Ok(r)
    };
    let d = data.dim();
    let per = if d == 1 { p } else { ((p as f64).powf(1.0 / d as f64).round() as usize).max(1) };
    let grid = make_regular_grid(&bbox, &vec![per; d])?;
    let sol = bin_samples(params, data, &grid, &bbox, target, &opts, true)?;
    rows.push(binned_row("binning-grid", &sol)?);
    let km = make_kmeans(data, p, kmeans_seed, kmeans_max_iter)?;
    let sol = bin_samples(params, data, &km, &bbox, target, &opts, true)?;
    rows.push(binned_row("binning-kmeans", &sol)?);

    if let Some(obs) = observed {
        let sol = solve_density(params, data, obs, density)?;
        let mut r = match sol.weights() {
            Ok(w) => row("density", &WeightedEdf::new(data.clone(), w.clone())?, variance(&w))?,
            Err(e) => {
                log::warn!("density weights unusable: {e}");
                MethodRow {
                    method: "density".into(),
                    l2: f64::NAN,
                    sup: f64::NAN,
                    l2_exact: None,
                    sup_exact: None,
                    l2_reps: None,
                    sup_reps: None,
                    weight_variance: f64::NAN,
                    diagnostic: None,
                    cells: None,
                }
            }
        };
        r.diagnostic = Some(sol.diagnostic);
        rows.push(r);
    }
    Ok(Comparison {
        n: data.len(),
        p,
        data_box: Region::new(bbox.lower().to_vec(), bbox.upper().to_vec())?,
        rows,
    })
}

/// Resolves the configs, draws `n` samples under `seed` and compares.
pub fn compare_methods(spec: &CompareSpec) -> Result<Comparison> {
    let source = spec.model.resolve(spec.initial.as_ref(), "")?;
    let resolved = spec.target.resolve("/target")?;
    if resolved.target.dim() != source.data_dim() {
        return Err(Error::config(
            "/target",
            format!("target has dimension {}, data has {}", resolved.target.dim(), source.data_dim()),
        ));
    }
    let (params, data) = source.draw(spec.n, spec.seed)?;
    let opts = CompareOptions {
        p: spec.p,
        kmeans_seed: spec.kmeans_seed.unwrap_or(spec.seed),
        kmeans_max_iter: spec.kmeans_max_iter,
        fit: spec.fit.clone(),
        density: spec.density.clone(),
        weight_floor: spec.weight_floor,
        grid_per_dim: spec.grid_per_dim,
        naive_max_n: spec.naive_max_n,
    };
    compare_on(&params, &data, &resolved.target, resolved.exact.as_ref(), resolved.observed.as_ref(), &opts)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes `comparison.csv` and `comparison.json`.
pub fn write_comparison(c: &Comparison, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("method,l2,sup,l2_exact,sup_exact,l2_reps,sup_reps,weight_variance,diagnostic,cells\n");
    for r in &c.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            fmt_f64(r.l2),
            fmt_f64(r.sup),
            opt(r.l2_exact),
            opt(r.sup_exact),
            opt(r.l2_reps),
            opt(r.sup_reps),
            fmt_f64(r.weight_variance),
            opt(r.diagnostic),
            r.cells.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    fs::write(dir.join("comparison.csv"), csv)?;
    let mut json = serde_json::to_string_pretty(c)?;
    json.push('\n');
    fs::write(dir.join("comparison.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{uniform_sampler, UniformCdf};

    #[test]
    fn step_sup_by_hand() {
        let a = StepCdf1d::from_wedf(&WeightedEdf::unweighted(SampleSet::from_scalars(&[0.0, 1.0]).unwrap()).unwrap()).unwrap();
        let b = StepCdf1d::from_wedf(&WeightedEdf::unweighted(SampleSet::from_scalars(&[0.5]).unwrap()).unwrap()).unwrap();
        // on [0.5, 1): a = 0.5, b = 1
        assert_eq!(sup_step_vs_step(&a, &b), 0.5);
        assert_eq!(sup_step_vs_step(&a, &a), 0.0);
    }

    #[test]
    fn identical_target_gives_zero_distances() {
        let bbox = BoxScaler::new(vec![0.0], vec![1.0]).unwrap();
        let data = uniform_sampler(&bbox, 400, 3).unwrap();
        let target = TargetDistribution::Empirical(data.clone());
        let opts = CompareOptions { p: 10, kmeans_seed: 1, grid_per_dim: 2048, ..Default::default() };
        let c = compare_on(&data, &data, &target, None, Some(&data), &opts).unwrap();
        for r in &c.rows {
            match r.method.as_str() {
                "unweighted" | "naive" | "density" => {
                    assert!(r.l2 < 1e-6 && r.sup < 1e-6, "{r:?}");
                    assert!(r.weight_variance < 1e-10, "{r:?}");
                }
                _ => assert!(r.l2 < 0.02, "{r:?}"),
            }
        }
        assert_eq!(c.row("density").unwrap().diagnostic, Some(1.0));
    }

    #[test]
    fn exact_distances_reported() {
        let bbox = BoxScaler::new(vec![0.0], vec![1.0]).unwrap();
        let data = uniform_sampler(&bbox, 300, 8).unwrap();
        let exact: Arc<dyn ExactCdf<f64>> = Arc::new(UniformCdf::new(vec![0.0], vec![1.0]).unwrap());
        let target = TargetDistribution::Exact(exact.clone());
        let opts = CompareOptions { p: 6, kmeans_seed: 1, grid_per_dim: 1024, ..Default::default() };
        let c = compare_on(&data, &data, &target, Some(&exact), None, &opts).unwrap();
        let skipped = compare_on(&data, &data, &target, Some(&exact), None, &CompareOptions { naive_max_n: 100, ..opts }).unwrap();
        assert!(skipped.row("naive").is_none());
        assert_eq!(c.rows.len(), 4);
        for r in &c.rows {
            assert_eq!(Some(r.sup), r.sup_exact);
            assert!(r.sup < 0.1);
        }
        let naive = c.row("naive").unwrap();
        assert!(naive.l2 <= c.row("unweighted").unwrap().l2 + 1e-4);
    }
}
