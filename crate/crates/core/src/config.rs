//! JSON configuration: models, initial distributions and targets, resolved
//! into live objects. Every error carries a JSON pointer to the offending key.

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binning::{BinningOptions, FitOptions, MinFill};
use crate::density::DensityOptions;
use crate::error::{Error, Result};
use crate::io::{load_pairs, read_samples};
use crate::models::{HeatRod, HeatRodParams, IdentityMap, MixtureOfUniforms, NormalCdf, QoiMap, Sampler, UniformBox, UniformCdf};
use crate::samples::{BoxScaler, Region, SampleSet};
use crate::target::{ExactCdf, TargetDistribution};

/// Parses JSON, reporting the location of any failure as a JSON pointer.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut pointer = pointer_of(e.path());
        if pointer.is_empty() {
            pointer.push('/');
        }
        Error::config(pointer, e.into_inner().to_string())
    })
}

fn parse_value<T: DeserializeOwned>(value: &serde_json::Value, base: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = format!("{base}{}", pointer_of(e.path()));
        Error::config(pointer, e.into_inner().to_string())
    })
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { .. } | Segment::Unknown => {}
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    HeatRod {
        #[serde(default)]
        params: HeatRodParams,
    },
    Identity {
        dim: usize,
    },
    /// Precomputed `(λ, q)` pairs in two row-aligned CSV files.
    Pairs {
        params_csv: PathBuf,
        data_csv: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Normal,
    Uniform,
    Mixture,
    Samples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalParams {
    mu: f64,
    sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformParams {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureParams {
    /// `[weight, lo, hi]` per component.
    components: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplesParams {
    path: PathBuf,
}

/// The observed distribution.
///
/// `kind` selects the family and `params` its parameters. With `m` set, `m`
/// observed samples are drawn under `seed` and the QP fits their EDF;
/// otherwise the QP uses the exact CDF. `samples` reads observed samples from
/// `params.path`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub kind: TargetKind,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// A target with everything derived from it.
pub struct ResolvedTarget {
    /// What the QP fits.
    pub target: TargetDistribution<f64>,
    pub exact: Option<Arc<dyn ExactCdf<f64>>>,
    pub observed: Option<SampleSet<f64>>,
}

impl TargetConfig {
    pub fn resolve(&self, base: &str) -> Result<ResolvedTarget> {
        let params = format!("{base}/params");
        let (exact, sampler): (Option<Arc<dyn ExactCdf<f64>>>, Option<Arc<dyn Sampler>>) = match self.kind {
            TargetKind::Normal => {
                let p: NormalParams = parse_value(&self.params, &params)?;
                let n = Arc::new(NormalCdf::new(p.mu, p.sigma).map_err(|e| Error::config(&params, e.to_string()))?);
                (Some(n.clone()), Some(n))
            }
            TargetKind::Uniform => {
                let p: UniformParams = parse_value(&self.params, &params)?;
                let u = UniformCdf::new(p.lower.clone(), p.upper.clone()).map_err(|e| Error::config(&params, e.to_string()))?;
                let b = BoxScaler::new(p.lower, p.upper)?;
                (Some(Arc::new(u)), Some(Arc::new(UniformBox(b))))
            }
            TargetKind::Mixture => {
                let p: MixtureParams = parse_value(&self.params, &params)?;
                let m = Arc::new(
                    MixtureOfUniforms::new(p.components.iter().map(|c| (c[0], c[1], c[2])).collect())
                        .map_err(|e| Error::config(format!("{params}/components"), e.to_string()))?,
                );
                (Some(m.clone()), Some(m))
            }
            TargetKind::Samples => (None, None),
        };
        let observed = match (self.kind, self.m, sampler) {
            (TargetKind::Samples, _, _) => {
                let p: SamplesParams = parse_value(&self.params, &params)?;
                Some(read_samples(&p.path).map_err(|e| Error::config(format!("{params}/path"), e.to_string()))?)
            }
            (_, Some(0), _) => return Err(Error::config(format!("{base}/m"), "m must be positive")),
            (_, Some(m), Some(s)) => Some(s.sample(&mut ChaCha8Rng::seed_from_u64(self.seed), m)?),
            _ => None,
        };
        let target = match (&observed, &exact) {
            (Some(o), _) => TargetDistribution::Empirical(o.clone()),
            (None, Some(c)) => TargetDistribution::Exact(c.clone()),
            (None, None) => unreachable!("samples targets always carry observations"),
        };
        Ok(ResolvedTarget { target, exact, observed })
    }
}

/// Where samples come from.
pub enum Source {
    Model { model: Arc<dyn QoiMap>, sampler: Arc<dyn Sampler> },
    Pairs { params: SampleSet<f64>, data: SampleSet<f64> },
}

impl ModelConfig {
    pub fn resolve(&self, initial: Option<&InitialConfig>, base: &str) -> Result<Source> {
        let model: Arc<dyn QoiMap> = match self {
            ModelConfig::HeatRod { params } => {
                Arc::new(HeatRod::new(params.clone()).map_err(|e| Error::config(format!("{base}/model/params"), e.to_string()))?)
            }
            ModelConfig::Identity { dim } => {
                if *dim == 0 {
                    return Err(Error::config(format!("{base}/model/dim"), "dim must be positive"));
                }
                Arc::new(IdentityMap { dim: *dim })
            }
            ModelConfig::Pairs { params_csv, data_csv } => {
                let (params, data) =
                    load_pairs(params_csv, data_csv).map_err(|e| Error::config(format!("{base}/model"), e.to_string()))?;
                return Ok(Source::Pairs { params, data });
            }
        };
        let bbox = match (initial, self) {
            (Some(InitialConfig::Uniform { lower, upper }), _) => BoxScaler::new(lower.clone(), upper.clone())
                .map_err(|e| Error::config(format!("{base}/initial"), e.to_string()))?,
            (None, ModelConfig::HeatRod { params }) => params.lambda_box(),
            (None, _) => return Err(Error::config(format!("{base}/initial"), "an initial distribution is required")),
        };
        if bbox.dim() != model.param_dim() {
            return Err(Error::config(
                format!("{base}/initial"),
                format!("initial distribution has dimension {}, model expects {}", bbox.dim(), model.param_dim()),
            ));
        }
        Ok(Source::Model { model, sampler: Arc::new(UniformBox(bbox)) })
    }
}

impl Source {
    /// `n` samples drawn under `seed`, or the first `n` pairs (all pairs when
    /// fewer exist).
    pub fn draw(&self, n: usize, seed: u64) -> Result<(SampleSet<f64>, SampleSet<f64>)> {
        match self {
            Source::Model { model, sampler } => {
                let params = sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed), n)?;
                let data = model.push_forward(&params)?;
                Ok((params, data))
            }
            Source::Pairs { params, data } => {
                let n = n.min(params.len());
                Ok((params.prefix(n), data.prefix(n)))
            }
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Source::Model { model, .. } => model.data_dim(),
            Source::Pairs { data, .. } => data.dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    /// Cell count; a grid in `d` dimensions uses `round(p^(1/d))` cells per
    /// dimension unless `cells_per_dim` is given.
    pub p: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells_per_dim: Option<Vec<usize>>,
    /// Defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmeans_seed: Option<u64>,
    pub kmeans_max_iter: usize,
    /// Defaults to `n`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_batch: Option<usize>,
    /// Defaults to proportional filling with target `n`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_fill: Option<MinFill>,
    pub max_batches: usize,
    pub weight_floor: f64,
}

impl Default for BinningConfig {
    fn default() -> Self {
        let o = BinningOptions::default();
        Self {
            p: 35,
            cells_per_dim: None,
            kmeans_seed: None,
            kmeans_max_iter: 300,
            n_batch: None,
            min_fill: None,
            max_batches: o.max_batches,
            weight_floor: o.weight_floor,
        }
    }
}

impl BinningConfig {
    pub fn grid_cells(&self, dim: usize) -> Vec<usize> {
        match &self.cells_per_dim {
            Some(c) => c.clone(),
            None => {
                let per = (self.p as f64).powf(1.0 / dim as f64).round().max(1.0) as usize;
                vec![per; dim]
            }
        }
    }

    pub fn options(&self, n: usize, fit: &FitOptions) -> BinningOptions {
        BinningOptions {
            n_batch: self.n_batch.unwrap_or(n),
            pilot: None,
            min_fill: self.min_fill.clone().unwrap_or(MinFill::Proportional { n_target: n }),
            max_batches: self.max_batches,
            weight_floor: self.weight_floor,
            fit: fit.clone(),
        }
    }
}

/// Configuration of one `solve` or `diagnose` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    pub target: TargetConfig,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub binning: BinningConfig,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub density: DensityOptions,
    /// Known support of the data; replaces the fitted bounding box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_box: Option<Region<f64>>,
    /// Evaluation points per dimension in `pushforward.csv`.
    #[serde(default = "default_table_points")]
    pub table_points: usize,
}

fn default_n() -> usize {
    1000
}

fn default_table_points() -> usize {
    201
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("/n", "n must be positive"));
        }
        if self.binning.p == 0 {
            return Err(Error::config("/binning/p", "p must be positive"));
        }
        if !(self.fit.solver.tol > 0.0) {
            return Err(Error::config("/fit/solver/tol", "tol must be positive"));
        }
        if !(self.fit.padding >= 0.0) {
            return Err(Error::config("/fit/padding", "padding must be nonnegative"));
        }
        if self.table_points < 2 {
            return Err(Error::config("/table_points", "need at least two points"));
        }
        if let Some(b) = &self.data_box {
            BoxScaler::new(b.lower.clone(), b.upper.clone()).map_err(|e| Error::config("/data_box", e.to_string()))?;
        }
        Ok(())
    }

    pub fn data_box(&self) -> Option<BoxScaler<f64>> {
        self.data_box.as_ref().map(|b| BoxScaler::new(b.lower.clone(), b.upper.clone()).expect("validated"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointer_to_bad_key() {
        let e = RunConfig::from_json(r#"{"model":{"kind":"heat_rod"},"target":{"kind":"normal","params":{"mu":0.59,"sigma":0.005}},"binning":{"p":"many"}}"#)
            .unwrap_err();
        match e {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/binning/p"),
            other => panic!("{other:?}"),
        }
        let e = RunConfig::from_json(r#"{"model":{"kind":"heat_rod"},"target":{"kind":"normal"},"n":0}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref pointer, .. } if pointer == "/n"));
    }

    #[test]
    fn target_params_pointer() {
        let t: TargetConfig = parse_json(r#"{"kind":"normal","params":{"mu":0.5}}"#).unwrap();
        match t.resolve("/target") {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/target/params"),
            other => panic!("{:?}", other.err()),
        }
        let t: TargetConfig = parse_json(r#"{"kind":"normal","params":{"mu":0.5,"sigma":-1}}"#).unwrap();
        assert!(matches!(t.resolve("/target"), Err(Error::Config { .. })));
    }

    #[test]
    fn empirical_target_is_seeded() {
        let t: TargetConfig = parse_json(r#"{"kind":"mixture","params":{"components":[[0.5,0,1],[0.5,1,2]]},"m":50,"seed":9}"#).unwrap();
        let a = t.resolve("/target").unwrap();
        let b = t.resolve("/target").unwrap();
        assert_eq!(a.observed, b.observed);
        assert!(matches!(a.target, TargetDistribution::Empirical(_)));
        assert!(a.exact.is_some());
    }

    #[test]
    fn heat_rod_defaults_resolve() {
        let cfg = RunConfig::from_json(r#"{"model":{"kind":"heat_rod"},"target":{"kind":"normal","params":{"mu":0.59,"sigma":0.005}}}"#).unwrap();
        let src = cfg.model.resolve(cfg.initial.as_ref(), "").unwrap();
        let (p, d) = src.draw(10, 1).unwrap();
        assert_eq!((p.dim(), d.dim(), d.len()), (2, 1, 10));
        assert_eq!(cfg.binning.grid_cells(2), vec![6, 6]);
    }
}
