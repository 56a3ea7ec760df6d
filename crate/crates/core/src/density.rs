//! The density-based baseline: Gaussian KDEs of the predicted and observed
//! densities, the ratio `r = π_obs / π_pred` at the predicted samples, the
//! predictability diagnostic `E_init(r)`, rejection sampling and update
//! probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::real::Real;
use crate::samples::{Normalization, Region, SampleSet, WeightVector, WeightedEdf};

/// Predicted densities below this are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Variance floor for the diagonal fallback bandwidth.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// One-dimensional KDEs with at least this many points use the binned
/// evaluator under [`KdeEval::Auto`].
pub const BINNED_MIN_POINTS: usize = 20_000;

const BINNED_NODES: usize = 8192;
const BINNED_REACH: f64 = 8.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Covariance times `n^(−2/(d+4))`.
    #[default]
    Scott,
    /// Covariance times `(n(d+2)/4)^(−2/(d+4))`.
    Silverman,
    /// Isotropic kernel with this standard deviation.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdeEval {
    /// Binned for large one-dimensional sets, exact otherwise.
    #[default]
    Auto,
    Exact,
    Binned,
}

#[derive(Clone, Debug)]
struct BinnedGrid<T> {
    lo: T,
    step: T,
    values: Vec<T>,
}

/// Gaussian kernel density estimate with a full bandwidth matrix.
#[derive(Clone, Debug)]
pub struct KdeModel<T> {
    points: SampleSet<T>,
    rule: BandwidthRule,
    bandwidth: Matrix<T>,
    /// `L⁻¹` for `L Lᵀ = bandwidth`, row-major lower triangle.
    whiten: Vec<T>,
    whitened: Vec<T>,
    norm: T,
    diagonal_fallback: bool,
    grid: Option<BinnedGrid<T>>,
    /// Sorted whitened points, one-dimensional models only.
    sorted: Option<Vec<T>>,
}

fn covariance<T: Real>(s: &SampleSet<T>) -> Matrix<T> {
    let d = s.dim();
    let n = T::from_usize_lossy(s.len());
    let mean: Vec<T> = (0..d).map(|k| s.iter().map(|p| p[k]).sum::<T>() / n).collect();
    let mut c = Matrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let v = s.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<T>() / (n - T::one());
            c.set(i, j, v);
            c.set(j, i, v);
        }
    }
    c
}

fn invert_lower<T: Real>(l: &Matrix<T>) -> Vec<T> {
    let d = l.n();
    let mut inv = vec![T::zero(); d * d];
    for col in 0..d {
        for i in col..d {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                s = s - l.get(i, k) * inv[k * d + col];
            }
            inv[i * d + col] = s / l.get(i, i);
        }
    }
    inv
}

fn apply_lower<T: Real>(m: &[T], x: &[T], out: &mut [T]) {
    let d = x.len();
    for i in 0..d {
        out[i] = (0..=i).fold(T::zero(), |a, k| a + m[i * d + k] * x[k]);
    }
}

/// Fits a Gaussian KDE. A singular sample covariance falls back to its
/// diagonal with variances floored at [`VARIANCE_FLOOR`].
pub fn kde_fit<T: Real>(samples: &SampleSet<T>, rule: BandwidthRule) -> Result<KdeModel<T>> {
    kde_fit_with(samples, rule, KdeEval::Auto)
}

pub fn kde_fit_with<T: Real>(samples: &SampleSet<T>, rule: BandwidthRule, eval: KdeEval) -> Result<KdeModel<T>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::param("a KDE needs at least two samples"));
    }
    let d = samples.dim();
    let df = d as f64;
    let (mut bw, factor2) = match rule {
        BandwidthRule::Scott => (covariance(samples), (n as f64).powf(-2.0 / (df + 4.0))),
        BandwidthRule::Silverman => (covariance(samples), (n as f64 * (df + 2.0) / 4.0).powf(-2.0 / (df + 4.0))),
        BandwidthRule::Fixed(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::param("fixed bandwidth must be positive"));
            }
            let mut m = Matrix::zeros(d);
            (0..d).for_each(|k| m.set(k, k, T::lit(h * h)));
            (m, 1.0)
        }
    };
    for i in 0..d {
        for j in 0..d {
            bw.set(i, j, bw.get(i, j) * T::lit(factor2));
        }
    }
    let mut diagonal_fallback = false;
    let chol = match full_factor(&bw) {
        Some(l) => l,
        None => {
            diagonal_fallback = true;
            log::warn!("singular sample covariance; using a diagonal bandwidth");
            let floor = T::lit(VARIANCE_FLOOR * factor2).max(T::min_positive_value());
            let mut diag = Matrix::zeros(d);
            for k in 0..d {
                diag.set(k, k, bw.get(k, k).max(floor));
            }
            bw = diag;
            full_factor(&bw).ok_or(Error::NotPositiveDefinite { pivot: 0 })?
        }
    };
    let whiten = invert_lower(&chol);
    let det_l: T = (0..d).map(|k| chol.get(k, k)).fold(T::one(), |a, b| a * b);
    let norm = T::one() / (T::from_usize_lossy(n) * (T::lit(2.0) * T::PI()).powf(T::lit(df / 2.0)) * det_l);
    let mut whitened = vec![T::zero(); n * d];
    whitened.par_chunks_mut(d).enumerate().for_each(|(i, out)| apply_lower(&whiten, samples.point(i), out));

    let mut model = KdeModel {
        points: samples.clone(),
        rule,
        bandwidth: bw,
        whiten,
        whitened,
        norm,
        diagonal_fallback,
        grid: None,
        sorted: None,
    };
    if d == 1 {
        let mut v = model.whitened.clone();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        model.sorted = Some(v);
    }
    let binned = match eval {
        KdeEval::Auto => d == 1 && n >= BINNED_MIN_POINTS,
        KdeEval::Binned => {
            if d != 1 {
                return Err(Error::param("binned KDE evaluation is one-dimensional only"));
            }
            true
        }
        KdeEval::Exact => false,
    };
    if binned {
        model.grid = Some(model.build_grid());
    }
    Ok(model)
}

// lower Cholesky factor as a matrix, None if not positive definite
fn full_factor<T: Real>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let d = a.n();
    let mut l = Matrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s = s - l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

fn sum_outward<T: Real>(sorted: &[T], z: T) -> T {
    let half = T::lit(0.5);
    let eps = T::lit(1e-17);
    let term = |y: T| (-half * (y - z) * (y - z)).exp();
    let pos = sorted.partition_point(|&y| y < z);
    let mut sum = T::zero();
    // each side: terms shrink away from z, so the rest of a side is at most
    // its current term times the count left
    for i in (0..pos).rev() {
        let t = term(sorted[i]);
        sum = sum + t;
        if t * T::from_usize_lossy(i) <= eps * sum {
            break;
        }
    }
    for i in pos..sorted.len() {
        let t = term(sorted[i]);
        sum = sum + t;
        if t * T::from_usize_lossy(sorted.len() - 1 - i) <= eps * sum {
            break;
        }
    }
    sum
}

impl<T: Real> KdeModel<T> {
    pub fn rule(&self) -> BandwidthRule {
        self.rule
    }

    pub fn bandwidth(&self) -> &Matrix<T> {
        &self.bandwidth
    }

    pub fn points(&self) -> &SampleSet<T> {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn diagonal_fallback(&self) -> bool {
        self.diagonal_fallback
    }

    pub fn is_binned(&self) -> bool {
        self.grid.is_some()
    }

    /// Exact kernel sum at `x`.
    ///
    /// In one dimension the sum runs outward from `x` over the sorted points
    /// and stops once the remaining terms cannot change it at double
    /// precision.
    pub fn density_exact(&self, x: &[T]) -> T {
        let d = self.dim();
        let mut z = vec![T::zero(); d];
        apply_lower(&self.whiten, x, &mut z);
        if let Some(sorted) = &self.sorted {
            return sum_outward(sorted, z[0]) * self.norm;
        }
        let half = T::lit(0.5);
        let s: T = self
            .whitened
            .chunks_exact(d)
            .map(|y| {
                let r2 = y.iter().zip(&z).fold(T::zero(), |a, (&u, &v)| a + (u - v) * (u - v));
                (-half * r2).exp()
            })
            .sum();
        s * self.norm
    }

    /// Density at `x`, through the binned grid when one was built and `x`
    /// lies on it.
    pub fn density(&self, x: &[T]) -> T {
        if let Some(g) = &self.grid {
            let f = (x[0] - g.lo) / g.step;
            if f >= T::zero() {
                let i = f.floor().to_usize().unwrap_or(usize::MAX);
                if i + 1 < g.values.len() {
                    let t = f - T::from_usize_lossy(i);
                    return g.values[i] * (T::one() - t) + g.values[i + 1] * t;
                }
            }
        }
        self.density_exact(x)
    }

    pub fn density_many(&self, points: &SampleSet<T>) -> Result<Vec<T>> {
        points.check_dim(self.dim())?;
        Ok((0..points.len()).into_par_iter().map(|i| self.density(points.point(i))).collect())
    }

    // Linear binning onto a regular grid, then a truncated direct convolution.
    fn build_grid(&self) -> BinnedGrid<T> {
        let h = self.bandwidth.get(0, 0).sqrt();
        let xs = self.points.as_flat();
        let (mn, mx) = xs.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &x| (a.min(x), b.max(x)));
        let reach = T::lit(BINNED_REACH) * h;
        let lo = mn - reach;
        let step = (mx + reach - lo) / T::from_usize_lossy(BINNED_NODES - 1);
        let mut mass = vec![T::zero(); BINNED_NODES];
        for &x in xs {
            let f = (x - lo) / step;
            let i = f.floor().to_usize().unwrap_or(0).min(BINNED_NODES - 2);
            let t = f - T::from_usize_lossy(i);
            mass[i] = mass[i] + (T::one() - t);
            mass[i + 1] = mass[i + 1] + t;
        }
        let span = (reach / step).ceil().to_usize().unwrap_or(BINNED_NODES);
        let kernel: Vec<T> = (0..=span)
            .map(|j| {
                let u = T::from_usize_lossy(j) * step / h;
                (-T::lit(0.5) * u * u).exp()
            })
            .collect();
        let norm = self.norm;
        let values = (0..BINNED_NODES)
            .into_par_iter()
            .map(|j| {
                let a = j.saturating_sub(span);
                let b = (j + span).min(BINNED_NODES - 1);
                let s: T = (a..=b).map(|l| mass[l] * kernel[l.abs_diff(j)]).sum();
                s * norm
            })
            .collect();
        BinnedGrid { lo, step, values }
    }
}

/// `π_obs(q) / π_pred(q)`, or `+∞` with the violation flag when the predicted
/// density is below [`DENSITY_FLOOR`] while the observed one is not.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio<T> {
    pub value: T,
    pub violation: bool,
}

fn floor<T: Real>() -> T {
    T::lit(DENSITY_FLOOR).max(T::min_positive_value())
}

fn ratio_of<T: Real>(obs: T, pred: T) -> Ratio<T> {
    let f = floor::<T>();
    if pred < f {
        if obs < f {
            Ratio { value: T::zero(), violation: false }
        } else {
            Ratio { value: T::infinity(), violation: true }
        }
    } else {
        Ratio { value: obs / pred, violation: false }
    }
}

pub fn density_ratio<T: Real>(observed: &KdeModel<T>, predicted: &KdeModel<T>, q: &[T]) -> Result<Ratio<T>> {
    if q.len() != observed.dim() || q.len() != predicted.dim() {
        return Err(Error::DimensionMismatch { expected: predicted.dim(), got: q.len() });
    }
    Ok(ratio_of(observed.density(q), predicted.density(q)))
}

/// Ratios at every point of `data`, with the number of violations.
pub fn density_ratios<T: Real>(observed: &KdeModel<T>, predicted: &KdeModel<T>, data: &SampleSet<T>) -> Result<(Vec<T>, usize)> {
    let obs = observed.density_many(data)?;
    let pred = predicted.density_many(data)?;
    let mut violations = 0;
    let r = obs
        .into_iter()
        .zip(pred)
        .map(|(o, p)| {
            let r = ratio_of(o, p);
            violations += r.violation as usize;
            r.value
        })
        .collect();
    Ok((r, violations))
}

/// Sample mean of `r`; close to one when the predictability assumption holds.
pub fn diagnostic<T: Real>(r: &[T]) -> Result<T> {
    if r.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(r.iter().copied().sum::<T>() / T::from_usize_lossy(r.len()))
}

/// Keeps sample `i` with probability `r_i / max r`. Returns the accepted
/// samples and their indices.
pub fn rejection_sample<T: Real>(samples: &SampleSet<T>, r: &[T], seed: u64) -> Result<(SampleSet<T>, Vec<usize>)> {
    if r.len() != samples.len() {
        return Err(Error::DimensionMismatch { expected: samples.len(), got: r.len() });
    }
    if r.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::param("ratios must be finite and nonnegative"));
    }
    let m = r.iter().fold(T::zero(), |a, &b| a.max(b));
    if m <= T::zero() {
        return Err(Error::param("all ratios are zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<usize> = (0..r.len())
        .filter(|&i| {
            let u: f64 = rng.random();
            u * m.as_f64() < r[i].as_f64()
        })
        .collect();
    Ok((samples.select(&keep), keep))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateProbability {
    /// `(1/n) Σ r_i I(λ^i ∈ A)`.
    pub raw: f64,
    /// The same sum divided by `Σ r_i`.
    pub self_normalized: f64,
}

pub fn update_probability<T: Real>(region: &Region<T>, samples: &SampleSet<T>, r: &[T]) -> Result<UpdateProbability> {
    if r.len() != samples.len() {
        return Err(Error::DimensionMismatch { expected: samples.len(), got: r.len() });
    }
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    samples.check_dim(region.dim())?;
    let inside: f64 = samples.iter().zip(r).filter(|(x, _)| region.contains(x)).map(|(_, v)| v.as_f64()).sum();
    let total: f64 = r.iter().map(|v| v.as_f64()).sum();
    Ok(UpdateProbability {
        raw: inside / samples.len() as f64,
        self_normalized: if total > 0.0 { inside / total } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityOptions {
    pub bandwidth: BandwidthRule,
    pub eval: KdeEval,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self { bandwidth: BandwidthRule::Scott, eval: KdeEval::Auto }
    }
}

/// The density-based update on a set of initial samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensitySolution<T> {
    pub params: SampleSet<T>,
    pub data: SampleSet<T>,
    pub r: Vec<T>,
    pub diagnostic: f64,
    pub violations: usize,
    /// Bandwidth matrices, row-major.
    pub predicted_bandwidth: Vec<f64>,
    pub observed_bandwidth: Vec<f64>,
    pub binned: bool,
}

impl<T: Real> DensitySolution<T> {
    /// `r` normalized to sum to one; errors when every ratio is zero or a
    /// violation made one infinite.
    pub fn weights(&self) -> Result<WeightVector<T>> {
        WeightVector::normalized(self.r.clone(), Normalization::SumOne)
    }

    pub fn edf(&self) -> Result<WeightedEdf<T>> {
        WeightedEdf::new(self.params.clone(), self.weights()?)
    }

    /// The r-weighted EDF of the predicted samples.
    pub fn pushforward(&self) -> Result<WeightedEdf<T>> {
        WeightedEdf::new(self.data.clone(), self.weights()?)
    }
}

fn flat<T: Real>(m: &Matrix<T>) -> Vec<f64> {
    (0..m.n()).flat_map(|i| (0..m.n()).map(move |j| m.get(i, j).as_f64())).collect()
}

pub fn solve_density<T: Real>(
    params: &SampleSet<T>,
    data: &SampleSet<T>,
    observed: &SampleSet<T>,
    opts: &DensityOptions,
) -> Result<DensitySolution<T>> {
    if params.len() != data.len() {
        return Err(Error::RowMismatch { params: params.len(), data: data.len() });
    }
    let pred = kde_fit_with(data, opts.bandwidth, opts.eval)?;
    let obs = kde_fit_with(observed, opts.bandwidth, opts.eval)?;
    let (r, violations) = density_ratios(&obs, &pred, data)?;
    let diag = diagnostic(&r)?.as_f64();
    if violations > 0 {
        log::warn!("{violations} samples where the observed density has no predicted support");
    }
    Ok(DensitySolution {
        params: params.clone(),
        data: data.clone(),
        r,
        diagnostic: diag,
        violations,
        predicted_bandwidth: flat(pred.bandwidth()),
        observed_bandwidth: flat(obs.bandwidth()),
        binned: pred.is_binned() || obs.is_binned(),
    })
}
