//! The naive and binning reweighting algorithms.
//!
//! Binning solves the QP on the representative points of a data-space
//! partition and spreads each cell weight `w_k` evenly over the parameter
//! samples that land in cell `k`: `u_i = w_k / (p n_k)`, so that `Σ u = 1` and
//! the u-weighted parameter EDF pushes forward to the w-weighted EDF over the
//! representatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{make_kmeans, make_regular_grid, Partition};
use crate::qp::{build_problem, jitter_duplicates, solve_qp, QpSolution, SolverOptions, DEFAULT_QUAD_POINTS};
use crate::real::Real;
use crate::samples::{fit_box, scale_to_unit, BoxScaler, Normalization, SampleSet, WeightVector, WeightedEdf};
use crate::target::TargetDistribution;

/// Supplies aligned `(λ, q)` batches, either from a live model or from files.
pub trait SampleSource<T> {
    /// `(parameter dimension, data dimension)`.
    fn dims(&self) -> (usize, usize);

    /// Up to `n` new pairs; an empty batch means the source is exhausted.
    fn next_batch(&mut self, n: usize) -> Result<(SampleSet<T>, SampleSet<T>)>;
}

/// Precomputed pairs consumed in row order.
#[derive(Clone, Debug)]
pub struct PairSource<T> {
    params: SampleSet<T>,
    data: SampleSet<T>,
    cursor: usize,
}

impl<T: Real> PairSource<T> {
    pub fn new(params: SampleSet<T>, data: SampleSet<T>) -> Result<Self> {
        if params.len() != data.len() {
            return Err(Error::RowMismatch { params: params.len(), data: data.len() });
        }
        Ok(Self { params, data, cursor: 0 })
    }
}

impl<T: Real> SampleSource<T> for PairSource<T> {
    fn dims(&self) -> (usize, usize) {
        (self.params.dim(), self.data.dim())
    }

    fn next_batch(&mut self, n: usize) -> Result<(SampleSet<T>, SampleSet<T>)> {
        let end = (self.cursor + n).min(self.params.len());
        let idx: Vec<usize> = (self.cursor..end).collect();
        self.cursor = end;
        Ok((self.params.select(&idx), self.data.select(&idx)))
    }
}

/// Settings shared by every QP fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Fraction of the data bounding box added on each side before scaling.
    pub padding: f64,
    pub quad_points: usize,
    pub solver: SolverOptions,
    pub jitter_seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { padding: 0.01, quad_points: DEFAULT_QUAD_POINTS, solver: SolverOptions::default(), jitter_seed: 0 }
    }
}

/// QP weights for `points` (original data coordinates) against `target`.
pub fn fit_weights<T: Real>(
    points: &SampleSet<T>,
    data_box: &BoxScaler<T>,
    target: &TargetDistribution<T>,
    opts: &FitOptions,
) -> Result<(QpSolution<T>, usize)> {
    let mut scaled = scale_to_unit(points, data_box)?;
    let jittered = jitter_duplicates(&mut scaled, opts.jitter_seed);
    let target = target.scaled(data_box)?;
    let problem = build_problem(&scaled, &target, opts.quad_points)?;
    Ok((solve_qp(&problem, &opts.solver)?, jittered))
}

fn resolve_box<T: Real>(data: &SampleSet<T>, data_box: Option<&BoxScaler<T>>, padding: f64) -> Result<BoxScaler<T>> {
    match data_box {
        Some(b) => {
            data.check_dim(b.dim())?;
            Ok(b.clone())
        }
        None => fit_box(data, T::lit(padding)),
    }
}

/// QP weights placed directly on the parameter samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NaiveSolution<T> {
    pub params: SampleSet<T>,
    pub data: SampleSet<T>,
    pub weights: WeightVector<T>,
    pub qp: QpSolution<T>,
    pub data_box: BoxScaler<T>,
    pub jittered: usize,
}

impl<T: Real> NaiveSolution<T> {
    /// The weighted EDF on the parameter space.
    pub fn edf(&self) -> WeightedEdf<T> {
        WeightedEdf::new(self.params.clone(), self.weights.clone()).expect("aligned")
    }

    /// The weighted EDF of the predicted samples.
    pub fn pushforward(&self) -> WeightedEdf<T> {
        WeightedEdf::new(self.data.clone(), self.weights.clone()).expect("aligned")
    }
}

pub fn solve_naive<T: Real>(
    params: &SampleSet<T>,
    data: &SampleSet<T>,
    target: &TargetDistribution<T>,
    data_box: Option<&BoxScaler<T>>,
    opts: &FitOptions,
) -> Result<NaiveSolution<T>> {
    if params.len() != data.len() {
        return Err(Error::RowMismatch { params: params.len(), data: data.len() });
    }
    if params.is_empty() {
        return Err(Error::EmptySamples);
    }
    let data_box = resolve_box(data, data_box, opts.padding)?;
    let (qp, jittered) = fit_weights(data, &data_box, target, opts)?;
    Ok(NaiveSolution {
        params: params.clone(),
        data: data.clone(),
        weights: qp.weights.clone(),
        qp,
        data_box,
        jittered,
    })
}

/// How the data-space partition is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Grid { cells_per_dim: Vec<usize> },
    Kmeans { p: usize, seed: u64, max_iter: usize },
}

impl PartitionSpec {
    pub fn build<T: Real>(&self, data_box: &BoxScaler<T>, predicted: &SampleSet<T>) -> Result<Partition<T>> {
        match self {
            PartitionSpec::Grid { cells_per_dim } => make_regular_grid(data_box, cells_per_dim),
            PartitionSpec::Kmeans { p, seed, max_iter } => make_kmeans(predicted, *p, *seed, *max_iter),
        }
    }

    pub fn cells(&self) -> usize {
        match self {
            PartitionSpec::Grid { cells_per_dim } => cells_per_dim.iter().product(),
            PartitionSpec::Kmeans { p, .. } => *p,
        }
    }
}

/// Minimum sample count per cell, derived from the cell weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MinFill {
    /// `n_{k,min} = ceil(n_target w_k / p)` for cells with positive weight.
    Proportional { n_target: usize },
    /// The same count for every cell with positive weight.
    Uniform { per_cell: usize },
}

impl MinFill {
    fn counts<T: Real>(&self, w: &[T]) -> Vec<usize> {
        let p = w.len() as f64;
        w.iter()
            .map(|&wk| {
                if wk <= T::zero() {
                    return 0;
                }
                match *self {
                    MinFill::Proportional { n_target } => ((n_target as f64 * wk.as_f64() / p).ceil() as usize).max(1),
                    MinFill::Uniform { per_cell } => per_cell.max(1),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningOptions {
    pub n_batch: usize,
    /// Size of the first batch, which fixes the data box and seeds k-means.
    /// Defaults to `n_batch`.
    pub pilot: Option<usize>,
    pub min_fill: MinFill,
    pub max_batches: usize,
    /// Cell weights at or below this are set to zero before distribution.
    pub weight_floor: f64,
    pub fit: FitOptions,
}

impl Default for BinningOptions {
    fn default() -> Self {
        Self {
            n_batch: 1000,
            pilot: None,
            min_fill: MinFill::Proportional { n_target: 1000 },
            max_batches: 1000,
            weight_floor: 1e-6,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinnedSolution<T> {
    pub params: SampleSet<T>,
    pub data: SampleSet<T>,
    /// `w`, mean one over the `p` cells, after the weight floor.
    pub cell_weights: WeightVector<T>,
    /// `u`, summing to one over the samples.
    pub sample_weights: WeightVector<T>,
    pub assignments: Vec<usize>,
    pub counts: Vec<usize>,
    pub n_min: Vec<usize>,
    pub batches: usize,
    /// The QP solution on the representatives, before the weight floor.
    pub qp: QpSolution<T>,
    pub partition: Partition<T>,
    pub data_box: BoxScaler<T>,
}

impl<T: Real> BinnedSolution<T> {
    pub fn p(&self) -> usize {
        self.cell_weights.len()
    }

    pub fn n(&self) -> usize {
        self.sample_weights.len()
    }

    /// The u-weighted EDF on the parameter space.
    pub fn edf(&self) -> WeightedEdf<T> {
        WeightedEdf::new(self.params.clone(), self.sample_weights.clone()).expect("aligned")
    }

    /// The u-weighted EDF of the predicted samples.
    pub fn pushforward_samples(&self) -> WeightedEdf<T> {
        WeightedEdf::new(self.data.clone(), self.sample_weights.clone()).expect("aligned")
    }

    /// Largest `|Σ_{i ∈ k} u_i − w_k/p|` over the cells.
    pub fn aggregation_error(&self) -> T {
        let p = T::from_usize_lossy(self.p());
        let mut agg = vec![T::zero(); self.p()];
        for (&k, &u) in self.assignments.iter().zip(self.sample_weights.as_slice()) {
            agg[k] = agg[k] + u;
        }
        agg.iter()
            .zip(self.cell_weights.as_slice())
            .fold(T::zero(), |m, (&a, &w)| m.max((a - w / p).abs()))
    }
}

fn floor_weights<T: Real>(qp: &QpSolution<T>, floor: f64) -> Result<WeightVector<T>> {
    let floor = T::lit(floor);
    let w: Vec<T> = qp.weights.as_slice().iter().map(|&x| if x <= floor { T::zero() } else { x }).collect();
    WeightVector::normalized(w, Normalization::MeanOne)
}

fn distribute<T: Real>(w: &WeightVector<T>, assignments: &[usize], counts: &[usize], batches: usize) -> Result<WeightVector<T>> {
    let p = w.len();
    for k in 0..p {
        if w.as_slice()[k] > T::zero() && counts[k] == 0 {
            return Err(Error::UnreachableCell { cell: k, weight: w.as_slice()[k].as_f64(), batches });
        }
    }
    let pt = T::from_usize_lossy(p);
    let per_cell: Vec<T> = (0..p)
        .map(|k| if counts[k] == 0 { T::zero() } else { w.as_slice()[k] / (pt * T::from_usize_lossy(counts[k])) })
        .collect();
    let u: Vec<T> = assignments.iter().map(|&k| per_cell[k]).collect();
    WeightVector::new(u, Normalization::SumOne)
}

/// Binning with batch sampling.
///
/// The first (pilot) batch fixes the data box, unless one is given, and is
/// the k-means training set; it also counts as the first batch of the fill
/// loop. Batches are then drawn until every cell with `n_{k,min} > 0` holds at
/// least `n_{k,min}` samples, the source runs dry, or `max_batches` is reached.
/// A positive-weight cell that is still empty at that point is an error; one
/// that is only under-filled is accepted with a warning.
pub fn solve_binning<T: Real>(
    source: &mut dyn SampleSource<T>,
    target: &TargetDistribution<T>,
    spec: &PartitionSpec,
    data_box: Option<&BoxScaler<T>>,
    opts: &BinningOptions,
) -> Result<BinnedSolution<T>> {
    if opts.n_batch == 0 {
        return Err(Error::param("n_batch must be positive"));
    }
    let (_, dd) = source.dims();
    if target.dim() != dd {
        return Err(Error::DimensionMismatch { expected: dd, got: target.dim() });
    }
    let (mut params, mut data) = source.next_batch(opts.pilot.unwrap_or(opts.n_batch))?;
    if data.is_empty() {
        return Err(Error::EmptySamples);
    }
    let data_box = resolve_box(&data, data_box, opts.fit.padding)?;
    let partition = spec.build(&data_box, &data)?;
    let (qp, _) = fit_weights(partition.reps(), &data_box, target, &opts.fit)?;
    let w = floor_weights(&qp, opts.weight_floor)?;
    let n_min = opts.min_fill.counts(w.as_slice());

    let mut assignments = partition.classify_all(&data)?;
    let mut counts = partition.counts(&assignments);
    let mut batches = 1;
    let unmet = |counts: &[usize]| counts.iter().zip(&n_min).any(|(c, m)| c < m);
    while unmet(&counts) && batches < opts.max_batches {
        let (bp, bd) = source.next_batch(opts.n_batch)?;
        if bp.is_empty() {
            log::warn!("sample source exhausted after {batches} batches");
            break;
        }
        let a = partition.classify_all(&bd)?;
        for &k in &a {
            counts[k] += 1;
        }
        assignments.extend(a);
        params.extend(&bp)?;
        data.extend(&bd)?;
        batches += 1;
    }
    if unmet(&counts) {
        let short = counts.iter().zip(&n_min).filter(|(c, m)| c < m).count();
        log::warn!("{short} cells below their minimum count after {batches} batches");
    }
    let sample_weights = distribute(&w, &assignments, &counts, batches)?;
    Ok(BinnedSolution {
        params,
        data,
        cell_weights: w,
        sample_weights,
        assignments,
        counts,
        n_min,
        batches,
        qp,
        partition,
        data_box,
    })
}

/// Binning on a fixed sample set: the fill requirement becomes the observed
/// counts. With `drop_empty`, cells no sample reached are removed before the
/// QP; otherwise a positive-weight empty cell is an error.
pub fn bin_samples<T: Real>(
    params: &SampleSet<T>,
    data: &SampleSet<T>,
    partition: &Partition<T>,
    data_box: &BoxScaler<T>,
    target: &TargetDistribution<T>,
    opts: &BinningOptions,
    drop_empty: bool,
) -> Result<BinnedSolution<T>> {
    if params.len() != data.len() {
        return Err(Error::RowMismatch { params: params.len(), data: data.len() });
    }
    if data.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut assignments = partition.classify_all(data)?;
    let mut counts = partition.counts(&assignments);
    let mut partition = partition.clone();
    if drop_empty && counts.contains(&0) {
        let keep: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
        let mut pos = vec![usize::MAX; counts.len()];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        partition = partition.retain_cells(&keep)?;
        assignments.iter_mut().for_each(|a| *a = pos[*a]);
        counts = keep.iter().map(|&k| counts[k]).collect();
    }
    let (qp, _) = fit_weights(partition.reps(), data_box, target, &opts.fit)?;
    let w = floor_weights(&qp, opts.weight_floor)?;
    let sample_weights = distribute(&w, &assignments, &counts, 0)?;
    let n_min = w.as_slice().iter().zip(&counts).map(|(&wk, &c)| if wk > T::zero() { c } else { 0 }).collect();
    Ok(BinnedSolution {
        params: params.clone(),
        data: data.clone(),
        cell_weights: w,
        sample_weights,
        assignments,
        counts,
        n_min,
        batches: 0,
        qp,
        partition,
        data_box: data_box.clone(),
    })
}

/// The w-weighted EDF over the representative points.
///
/// Fails when `partition` is not the one the solution was computed with, i.e.
/// when its cell count differs or it classifies the solution's samples
/// differently.
pub fn pushforward_binned<T: Real>(solution: &BinnedSolution<T>, partition: &Partition<T>) -> Result<WeightedEdf<T>> {
    if partition.len() != solution.p() {
        return Err(Error::PartitionMismatch(format!(
            "{} cells in partition, {} cell weights",
            partition.len(),
            solution.p()
        )));
    }
    if partition.classify_all(&solution.data)? != solution.assignments {
        return Err(Error::PartitionMismatch("samples classify differently".into()));
    }
    WeightedEdf::new(partition.reps().clone(), solution.cell_weights.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edf::wedf_eval;
    use crate::target::FnCdf;

    fn uniform_target() -> TargetDistribution<f64> {
        TargetDistribution::exact(FnCdf::new(1, |x: &[f64]| x[0].clamp(0.0, 1.0)))
    }

    #[test]
    fn distribute_by_hand() {
        let w = WeightVector::new(vec![0.5, 1.5], Normalization::MeanOne).unwrap();
        let u = distribute(&w, &[0, 0, 1, 1], &[2, 2], 1).unwrap();
        assert_eq!(u.as_slice(), &[0.125, 0.125, 0.375, 0.375]);
    }

    #[test]
    fn distribute_reports_unreachable_cell() {
        let w = WeightVector::new(vec![0.5, 1.5], Normalization::MeanOne).unwrap();
        let e = distribute(&w, &[0, 0], &[2, 0], 7).unwrap_err();
        assert!(matches!(e, Error::UnreachableCell { cell: 1, batches: 7, .. }));
    }

    #[test]
    fn naive_single_sample() {
        let s = SampleSet::from_scalars(&[0.4]).unwrap();
        let sol = solve_naive(&s, &s, &uniform_target(), None, &FitOptions::default()).unwrap();
        assert_eq!(sol.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn naive_identity_target_gives_ones() {
        let q = SampleSet::<f64>::from_scalars(&[0.1, 0.35, 0.5, 0.8, 0.95]).unwrap();
        let t = TargetDistribution::Empirical(q.clone());
        let sol = solve_naive(&q, &q, &t, None, &FitOptions::default()).unwrap();
        for &w in sol.weights.as_slice() {
            assert!((w - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn binning_structure_on_pairs() {
        let n = 2000;
        let lam: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let params = SampleSet::from_scalars(&lam).unwrap();
        let data = SampleSet::from_scalars(&lam.iter().map(|x| x * x).collect::<Vec<_>>()).unwrap();
        let mut src = PairSource::new(params, data).unwrap();
        let spec = PartitionSpec::Grid { cells_per_dim: vec![10] };
        let opts = BinningOptions { n_batch: 200, min_fill: MinFill::Proportional { n_target: 400 }, ..Default::default() };
        let sol = solve_binning(&mut src, &uniform_target(), &spec, None, &opts).unwrap();
        assert!((sol.sample_weights.total_mass() - 1.0).abs() < 1e-12);
        assert!(sol.aggregation_error() < 1e-12);
        for (i, j) in (0..sol.n()).flat_map(|i| (0..sol.n()).map(move |j| (i, j))).step_by(997) {
            if sol.assignments[i] == sol.assignments[j] {
                assert_eq!(sol.sample_weights.as_slice()[i], sol.sample_weights.as_slice()[j]);
            }
        }
        assert!(sol.counts.iter().zip(&sol.n_min).all(|(c, m)| c >= m) || sol.batches == 10);
        let pf = pushforward_binned(&sol, &sol.partition).unwrap();
        assert_eq!(wedf_eval(&pf, &[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn single_cell_pushforward() {
        let q = SampleSet::from_scalars(&[0.2, 0.4, 0.6]).unwrap();
        let b = BoxScaler::unit(1);
        let g = make_regular_grid(&b, &[1]).unwrap();
        let sol = bin_samples(&q, &q, &g, &b, &uniform_target(), &BinningOptions::default(), false).unwrap();
        let pf = pushforward_binned(&sol, &g).unwrap();
        assert_eq!(pf.weights().as_slice(), &[1.0]);
        assert_eq!(pf.samples().as_flat(), &[0.5]);
    }

    #[test]
    fn mismatched_partition_rejected() {
        let q = SampleSet::from_scalars(&[0.2, 0.4, 0.6, 0.9]).unwrap();
        let b = BoxScaler::unit(1);
        let g = make_regular_grid(&b, &[2]).unwrap();
        let sol = bin_samples(&q, &q, &g, &b, &uniform_target(), &BinningOptions::default(), false).unwrap();
        assert!(pushforward_binned(&sol, &make_regular_grid(&b, &[3]).unwrap()).is_err());
        let shifted = make_regular_grid(&BoxScaler::new(vec![0.0], vec![1.5]).unwrap(), &[2]).unwrap();
        assert!(pushforward_binned(&sol, &shifted).is_err());
    }

    #[test]
    fn empty_cells_dropped_on_request() {
        let q = SampleSet::from_scalars(&[0.1, 0.15, 0.8, 0.9]).unwrap();
        let b = BoxScaler::unit(1);
        let g = make_regular_grid(&b, &[4]).unwrap();
        assert!(matches!(
            bin_samples(&q, &q, &g, &b, &uniform_target(), &BinningOptions::default(), false),
            Err(Error::UnreachableCell { .. })
        ));
        let sol = bin_samples(&q, &q, &g, &b, &uniform_target(), &BinningOptions::default(), true).unwrap();
        assert_eq!(sol.p(), 2);
        assert!(sol.aggregation_error() < 1e-15);
    }

    #[test]
    fn min_fill_counts() {
        let w = [0.0, 0.5, 2.5];
        assert_eq!(MinFill::Proportional { n_target: 30 }.counts(&w), vec![0, 5, 25]);
        assert_eq!(MinFill::Uniform { per_cell: 4 }.counts(&w), vec![0, 4, 4]);
    }
}
