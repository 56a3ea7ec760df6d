//! Evaluation of (weighted) empirical distribution functions and grid-based
//! distances between distribution functions.
//!
//! Indicators use the standard orientation `I(sample ⪯ query)`, so an EDF is
//! the fraction of samples component-wise below the query point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::samples::{BoxScaler, SampleSet, WeightedEdf};

/// Default quadrature resolution per dimension for distances.
pub fn default_grid_per_dim(dim: usize) -> usize {
    match dim {
        1 => 512,
        2 => 128,
        3 => 32,
        _ => 8,
    }
}

/// Anything evaluable as a (possibly multivariate) distribution function.
pub trait DistributionFunction<T>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[T]) -> T;
}

#[inline]
pub(crate) fn dominated<T: PartialOrd>(sample: &[T], query: &[T]) -> bool {
    sample.iter().zip(query).all(|(s, q)| s <= q)
}

/// `(1/n) #{i : q^i ⪯ point}`.
pub fn edf_eval<T: Real>(samples: &SampleSet<T>, point: &[T]) -> Result<T> {
    samples.check_dim(point.len())?;
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let count = samples.iter().filter(|q| dominated(q, point)).count();
    Ok(T::from_usize_lossy(count) / T::from_usize_lossy(samples.len()))
}

/// Weighted EDF value; the prefactor follows the weight normalization.
pub fn wedf_eval<T: Real>(wedf: &WeightedEdf<T>, point: &[T]) -> Result<T> {
    wedf.samples().check_dim(point.len())?;
    Ok(wedf_eval_unchecked(wedf, point))
}

fn wedf_eval_unchecked<T: Real>(wedf: &WeightedEdf<T>, point: &[T]) -> T {
    let w = wedf.weights();
    let raw: T = wedf
        .samples()
        .iter()
        .zip(w.as_slice())
        .filter(|(q, _)| dominated(q, point))
        .map(|(_, &wi)| wi)
        .sum();
    match w.normalization() {
        crate::samples::Normalization::MeanOne => raw / T::from_usize_lossy(w.len()),
        crate::samples::Normalization::SumOne => raw,
    }
}

impl<T: Real> DistributionFunction<T> for WeightedEdf<T> {
    fn dim(&self) -> usize {
        WeightedEdf::dim(self)
    }
    fn eval(&self, x: &[T]) -> T {
        wedf_eval_unchecked(self, x)
    }
}

impl<T: Real> DistributionFunction<T> for SampleSet<T> {
    fn dim(&self) -> usize {
        SampleSet::dim(self)
    }
    fn eval(&self, x: &[T]) -> T {
        let count = self.iter().filter(|q| dominated(q, x)).count();
        T::from_usize_lossy(count) / T::from_usize_lossy(self.len().max(1))
    }
}

/// Wraps a closure as a distribution function.
pub struct FnDistribution<F> {
    dim: usize,
    f: F,
}

impl<F> FnDistribution<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> DistributionFunction<T> for FnDistribution<F>
where
    F: Fn(&[T]) -> T + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[T]) -> T {
        (self.f)(x)
    }
}

impl<T, D: DistributionFunction<T> + ?Sized> DistributionFunction<T> for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[T]) -> T {
        (**self).eval(x)
    }
}

/// Sorted one-dimensional step function for fast repeated evaluation.
#[derive(Clone, Debug)]
pub struct StepCdf1d<T> {
    xs: Vec<T>,
    cum: Vec<T>,
}

impl<T: Real> StepCdf1d<T> {
    pub fn from_wedf(wedf: &WeightedEdf<T>) -> Result<Self> {
        if wedf.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: wedf.dim() });
        }
        let w = wedf.weights();
        let mut pairs: Vec<(T, T)> =
            wedf.samples().iter().enumerate().map(|(i, p)| (p[0], w.mass(i))).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite samples"));
        let mut xs: Vec<T> = Vec::with_capacity(pairs.len());
        let mut cum: Vec<T> = Vec::with_capacity(pairs.len());
        let mut acc = T::zero();
        for (x, m) in pairs {
            acc = acc + m;
            if xs.last() == Some(&x) {
                *cum.last_mut().unwrap() = acc;
            } else {
                xs.push(x);
                cum.push(acc);
            }
        }
        Ok(Self { xs, cum })
    }

    /// Value at `x` (right-continuous).
    pub fn eval_at(&self, x: T) -> T {
        let idx = self.xs.partition_point(|&s| s <= x);
        if idx == 0 {
            T::zero()
        } else {
            self.cum[idx - 1]
        }
    }

    pub fn jumps(&self) -> impl Iterator<Item = (T, T, T)> + '_ {
        // (location, left limit, value)
        self.xs.iter().enumerate().map(move |(i, &x)| {
            let left = if i == 0 { T::zero() } else { self.cum[i - 1] };
            (x, left, self.cum[i])
        })
    }
}

impl<T: Real> DistributionFunction<T> for StepCdf1d<T> {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[T]) -> T {
        self.eval_at(x[0])
    }
}

/// Exact sup-norm between a 1-D step function and a continuous CDF `g`,
/// taken over the whole real line.
pub fn sup_distance_step_vs_continuous<T: Real>(step: &StepCdf1d<T>, g: impl Fn(T) -> T) -> T {
    let mut sup = T::zero();
    for (x, left, value) in step.jumps() {
        let gx = g(x);
        sup = sup.max((left - gx).abs()).max((value - gx).abs());
    }
    sup
}

fn check_grid<T: Real>(
    f: &dyn DistributionFunction<T>,
    g: &dyn DistributionFunction<T>,
    bbox: &BoxScaler<T>,
    grid_per_dim: usize,
) -> Result<()> {
    if grid_per_dim < 2 {
        return Err(Error::param("grid_per_dim must be at least 2"));
    }
    if f.dim() != bbox.dim() {
        return Err(Error::DimensionMismatch { expected: bbox.dim(), got: f.dim() });
    }
    if g.dim() != bbox.dim() {
        return Err(Error::DimensionMismatch { expected: bbox.dim(), got: g.dim() });
    }
    Ok(())
}

fn grid_point<T: Real>(bbox: &BoxScaler<T>, mut idx: usize, per_dim: usize, offset: T, cells: T, out: &mut [T]) {
    for k in 0..bbox.dim() {
        let i = idx % per_dim;
        idx /= per_dim;
        let frac = (T::from_usize_lossy(i) + offset) / cells;
        out[k] = bbox.lower()[k] + frac * bbox.width(k);
    }
}

fn midpoint_sum<T: Real>(
    f: &dyn DistributionFunction<T>,
    g: &dyn DistributionFunction<T>,
    bbox: &BoxScaler<T>,
    grid_per_dim: usize,
    power: i32,
) -> T {
    let d = bbox.dim();
    let total = grid_per_dim.pow(d as u32);
    let cells = T::from_usize_lossy(grid_per_dim);
    let half = T::lit(0.5);
    let parts: Vec<T> = (0..total)
        .into_par_iter()
        .with_min_len(256)
        .map_init(
            || vec![T::zero(); d],
            |x, idx| {
                grid_point(bbox, idx, grid_per_dim, half, cells, x);
                (f.eval(x) - g.eval(x)).abs().powi(power)
            },
        )
        .collect();
    let cell_volume = bbox.volume() / T::from_usize_lossy(total);
    parts.into_iter().sum::<T>() * cell_volume
}

/// Midpoint-rule approximation of `(∫_box (F − G)² dμ)^{1/2}` on
/// `grid_per_dim^d` cells.
pub fn l2_distance<T: Real>(
    f: &dyn DistributionFunction<T>,
    g: &dyn DistributionFunction<T>,
    bbox: &BoxScaler<T>,
    grid_per_dim: usize,
) -> Result<T> {
    check_grid(f, g, bbox, grid_per_dim)?;
    Ok(midpoint_sum(f, g, bbox, grid_per_dim, 2).sqrt())
}

/// Midpoint-rule approximation of `∫_box |F − G| dμ`.
pub fn l1_distance<T: Real>(
    f: &dyn DistributionFunction<T>,
    g: &dyn DistributionFunction<T>,
    bbox: &BoxScaler<T>,
    grid_per_dim: usize,
) -> Result<T> {
    check_grid(f, g, bbox, grid_per_dim)?;
    Ok(midpoint_sum(f, g, bbox, grid_per_dim, 1))
}

/// Largest `|F − G|` over the `(grid_per_dim + 1)^d` nodes of the grid,
/// box corners included.
pub fn sup_distance<T: Real>(
    f: &dyn DistributionFunction<T>,
    g: &dyn DistributionFunction<T>,
    bbox: &BoxScaler<T>,
    grid_per_dim: usize,
) -> Result<T> {
    check_grid(f, g, bbox, grid_per_dim)?;
    let d = bbox.dim();
    let nodes = grid_per_dim + 1;
    let total = nodes.pow(d as u32);
    let cells = T::from_usize_lossy(grid_per_dim);
    let vals: Vec<T> = (0..total)
        .into_par_iter()
        .with_min_len(256)
        .map_init(
            || vec![T::zero(); d],
            |x, idx| {
                grid_point(bbox, idx, nodes, T::zero(), cells, x);
                (f.eval(x) - g.eval(x)).abs()
            },
        )
        .collect();
    Ok(vals.into_iter().fold(T::zero(), |a, b| a.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::{Normalization, WeightVector};
    use proptest::prelude::*;

    fn two() -> SampleSet<f64> {
        SampleSet::from_scalars(&[0.2, 0.6]).unwrap()
    }

    #[test]
    fn edf_examples() {
        let s = two();
        assert_eq!(edf_eval(&s, &[0.1]).unwrap(), 0.0);
        assert_eq!(edf_eval(&s, &[1.0]).unwrap(), 1.0);
        assert_eq!(edf_eval(&s, &[0.5]).unwrap(), 0.5);
        assert!(matches!(edf_eval(&s, &[0.5, 0.5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn wedf_examples() {
        let e = WeightedEdf::new(two(), WeightVector::ones(2)).unwrap();
        assert_eq!(wedf_eval(&e, &[0.5]).unwrap(), 0.5);
        let e = WeightedEdf::new(two(), WeightVector::new(vec![0.5, 1.5], Normalization::MeanOne).unwrap())
            .unwrap();
        assert_eq!(wedf_eval(&e, &[0.5]).unwrap(), 0.25);
        let e = WeightedEdf::new(two(), WeightVector::new(vec![0.125, 0.875], Normalization::SumOne).unwrap())
            .unwrap();
        assert_eq!(wedf_eval(&e, &[0.7]).unwrap(), 1.0);
    }

    #[test]
    fn distance_examples() {
        let unit = BoxScaler::unit(1);
        let e = WeightedEdf::unweighted(SampleSet::from_scalars(&[0.5]).unwrap()).unwrap();
        assert_eq!(l2_distance(&e, &e, &unit, 512).unwrap(), 0.0);

        let zero = FnDistribution::new(1, |_: &[f64]| 0.0);
        let d = l2_distance(&e, &zero, &unit, 1000).unwrap();
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3, "{d}");

        let ident = FnDistribution::new(1, |x: &[f64]| x[0]);
        let s = sup_distance(&e, &ident, &unit, 1000).unwrap();
        assert!((s - 0.5).abs() < 1e-12, "{s}");

        let step = StepCdf1d::from_wedf(&e).unwrap();
        assert!((sup_distance_step_vs_continuous(&step, |x| x) - 0.5).abs() < 1e-15);

        assert!(l2_distance(&e, &zero, &unit, 1).is_err());
    }

    #[test]
    fn l1_of_shifted_steps() {
        let unit = BoxScaler::unit(1);
        let a = WeightedEdf::unweighted(SampleSet::<f64>::from_scalars(&[0.25]).unwrap()).unwrap();
        let b = WeightedEdf::unweighted(SampleSet::from_scalars(&[0.75]).unwrap()).unwrap();
        assert!((l1_distance(&a, &b, &unit, 1000).unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn step_cdf_matches_direct_evaluation() {
        let s = SampleSet::<f64>::from_scalars(&[0.3, 0.1, 0.3, 0.9]).unwrap();
        let w = WeightVector::new(vec![0.5, 1.0, 1.5, 1.0], Normalization::MeanOne).unwrap();
        let e = WeightedEdf::new(s, w).unwrap();
        let step = StepCdf1d::from_wedf(&e).unwrap();
        for x in [0.0, 0.1, 0.2, 0.3, 0.5, 0.9, 1.0] {
            assert!((step.eval_at(x) - wedf_eval(&e, &[x]).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_dimensional_wedf() {
        let s = SampleSet::from_rows(2, &[[0.2, 0.8], [0.6, 0.1]]).unwrap();
        let e = WeightedEdf::unweighted(s).unwrap();
        assert_eq!(wedf_eval(&e, &[0.5, 0.9]).unwrap(), 0.5);
        assert_eq!(wedf_eval(&e, &[0.7, 0.5]).unwrap(), 0.5);
        assert_eq!(wedf_eval(&e, &[0.7, 0.9]).unwrap(), 1.0);
        assert_eq!(wedf_eval(&e, &[0.1, 0.9]).unwrap(), 0.0);
    }

    fn random_wedf(points: Vec<f64>, raw: Vec<f64>, d: usize) -> WeightedEdf<f64> {
        let s = SampleSet::from_flat(d, points).unwrap();
        let w = WeightVector::normalized(raw, Normalization::MeanOne).unwrap();
        WeightedEdf::new(s, w).unwrap()
    }

    proptest! {
        #[test]
        fn equal_weights_match_plain_edf(pts in prop::collection::vec(0.0f64..1.0, 1..20), x in 0.0f64..1.0) {
            let s = SampleSet::from_scalars(&pts).unwrap();
            let e = WeightedEdf::unweighted(s.clone()).unwrap();
            prop_assert_eq!(wedf_eval(&e, &[x]).unwrap(), edf_eval(&s, &[x]).unwrap());
        }

        #[test]
        fn weighted_edf_monotone(
            pts in prop::collection::vec(0.0f64..1.0, 2..40),
            raw in prop::collection::vec(0.01f64..5.0, 20),
            x in prop::collection::vec(0.0f64..1.0, 2),
            dx in prop::collection::vec(0.0f64..0.5, 2),
        ) {
            let n = pts.len() / 2;
            let e = random_wedf(pts[..2 * n].to_vec(), raw[..n.min(20)].iter().cycle().take(n).copied().collect(), 2);
            let y = [x[0] + dx[0], x[1] + dx[1]];
            prop_assert!(wedf_eval(&e, &x).unwrap() <= wedf_eval(&e, &y).unwrap() + 1e-15);
            prop_assert!((wedf_eval(&e, &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-8);
        }

        #[test]
        fn l2_symmetry_and_triangle(
            a in prop::collection::vec(0.0f64..1.0, 1..8),
            b in prop::collection::vec(0.0f64..1.0, 1..8),
            c in prop::collection::vec(0.0f64..1.0, 1..8),
        ) {
            let unit = BoxScaler::unit(1);
            let f = WeightedEdf::unweighted(SampleSet::from_scalars(&a).unwrap()).unwrap();
            let g = WeightedEdf::unweighted(SampleSet::from_scalars(&b).unwrap()).unwrap();
            let h = WeightedEdf::unweighted(SampleSet::from_scalars(&c).unwrap()).unwrap();
            let fg = l2_distance(&f, &g, &unit, 256).unwrap();
            let gf = l2_distance(&g, &f, &unit, 256).unwrap();
            let fh = l2_distance(&f, &h, &unit, 256).unwrap();
            let hg = l2_distance(&h, &g, &unit, 256).unwrap();
            prop_assert!((fg - gf).abs() < 1e-12);
            prop_assert!(fg <= fh + hg + 1e-6);
        }
    }
}
