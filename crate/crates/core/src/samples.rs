//! Sample containers, weight vectors and the unit-hypercube scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Width assigned to a dimension in which every sample shares one coordinate.
pub const DEGENERATE_WIDTH: f64 = 1e-9;

/// Ordered points in `dim`-dimensional space, stored row-major.
///
/// Index `i` always refers to the same sample; nothing in the toolkit reorders a set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet<T> {
    dim: usize,
    data: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl<T: Real> SampleSet<T> {
    /// Builds a set from a flat row-major buffer.
    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: data.len() % dim });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: pos / dim });
        }
        Ok(Self { dim, data, labels: None })
    }

    pub fn from_rows<R: AsRef<[T]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(dim, data)
    }

    /// One-dimensional set from scalar values.
    pub fn from_scalars(values: &[T]) -> Result<Self> {
        Self::from_flat(1, values.to_vec())
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new(), labels: None }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::param(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Values of coordinate `k` across all samples.
    pub fn column(&self, k: usize) -> Vec<T> {
        self.iter().map(|p| p[k]).collect()
    }

    /// The first `n` samples, in order.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            data,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    pub fn push(&mut self, point: &[T]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: point.len() });
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: self.len() });
        }
        self.data.extend_from_slice(point);
        if let Some(l) = self.labels.as_mut() {
            l.push(String::new());
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &SampleSet<T>) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        self.data.extend_from_slice(&other.data);
        self.labels = None;
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            Err(Error::DimensionMismatch { expected: self.dim, got })
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// `(1/n) Σ w_i = 1`; the QP weights.
    MeanOne,
    /// `Σ u_i = 1`; per-sample binning weights.
    SumOne,
}

/// Nonnegative weights with a declared normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<T> {
    weights: Vec<T>,
    normalization: Normalization,
}

fn normalization_tol<T: Real>(n: usize) -> T {
    T::lit(1e-8).max(T::epsilon() * T::lit(16.0) * T::from_usize_lossy(n.max(1)).sqrt())
}

impl<T: Real> WeightVector<T> {
    /// Validates nonnegativity and normalization (within 1e-8).
    pub fn new(weights: Vec<T>, normalization: Normalization) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(Error::InvalidWeights(format!("weight {i} is negative or non-finite")));
        }
        let v = Self { weights, normalization };
        let err = (v.total_mass() - T::one()).abs();
        if err > normalization_tol::<T>(v.len()) {
            return Err(Error::InvalidWeights(format!(
                "{:?} normalization violated by {err}",
                v.normalization
            )));
        }
        Ok(v)
    }

    /// Rescales nonnegative weights to satisfy `normalization`.
    pub fn normalized(mut weights: Vec<T>, normalization: Normalization) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(Error::InvalidWeights(format!("weight {i} is negative or non-finite")));
        }
        let sum: T = weights.iter().copied().sum();
        if sum <= T::zero() {
            return Err(Error::InvalidWeights("all weights are zero".into()));
        }
        let target = match normalization {
            Normalization::MeanOne => T::from_usize_lossy(weights.len()),
            Normalization::SumOne => T::one(),
        };
        let scale = target / sum;
        weights.iter_mut().for_each(|w| *w = *w * scale);
        Self::new(weights, normalization)
    }

    pub fn ones(n: usize) -> Self {
        Self { weights: vec![T::one(); n], normalization: Normalization::MeanOne }
    }

    pub fn uniform_sum_one(n: usize) -> Self {
        Self {
            weights: vec![T::one() / T::from_usize_lossy(n); n],
            normalization: Normalization::SumOne,
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<T> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Per-sample probability mass: `w_i / n` for MeanOne, `u_i` for SumOne.
    #[inline]
    pub fn mass(&self, i: usize) -> T {
        match self.normalization {
            Normalization::MeanOne => self.weights[i] / T::from_usize_lossy(self.len()),
            Normalization::SumOne => self.weights[i],
        }
    }

    pub fn total_mass(&self) -> T {
        let s: T = self.weights.iter().copied().sum();
        match self.normalization {
            Normalization::MeanOne => s / T::from_usize_lossy(self.len()),
            Normalization::SumOne => s,
        }
    }

    /// Weights rescaled to mean one, so naive and binning weights compare on one scale.
    pub fn mean_one_values(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.len());
        match self.normalization {
            Normalization::MeanOne => self.weights.clone(),
            Normalization::SumOne => self.weights.iter().map(|&u| u * n).collect(),
        }
    }

    /// Population variance of the mean-one weights.
    pub fn variance(&self) -> T {
        let v = self.mean_one_values();
        let n = T::from_usize_lossy(v.len());
        let mean = v.iter().copied().sum::<T>() / n;
        v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n
    }
}

/// A sample set with one weight per sample; a step distribution function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdf<T> {
    samples: SampleSet<T>,
    weights: WeightVector<T>,
}

impl<T: Real> WeightedEdf<T> {
    pub fn new(samples: SampleSet<T>, weights: WeightVector<T>) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} samples",
                weights.len(),
                samples.len()
            )));
        }
        Ok(Self { samples, weights })
    }

    /// The plain EDF: all weights equal to one.
    pub fn unweighted(samples: SampleSet<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let n = samples.len();
        Self::new(samples, WeightVector::ones(n))
    }

    pub fn samples(&self) -> &SampleSet<T> {
        &self.samples
    }

    pub fn weights(&self) -> &WeightVector<T> {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }
}

/// Component-wise bounding box mapping data onto `[0, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxScaler<T> {
    lower: Vec<T>,
    upper: Vec<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    widened: Vec<usize>,
}

impl<T: Real> BoxScaler<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidBox(format!(
                "bounds of length {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && u > l) {
                return Err(Error::InvalidBox(format!("dimension {k}: [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper, widened: Vec::new() })
    }

    pub fn unit(dim: usize) -> Self {
        Self { lower: vec![T::zero(); dim], upper: vec![T::one(); dim], widened: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn width(&self, k: usize) -> T {
        self.upper[k] - self.lower[k]
    }

    /// Product of the side lengths.
    pub fn volume(&self) -> T {
        (0..self.dim()).map(|k| self.width(k)).fold(T::one(), |a, b| a * b)
    }

    /// Dimensions that had zero width when the box was fitted.
    pub fn widened(&self) -> &[usize] {
        &self.widened
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| x >= l && x <= u)
    }

    #[inline]
    pub fn scale_point(&self, x: &[T], out: &mut [T]) {
        for k in 0..x.len() {
            out[k] = (x[k] - self.lower[k]) / (self.upper[k] - self.lower[k]);
        }
    }

    #[inline]
    pub fn unscale_point(&self, s: &[T], out: &mut [T]) {
        for k in 0..s.len() {
            out[k] = self.lower[k] + s[k] * (self.upper[k] - self.lower[k]);
        }
    }

    pub fn unscale(&self, samples: &SampleSet<T>) -> Result<SampleSet<T>> {
        samples.check_dim(self.dim())?;
        let mut out = samples.clone();
        let d = self.dim();
        for row in out.data_mut().chunks_exact_mut(d) {
            let src = row.to_vec();
            self.unscale_point(&src, row);
        }
        Ok(out)
    }
}

/// Closed axis-aligned box `{x : lower ⪯ x ⪯ upper}`; empty when any
/// `lower_k > upper_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> Region<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        Ok(Self { lower, upper })
    }

    /// All of space.
    pub fn everything(dim: usize) -> Self {
        Self { lower: vec![T::neg_infinity(); dim], upper: vec![T::infinity(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    #[inline]
    pub fn contains(&self, x: &[T]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&l, &u))| l <= v && v <= u)
    }

    /// Number of `samples` inside.
    pub fn count(&self, samples: &SampleSet<T>) -> usize {
        samples.iter().filter(|x| self.contains(x)).count()
    }
}

/// Fits the component-wise bounding box of `samples`, extending each side by
/// `padding` times the width.
///
/// A dimension in which all samples agree is widened by [`DEGENERATE_WIDTH`]
/// on both sides and recorded in [`BoxScaler::widened`].
pub fn fit_box<T: Real>(samples: &SampleSet<T>, padding: T) -> Result<BoxScaler<T>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(padding >= T::zero()) {
        return Err(Error::param("padding must be nonnegative"));
    }
    let d = samples.dim();
    let mut lower = samples.point(0).to_vec();
    let mut upper = lower.clone();
    for p in samples.iter() {
        for k in 0..d {
            lower[k] = lower[k].min(p[k]);
            upper[k] = upper[k].max(p[k]);
        }
    }
    let mut widened = Vec::new();
    for k in 0..d {
        let width = upper[k] - lower[k];
        if width > T::zero() {
            lower[k] = lower[k] - padding * width;
            upper[k] = upper[k] + padding * width;
        } else {
            // keep the epsilon representable next to large coordinates
            let eps = T::lit(DEGENERATE_WIDTH).max(lower[k].abs() * T::epsilon() * T::lit(4.0));
            lower[k] = lower[k] - eps;
            upper[k] = upper[k] + eps;
            widened.push(k);
        }
    }
    if !widened.is_empty() {
        log::warn!("zero-width dimensions {widened:?} widened by {DEGENERATE_WIDTH:e}");
    }
    let mut b = BoxScaler::new(lower, upper)?;
    b.widened = widened;
    Ok(b)
}

/// Maps each coordinate to `(x_k - lower_k) / (upper_k - lower_k)`.
pub fn scale_to_unit<T: Real>(samples: &SampleSet<T>, bbox: &BoxScaler<T>) -> Result<SampleSet<T>> {
    samples.check_dim(bbox.dim())?;
    let mut out = samples.clone();
    let d = bbox.dim();
    for row in out.data_mut().chunks_exact_mut(d) {
        let src = row.to_vec();
        bbox.scale_point(&src, row);
    }
    Ok(out)
}
