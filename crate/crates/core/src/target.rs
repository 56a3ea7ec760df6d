//! Target distributions: an evaluable CDF or an empirical sample set.

use std::fmt;
use std::sync::Arc;

use crate::edf::DistributionFunction;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::samples::{scale_to_unit, BoxScaler, SampleSet};

/// A CDF that can be evaluated pointwise.
pub trait ExactCdf<T>: Send + Sync {
    fn dim(&self) -> usize;

    fn cdf(&self, x: &[T]) -> T;

    /// `∫_a^b F(x) dx` in closed form, for one-dimensional targets that have one.
    fn integral_1d(&self, _a: T, _b: T) -> Option<T> {
        None
    }
}

/// Closure-backed CDF without a closed-form integral.
pub struct FnCdf<F> {
    dim: usize,
    f: F,
}

impl<F> FnCdf<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F: Fn(&[T]) -> T + Send + Sync> ExactCdf<T> for FnCdf<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn cdf(&self, x: &[T]) -> T {
        (self.f)(x)
    }
}

/// An exact CDF viewed in the unit-box coordinates of `bbox`.
pub struct ScaledCdf<T> {
    inner: Arc<dyn ExactCdf<T>>,
    bbox: BoxScaler<T>,
}

impl<T: Real> ScaledCdf<T> {
    pub fn new(inner: Arc<dyn ExactCdf<T>>, bbox: BoxScaler<T>) -> Result<Self> {
        if inner.dim() != bbox.dim() {
            return Err(Error::DimensionMismatch { expected: bbox.dim(), got: inner.dim() });
        }
        Ok(Self { inner, bbox })
    }
}

impl<T: Real> ExactCdf<T> for ScaledCdf<T> {
    fn dim(&self) -> usize {
        self.bbox.dim()
    }

    fn cdf(&self, s: &[T]) -> T {
        let mut x = vec![T::zero(); s.len()];
        self.bbox.unscale_point(s, &mut x);
        self.inner.cdf(&x)
    }

    fn integral_1d(&self, a: T, b: T) -> Option<T> {
        let lo = self.bbox.lower()[0];
        let w = self.bbox.width(0);
        self.inner.integral_1d(lo + a * w, lo + b * w).map(|v| v / w)
    }
}

/// What the reweighted distribution should match.
#[derive(Clone)]
pub enum TargetDistribution<T> {
    Exact(Arc<dyn ExactCdf<T>>),
    Empirical(SampleSet<T>),
}

impl<T> fmt::Debug for TargetDistribution<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetDistribution::Exact(c) => write!(f, "Exact(dim={})", c.dim()),
            TargetDistribution::Empirical(_) => write!(f, "Empirical"),
        }
    }
}

impl<T: Real> TargetDistribution<T> {
    pub fn exact(cdf: impl ExactCdf<T> + 'static) -> Self {
        TargetDistribution::Exact(Arc::new(cdf))
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetDistribution::Exact(c) => c.dim(),
            TargetDistribution::Empirical(s) => s.dim(),
        }
    }

    /// Re-expresses the target in the unit coordinates of `bbox`.
    pub fn scaled(&self, bbox: &BoxScaler<T>) -> Result<Self> {
        match self {
            TargetDistribution::Exact(c) => {
                Ok(TargetDistribution::Exact(Arc::new(ScaledCdf::new(c.clone(), bbox.clone())?)))
            }
            TargetDistribution::Empirical(s) => {
                if s.is_empty() {
                    return Err(Error::EmptySamples);
                }
                Ok(TargetDistribution::Empirical(scale_to_unit(s, bbox)?))
            }
        }
    }

    /// Spot-checks monotonicity along the diagonal of `bbox` and that the CDF
    /// stays within [0, 1]; empirical targets are always valid.
    pub fn spot_check(&self, bbox: &BoxScaler<T>) -> Result<()> {
        let TargetDistribution::Exact(c) = self else { return Ok(()) };
        let d = bbox.dim();
        let tol = T::lit(1e-6);
        let mut prev = T::neg_infinity();
        let mut x = vec![T::zero(); d];
        for i in 0..=16 {
            let s = vec![T::from_usize_lossy(i) / T::lit(16.0); d];
            bbox.unscale_point(&s, &mut x);
            let v = c.cdf(&x);
            if !(v >= -tol && v <= T::one() + tol) || v + tol < prev {
                return Err(Error::param(format!("target CDF is not a distribution function near {x:?}")));
            }
            prev = v;
        }
        Ok(())
    }
}

impl<T: Real> DistributionFunction<T> for TargetDistribution<T> {
    fn dim(&self) -> usize {
        TargetDistribution::dim(self)
    }
    fn eval(&self, x: &[T]) -> T {
        match self {
            TargetDistribution::Exact(c) => c.cdf(x),
            TargetDistribution::Empirical(s) => DistributionFunction::eval(s, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform01;
    impl ExactCdf<f64> for Uniform01 {
        fn dim(&self) -> usize {
            1
        }
        fn cdf(&self, x: &[f64]) -> f64 {
            x[0].clamp(0.0, 1.0)
        }
        fn integral_1d(&self, a: f64, b: f64) -> Option<f64> {
            let prim = |x: f64| if x <= 0.0 { 0.0 } else if x >= 1.0 { x - 0.5 } else { 0.5 * x * x };
            Some(prim(b) - prim(a))
        }
    }

    #[test]
    fn scaled_cdf_maps_coordinates() {
        let b = BoxScaler::new(vec![0.5], vec![1.0]).unwrap();
        let s = ScaledCdf::new(Arc::new(Uniform01), b).unwrap();
        assert!((s.cdf(&[0.5]) - 0.75).abs() < 1e-15);
        // ∫_0^1 F(0.5 + 0.5 s) ds = 2 ∫_{0.5}^{1} x dx = 0.75
        assert!((s.integral_1d(0.0, 1.0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn spot_check_rejects_decreasing() {
        let t = TargetDistribution::exact(FnCdf::new(1, |x: &[f64]| 1.0 - x[0]));
        assert!(t.spot_check(&BoxScaler::unit(1)).is_err());
        let t = TargetDistribution::exact(Uniform01);
        assert!(t.spot_check(&BoxScaler::unit(1)).is_ok());
    }

    #[test]
    fn empty_empirical_target_rejected() {
        let t = TargetDistribution::Empirical(SampleSet::<f64>::empty(1));
        assert!(t.scaled(&BoxScaler::unit(1)).is_err());
    }
}
