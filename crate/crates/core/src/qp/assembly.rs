//! Assembly of the quadratic program on unit-box samples.
//!
//! With `F_w(q) = (1/ℓ) Σ w_i I(q^i ⪯ q)`, the squared L² misfit over the unit
//! box expands to `wᵀ H w − 2 bᵀ w + const` with
//!
//! ```text
//! H_ij = (1/ℓ²) ∏_k (1 − max(q_k^i, q_k^j))
//! b_i  = (1/ℓ)  ∫_{[q^i, 1]} F_targ(q) dq
//! ```
//!
//! Both `H` and the empirical-target `b` are evaluated in closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quadrature::gauss_legendre;
use crate::real::Real;
use crate::samples::SampleSet;
use crate::target::{ExactCdf, TargetDistribution};

/// Default number of Gauss–Legendre nodes per dimension for exact-CDF targets.
pub const DEFAULT_QUAD_POINTS: usize = 64;

/// Magnitude of the jitter applied to duplicated samples.
pub const DUPLICATE_JITTER: f64 = 1e-10;

const UNIT_SLACK: f64 = 1e-12;

/// `H` and `b` of the weight-fitting QP.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem<T> {
    pub h: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Real> QpProblem<T> {
    pub fn new(h: Matrix<T>, b: Vec<T>) -> Result<Self> {
        if h.n() != b.len() {
            return Err(Error::DimensionMismatch { expected: h.n(), got: b.len() });
        }
        if h.n() == 0 {
            return Err(Error::EmptySamples);
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("b has non-finite entries"));
        }
        Ok(Self { h, b })
    }

    #[inline]
    pub fn ell(&self) -> usize {
        self.b.len()
    }

    /// `½ wᵀHw − bᵀw`, half the squared L² misfit up to a constant.
    pub fn objective(&self, w: &[T]) -> T {
        T::lit(0.5) * self.h.quad_form(w) - crate::linalg::dot(&self.b, w)
    }
}

fn check_unit<T: Real>(samples: &SampleSet<T>) -> Result<()> {
    let slack = T::lit(UNIT_SLACK);
    for (i, p) in samples.iter().enumerate() {
        if let Some(&v) = p.iter().find(|&&v| v < -slack || v > T::one() + slack) {
            return Err(Error::OutsideUnitBox { index: i, value: v.as_f64() });
        }
    }
    Ok(())
}

#[inline]
fn overlap<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::one(), |acc, (&x, &y)| acc * (T::one() - x.max(y)).max(T::zero()))
}

/// `H_ij = (1/ℓ²) ∏_k (1 − max(q_k^i, q_k^j))`; bit-symmetric by construction.
pub fn assemble_h<T: Real>(samples: &SampleSet<T>) -> Result<Matrix<T>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_unit(samples)?;
    let ell = samples.len();
    let scale = T::one() / T::from_usize_lossy(ell * ell);
    let upper: Vec<Vec<T>> = (0..ell)
        .into_par_iter()
        .map(|i| {
            let qi = samples.point(i);
            (i..ell).map(|j| scale * overlap(qi, samples.point(j))).collect()
        })
        .collect();
    let mut data = vec![T::zero(); ell * ell];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            data[i * ell + j] = v;
            data[j * ell + i] = v;
        }
    }
    Ok(Matrix::from_flat(ell, data))
}

/// `b_i = (1/(ℓ m)) Σ_j ∏_k max(0, 1 − max(q_k^i, y_k^j))`: the exact integral
/// of the target EDF over `[q^i, 1]`. Target points above the unit box
/// contribute nothing, those below it behave as if at the lower face.
pub fn assemble_b_empirical<T: Real>(samples: &SampleSet<T>, target: &SampleSet<T>) -> Result<Vec<T>> {
    samples.check_dim(target.dim())?;
    if target.is_empty() || samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_unit(samples)?;
    let ell = samples.len();
    let m = target.len();
    let scale = T::one() / (T::from_usize_lossy(ell) * T::from_usize_lossy(m));
    if samples.dim() == 1 {
        return Ok(b_empirical_1d(samples, target, scale));
    }
    Ok((0..ell)
        .into_par_iter()
        .map(|i| {
            let qi = samples.point(i);
            let s: T = target.iter().map(|y| overlap(qi, y)).sum();
            s * scale
        })
        .collect())
}

// Σ_j max(0, 1 − max(q, y_j)) = (1 − q) #{y_j ≤ q} + Σ_{q < y_j} max(0, 1 − y_j)
fn b_empirical_1d<T: Real>(samples: &SampleSet<T>, target: &SampleSet<T>, scale: T) -> Vec<T> {
    let mut ys: Vec<T> = target.as_flat().to_vec();
    ys.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // suffix[j] = Σ_{k ≥ j} max(0, 1 − y_k)
    let mut suffix = vec![T::zero(); ys.len() + 1];
    for j in (0..ys.len()).rev() {
        suffix[j] = suffix[j + 1] + (T::one() - ys[j]).max(T::zero());
    }
    samples
        .as_flat()
        .par_iter()
        .map(|&q| {
            let below = ys.partition_point(|&y| y <= q);
            let s = (T::one() - q).max(T::zero()) * T::from_usize_lossy(below) + suffix[below];
            s * scale
        })
        .collect()
}

/// `b_i = (1/ℓ) ∫_{[q^i,1]} F(q) dq` for a CDF given in unit-box coordinates.
///
/// One-dimensional targets with a closed-form integral use it; everything else
/// goes through tensor-product Gauss–Legendre quadrature with
/// `quad_points_per_dim` nodes per dimension.
pub fn assemble_b_exact<T: Real>(
    samples: &SampleSet<T>,
    cdf: &dyn ExactCdf<T>,
    quad_points_per_dim: usize,
) -> Result<Vec<T>> {
    samples.check_dim(cdf.dim())?;
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_unit(samples)?;
    let ell = T::from_usize_lossy(samples.len());
    let d = samples.dim();
    if d == 1 && cdf.integral_1d(T::zero(), T::one()).is_some() {
        return samples
            .as_flat()
            .iter()
            .map(|&q| {
                cdf.integral_1d(q.min(T::one()), T::one())
                    .map(|v| v / ell)
                    .ok_or_else(|| Error::param("closed-form integral unavailable"))
            })
            .collect();
    }
    if quad_points_per_dim < 2 {
        return Err(Error::param("quad_points_per_dim must be at least 2"));
    }
    let (nodes, weights) = gauss_legendre(quad_points_per_dim);
    let nodes: Vec<T> = nodes.into_iter().map(T::lit).collect();
    let weights: Vec<T> = weights.into_iter().map(T::lit).collect();
    let total = quad_points_per_dim.pow(d as u32);
    let out: Vec<T> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let lo = samples.point(i);
            let mut x = vec![T::zero(); d];
            let mut acc = T::zero();
            for idx in 0..total {
                let mut rem = idx;
                let mut w = T::one();
                for k in 0..d {
                    let j = rem % quad_points_per_dim;
                    rem /= quad_points_per_dim;
                    let a = lo[k].min(T::one());
                    let half = (T::one() - a) * T::lit(0.5);
                    x[k] = a + half * (nodes[j] + T::one());
                    w = w * weights[j] * half;
                }
                acc = acc + w * cdf.cdf(&x);
            }
            acc / ell
        })
        .collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::param(format!("target CDF is not evaluable near sample {i}")));
    }
    Ok(out)
}

/// `b` for either kind of (already unit-scaled) target.
pub fn assemble_b<T: Real>(
    samples: &SampleSet<T>,
    target: &TargetDistribution<T>,
    quad_points_per_dim: usize,
) -> Result<Vec<T>> {
    match target {
        TargetDistribution::Exact(c) => assemble_b_exact(samples, c.as_ref(), quad_points_per_dim),
        TargetDistribution::Empirical(y) => assemble_b_empirical(samples, y),
    }
}

/// Replaces exact duplicate points by copies jittered uniformly within
/// [`DUPLICATE_JITTER`] per coordinate (kept inside the unit box). Returns the
/// number of points moved. The jitter stream is seeded, so results are
/// reproducible.
pub fn jitter_duplicates<T: Real>(samples: &mut SampleSet<T>, seed: u64) -> usize {
    let d = samples.dim();
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    {
        let data = samples.as_flat();
        order.sort_by(|&a, &b| {
            data[a * d..(a + 1) * d]
                .iter()
                .zip(&data[b * d..(b + 1) * d])
                .map(|(x, y)| x.partial_cmp(y).expect("finite"))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = DUPLICATE_JITTER;
    let mut moved = 0;
    let original = samples.as_flat().to_vec();
    let data = samples.data_mut();
    for w in 1..order.len() {
        let (a, b) = (order[w - 1], order[w]);
        if original[a * d..(a + 1) * d] == original[b * d..(b + 1) * d] {
            for k in 0..d {
                let v = data[b * d + k].as_f64();
                let mut j = v + rng.random_range(-eps..eps);
                if !(0.0..=1.0).contains(&j) {
                    j = 2.0 * v - j;
                }
                data[b * d + k] = T::lit(j.clamp(0.0, 1.0));
            }
            moved += 1;
        }
    }
    if moved > 0 {
        log::warn!("{moved} duplicated samples jittered by up to {eps:e}");
    }
    moved
}

/// Assembles the QP for unit-box samples against a unit-scaled target.
pub fn build_problem<T: Real>(
    samples: &SampleSet<T>,
    target: &TargetDistribution<T>,
    quad_points_per_dim: usize,
) -> Result<QpProblem<T>> {
    let h = assemble_h(samples)?;
    let b = assemble_b(samples, target, quad_points_per_dim)?;
    QpProblem::new(h, b)
}
