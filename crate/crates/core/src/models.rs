//! Benchmark QoI maps, target distributions and initial samplers.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::SampleSource;
use crate::error::{Error, Result};
use crate::samples::{BoxScaler, SampleSet};
use crate::target::ExactCdf;

/// A map from parameter space to data space.
pub trait QoiMap: Send + Sync {
    fn param_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn eval_into(&self, lambda: &[f64], out: &mut [f64]);

    /// Evaluates the map at every sample, in parallel.
    fn push_forward(&self, params: &SampleSet<f64>) -> Result<SampleSet<f64>> {
        params.check_dim(self.param_dim())?;
        let dd = self.data_dim();
        let mut data = vec![0.0; params.len() * dd];
        data.par_chunks_mut(dd).enumerate().for_each(|(i, out)| self.eval_into(params.point(i), out));
        SampleSet::from_flat(dd, data)
    }
}

/// `Q(λ) = λ`; useful when the parameters are observed directly.
#[derive(Clone, Debug)]
pub struct IdentityMap {
    pub dim: usize,
}

impl QoiMap for IdentityMap {
    fn param_dim(&self) -> usize {
        self.dim
    }
    fn data_dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, lambda: &[f64], out: &mut [f64]) {
        out.copy_from_slice(lambda);
    }
}

/// Which closed form of the rod temperature to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatFormula {
    /// `(2/π) Σ (−1)^{k+1}/k · exp(−κ kπ t/ℓ²) · sin(kπx/ℓ)`.
    #[default]
    Normalized,
    /// The same series with prefactor `2ℓ²/π`.
    Printed,
    /// Separation of variables for `u_t = κ u_xx`, `u(x,0) = x`:
    /// `(2ℓ/π) Σ (−1)^{k+1}/k · exp(−κ (kπ/ℓ)² t) · sin(kπx/ℓ)`.
    Textbook,
}

/// Heat rod with a single sensor; `λ = (ℓ, κ)` is rod length and diffusivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatRodParams {
    pub x_star: f64,
    pub t_star: f64,
    pub truncation: usize,
    pub lambda_lower: [f64; 2],
    pub lambda_upper: [f64; 2],
    pub formula: HeatFormula,
}

impl Default for HeatRodParams {
    fn default() -> Self {
        Self {
            x_star: 1.2,
            t_star: 0.01,
            truncation: 100,
            lambda_lower: [1.9, 0.5],
            lambda_upper: [2.1, 1.5],
            formula: HeatFormula::Normalized,
        }
    }
}

impl HeatRodParams {
    pub fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(Error::param("truncation must be at least 1"));
        }
        if self.lambda_lower.iter().zip(&self.lambda_upper).any(|(l, u)| !(l < u)) {
            return Err(Error::param("empty parameter box"));
        }
        if !(self.x_star > 0.0 && self.x_star < self.lambda_lower[0]) {
            return Err(Error::param("sensor must lie inside every rod: 0 < x* < min ℓ"));
        }
        if !(self.t_star >= 0.0) {
            return Err(Error::param("t* must be nonnegative"));
        }
        Ok(())
    }

    pub fn lambda_box(&self) -> BoxScaler<f64> {
        BoxScaler::new(self.lambda_lower.to_vec(), self.lambda_upper.to_vec()).expect("validated box")
    }
}

#[derive(Clone, Debug)]
pub struct HeatRod {
    pub params: HeatRodParams,
}

impl HeatRod {
    pub fn new(params: HeatRodParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    /// Sensor temperature at `λ = (ℓ, κ)`.
    pub fn qoi(&self, lambda: &[f64]) -> f64 {
        heat_qoi(&self.params, lambda[0], lambda[1])
    }
}

impl QoiMap for HeatRod {
    fn param_dim(&self) -> usize {
        2
    }
    fn data_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, lambda: &[f64], out: &mut [f64]) {
        out[0] = self.qoi(lambda);
    }
}

/// Partial sum of the rod-temperature series at `(x*, t*)`.
pub fn heat_qoi(p: &HeatRodParams, ell: f64, kappa: f64) -> f64 {
    let lo = p.lambda_lower;
    let hi = p.lambda_upper;
    if ell < lo[0] || ell > hi[0] || kappa < lo[1] || kappa > hi[1] {
        log::warn!("heat_qoi evaluated outside Λ at ({ell}, {kappa})");
    }
    let theta = PI * p.x_star / ell;
    let mut s = 0.0;
    let mut sign = 1.0;
    for k in 1..=p.truncation {
        let kf = k as f64;
        let decay = match p.formula {
            HeatFormula::Normalized | HeatFormula::Printed => -kappa * kf * PI * p.t_star / (ell * ell),
            HeatFormula::Textbook => -kappa * (kf * PI / ell).powi(2) * p.t_star,
        };
        s += sign / kf * decay.exp() * (kf * theta).sin();
        sign = -sign;
    }
    let pre = match p.formula {
        HeatFormula::Normalized => 2.0 / PI,
        HeatFormula::Printed => 2.0 * ell * ell / PI,
        HeatFormula::Textbook => 2.0 * ell / PI,
    };
    pre * s
}

/// `Φ((q − μ)/σ)` through the complementary error function.
pub fn normal_cdf(mu: f64, sigma: f64, q: f64) -> f64 {
    0.5 * libm::erfc(-(q - mu) / (sigma * std::f64::consts::SQRT_2))
}

fn normal_pdf_std(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

// ∫ Φ(z) dz = z Φ(z) + φ(z)
fn normal_cdf_antiderivative(mu: f64, sigma: f64, x: f64) -> f64 {
    let z = (x - mu) / sigma;
    sigma * (z * normal_cdf(0.0, 1.0, z) + normal_pdf_std(z))
}

/// One-dimensional normal CDF, optionally truncated to `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalCdf {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<[f64; 2]>,
}

impl NormalCdf {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::param("normal needs finite μ and σ > 0"));
        }
        Ok(Self { mu, sigma, truncate: None })
    }

    pub fn truncated(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        let mut n = Self::new(mu, sigma)?;
        if !(lo < hi) {
            return Err(Error::param("empty truncation interval"));
        }
        n.truncate = Some([lo, hi]);
        Ok(n)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.truncate {
            None => normal_cdf(self.mu, self.sigma, x),
            Some([lo, hi]) => {
                let (fl, fh) = (normal_cdf(self.mu, self.sigma, lo), normal_cdf(self.mu, self.sigma, hi));
                ((normal_cdf(self.mu, self.sigma, x.clamp(lo, hi)) - fl) / (fh - fl)).clamp(0.0, 1.0)
            }
        }
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let g = |x: f64| normal_cdf_antiderivative(self.mu, self.sigma, x);
        match self.truncate {
            None => g(b) - g(a),
            Some([lo, hi]) => {
                let (fl, fh) = (normal_cdf(self.mu, self.sigma, lo), normal_cdf(self.mu, self.sigma, hi));
                // F_T = (Φ − Φ(lo))/(Φ(hi) − Φ(lo)) on [lo, hi], 0 below, 1 above
                let seg = |a: f64, b: f64| {
                    if b <= a {
                        0.0
                    } else {
                        (g(b) - g(a) - fl * (b - a)) / (fh - fl)
                    }
                };
                seg(a.max(lo), b.min(hi)) + (b - a.max(hi)).max(0.0)
            }
        }
    }
}

impl ExactCdf<f64> for NormalCdf {
    fn dim(&self) -> usize {
        1
    }
    fn cdf(&self, x: &[f64]) -> f64 {
        self.eval(x[0])
    }
    fn integral_1d(&self, a: f64, b: f64) -> Option<f64> {
        Some(self.integral(a, b))
    }
}

// ∫_{-∞}^x of the U(lo, hi) CDF
fn uniform_antiderivative(lo: f64, hi: f64, x: f64) -> f64 {
    let w = hi - lo;
    if x <= lo {
        0.0
    } else if x >= hi {
        x - lo - 0.5 * w
    } else {
        (x - lo) * (x - lo) / (2.0 * w)
    }
}

/// Product of independent uniforms on a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformCdf {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl UniformCdf {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        BoxScaler::new(lower.clone(), upper.clone())?;
        Ok(Self { lower, upper })
    }
}

impl ExactCdf<f64> for UniformCdf {
    fn dim(&self) -> usize {
        self.lower.len()
    }
    fn cdf(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| ((v - l) / (u - l)).clamp(0.0, 1.0))
            .product()
    }
    fn integral_1d(&self, a: f64, b: f64) -> Option<f64> {
        (self.dim() == 1).then(|| {
            uniform_antiderivative(self.lower[0], self.upper[0], b) - uniform_antiderivative(self.lower[0], self.upper[0], a)
        })
    }
}

/// Finite mixture of uniforms on disjoint, ordered intervals `(lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureOfUniforms {
    /// `(weight, lo, hi)` per component.
    pub components: Vec<(f64, f64, f64)>,
}

impl MixtureOfUniforms {
    pub fn new(components: Vec<(f64, f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("mixture needs at least one component"));
        }
        for &(w, lo, hi) in &components {
            if !(w > 0.0) || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::param("mixture components need positive weight and lo < hi"));
            }
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("mixture weights sum to {total}")));
        }
        if components.windows(2).any(|w| w[0].2 > w[1].1) {
            return Err(Error::param("mixture intervals must be ordered and disjoint"));
        }
        Ok(Self { components })
    }

    /// `0.5 U((0.585,0.59]) + 0.1 U((0.59,0.595]) + 0.4 U((0.595,0.6])`.
    pub fn heat_rod_example() -> Self {
        Self::new(vec![(0.5, 0.585, 0.59), (0.1, 0.59, 0.595), (0.4, 0.595, 0.6)]).expect("valid mixture")
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.components.iter().map(|&(w, lo, hi)| w * ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).sum::<f64>().min(1.0)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.components[0].1, self.components[self.components.len() - 1].2)
    }
}

/// Mixture CDF at `q`.
pub fn mixture_cdf(mix: &MixtureOfUniforms, q: f64) -> f64 {
    mix.eval(q)
}

impl ExactCdf<f64> for MixtureOfUniforms {
    fn dim(&self) -> usize {
        1
    }
    fn cdf(&self, x: &[f64]) -> f64 {
        self.eval(x[0])
    }
    fn integral_1d(&self, a: f64, b: f64) -> Option<f64> {
        Some(
            self.components
                .iter()
                .map(|&(w, lo, hi)| w * (uniform_antiderivative(lo, hi, b) - uniform_antiderivative(lo, hi, a)))
                .sum(),
        )
    }
}

/// A distribution that can be sampled from a caller-owned generator.
pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample_into(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>);

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<SampleSet<f64>> {
        let mut out = Vec::with_capacity(n * self.dim());
        self.sample_into(rng, n, &mut out);
        SampleSet::from_flat(self.dim(), out)
    }
}

/// Uniform on a box.
#[derive(Clone, Debug)]
pub struct UniformBox(pub BoxScaler<f64>);

impl Sampler for UniformBox {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn sample_into(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>) {
        for _ in 0..n {
            for k in 0..self.0.dim() {
                out.push(self.0.lower()[k] + rng.random::<f64>() * self.0.width(k));
            }
        }
    }
}

impl Sampler for NormalCdf {
    fn dim(&self) -> usize {
        1
    }
    fn sample_into(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>) {
        let dist = Normal::new(self.mu, self.sigma).expect("validated σ");
        let mut drawn = 0;
        while drawn < n {
            let x = dist.sample(rng);
            if let Some([lo, hi]) = self.truncate {
                if x < lo || x > hi {
                    continue;
                }
            }
            out.push(x);
            drawn += 1;
        }
    }
}

impl Sampler for MixtureOfUniforms {
    fn dim(&self) -> usize {
        1
    }
    fn sample_into(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>) {
        for _ in 0..n {
            let mut u = rng.random::<f64>();
            let mut comp = self.components[self.components.len() - 1];
            for &c in &self.components {
                if u < c.0 {
                    comp = c;
                    break;
                }
                u -= c.0;
            }
            // (lo, hi]
            out.push(comp.2 - rng.random::<f64>() * (comp.2 - comp.1));
        }
    }
}

pub fn uniform_sampler(bbox: &BoxScaler<f64>, n: usize, seed: u64) -> Result<SampleSet<f64>> {
    UniformBox(bbox.clone()).sample(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

pub fn normal_sampler(mu: f64, sigma: f64, n: usize, seed: u64) -> Result<SampleSet<f64>> {
    NormalCdf::new(mu, sigma)?.sample(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

pub fn mixture_sampler(mix: &MixtureOfUniforms, n: usize, seed: u64) -> Result<SampleSet<f64>> {
    mix.sample(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

/// Draws initial samples and pushes them through a model, one batch at a time.
pub struct ModelSource {
    model: Arc<dyn QoiMap>,
    sampler: Arc<dyn Sampler>,
    rng: ChaCha8Rng,
}

impl ModelSource {
    pub fn new(model: Arc<dyn QoiMap>, sampler: Arc<dyn Sampler>, seed: u64) -> Result<Self> {
        if model.param_dim() != sampler.dim() {
            return Err(Error::DimensionMismatch { expected: model.param_dim(), got: sampler.dim() });
        }
        Ok(Self { model, sampler, rng: ChaCha8Rng::seed_from_u64(seed) })
    }
}

impl SampleSource<f64> for ModelSource {
    fn dims(&self) -> (usize, usize) {
        (self.model.param_dim(), self.model.data_dim())
    }

    fn next_batch(&mut self, n: usize) -> Result<(SampleSet<f64>, SampleSet<f64>)> {
        let params = self.sampler.sample(&mut self.rng, n)?;
        let data = self.model.push_forward(&params)?;
        Ok((params, data))
    }
}
