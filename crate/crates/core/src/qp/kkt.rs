//! Optimality certificate for the simplex-constrained QP.
//!
//! For `min ½wᵀHw − bᵀw` subject to `w ⪰ 0`, `(1/ℓ) Σ w_i = 1`, the KKT
//! conditions read `Hw − b + (ν/ℓ)·1 − μ = 0`, `μ ⪰ 0`, `μ_i w_i = 0`.
//! Given `w`, the multiplier `ν` is chosen to balance the gradient over the
//! support of `w`, and `μ` is the nonnegative part of the shifted gradient.

use serde::{Deserialize, Serialize};

use super::assembly::QpProblem;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖min(0, Hw − b + ν/ℓ)‖_∞`: the part no admissible `μ` can absorb.
    pub stationarity_residual: f64,
    /// `max(|(1/ℓ)Σw − 1|, max_i(−w_i))`.
    pub feasibility_residual: f64,
    /// `max_i |μ_i w_i|`.
    pub complementarity_residual: f64,
    /// Equality multiplier `ν`.
    pub nu: f64,
    pub pass: bool,
}

/// Support threshold relative to the mean-one scale of the weights.
const SUPPORT_EPS: f64 = 1e-9;

pub fn verify_kkt<T: Real>(problem: &QpProblem<T>, w: &[T], tol: f64) -> KktReport {
    assert_eq!(w.len(), problem.ell(), "weight length does not match problem size");
    let ell = problem.ell();
    let hw = problem.h.mul_vec(w);
    let g: Vec<f64> = hw.iter().zip(&problem.b).map(|(&a, &b)| (a - b).as_f64()).collect();
    let wf: Vec<f64> = w.iter().map(|x| x.as_f64()).collect();

    let support: Vec<usize> = (0..ell).filter(|&i| wf[i] > SUPPORT_EPS).collect();
    let (gmin, gmax) = support
        .iter()
        .map(|&i| g[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    // shift = ν/ℓ; balance the support gradient
    let shift = if support.is_empty() { -g.iter().cloned().fold(f64::INFINITY, f64::min) } else { -(gmin + gmax) / 2.0 };

    let mut stat = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..ell {
        let r = g[i] + shift;
        let mu = r.max(0.0);
        stat = stat.max((-r).max(0.0));
        comp = comp.max((mu * wf[i]).abs());
    }
    let mean = wf.iter().sum::<f64>() / ell as f64;
    let neg = wf.iter().fold(0.0f64, |a, &x| a.max(-x));
    let feas = (mean - 1.0).abs().max(neg);
    KktReport {
        stationarity_residual: stat,
        feasibility_residual: feas,
        complementarity_residual: comp,
        nu: shift * ell as f64,
        pass: stat <= tol && feas <= tol && comp <= tol,
    }
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_residual.max(self.feasibility_residual).max(self.complementarity_residual)
    }
}
