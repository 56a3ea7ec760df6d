//! Primal active-set solver for
//!
//! ```text
//! minimize   ½ wᵀ H w − bᵀ w
//! subject to w ⪰ 0,  (1/ℓ) Σ w_i = 1
//! ```
//!
//! The working set holds the indices pinned at zero. Each iteration solves the
//! equality-constrained problem on the free indices through an incrementally
//! updated Cholesky factor of `H_FF`. The iteration starts at the all-ones
//! vector, which is always feasible. A repeated working set switches to
//! projected gradient descent with exact projection onto the scaled simplex.

use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::assembly::QpProblem;
use super::kkt::{verify_kkt, KktReport};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::real::Real;
use crate::samples::{Normalization, WeightVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    /// `None` means `50 ℓ`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    ActiveSet,
    ProjectedGradient,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QpSolution<T> {
    pub weights: WeightVector<T>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: SolverMethod,
    pub kkt: KktReport,
    /// Objective after each accepted step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

/// Solves the weight-fitting QP.
///
/// Fails only when `H` is not positive definite on some free set; running out
/// of iterations returns the best iterate with `converged = false`.
pub fn solve_qp<T: Real>(problem: &QpProblem<T>, opts: &SolverOptions) -> Result<QpSolution<T>> {
    if !(opts.tol > 0.0) {
        return Err(Error::param("tol must be positive"));
    }
    let ell = problem.ell();
    let max_iter = opts.max_iter.unwrap_or(50 * ell).max(1);

    let (raw, iterations, method, trace) = match active_set(problem, opts.tol, max_iter)? {
        ActiveSetOutcome::Done { w, iterations, trace } => (w, iterations, SolverMethod::ActiveSet, trace),
        ActiveSetOutcome::Cycled { w, iterations, mut trace } => {
            log::warn!("active-set working set repeated; switching to projected gradient");
            let (w, it, t) = projected_gradient(problem, w, opts.tol, max_iter);
            trace.extend(t);
            (w, iterations + it, SolverMethod::ProjectedGradient, trace)
        }
    };
    finish(problem, raw, iterations, method, trace, opts.tol)
}

fn finish<T: Real>(
    problem: &QpProblem<T>,
    mut w: Vec<T>,
    iterations: usize,
    method: SolverMethod,
    trace: Vec<f64>,
    tol: f64,
) -> Result<QpSolution<T>> {
    let tol_t = T::lit(tol);
    for x in w.iter_mut() {
        if *x < T::zero() {
            if *x < -tol_t {
                log::warn!("solver returned weight {x} below -tol; clipping");
            }
            *x = T::zero();
        }
    }
    let weights = WeightVector::normalized(w, Normalization::MeanOne)?;
    let kkt = verify_kkt(problem, weights.as_slice(), tol);
    let objective = problem.objective(weights.as_slice()).as_f64();
    let converged = kkt.pass;
    if !converged {
        log::warn!("QP finished with KKT residual {:e} > tol {tol:e}", kkt.max_residual());
    }
    Ok(QpSolution { weights, objective, iterations, converged, method, kkt, trace })
}

enum ActiveSetOutcome<T> {
    Done { w: Vec<T>, iterations: usize, trace: Vec<f64> },
    Cycled { w: Vec<T>, iterations: usize, trace: Vec<f64> },
}

fn working_set_hash(free: &[usize]) -> u64 {
    let mut sorted = free.to_vec();
    sorted.sort_unstable();
    let mut h = DefaultHasher::new();
    sorted.hash(&mut h);
    h.finish()
}

fn active_set<T: Real>(problem: &QpProblem<T>, tol: f64, max_iter: usize) -> Result<ActiveSetOutcome<T>> {
    let ell = problem.ell();
    let h = &problem.h;
    let b = &problem.b;
    let target_sum = T::from_usize_lossy(ell);
    let scale = b.iter().fold(T::zero(), |a, &x| a.max(x.abs())).max(T::epsilon());
    // multipliers above this are treated as nonnegative
    let mu_floor = -(T::lit(0.01 * tol).max(T::lit(1e3) * T::epsilon() * scale));

    let mut w = vec![T::one(); ell];
    let mut free: Vec<usize> = (0..ell).collect();
    let mut is_free = vec![true; ell];
    let mut chol = Cholesky::with_capacity(ell);
    for (pos, &i) in free.iter().enumerate() {
        let col: Vec<T> = free[..pos].iter().map(|&j| h.get(i, j)).collect();
        chol.append(&col, h.get(i, i)).map_err(|_| Error::NotPositiveDefinite { pivot: i })?;
    }
    let mut seen = HashSet::new();
    seen.insert(working_set_hash(&free));
    let mut trace = vec![problem.objective(&w).as_f64()];

    for iter in 1..=max_iter {
        // equality-constrained minimizer on the free set
        let bf: Vec<T> = free.iter().map(|&i| b[i]).collect();
        let x = chol.solve(&bf);
        let y = chol.solve(&vec![T::one(); free.len()]);
        let sy: T = y.iter().copied().sum();
        let shift = (x.iter().copied().sum::<T>() - target_sum) / sy;
        let cand: Vec<T> = x.iter().zip(&y).map(|(&a, &c)| a - shift * c).collect();

        let mut alpha = T::one();
        let mut blocking = None;
        for (pos, &i) in free.iter().enumerate() {
            if cand[pos] < T::zero() {
                let ratio = w[i] / (w[i] - cand[pos]);
                if ratio < alpha || (ratio == alpha && blocking.is_some_and(|(_, j)| i < j)) {
                    alpha = ratio;
                    blocking = Some((pos, i));
                }
            }
        }

        if let Some((pos, i)) = blocking {
            for (p, &j) in free.iter().enumerate() {
                w[j] = w[j] + alpha * (cand[p] - w[j]);
            }
            w[i] = T::zero();
            free.remove(pos);
            is_free[i] = false;
            chol.remove(pos);
            trace.push(problem.objective(&w).as_f64());
            continue;
        }

        for (p, &j) in free.iter().enumerate() {
            w[j] = cand[p];
        }
        trace.push(problem.objective(&w).as_f64());

        // multipliers of the pinned indices: μ_i = (Hw − b)_i + shift
        let mut worst: Option<(usize, T)> = None;
        for i in (0..ell).filter(|&i| !is_free[i]) {
            let gi = free.iter().fold(T::zero(), |acc, &j| acc + h.get(i, j) * w[j]) - b[i];
            let mu = gi + shift;
            if mu < mu_floor && worst.is_none_or(|(_, m)| mu < m) {
                worst = Some((i, mu));
            }
        }
        let Some((release, _)) = worst else {
            return Ok(ActiveSetOutcome::Done { w, iterations: iter, trace });
        };

        let col: Vec<T> = free.iter().map(|&j| h.get(release, j)).collect();
        if chol.append(&col, h.get(release, release)).is_err() {
            return Err(Error::NotPositiveDefinite { pivot: release });
        }
        free.push(release);
        is_free[release] = true;
        if !seen.insert(working_set_hash(&free)) {
            return Ok(ActiveSetOutcome::Cycled { w, iterations: iter, trace });
        }
    }
    log::warn!("active-set iteration cap {max_iter} reached");
    Ok(ActiveSetOutcome::Done { w, iterations: max_iter, trace })
}

/// Euclidean projection onto `{w ⪰ 0, Σ w = total}`.
pub fn project_simplex<T: Real>(v: &[T], total: T) -> Vec<T> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cum = T::zero();
    let mut theta = T::zero();
    for (k, &uk) in u.iter().enumerate() {
        cum = cum + uk;
        let t = (cum - total) / T::from_usize_lossy(k + 1);
        if uk - t > T::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

fn projected_gradient<T: Real>(problem: &QpProblem<T>, start: Vec<T>, tol: f64, max_iter: usize) -> (Vec<T>, usize, Vec<f64>) {
    let ell = problem.ell();
    let total = T::from_usize_lossy(ell);
    let lipschitz = problem.h.spectral_radius(100) * T::lit(1.01);
    let step = T::one() / lipschitz.max(T::epsilon());
    let mut w = project_simplex(&start, total);
    let mut trace = Vec::new();
    let budget = max_iter.max(10_000);
    for it in 1..=budget {
        let g: Vec<T> = problem.h.mul_vec(&w).iter().zip(&problem.b).map(|(&a, &b)| a - b).collect();
        let next: Vec<T> = project_simplex(&w.iter().zip(&g).map(|(&x, &gi)| x - step * gi).collect::<Vec<_>>(), total);
        let moved = next.iter().zip(&w).fold(T::zero(), |a, (&x, &y)| a.max((x - y).abs()));
        w = next;
        trace.push(problem.objective(&w).as_f64());
        if (it % 50 == 0 || moved < T::lit(tol * 1e-3)) && verify_kkt(problem, &w, tol).pass {
            return (w, it, trace);
        }
    }
    (w, budget, trace)
}

/// Objective of the all-ones vector, the trivial feasible point.
pub fn ones_objective<T: Real>(problem: &QpProblem<T>) -> f64 {
    let ones = vec![T::one(); problem.ell()];
    problem.objective(&ones).as_f64()
}
