//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use dci_core::binning::{MinFill, PairSource};
use dci_core::config::{RunConfig, Source};
use dci_core::experiments::{compare_methods, image_box, run_convergence, CompareSpec, ConvergenceSpec};
use dci_core::models::{normal_cdf, HeatRod, HeatRodParams, IdentityMap, ModelSource, QoiMap, UniformBox, UniformCdf};
use dci_core::qp::{assemble_b_empirical, assemble_h};
use dci_core::{
    bin_samples, make_kmeans, make_regular_grid, solve_binning, solve_density, solve_qp, verify_kkt, BinnedSolution,
    BinningOptions, BoxScaler, Normalization, PartitionSpec, QpProblem, Region, SampleSet, SolverOptions,
    TargetDistribution, WeightVector, WeightedEdf,
};
use dci_core::edf::DistributionFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    repo().join("configs").join(name)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SampleSet<f64> {
    SampleSet::from_flat(d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
}

// Rejection-samples points whose pairwise sup-distance is at least `sep`, so
// the small QPs are well conditioned.
fn separated_points(rng: &mut ChaCha8Rng, n: usize, d: usize, sep: f64) -> SampleSet<f64> {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    while pts.len() < n {
        let p: Vec<f64> = (0..d).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect();
        if pts.iter().all(|q| q.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) >= sep) {
            pts.push(p);
        }
    }
    SampleSet::from_rows(d, &pts).unwrap()
}

// ---------------------------------------------------------------------------
// Small-QP oracles

fn objective(h: &[Vec<f64>], b: &[f64], w: &[f64]) -> f64 {
    let n = w.len();
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += 0.5 * w[i] * h[i][j] * w[j];
        }
        v -= b[i] * w[i];
    }
    v
}

/// Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut y: Vec<f64>) -> Option<Vec<f64>> {
    let n = y.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        y.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            y[r] -= f * y[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (y[r] - s) / a[r][r];
    }
    Some(x)
}

/// Minimum over every support set of the equality-constrained stationary point.
fn enumerate_supports(h: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1usize..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let k = s.len();
        // [H_SS  -1] [w]   [b_S]
        // [1ᵀ     0] [λ] = [ n ]
        let mut a = vec![vec![0.0; k + 1]; k + 1];
        let mut y = vec![0.0; k + 1];
        for (r, &i) in s.iter().enumerate() {
            for (c, &j) in s.iter().enumerate() {
                a[r][c] = h[i][j];
            }
            a[r][k] = -1.0;
            a[k][r] = 1.0;
            y[r] = b[i];
        }
        y[k] = n as f64;
        let Some(x) = gauss_solve(a, y) else { continue };
        if x[..k].iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; n];
        for (r, &i) in s.iter().enumerate() {
            w[i] = x[r].max(0.0);
        }
        let f = objective(h, b, &w);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, w));
        }
    }
    best.unwrap().1
}

/// Grid search over `{w ⪰ 0, Σw = 4}`, refined hierarchically down to 1e-3.
fn grid_search4(h: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let eval = |w: [f64; 3]| -> Option<f64> {
        let w4 = 4.0 - w[0] - w[1] - w[2];
        if w.iter().any(|&v| v < -1e-12) || w4 < -1e-12 {
            return None;
        }
        Some(objective(h, b, &[w[0], w[1], w[2], w4]))
    };
    let mut center = [1.0; 3];
    let mut first = true;
    for &step in &[0.05, 0.005, 0.001] {
        let radius: i64 = if first { 80 } else { 15 };
        let mut origin = if first { [0.0; 3] } else { center };
        loop {
            let mut best = (f64::INFINITY, [0i64; 3]);
            let range = if first { 0..=radius } else { -radius..=radius };
            for i in range.clone() {
                for j in range.clone() {
                    for k in range.clone() {
                        let w = [origin[0] + i as f64 * step, origin[1] + j as f64 * step, origin[2] + k as f64 * step];
                        if let Some(f) = eval(w) {
                            if f < best.0 {
                                best = (f, [i, j, k]);
                            }
                        }
                    }
                }
            }
            let idx = best.1;
            center = [origin[0] + idx[0] as f64 * step, origin[1] + idx[1] as f64 * step, origin[2] + idx[2] as f64 * step];
            let on_edge = !first && idx.iter().any(|&v| v.abs() == radius);
            if !on_edge {
                break;
            }
            origin = center;
        }
        first = false;
    }
    vec![center[0], center[1], center[2], 4.0 - center.iter().sum::<f64>()]
}

fn dense(h: &dci_core::linalg::Matrix<f64>) -> Vec<Vec<f64>> {
    (0..h.n()).map(|i| (0..h.n()).map(|j| h.get(i, j)).collect()).collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_w = 0.0f64;
    let mut worst_kkt = 0.0f64;
    let mut active = 0;
    for inst in 0..50 {
        let ell = [2, 3, 4][inst % 3];
        let d = 1 + (inst / 3) % 2;
        let q = separated_points(&mut rng, ell, d, 0.1);
        // Half the targets sit in the upper corner so that some weights vanish.
        let lo = if inst % 2 == 0 { 0.0 } else { 0.6 };
        let m = 25;
        let y = SampleSet::from_flat(d, (0..m * d).map(|_| lo + (1.0 - lo) * rng.random::<f64>()).collect()).unwrap();
        let h = assemble_h(&q).unwrap();
        let b = assemble_b_empirical(&q, &y).unwrap();
        let hd = dense(&h);
        let problem = QpProblem::new(h, b.clone()).unwrap();
        let sol = solve_qp(&problem, &SolverOptions::default()).unwrap();
        let w = sol.weights.as_slice();
        let oracle = if ell <= 3 { enumerate_supports(&hd, &b) } else { grid_search4(&hd, &b) };
        if oracle.iter().any(|&v| v < 1e-9) {
            active += 1;
        }
        for i in 0..ell {
            worst_w = worst_w.max((w[i] - oracle[i]).abs());
        }
        worst_kkt = worst_kkt.max(verify_kkt(&problem, w, 1e-8).max_residual());
    }
    outcome(
        worst_w <= 2e-3 && worst_kkt <= 1e-8,
        format!("max |w - oracle| {worst_w:.2e} (tol 2e-3), max KKT residual {worst_kkt:.2e} (tol 1e-8), {active}/50 with active bounds"),
    )
}

// ---------------------------------------------------------------------------
// Midpoint-rule reference for H and b

fn target_cdf(y: &SampleSet<f64>, x: &[f64]) -> f64 {
    y.iter().filter(|p| p.iter().zip(x).all(|(a, b)| a <= b)).count() as f64 / y.len() as f64
}

/// `(H, b)` by the midpoint rule on `N^d` cells.
fn midpoint_reference(q: &SampleSet<f64>, y: &SampleSet<f64>, n_cells: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let ell = q.len();
    let d = q.dim();
    let mut h = vec![vec![0.0; ell]; ell];
    let mut b = vec![0.0; ell];
    let mut x = vec![0.0; d];
    let mut ind = vec![0.0; ell];
    let cells = n_cells.pow(d as u32);
    // In 1-D the target CDF changes only at target points, so it is cached
    // between cells; the 2-D grid is small enough to evaluate directly.
    for c in 0..cells {
        let mut rem = c;
        for xk in x.iter_mut() {
            *xk = ((rem % n_cells) as f64 + 0.5) / n_cells as f64;
            rem /= n_cells;
        }
        let f = target_cdf(y, &x);
        for i in 0..ell {
            ind[i] = if q.point(i).iter().zip(&x).all(|(a, b)| a <= b) { 1.0 } else { 0.0 };
        }
        for i in 0..ell {
            if ind[i] == 0.0 {
                continue;
            }
            b[i] += f;
            for j in 0..ell {
                h[i][j] += ind[j];
            }
        }
    }
    let vol = 1.0 / cells as f64;
    let l = ell as f64;
    for i in 0..ell {
        b[i] *= vol / l;
        for j in 0..ell {
            h[i][j] *= vol / (l * l);
        }
    }
    (h, b)
}

fn lattice_points(rng: &mut ChaCha8Rng, n: usize, d: usize, n_cells: usize) -> SampleSet<f64> {
    SampleSet::from_flat(d, (0..n * d).map(|_| rng.random_range(0..=n_cells) as f64 / n_cells as f64).collect()).unwrap()
}

fn max_err(q: &SampleSet<f64>, y: &SampleSet<f64>, n_cells: usize) -> (f64, f64) {
    let h = dense(&assemble_h(q).unwrap());
    let b = assemble_b_empirical(q, y).unwrap();
    let (hr, br) = midpoint_reference(q, y, n_cells);
    let eh = h.iter().flatten().zip(hr.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let eb = b.iter().zip(&br).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (eh, eb)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut on = 0.0f64;
    let mut off_ratio = 0.0f64;
    for inst in 0..20 {
        let d = 1 + inst % 2;
        let n_cells = if d == 1 { 100_000 } else { 1000 };
        let ell = rng.random_range(2..=8);
        let m = rng.random_range(3..=10);
        let q = lattice_points(&mut rng, ell, d, n_cells);
        let y = lattice_points(&mut rng, m, d, n_cells);
        let (eh, eb) = max_err(&q, &y, n_cells);
        on = on.max(eh).max(eb);
        // Off the lattice the midpoint rule is only first order: each face of a
        // jump perturbs at most one slab of cells.
        if inst < 4 {
            let q = random_points(&mut rng, ell, d);
            let y = random_points(&mut rng, m, d);
            let (eh, eb) = max_err(&q, &y, n_cells);
            let l = ell as f64;
            let bound_h = d as f64 / (n_cells as f64 * l * l);
            let bound_b = 2.0 * d as f64 / (n_cells as f64 * l);
            off_ratio = off_ratio.max(eh / bound_h).max(eb / bound_b);
        }
    }
    outcome(
        on <= 1e-6 && off_ratio <= 1.0,
        format!("on-lattice max error {on:.2e} (tol 1e-6); off-lattice error at {:.0}% of the first-order bound", 100.0 * off_ratio),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for d in [1, 2] {
        for ell in [1, 2, 5, 10, 50, 100, 200] {
            for _ in 0..3 {
                let q = random_points(&mut rng, ell, d);
                let problem = QpProblem::new(assemble_h(&q).unwrap(), assemble_b_empirical(&q, &q).unwrap()).unwrap();
                let sol = solve_qp(&problem, &SolverOptions::default()).unwrap();
                worst = worst.max(sol.weights.as_slice().iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max));
                runs += 1;
            }
        }
    }
    outcome(worst <= 1e-6, format!("max |w - 1| {worst:.2e} over {runs} problems (tol 1e-6)"))
}

// ---------------------------------------------------------------------------
// Binning invariants

fn heat_source(seed: u64) -> ModelSource {
    let params = HeatRodParams::default();
    let bbox = params.lambda_box();
    ModelSource::new(Arc::new(HeatRod::new(params).unwrap()), Arc::new(UniformBox(bbox)), seed).unwrap()
}

fn normal_target(mu: f64, sigma: f64, m: usize, seed: u64) -> TargetDistribution<f64> {
    TargetDistribution::Empirical(dci_core::models::normal_sampler(mu, sigma, m, seed).unwrap())
}

/// `(|Σu − 1|, cells whose samples do not all share one weight, aggregation error)`.
fn binning_invariants(sol: &BinnedSolution<f64>) -> (f64, usize, f64) {
    let u = sol.sample_weights.as_slice();
    let sum: f64 = u.iter().sum();
    let mut first: Vec<Option<f64>> = vec![None; sol.p()];
    let mut uneven = vec![false; sol.p()];
    for (&k, &ui) in sol.assignments.iter().zip(u) {
        match first[k] {
            None => first[k] = Some(ui),
            Some(v) if v.to_bits() != ui.to_bits() => uneven[k] = true,
            _ => {}
        }
    }
    ((sum - 1.0).abs(), uneven.iter().filter(|&&x| x).count(), sol.aggregation_error())
}

fn criterion_4() -> Outcome {
    let mut sols: Vec<(&str, BinnedSolution<f64>)> = Vec::new();
    let opts = |n: usize| BinningOptions {
        n_batch: n,
        min_fill: MinFill::Proportional { n_target: n },
        ..BinningOptions::default()
    };
    let target = normal_target(0.59, 0.005, 10_000, 1);
    for (name, spec) in [
        ("heat grid", PartitionSpec::Grid { cells_per_dim: vec![35] }),
        ("heat kmeans", PartitionSpec::Kmeans { p: 35, seed: 3, max_iter: 300 }),
    ] {
        let sol = solve_binning(&mut heat_source(11), &target, &spec, None, &opts(2000)).unwrap();
        sols.push((name, sol));
    }

    let unit = BoxScaler::unit(2);
    let mut source = ModelSource::new(Arc::new(IdentityMap { dim: 2 }), Arc::new(UniformBox(unit.clone())), 12).unwrap();
    let uni = TargetDistribution::exact(UniformCdf::new(vec![0.2, 0.3], vec![0.7, 0.9]).unwrap());
    let sol = solve_binning(&mut source, &uni, &PartitionSpec::Grid { cells_per_dim: vec![6, 6] }, Some(&unit), &opts(3000)).unwrap();
    sols.push(("identity grid", sol));
    let mut source = ModelSource::new(Arc::new(IdentityMap { dim: 2 }), Arc::new(UniformBox(unit.clone())), 13).unwrap();
    let sol = solve_binning(&mut source, &uni, &PartitionSpec::Kmeans { p: 30, seed: 5, max_iter: 300 }, None, &opts(3000)).unwrap();
    sols.push(("identity kmeans", sol));

    let heat = HeatRod::new(HeatRodParams::default()).unwrap();
    let params = dci_core::models::uniform_sampler(&HeatRodParams::default().lambda_box(), 4000, 14).unwrap();
    let data = heat.push_forward(&params).unwrap();
    let mut pairs = PairSource::new(params.clone(), data.clone()).unwrap();
    let sol = solve_binning(&mut pairs, &target, &PartitionSpec::Grid { cells_per_dim: vec![50] }, None, &opts(1000)).unwrap();
    sols.push(("pairs grid", sol));

    let dbox = dci_core::fit_box(&data, 0.01).unwrap();
    for (name, part) in [
        ("fixed grid", make_regular_grid(&dbox, &[160]).unwrap()),
        ("fixed kmeans", make_kmeans(&data, 60, 2, 300).unwrap()),
    ] {
        let sol = bin_samples(&params, &data, &part, &dbox, &target, &BinningOptions::default(), true).unwrap();
        sols.push((name, sol));
    }

    let mut sum_err = 0.0f64;
    let mut uneven = 0;
    let mut agg = 0.0f64;
    for (name, sol) in &sols {
        let (s, u, a) = binning_invariants(sol);
        if u > 0 {
            eprintln!("  {name}: {u} cells with unequal sample weights");
        }
        sum_err = sum_err.max(s);
        uneven += u;
        agg = agg.max(a);
    }
    outcome(
        sum_err <= 1e-8 && uneven == 0 && agg <= 1e-10,
        format!(
            "{} runs: max |sum u - 1| {sum_err:.2e} (tol 1e-8), {uneven} cells with unequal weights, max aggregation error {agg:.2e} (tol 1e-10)",
            sols.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Density diagnostic

fn diagnostic_for(path: &Path) -> (f64, RunConfig) {
    let cfg = RunConfig::from_json(&fs::read_to_string(path).unwrap()).unwrap();
    let source: Source = cfg.model.resolve(cfg.initial.as_ref(), "").unwrap();
    let target = cfg.target.resolve("/target").unwrap();
    let (params, data) = source.draw(cfg.n, cfg.seed).unwrap();
    let sol = solve_density(&params, &data, target.observed.as_ref().unwrap(), &cfg.density).unwrap();
    (sol.diagnostic, cfg)
}

fn criterion_5() -> Outcome {
    let (ok, _) = diagnostic_for(&config("heat_rod.json"));
    let (bad, cfg) = diagnostic_for(&config("heat_rod_violation.json"));
    let params = HeatRodParams::default();
    let lb = params.lambda_box();
    let region = Region::new(lb.lower().to_vec(), lb.upper().to_vec()).unwrap();
    let image = image_box(&HeatRod::new(params).unwrap(), &region, 401).unwrap();
    let mu = cfg.target.params["mu"].as_f64().unwrap();
    let sigma = cfg.target.params["sigma"].as_f64().unwrap();
    let outside = 1.0 - normal_cdf(mu, sigma, image.upper[0]) + normal_cdf(mu, sigma, image.lower[0]);
    outcome(
        (0.9..=1.1).contains(&ok) && bad < 0.9 && outside >= 0.4,
        format!(
            "benchmark E(r) {ok:.4} (want [0.9, 1.1]); N({mu}, {sigma}) target E(r) {bad:.4} (want < 0.9) with {:.1}% of its mass outside the predicted range [{:.5}, {:.5}]",
            100.0 * outside,
            image.lower[0],
            image.upper[0]
        ),
    )
}

// ---------------------------------------------------------------------------
// Studies

fn criterion_6() -> Outcome {
    let spec = CompareSpec::from_json(&fs::read_to_string(config("mixture_compare.json")).unwrap()).unwrap();
    let c = compare_methods(&spec).unwrap();
    let grid = c.row("binning-grid").unwrap().sup_exact.unwrap();
    let km = c.row("binning-kmeans").unwrap().sup_exact.unwrap();
    let dens = c.row("density").unwrap().sup_exact.unwrap();
    outcome(
        grid <= 0.01 && grid < dens,
        format!("n {} p {}: sup error binning-grid {grid:.5} (tol 0.01), binning-kmeans {km:.5}, density {dens:.5}", c.n, c.p),
    )
}

fn criterion_7() -> Outcome {
    let spec = ConvergenceSpec::from_json(&fs::read_to_string(config("convergence_heat.json")).unwrap()).unwrap();
    let r = run_convergence(&spec).unwrap();
    let (n_lo, n_hi) = (spec.n_grid[0], *spec.n_grid.last().unwrap());
    let (p_lo, p_hi) = (spec.p_grid[0], *spec.p_grid.last().unwrap());
    let small = r.cell(n_lo, p_lo).unwrap();
    let large = r.cell(n_hi, p_hi).unwrap();
    let eb = (small.b.mean_abs_error, large.b.mean_abs_error);
    let ea = (small.a.mean_abs_error, large.a.mean_abs_error);
    let std_lo: Vec<f64> = spec.p_grid.iter().map(|&p| r.cell(n_lo, p).unwrap().a.std).collect();
    let std_hi: Vec<f64> = spec.p_grid.iter().map(|&p| r.cell(n_hi, p).unwrap().a.std).collect();
    let std_drop = std_lo.iter().zip(&std_hi).all(|(a, b)| b < a);
    outcome(
        eb.1 < eb.0 && ea.1 < ea.0 && std_drop,
        format!(
            "error in P(B) {:.4} -> {:.4}, error in P(A) {:.2e} -> {:.2e} from (n, p) = ({n_lo}, {p_lo}) to ({n_hi}, {p_hi}); std of P(A) at n = {n_hi} below n = {n_lo} for every p: {std_drop}",
            eb.0, eb.1, ea.0, ea.1
        ),
    )
}

fn criterion_8() -> Outcome {
    let spec = CompareSpec::from_json(
        r#"{
            "model": { "kind": "heat_rod" },
            "target": { "kind": "normal", "params": { "mu": 0.59, "sigma": 0.005 }, "m": 10000, "seed": 1 },
            "n": 2000,
            "p": 35,
            "seed": 0
        }"#,
    )
    .unwrap();
    let c = compare_methods(&spec).unwrap();
    let naive = c.row("naive").unwrap();
    let grid = c.row("binning-grid").unwrap();
    let km = c.row("binning-kmeans").unwrap();
    outcome(
        grid.weight_variance < naive.weight_variance && km.weight_variance < naive.weight_variance,
        format!(
            "weight variance naive {:.3}, binning-grid {:.3}, binning-kmeans {:.3}; L2 error naive {:.2e}, binning-grid {:.2e}",
            naive.weight_variance, grid.weight_variance, km.weight_variance, naive.l2, grid.l2
        ),
    )
}

// ---------------------------------------------------------------------------
// Reproducibility of the command-line tool

fn run_dci(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dci")).arg("-q").args(args).output().expect("run dci")
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let compare_spec = tmp.path().join("compare.json");
    fs::write(
        &compare_spec,
        r#"{
            "model": { "kind": "heat_rod" },
            "target": { "kind": "normal", "params": { "mu": 0.59, "sigma": 0.005 }, "m": 2000, "seed": 1 },
            "n": 1000,
            "p": 20,
            "seed": 4
        }"#,
    )
    .unwrap();
    let heat = config("heat_rod.json");
    let heat = heat.to_str().unwrap();
    let tiny = config("convergence_tiny.json");
    let tiny = tiny.to_str().unwrap();
    let cmp = compare_spec.to_str().unwrap();
    let jobs: Vec<(&str, Vec<&str>)> = vec![
        ("solve naive", vec!["solve", "--method", "naive", "--config", heat]),
        ("solve binning-grid", vec!["solve", "--method", "binning-grid", "--config", heat]),
        ("solve binning-kmeans", vec!["solve", "--method", "binning-kmeans", "--config", heat]),
        ("solve density", vec!["solve", "--method", "density", "--config", heat]),
        ("convergence", vec!["convergence", "--spec", tiny]),
        ("compare", vec!["compare", "--spec", cmp]),
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for (j, (name, args)) in jobs.iter().enumerate() {
        let mut runs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("job{j}_{rep}"));
            let mut a = args.clone();
            let o = out.to_str().unwrap().to_string();
            a.push("--out");
            a.push(&o);
            let status = run_dci(&a);
            if !status.status.success() {
                failures.push(format!("{name} exited with {:?}", status.status.code()));
            }
            runs.push(dir_files(&out));
        }
        if runs[0].is_empty() || runs[0] != runs[1] {
            failures.push(format!("{name} differs between runs"));
        }
        files += runs[0].len();
    }
    let d1 = run_dci(&["diagnose", "--config", heat]);
    let d2 = run_dci(&["diagnose", "--config", heat]);
    if d1.stdout != d2.stdout || d1.stdout.is_empty() {
        failures.push("diagnose output differs between runs".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands run twice, {files} output files and the diagnose report byte-identical", jobs.len())
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// Structural properties

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut edf_bad = 0;
    for _ in 0..1000 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=40);
        let pts = SampleSet::from_flat(d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut w: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() }).collect();
        w[rng.random_range(0..n)] = 1.0;
        let norm = if rng.random_bool(0.5) { Normalization::MeanOne } else { Normalization::SumOne };
        let edf = WeightedEdf::new(pts, WeightVector::normalized(w, norm).unwrap()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..2.5)).collect();
        let y: Vec<f64> = x.iter().map(|&v| v + rng.random_range(0.0..1.0)).collect();
        let (fx, fy) = (edf.eval(&x), edf.eval(&y));
        let top = edf.eval(&vec![3.0; d]);
        let bottom = edf.eval(&vec![-3.0; d]);
        if fx > fy + 1e-12 || (top - 1.0).abs() > 1e-12 || bottom != 0.0 || !(0.0..=1.0 + 1e-12).contains(&fx) {
            edf_bad += 1;
        }
    }

    let mut classify_bad = 0;
    let mut calls = 0;
    for kind in 0..2 {
        for trial in 0..10 {
            let d = 1 + trial % 3;
            let data = random_points(&mut rng, 300, d);
            let part = if kind == 0 {
                let cells: Vec<usize> = (0..d).map(|_| rng.random_range(1..=7)).collect();
                make_regular_grid(&BoxScaler::unit(d), &cells).unwrap()
            } else {
                make_kmeans(&data, rng.random_range(1..=25), trial as u64, 300).unwrap()
            };
            for _ in 0..100 {
                let q: Vec<f64> = (0..d)
                    .map(|_| match rng.random_range(0..4) {
                        0 => rng.random_range(-5.0..5.0),
                        1 => rng.random_range(0..=4) as f64 / 4.0,
                        _ => rng.random::<f64>(),
                    })
                    .collect();
                if part.classify(&q) >= part.len() {
                    classify_bad += 1;
                }
                calls += 1;
            }
        }
    }
    outcome(
        edf_bad == 0 && classify_bad == 0,
        format!("1000 weighted EDFs: {edf_bad} violations of monotonicity or total mass; {calls} classify calls: {classify_bad} out of range"),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    // (name, check, time limit in seconds)
    let checks: [(&str, Check, Option<f64>); 10] = [
        ("small QPs match brute-force optima", criterion_1, Some(10.0)),
        ("H and b match midpoint quadrature", criterion_2, Some(30.0)),
        ("self-consistent target gives unit weights", criterion_3, None),
        ("binning weights sum, share and aggregate", criterion_4, None),
        ("predictability diagnostic", criterion_5, None),
        ("mixture target recovered by binning", criterion_6, Some(300.0)),
        ("convergence study errors decrease", criterion_7, Some(1800.0)),
        ("binning lowers weight variance", criterion_8, None),
        ("command-line runs are reproducible", criterion_9, None),
        ("EDF and partition structure", criterion_10, None),
    ];
    let only: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check, limit)) in checks.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let mut o = check();
        let secs = start.elapsed().as_secs_f64();
        if let Some(limit) = limit {
            if secs > *limit {
                o.pass = false;
                o.detail.push_str(&format!("; took longer than {limit} s"));
            }
        }
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {}: {} [{secs:.1} s] {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
