use std::fs;
use std::path::Path;
use std::time::Instant;

use dci_core::binning::{PairSource, PartitionSpec, SampleSource};
use dci_core::config::{ResolvedTarget, RunConfig, Source};
use dci_core::experiments::{compare_methods, run_convergence, write_comparison, write_convergence, CompareSpec, ConvergenceSpec};
use dci_core::models::ModelSource;
use dci_core::{fit_box, pushforward_binned, solve_binning, solve_density, solve_naive, Error, QpSolution, SampleSet, WeightedEdf};
use serde_json::{json, Value};

use crate::output::{write_json, write_table, Column};
use crate::{input_code, run_code, Failure, Method, EXIT_DIAGNOSTIC, EXIT_FAILURE, EXIT_NOT_CONVERGED};

fn input(error: Error) -> Failure {
    Failure { code: input_code(&error), error }
}

fn run(error: Error) -> Failure {
    Failure { code: run_code(&error), error }
}

fn write(error: Error) -> Failure {
    Failure { code: EXIT_FAILURE, error }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input(Error::config("/", format!("cannot read {}: {e}", path.display()))))
}

fn toolkit() -> Value {
    json!({ "name": "dci", "version": env!("CARGO_PKG_VERSION") })
}

fn write_timing(out: &Path, started: Instant) -> Result<(), Failure> {
    let timing = json!({
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
    });
    write_json(&out.join("timing.json"), &timing).map_err(write)
}

fn solver_json(qp: &QpSolution<f64>) -> Value {
    json!({
        "method": qp.method,
        "iterations": qp.iterations,
        "converged": qp.converged,
        "objective": qp.objective,
        "kkt": qp.kkt,
    })
}

struct Loaded {
    cfg: RunConfig,
    source: Source,
    target: ResolvedTarget,
}

fn load(config: &Path) -> Result<Loaded, Failure> {
    let cfg = RunConfig::from_json(&read_text(config)?).map_err(input)?;
    let source = cfg.model.resolve(cfg.initial.as_ref(), "").map_err(input)?;
    let target = cfg.target.resolve("/target").map_err(input)?;
    if target.target.dim() != source.data_dim() {
        return Err(input(Error::config(
            "/target",
            format!("target has dimension {}, data has {}", target.target.dim(), source.data_dim()),
        )));
    }
    if let Some(b) = &cfg.data_box {
        if b.dim() != source.data_dim() {
            return Err(input(Error::config("/data_box", format!("expected dimension {}", source.data_dim()))));
        }
    }
    Ok(Loaded { cfg, source, target })
}

fn observed(loaded: &Loaded) -> Result<&SampleSet<f64>, Failure> {
    loaded
        .target
        .observed
        .as_ref()
        .ok_or_else(|| input(Error::config("/target/m", "the density method needs observed samples; set m")))
}

struct Outcome {
    params: SampleSet<f64>,
    data: SampleSet<f64>,
    weight: Vec<f64>,
    mass: Option<Vec<f64>>,
    pushforward: Option<WeightedEdf<f64>>,
    reps: Option<WeightedEdf<f64>>,
    converged: bool,
    meta: Value,
}

fn solve_method(method: Method, loaded: &Loaded) -> Result<Outcome, Failure> {
    let Loaded { cfg, source, target } = loaded;
    let data_box = cfg.data_box();
    match method {
        Method::Naive => {
            let (params, data) = source.draw(cfg.n, cfg.seed).map_err(run)?;
            let sol = solve_naive(&params, &data, &target.target, data_box.as_ref(), &cfg.fit).map_err(run)?;
            let n = sol.weights.len() as f64;
            Ok(Outcome {
                weight: sol.weights.as_slice().to_vec(),
                mass: Some(sol.weights.as_slice().iter().map(|w| w / n).collect()),
                pushforward: Some(sol.pushforward()),
                reps: None,
                converged: sol.qp.converged,
                meta: json!({
                    "n": sol.weights.len(),
                    "solver": solver_json(&sol.qp),
                    "jittered": sol.jittered,
                    "data_box": { "lower": sol.data_box.lower(), "upper": sol.data_box.upper() },
                    "weight_variance": sol.weights.variance(),
                }),
                params,
                data,
            })
        }
        Method::BinningGrid | Method::BinningKmeans => {
            let spec = if method == Method::BinningGrid {
                PartitionSpec::Grid { cells_per_dim: cfg.binning.grid_cells(source.data_dim()) }
            } else {
                PartitionSpec::Kmeans {
                    p: cfg.binning.p,
                    seed: cfg.binning.kmeans_seed.unwrap_or(cfg.seed),
                    max_iter: cfg.binning.kmeans_max_iter,
                }
            };
            let mut src: Box<dyn SampleSource<f64>> = match source {
                Source::Model { model, sampler } => {
                    Box::new(ModelSource::new(model.clone(), sampler.clone(), cfg.seed).map_err(input)?)
                }
                Source::Pairs { params, data } => Box::new(PairSource::new(params.clone(), data.clone()).map_err(input)?),
            };
            let opts = cfg.binning.options(cfg.n, &cfg.fit);
            let sol = solve_binning(src.as_mut(), &target.target, &spec, data_box.as_ref(), &opts).map_err(run)?;
            let reps = pushforward_binned(&sol, &sol.partition).map_err(run)?;
            Ok(Outcome {
                weight: sol.sample_weights.mean_one_values(),
                mass: Some(sol.sample_weights.as_slice().to_vec()),
                pushforward: Some(sol.pushforward_samples()),
                reps: Some(reps),
                converged: sol.qp.converged,
                meta: json!({
                    "n": sol.n(),
                    "p": sol.p(),
                    "partition": spec,
                    "batches": sol.batches,
                    "counts": sol.counts,
                    "n_min": sol.n_min,
                    "cell_weights": sol.cell_weights.as_slice(),
                    "representatives": sol.partition.reps().as_flat(),
                    "aggregation_error": sol.aggregation_error(),
                    "solver": solver_json(&sol.qp),
                    "data_box": { "lower": sol.data_box.lower(), "upper": sol.data_box.upper() },
                    "weight_variance": sol.sample_weights.variance(),
                }),
                params: sol.params,
                data: sol.data,
            })
        }
        Method::Density => {
            let obs = observed(loaded)?;
            let (params, data) = source.draw(cfg.n, cfg.seed).map_err(run)?;
            let sol = solve_density(&params, &data, obs, &cfg.density).map_err(run)?;
            let weights = sol.weights().ok();
            Ok(Outcome {
                weight: sol.r.clone(),
                mass: weights.as_ref().map(|w| w.as_slice().to_vec()),
                pushforward: weights.as_ref().map(|w| WeightedEdf::new(data.clone(), w.clone()).expect("aligned")),
                reps: None,
                converged: true,
                meta: json!({
                    "n": data.len(),
                    "m": obs.len(),
                    "diagnostic": sol.diagnostic,
                    "violations": sol.violations,
                    "predicted_bandwidth": sol.predicted_bandwidth,
                    "observed_bandwidth": sol.observed_bandwidth,
                    "binned_kde": sol.binned,
                    "weight_variance": weights.map(|w| w.variance()),
                }),
                params,
                data,
            })
        }
    }
}

pub fn solve(method: Method, config: &Path, out: &Path) -> Result<u8, Failure> {
    let started = Instant::now();
    let loaded = load(config)?;
    log::info!("solving with {} on n = {}", method.name(), loaded.cfg.n);
    let outcome = solve_method(method, &loaded)?;

    fs::create_dir_all(out).map_err(|e| write(e.into()))?;
    crate::output::write_weights(&out.join("weights.csv"), &outcome.params, &outcome.data, &outcome.weight, outcome.mass.as_deref())
        .map_err(write)?;

    let cfg = &loaded.cfg;
    let table_box = match cfg.data_box() {
        Some(b) => b,
        None => fit_box(&outcome.data, cfg.fit.padding).map_err(run)?,
    };
    let mut columns = Vec::new();
    if let Some(pf) = &outcome.pushforward {
        columns.push(("pushforward", Column::edf(pf.clone()).map_err(run)?));
    }
    if let Some(reps) = &outcome.reps {
        columns.push(("pushforward_reps", Column::edf(reps.clone()).map_err(run)?));
    }
    match &loaded.target.observed {
        Some(obs) => columns.push(("target", Column::edf(WeightedEdf::unweighted(obs.clone()).map_err(run)?).map_err(run)?)),
        None => columns.push(("target", Column::Other(Box::new(loaded.target.target.clone())))),
    }
    if let (Some(exact), Some(_)) = (&loaded.target.exact, &loaded.target.observed) {
        columns.push(("exact", Column::Other(Box::new(dci_core::TargetDistribution::Exact(exact.clone())))));
    }
    write_table(&out.join("pushforward.csv"), &table_box, cfg.table_points, &columns).map_err(write)?;

    let meta = json!({
        "toolkit": toolkit(),
        "command": "solve",
        "method": method.name(),
        "config": cfg,
        "seeds": {
            "initial": cfg.seed,
            "target": cfg.target.seed,
            "kmeans": cfg.binning.kmeans_seed.unwrap_or(cfg.seed),
            "jitter": cfg.fit.jitter_seed,
        },
        "result": outcome.meta,
    });
    write_json(&out.join("meta.json"), &meta).map_err(write)?;
    write_timing(out, started)?;
    if !outcome.converged {
        eprintln!("error: the QP did not reach its KKT tolerance; results written for inspection");
        return Ok(EXIT_NOT_CONVERGED);
    }
    eprintln!("wrote {}", out.display());
    Ok(0)
}

pub fn diagnose(config: &Path) -> Result<u8, Failure> {
    let loaded = load(config)?;
    let obs = observed(&loaded)?;
    let cfg = &loaded.cfg;
    let (params, data) = loaded.source.draw(cfg.n, cfg.seed).map_err(run)?;
    let sol = solve_density(&params, &data, obs, &cfg.density).map_err(run)?;
    let ok = (0.8..=1.2).contains(&sol.diagnostic);
    println!("{}", json!({ "diagnostic": sol.diagnostic, "violations": sol.violations, "n": data.len(), "m": obs.len() }));
    eprintln!(
        "E_init(r) = {:.4} over n = {} samples; {} violation flag(s); {}",
        sol.diagnostic,
        data.len(),
        sol.violations,
        if ok { "within [0.8, 1.2]" } else { "outside [0.8, 1.2]: the observed distribution is not predictable" }
    );
    Ok(if ok { 0 } else { EXIT_DIAGNOSTIC })
}

pub fn convergence(spec_path: &Path, out: &Path) -> Result<u8, Failure> {
    let started = Instant::now();
    let spec = ConvergenceSpec::from_json(&read_text(spec_path)?).map_err(input)?;
    log::info!(
        "convergence study: {} trials over n in {:?}, p in {:?}",
        spec.trials,
        spec.n_grid,
        spec.p_grid
    );
    let result = run_convergence(&spec).map_err(run)?;
    write_convergence(&result, out).map_err(write)?;
    let meta = json!({
        "toolkit": toolkit(),
        "command": "convergence",
        "spec": spec,
        "seeds": {
            "study": spec.seed,
            "trials": (0..spec.trials).map(|t| spec.seed + t as u64).collect::<Vec<_>>(),
            "baseline": (0..spec.baseline.trials).map(|t| spec.baseline.seed + t as u64).collect::<Vec<_>>(),
            "target": spec.target.seed,
        },
        "baseline_diagnostics": result.baseline.trials.iter().map(|t| t.diagnostic).collect::<Vec<_>>(),
    });
    write_json(&out.join("meta.json"), &meta).map_err(write)?;
    write_timing(out, started)?;
    eprintln!("wrote {}", out.display());
    Ok(0)
}

pub fn compare(spec_path: &Path, out: &Path) -> Result<u8, Failure> {
    let started = Instant::now();
    let spec = CompareSpec::from_json(&read_text(spec_path)?).map_err(input)?;
    let result = compare_methods(&spec).map_err(run)?;
    for r in &result.rows {
        eprintln!("{:<15} L2 {:.3e}  sup {:.3e}  weight variance {:.3}", r.method, r.l2, r.sup, r.weight_variance);
    }
    write_comparison(&result, out).map_err(write)?;
    let meta = json!({
        "toolkit": toolkit(),
        "command": "compare",
        "spec": spec,
        "seeds": {
            "initial": spec.seed,
            "kmeans": spec.kmeans_seed.unwrap_or(spec.seed),
            "target": spec.target.seed,
            "jitter": spec.fit.jitter_seed,
        },
    });
    write_json(&out.join("meta.json"), &meta).map_err(write)?;
    write_timing(out, started)?;
    Ok(0)
}
