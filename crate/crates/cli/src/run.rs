//! The `run` subcommand: executes the configured runs seed-parallel, writes
//! per-seed trace CSVs, and aggregates a machine-readable summary.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use blocksolve_core::blockcore::{BlockDistribution, BlockVector};
use blocksolve_core::diagnostics::{fit_rate_slope, summable_checks, SummableInputs};
use blocksolve_core::fedsim::{
    messages_to_jsonl, run_federated, FederatedAlgorithm, FederatedConfig, FederatedOutcome,
};
use blocksolve_core::operators::BlockOperator;
use blocksolve_core::runner::{
    run_arcog, run_rcog, seed_mean, ArcogRunSpec, ArcogVariant, DiagnosticsOptions, RunOptions,
};
use blocksolve_core::solvers::{arcog_constants, derive_rcog_params, ArcogSchedule};
use blocksolve_core::splitting::{lambda_range, SplitProblem};
use blocksolve_core::trace::RunTrace;

use crate::config::{LoadedProblem, RunConfig, SolverKind};

/// Caps seed parallelism; read from `BLOCKSOLVE_THREADS`.
pub fn thread_cap(n_jobs: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("BLOCKSOLVE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(available);
    cap.min(n_jobs).max(1)
}

/// Runs `jobs(seed)` for every seed with bounded parallelism, preserving the
/// seed order in the returned vector.
fn parallel_over_seeds<T, F>(seeds: &[u64], job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let threads = thread_cap(seeds.len());
    if threads <= 1 {
        return seeds.iter().map(|&s| job(s)).collect();
    }
    let results: Vec<std::sync::Mutex<Option<Result<T>>>> =
        seeds.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for chunk_start in 0..threads {
            let job = &job;
            let results = &results;
            scope.spawn(move || {
                let mut idx = chunk_start;
                while idx < seeds.len() {
                    let outcome = job(seeds[idx]);
                    *results[idx].lock().unwrap() = Some(outcome);
                    idx += threads;
                }
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every seed slot filled"))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rows: usize,
    pub final_metric: f64,
    pub mean_metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub metric: String,
    pub k_lo: usize,
    pub k_hi: usize,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundSummary {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Derived parameters echoed into the summary so downstream tools can
/// recompute bound envelopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamsEcho {
    Rcog {
        omega: f64,
        gamma: f64,
        eta: f64,
        rho: f64,
        rho_bar: f64,
        psi: f64,
    },
    Arcog {
        nu: f64,
        omega: f64,
        lambda0_bar: f64,
        c0: f64,
        c1: f64,
        c2: f64,
    },
    Fedog {
        omega: f64,
        lambda: f64,
        lipschitz: f64,
        ls: f64,
        psi: f64,
        users: usize,
    },
    Acfeddr {
        nu: f64,
        omega: f64,
        beta: f64,
        c0: f64,
        c2: f64,
        users: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub solver: SolverKind,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub wall_time_ms: u128,
    pub dist0_sq: Option<f64>,
    pub params: ParamsEcho,
    pub per_seed: Vec<SeedSummary>,
    pub fits: Vec<FitSummary>,
    pub bounds: Vec<BoundSummary>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn fit_over_tail(series: &[f64], metric: &str) -> Option<FitSummary> {
    let k_hi = series.len().checked_sub(1)?;
    let k_lo = (k_hi / 100).max(1);
    if k_hi <= k_lo + 8 {
        return None;
    }
    // A fit only makes sense while the series stays positive.
    if series[k_lo..=k_hi].iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    fit_rate_slope(series, k_lo, k_hi)
        .ok()
        .map(|fit| FitSummary {
            metric: metric.to_string(),
            k_lo,
            k_hi,
            slope: fit.slope,
            intercept: fit.intercept,
        })
}

/// Executes the configured run and returns the summary after writing all
/// trace files.
pub fn cmd_run(config: &RunConfig, config_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    let problem = config.load_problem(config_dir)?;
    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let seeds = config.seeds();
    let hash = config.hash()?;

    let mut summary = match (&problem, config.solver.solver) {
        (LoadedProblem::Operator(op), SolverKind::Rcog) => {
            run_rcog_config(config, op, &seeds, &hash)?
        }
        (LoadedProblem::Operator(op), SolverKind::ArcogDirect) => {
            run_arcog_config(config, op, &seeds, ArcogVariant::Direct, &hash)?
        }
        (LoadedProblem::Operator(op), SolverKind::ArcogPractical) => {
            run_arcog_config(config, op, &seeds, ArcogVariant::Practical, &hash)?
        }
        (LoadedProblem::Split(split), SolverKind::Fedog) => {
            run_federated_config(config, split, &seeds, FederatedAlgorithm::FedOg, &hash)?
        }
        (LoadedProblem::Split(split), SolverKind::Acfeddr) => {
            run_federated_config(config, split, &seeds, FederatedAlgorithm::AcFedDr, &hash)?
        }
        (LoadedProblem::Split(_), kind) => bail!(
            "solver '{kind:?}' needs a block-operator instance, but the problem is a split instance"
        ),
        (LoadedProblem::Operator(_), kind) => bail!(
            "solver '{kind:?}' needs a split-problem instance, but the problem is a block operator"
        ),
    };
    summary.config_hash = hash;
    summary.wall_time_ms = start.elapsed().as_millis();
    write_file(
        &config.output_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    // Echo the parsed config next to the traces for reproducibility.
    write_file(&config.output_dir.join("config.json"), &config.to_json()?)?;
    Ok(summary)
}

fn initial_point(config: &RunConfig, op: &BlockOperator) -> Result<BlockVector> {
    use blocksolve_core::operators::BlockOp;
    let dim = op.partition().dim();
    let data = match &config.x0 {
        Some(v) => {
            if v.len() != dim {
                bail!("x0 has {} entries; the problem dimension is {dim}", v.len());
            }
            v.clone()
        }
        None => vec![0.0; dim],
    };
    Ok(BlockVector::new(data, op.partition().clone())?)
}

fn distribution(config: &RunConfig, n: usize) -> Result<BlockDistribution> {
    Ok(match &config.probs {
        Some(p) => BlockDistribution::new(p.clone())?,
        None => BlockDistribution::uniform(n)?,
    })
}

fn run_rcog_config(
    config: &RunConfig,
    op: &BlockOperator,
    seeds: &[u64],
    hash: &str,
) -> Result<RunSummary> {
    use blocksolve_core::operators::BlockOp;
    let n = op.partition().num_blocks();
    let dist = distribution(config, n)?;
    let omega = config.solver.omega.unwrap_or(1.0);
    let rho = match config.solver.rho {
        Some(r) => r,
        None => op.certificates().weak_minty.ok_or_else(|| {
            anyhow!("the instance declares no weak-Minty certificate; set solver.rho")
        })?,
    };
    let params = derive_rcog_params(omega, rho, op.lipschitz()?, &dist)?;
    let x_star = op.solution().ok();
    let x0 = initial_point(config, op)?;
    let diag = DiagnosticsOptions {
        lyapunov: config.diagnostics.lyapunov || config.diagnostics.descent_margins,
        descent_margins: config.diagnostics.descent_margins,
        record_extras: false,
    };

    let traces = parallel_over_seeds(seeds, |seed| {
        let opts = RunOptions {
            max_iters: config.solver.max_iters,
            tol: config.solver.tol,
            seed,
            diagnostics: diag,
        };
        Ok(run_rcog(op, &x0, x_star.as_ref(), &params, &dist, &opts)?)
    })?;
    let per_seed = write_solver_traces(config, seeds, &traces, hash)?;

    let mut bounds = Vec::new();
    let mut fits = Vec::new();
    if traces.iter().all(|t| t.rows.len() == traces[0].rows.len()) {
        let mean_res = seed_mean(&traces, |r| r.res_sq)?;
        if let Some(fit) = fit_over_tail(&mean_res, "res_sq") {
            fits.push(fit);
        }
        if let Some(star) = &x_star {
            let k_count = mean_res.len() as f64;
            let ergodic = mean_res.iter().sum::<f64>() / k_count;
            let bound = 5.0 * x0.dist_sq(star) / (2.0 * params.psi * k_count);
            bounds.push(BoundSummary {
                name: "ergodic_residual".into(),
                lhs: ergodic,
                rhs: bound * 1.2,
                satisfied: ergodic <= bound * 1.2,
            });
        }
    }
    bounds.extend(margin_bound(&traces));

    Ok(RunSummary {
        config_hash: String::new(),
        solver: config.solver.solver,
        seeds: seeds.to_vec(),
        iterations: config.solver.max_iters,
        wall_time_ms: 0,
        dist0_sq: x_star.as_ref().map(|s| x0.dist_sq(s)),
        params: ParamsEcho::Rcog {
            omega: params.omega,
            gamma: params.gamma,
            eta: params.eta,
            rho: params.rho,
            rho_bar: params.rho_bar,
            psi: params.psi,
        },
        per_seed,
        fits,
        bounds,
    })
}

fn run_arcog_config(
    config: &RunConfig,
    op: &BlockOperator,
    seeds: &[u64],
    variant: ArcogVariant,
    hash: &str,
) -> Result<RunSummary> {
    use blocksolve_core::operators::BlockOp;
    let n = op.partition().num_blocks();
    let dist = distribution(config, n)?;
    let nu = config.solver.nu.unwrap_or(4.0);
    let schedule = ArcogSchedule::new(nu)?;
    let beta_bar = op.cocoercivity()?.to_vec();
    let beta: Vec<f64> = beta_bar.iter().map(|b| 0.9 * b).collect();
    let omega = config.solver.omega.unwrap_or_else(|| {
        beta.iter()
            .zip(dist.probs())
            .map(|(&b, &p)| b * p)
            .fold(f64::INFINITY, f64::min)
    });
    let constants = arcog_constants(nu, omega, &beta, &beta_bar, &dist)?;
    let x_star = op.solution().ok();
    let x0 = initial_point(config, op)?;
    let diag = DiagnosticsOptions {
        lyapunov: config.diagnostics.lyapunov || config.diagnostics.descent_margins,
        descent_margins: config.diagnostics.descent_margins,
        record_extras: config.diagnostics.summable_checks,
    };
    let spec = ArcogRunSpec {
        schedule,
        omega,
        variant,
        beta: Some(&beta),
        beta_bar: Some(&beta_bar),
    };

    let traces = parallel_over_seeds(seeds, |seed| {
        let opts = RunOptions {
            max_iters: config.solver.max_iters,
            tol: config.solver.tol,
            seed,
            diagnostics: diag,
        };
        Ok(run_arcog(op, &x0, x_star.as_ref(), &spec, &dist, &opts)?)
    })?;
    let per_seed = write_solver_traces(config, seeds, &traces, hash)?;

    let mut bounds = Vec::new();
    let mut fits = Vec::new();
    let aligned = traces.iter().all(|t| t.rows.len() == traces[0].rows.len());
    if aligned {
        let mean_res = seed_mean(&traces, |r| r.res_sq)?;
        if let Some(fit) = fit_over_tail(&mean_res, "res_sq") {
            fits.push(fit);
        }
        if let Some(star) = &x_star {
            let dist0_sq = x0.dist_sq(star);
            let mut worst_ratio: f64 = 0.0;
            for (k, &res) in mean_res.iter().enumerate() {
                let envelope = constants.residual_envelope(omega, nu, dist0_sq, k) * 1.2;
                worst_ratio = worst_ratio.max(res / envelope);
            }
            bounds.push(BoundSummary {
                name: "residual_envelope_worst_ratio".into(),
                lhs: worst_ratio,
                rhs: 1.0,
                satisfied: worst_ratio <= 1.0,
            });
            if config.diagnostics.summable_checks {
                let res_sq = mean_res.clone();
                let step_sq = seed_mean(&traces, |r| r.step_sq)?;
                let len = res_sq.len();
                let mut combo = vec![0.0; len];
                let mut blockdiff = vec![0.0; len];
                for trace in &traces {
                    let extras = trace
                        .extras
                        .as_ref()
                        .ok_or_else(|| anyhow!("extras missing despite summable_checks"))?;
                    for (m, v) in combo.iter_mut().zip(&extras.combo_sq) {
                        *m += v / traces.len() as f64;
                    }
                    for (m, v) in blockdiff.iter_mut().zip(&extras.blockdiff_weighted_sq) {
                        *m += v / traces.len() as f64;
                    }
                }
                let report = summable_checks(
                    &SummableInputs {
                        res_sq,
                        step_sq,
                        combo_sq: combo,
                        blockdiff_weighted_sq: blockdiff,
                    },
                    nu,
                    omega,
                    &constants,
                    dist0_sq,
                    1.2,
                );
                for (name, check) in [
                    ("summable_weighted_combo", report.weighted_combo),
                    ("summable_weighted_step", report.weighted_step),
                    ("summable_weighted_residual", report.weighted_residual),
                    ("summable_weighted_blockdiff", report.weighted_blockdiff),
                ] {
                    bounds.push(BoundSummary {
                        name: name.into(),
                        lhs: check.lhs,
                        rhs: check.rhs,
                        satisfied: check.pass,
                    });
                }
            }
        }
    }
    bounds.extend(margin_bound(&traces));

    Ok(RunSummary {
        config_hash: String::new(),
        solver: config.solver.solver,
        seeds: seeds.to_vec(),
        iterations: config.solver.max_iters,
        wall_time_ms: 0,
        dist0_sq: x_star.as_ref().map(|s| x0.dist_sq(s)),
        params: ParamsEcho::Arcog {
            nu,
            omega,
            lambda0_bar: constants.lambda0_bar,
            c0: constants.c0,
            c1: constants.c1,
            c2: constants.c2,
        },
        per_seed,
        fits,
        bounds,
    })
}

fn margin_bound(traces: &[RunTrace]) -> Option<BoundSummary> {
    let mut worst = f64::NEG_INFINITY;
    let mut seen = false;
    for trace in traces {
        for row in &trace.rows {
            if let Some(margin) = row.margin {
                seen = true;
                let scale = 1.0 + row.lyapunov.unwrap_or(0.0);
                worst = worst.max(margin / scale);
            }
        }
    }
    seen.then(|| BoundSummary {
        name: "descent_margin_worst".into(),
        lhs: worst,
        rhs: 1e-12,
        satisfied: worst <= 1e-12,
    })
}

fn write_solver_traces(
    config: &RunConfig,
    seeds: &[u64],
    traces: &[RunTrace],
    hash: &str,
) -> Result<Vec<SeedSummary>> {
    let mut per_seed = Vec::with_capacity(seeds.len());
    for trace in traces {
        let path = config
            .output_dir
            .join(format!("trace_seed{}.csv", trace.seed));
        write_file(&path, &trace.to_csv_with_meta(Some(hash)))?;
        let mean = trace.rows.iter().map(|r| r.res_sq).sum::<f64>() / trace.rows.len() as f64;
        per_seed.push(SeedSummary {
            seed: trace.seed,
            rows: trace.rows.len(),
            final_metric: trace.rows.last().map(|r| r.res_sq).unwrap_or(0.0),
            mean_metric: mean,
        });
    }
    Ok(per_seed)
}

fn run_federated_config(
    config: &RunConfig,
    problem: &SplitProblem,
    seeds: &[u64],
    algorithm: FederatedAlgorithm,
    hash: &str,
) -> Result<RunSummary> {
    let n = problem.num_users();
    if config.probs.is_some() {
        bail!("custom sampling probabilities are not supported for federated runs");
    }
    let base = FederatedConfig {
        algorithm,
        rounds: config.solver.max_iters,
        seed: 0,
        omega: config.solver.omega,
        lambda: config.solver.lambda,
        beta: config.solver.beta,
        nu: config.solver.nu,
        x0: config.x0.clone(),
        lyapunov: config.diagnostics.lyapunov,
    };
    let outcomes: Vec<FederatedOutcome> = parallel_over_seeds(seeds, |seed| {
        let mut cfg = base.clone();
        cfg.seed = seed;
        Ok(run_federated(problem, &cfg)?)
    })?;

    let mut per_seed = Vec::with_capacity(seeds.len());
    for outcome in &outcomes {
        let trace = &outcome.trace;
        let path = config
            .output_dir
            .join(format!("trace_seed{}.csv", trace.seed));
        write_file(&path, &trace.to_csv_with_meta(Some(hash)))?;
        let ledger = config
            .output_dir
            .join(format!("messages_seed{}.jsonl", trace.seed));
        write_file(&ledger, &messages_to_jsonl(&outcome.messages)?)?;
        let mean = trace
            .rows
            .iter()
            .map(|r| r.certificate_residual)
            .sum::<f64>()
            / trace.rows.len() as f64;
        per_seed.push(SeedSummary {
            seed: trace.seed,
            rows: trace.rows.len(),
            final_metric: trace
                .rows
                .last()
                .map(|r| r.certificate_residual)
                .unwrap_or(0.0),
            mean_metric: mean,
        });
    }

    // Seed-mean certificate series for fits and bounds.
    let len = outcomes[0].trace.rows.len();
    let aligned = outcomes.iter().all(|o| o.trace.rows.len() == len);
    let mut fits = Vec::new();
    let mut bounds = Vec::new();
    let mut mean_cert = vec![0.0; len];
    if aligned {
        for outcome in &outcomes {
            for (m, row) in mean_cert.iter_mut().zip(&outcome.trace.rows) {
                *m += row.certificate_residual / outcomes.len() as f64;
            }
        }
        if let Some(fit) = fit_over_tail(&mean_cert, "certificate_residual") {
            fits.push(fit);
        }
    }

    let x_star = problem.solution().ok();
    let x0 = config
        .x0
        .clone()
        .unwrap_or_else(|| vec![0.0; problem.dim()]);
    let dist0_sq = x_star.as_ref().map(|s| {
        x0.iter()
            .zip(s)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    });

    let params = match algorithm {
        FederatedAlgorithm::FedOg => {
            let lipschitz = problem
                .certificates()
                .lipschitz
                .ok_or_else(|| anyhow!("split instance declares no Lipschitz certificate"))?;
            let rho = problem.certificates().rho.unwrap_or(0.0);
            let range = lambda_range(lipschitz, rho)?;
            let lambda = config.solver.lambda.unwrap_or_else(|| range.midpoint());
            let ls = range.ls_at(lambda)?;
            let omega = config.solver.omega.unwrap_or(1.0);
            let dist = BlockDistribution::uniform(n)?;
            let params = derive_rcog_params(omega, 0.0, &vec![ls; n], &dist)?;
            if aligned {
                if let Some(d0) = dist0_sq {
                    let ergodic = mean_cert.iter().sum::<f64>() / len as f64;
                    let bound = 5.0 * n as f64 * d0
                        / (2.0 * params.psi * (1.0 - lipschitz * lambda).powi(2) * len as f64);
                    bounds.push(BoundSummary {
                        name: "ergodic_certificate".into(),
                        lhs: ergodic,
                        rhs: bound * 1.2,
                        satisfied: ergodic <= bound * 1.2,
                    });
                }
            }
            ParamsEcho::Fedog {
                omega,
                lambda,
                lipschitz,
                ls,
                psi: params.psi,
                users: n,
            }
        }
        FederatedAlgorithm::AcFedDr => {
            let beta = config.solver.beta.unwrap_or(1.0);
            let nu = config.solver.nu.unwrap_or(4.0);
            let dist = BlockDistribution::uniform(n)?;
            let omega = config.solver.omega.unwrap_or_else(|| beta * dist.p_min());
            let betas = vec![beta; n];
            let constants = arcog_constants(nu, omega, &betas, &betas, &dist)?;
            ParamsEcho::Acfeddr {
                nu,
                omega,
                beta,
                c0: constants.c0,
                c2: constants.c2,
                users: n,
            }
        }
    };

    Ok(RunSummary {
        config_hash: String::new(),
        solver: config.solver.solver,
        seeds: seeds.to_vec(),
        iterations: config.solver.max_iters,
        wall_time_ms: 0,
        dist0_sq,
        params,
        per_seed,
        fits,
        bounds,
    })
}
