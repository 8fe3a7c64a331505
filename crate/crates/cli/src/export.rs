//! The `export-plotdata` subcommand: aggregates per-seed traces into a
//! long-format CSV (`k,metric,mean,p10,p90`) with theoretical bound columns.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use blocksolve_core::trace::RunTrace;

use crate::run::{ParamsEcho, RunSummary};

/// Nearest-rank quantile of an unsorted sample.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

struct MetricSeries {
    name: &'static str,
    /// `per_k[k][seed]`
    per_k: Vec<Vec<f64>>,
}

fn push_rows(out: &mut String, series: &MetricSeries) {
    for (k, values) in series.per_k.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let mut sorted = values.clone();
        let p10 = quantile(&mut sorted, 0.10);
        let p90 = quantile(&mut sorted, 0.90);
        let _ = writeln!(out, "{k},{},{mean},{p10},{p90}", series.name);
    }
}

fn push_bound(out: &mut String, name: &str, values: impl Iterator<Item = (usize, f64)>) {
    for (k, v) in values {
        let _ = writeln!(out, "{k},{name},{v},{v},{v}");
    }
}

/// Reads `summary.json` plus the per-seed trace CSVs in `dir` and writes
/// `plotdata.csv` next to them. Returns the written path.
pub fn cmd_export_plotdata(dir: &Path) -> Result<std::path::PathBuf> {
    let summary_path = dir.join("summary.json");
    let summary: RunSummary = serde_json::from_str(
        &std::fs::read_to_string(&summary_path)
            .with_context(|| format!("reading {}", summary_path.display()))?,
    )
    .context("parsing summary.json")?;

    let mut out = String::from("k,metric,mean,p10,p90\n");
    match &summary.params {
        ParamsEcho::Rcog { psi, .. } => {
            let (res, step, dist, len) = read_solver_traces(dir, &summary)?;
            push_rows(&mut out, &res);
            push_rows(&mut out, &step);
            if let Some(dist) = dist {
                push_rows(&mut out, &dist);
            }
            if let Some(d0) = summary.dist0_sq {
                push_bound(
                    &mut out,
                    "ergodic_residual_bound",
                    (0..len).map(|k| (k, 5.0 * d0 / (2.0 * psi * (k as f64 + 1.0)))),
                );
            }
        }
        ParamsEcho::Arcog {
            nu, omega, c0, c2, ..
        } => {
            let (res, step, dist, len) = read_solver_traces(dir, &summary)?;
            push_rows(&mut out, &res);
            push_rows(&mut out, &step);
            if let Some(dist) = dist {
                push_rows(&mut out, &dist);
            }
            if let Some(d0) = summary.dist0_sq {
                push_bound(
                    &mut out,
                    "residual_envelope",
                    (0..len).map(|k| {
                        let t = k as f64 + nu;
                        (
                            k,
                            8.0 * (c0 + 2.0 * omega * c2) / (omega * omega * t * t) * d0,
                        )
                    }),
                );
            }
        }
        ParamsEcho::Fedog {
            psi,
            lipschitz,
            lambda,
            users,
            ..
        } => {
            let (cert, len) = read_federated_traces(dir, &summary)?;
            push_rows(&mut out, &cert);
            if let Some(d0) = summary.dist0_sq {
                let shrink = (1.0 - lipschitz * lambda).powi(2);
                push_bound(
                    &mut out,
                    "ergodic_certificate_bound",
                    (0..len).map(|k| {
                        (
                            k,
                            5.0 * *users as f64 * d0 / (2.0 * psi * shrink * (k as f64 + 1.0)),
                        )
                    }),
                );
            }
        }
        ParamsEcho::Acfeddr {
            nu,
            omega,
            beta,
            c0,
            c2,
            users,
        } => {
            let (cert, len) = read_federated_traces(dir, &summary)?;
            push_rows(&mut out, &cert);
            if let Some(d0) = summary.dist0_sq {
                push_bound(
                    &mut out,
                    "certificate_envelope",
                    (0..len).map(|k| {
                        let t = k as f64 + nu;
                        let value = 8.0 * *users as f64 * beta * beta * (c0 + 2.0 * omega * c2)
                            / (omega * omega * t * t)
                            * d0;
                        (k, value)
                    }),
                );
            }
        }
    }
    let path = dir.join("plotdata.csv");
    std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn read_solver_traces(
    dir: &Path,
    summary: &RunSummary,
) -> Result<(MetricSeries, MetricSeries, Option<MetricSeries>, usize)> {
    let mut res = MetricSeries {
        name: "res_sq",
        per_k: Vec::new(),
    };
    let mut step = MetricSeries {
        name: "step_sq",
        per_k: Vec::new(),
    };
    let mut dist = MetricSeries {
        name: "dist_sq",
        per_k: Vec::new(),
    };
    let mut any_dist = false;
    for &seed in &summary.seeds {
        let path = dir.join(format!("trace_seed{seed}.csv"));
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let trace = RunTrace::from_csv(seed, &text)?;
        for row in &trace.rows {
            if res.per_k.len() <= row.k {
                res.per_k.resize(row.k + 1, Vec::new());
                step.per_k.resize(row.k + 1, Vec::new());
                dist.per_k.resize(row.k + 1, Vec::new());
            }
            res.per_k[row.k].push(row.res_sq);
            step.per_k[row.k].push(row.step_sq);
            if let Some(d) = row.dist_sq {
                any_dist = true;
                dist.per_k[row.k].push(d);
            }
        }
    }
    let len = res.per_k.len();
    if len == 0 {
        bail!("no trace rows found in {}", dir.display());
    }
    Ok((res, step, any_dist.then_some(dist), len))
}

fn read_federated_traces(dir: &Path, summary: &RunSummary) -> Result<(MetricSeries, usize)> {
    let mut cert = MetricSeries {
        name: "certificate_residual",
        per_k: Vec::new(),
    };
    for &seed in &summary.seeds {
        let path = dir.join(format!("trace_seed{seed}.csv"));
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
        let header = lines.next().unwrap_or("");
        if header.trim() != "round,sampled_user,certificate_residual,lyapunov,cumulative_bytes" {
            bail!(
                "unexpected federated trace header in {}: {header}",
                path.display()
            );
        }
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                bail!("bad federated trace line in {}: {line}", path.display());
            }
            let round: usize = fields[0].parse().context("round column")?;
            let value: f64 = fields[2].parse().context("certificate column")?;
            if cert.per_k.len() <= round {
                cert.per_k.resize(round + 1, Vec::new());
            }
            cert.per_k[round].push(value);
        }
    }
    let len = cert.per_k.len();
    if len == 0 {
        bail!("no federated trace rows found in {}", dir.display());
    }
    Ok((cert, len))
}
