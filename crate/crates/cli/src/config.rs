//! Run configuration: a single JSON document selecting a problem, a solver,
//! seeds, diagnostics toggles, and the output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use blocksolve_core::operators::{BlockOperator, BlockOperatorData};
use blocksolve_core::splitting::{SplitProblem, SplitProblemData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Rcog,
    ArcogDirect,
    ArcogPractical,
    Fedog,
    Acfeddr,
}

/// Where the problem instance comes from: a separate JSON file or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    File { file: PathBuf },
    BlockOperator { block_operator: BlockOperatorData },
    SplitProblem { split_problem: SplitProblemData },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub max_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Splitting scale for the federated optimistic-gradient run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Splitting scale for the federated Douglas-Rachford run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub lyapunov: bool,
    #[serde(default)]
    pub descent_margins: bool,
    #[serde(default)]
    pub summable_checks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub solver: SolverConfig,
    /// Seeds to run; defaults to the single seed in the solver block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Sampling probabilities; defaults to uniform over blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// Initial point; defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub output_dir: PathBuf,
}

/// A resolved problem instance.
pub enum LoadedProblem {
    Operator(BlockOperator),
    Split(SplitProblem),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).context("parsing run config")?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical serialized config, recorded in every output
    /// for reproducibility.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(seeds) if !seeds.is_empty() => seeds.clone(),
            _ => vec![self.solver.seed],
        }
    }

    /// Loads the referenced problem, trying both instance schemas for file
    /// sources.
    pub fn load_problem(&self, config_dir: &Path) -> Result<LoadedProblem> {
        match &self.problem {
            ProblemSource::File { file } => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    config_dir.join(file)
                };
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading problem file {}", path.display()))?;
                if let Ok(op) = BlockOperator::from_json(&text) {
                    return Ok(LoadedProblem::Operator(op));
                }
                match SplitProblem::from_json(&text) {
                    Ok(split) => Ok(LoadedProblem::Split(split)),
                    Err(e) => bail!(
                        "{} is neither a block-operator nor a split-problem instance: {e}",
                        path.display()
                    ),
                }
            }
            ProblemSource::BlockOperator { block_operator } => Ok(LoadedProblem::Operator(
                BlockOperator::from_data(block_operator)?,
            )),
            ProblemSource::SplitProblem { split_problem } => Ok(LoadedProblem::Split(
                SplitProblem::from_data(split_problem)?,
            )),
        }
    }
}
