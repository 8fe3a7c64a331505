//! Per-iteration run traces and their CSV form.

use std::fmt::Write as _;

/// One recorded iteration. Row `k` describes the state after `k` steps;
/// `block` is the index sampled on the transition into this state (absent on
/// the initial row).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub block: Option<usize>,
    /// `||G x^k||^2`
    pub res_sq: f64,
    /// `||x^k - x^{k-1}||^2`
    pub step_sq: f64,
    /// `||x^k - x*||^2` when a solution is known.
    pub dist_sq: Option<f64>,
    pub lyapunov: Option<f64>,
    pub margin: Option<f64>,
}

/// Extra per-iteration quantities recorded on accelerated runs so partial-sum
/// bounds can be checked afterwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccelExtras {
    /// `||eta_k G x^k - gamma_k G x^{k-1}||^2` at each k.
    pub combo_sq: Vec<f64>,
    /// `sum_i beta_bar_i ||[G x^k]_i - [G x^{k-1}]_i||^2` at each k.
    pub blockdiff_weighted_sq: Vec<f64>,
}

/// The trace of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub extras: Option<AccelExtras>,
}

fn push_opt(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

impl RunTrace {
    /// Fixed-schema CSV: `k,block,res_sq,step_sq,dist_sq,lyapunov,margin`.
    /// Optional fields render as empty cells.
    pub fn to_csv(&self) -> String {
        self.to_csv_with_meta(None)
    }

    /// Same as [`RunTrace::to_csv`] but prefixed with a comment line that
    /// records the seed and, when given, the config hash.
    pub fn to_csv_with_meta(&self, config_hash: Option<&str>) -> String {
        let mut out = String::new();
        match config_hash {
            Some(hash) => {
                let _ = writeln!(out, "# seed={} config_hash={hash}", self.seed);
            }
            None => {
                let _ = writeln!(out, "# seed={}", self.seed);
            }
        }
        out.push_str("k,block,res_sq,step_sq,dist_sq,lyapunov,margin\n");
        for row in &self.rows {
            let _ = write!(out, "{},", row.k);
            match row.block {
                Some(b) => {
                    let _ = write!(out, "{b}");
                }
                None => {}
            }
            let _ = write!(out, ",{},{},", row.res_sq, row.step_sq);
            push_opt(&mut out, row.dist_sq);
            out.push(',');
            push_opt(&mut out, row.lyapunov);
            out.push(',');
            push_opt(&mut out, row.margin);
            out.push('\n');
        }
        out
    }

    /// Parses the fixed-schema CSV produced by [`RunTrace::to_csv`],
    /// skipping leading `#` metadata comments.
    pub fn from_csv(seed: u64, text: &str) -> crate::error::Result<Self> {
        let mut rows = Vec::new();
        let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
        let header = lines.next().unwrap_or("");
        if header.trim() != "k,block,res_sq,step_sq,dist_sq,lyapunov,margin" {
            return Err(crate::error::Error::Config(format!(
                "unexpected trace header: {header}"
            )));
        }
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(crate::error::Error::Config(format!(
                    "trace line {} has {} fields, expected 7",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| -> crate::error::Result<f64> {
                s.parse::<f64>().map_err(|e| {
                    crate::error::Error::Config(format!(
                        "bad float '{s}' on line {}: {e}",
                        lineno + 2
                    ))
                })
            };
            let parse_opt = |s: &str| -> crate::error::Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_f(s).map(Some)
                }
            };
            rows.push(TraceRow {
                k: fields[0].parse().map_err(|e| {
                    crate::error::Error::Config(format!("bad k on line {}: {e}", lineno + 2))
                })?,
                block: if fields[1].is_empty() {
                    None
                } else {
                    Some(fields[1].parse().map_err(|e| {
                        crate::error::Error::Config(format!(
                            "bad block on line {}: {e}",
                            lineno + 2
                        ))
                    })?)
                },
                res_sq: parse_f(fields[2])?,
                step_sq: parse_f(fields[3])?,
                dist_sq: parse_opt(fields[4])?,
                lyapunov: parse_opt(fields[5])?,
                margin: parse_opt(fields[6])?,
            });
        }
        Ok(Self {
            seed,
            rows,
            extras: None,
        })
    }

    pub fn res_sq_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.res_sq).collect()
    }
}
