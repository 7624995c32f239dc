//! Config loading, parallel execution and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use demobandit_core::experiment::{aggregate, run_paired, AggregateResult, ExperimentConfig};
use rayon::prelude::*;

use crate::error::{AppError, Result};

pub const THREADS_ENV: &str = "DEMOBANDIT_THREADS";

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|source| AppError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_config(&text, path)
}

/// Worker count from the argument, then `DEMOBANDIT_THREADS`; `None` means
/// the hardware default.
pub fn resolve_threads(explicit: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = explicit {
        return Ok(Some(n).filter(|&n| n > 0));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(|n| Some(n).filter(|&n| n > 0))
            .map_err(|_| {
                AppError::Usage(format!(
                    "{THREADS_ENV} must be a non-negative integer, got {v:?}"
                ))
            }),
        _ => Ok(None),
    }
}

/// Runs every (run, agent) episode, parallel across run indices.
///
/// Results are merged in run-index order, so the output does not depend on
/// the worker count.
pub fn run_experiment(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<AggregateResult> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = resolve_threads(threads)? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| AppError::ThreadPool(e.to_string()))?;
    let per_run = pool.install(|| {
        (0..config.runs as u64)
            .into_par_iter()
            .map(|i| run_paired(config, i))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let labels: Vec<String> = config.agents.iter().map(|a| a.label.clone()).collect();
    Ok(aggregate(&labels, config.horizon, &per_run)?)
}

pub fn format_csv(result: &AggregateResult) -> String {
    let mut out = String::from("t");
    for agent in &result.agents {
        write!(out, ",{0}_mean,{0}_stderr", agent.label).unwrap();
    }
    out.push('\n');
    if result.agents.is_empty() {
        return out;
    }
    for t in 0..result.horizon {
        write!(out, "{}", t + 1).unwrap();
        for agent in &result.agents {
            write!(out, ",{:.12e},{:.12e}", agent.mean[t], agent.stderr[t]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(result: &AggregateResult, path: &Path) -> Result<()> {
    std::fs::write(path, format_csv(result)).map_err(|e| AppError::io(path, e))
}

/// One line per agent: final mean, stderr and solver warnings.
pub fn summary(result: &AggregateResult) -> String {
    let mut out = String::new();
    for a in &result.agents {
        write!(
            out,
            "{}: final regret {:.4} +/- {:.4} over {} runs",
            a.label, a.final_mean, a.final_stderr, result.runs
        )
        .unwrap();
        if a.nonconverged > 0 {
            write!(
                out,
                " ({} solver rounds hit the iteration cap)",
                a.nonconverged
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}
