//! Plain-text offline dataset files.
//!
//! ```text
//! # K=5
//! # policy=softmax
//! # beta=10
//! # inv_lambda=0
//! # env_seed=1234
//! # action_kind=unit_sphere
//! # a0=0.31,-0.2,...
//! action_index,reward
//! 3,1.2345678901234567e0
//! ```
//!
//! Only `K` is required. `a<i>` lines give the action vectors of a unit-sphere
//! action set; without them the file describes basis actions.

use std::fmt::Write as _;
use std::path::Path;

use demobandit_core::bandit::{ActionKind, ActionSet};
use demobandit_core::expert::{Competence, DatasetMeta, OfflineDataset, PolicyKind};
use nalgebra::DVector;

use crate::error::{AppError, Result};

pub const COLUMN_HEADER: &str = "action_index,reward";

fn policy_name(p: PolicyKind) -> &'static str {
    match p {
        PolicyKind::Softmax => "softmax",
        PolicyKind::EpsilonGreedy => "epsilon_greedy",
    }
}

pub fn format_dataset(ds: &OfflineDataset, actions: Option<&ActionSet>) -> String {
    let mut out = String::new();
    writeln!(out, "# K={}", ds.num_actions()).unwrap();
    if let Some(meta) = &ds.meta {
        writeln!(out, "# policy={}", policy_name(meta.policy)).unwrap();
        writeln!(out, "# beta={}", meta.competence.beta).unwrap();
        writeln!(out, "# inv_lambda={}", meta.competence.inv_lambda).unwrap();
        if let Some(seed) = meta.env_seed {
            writeln!(out, "# env_seed={seed}").unwrap();
        }
    }
    if let Some(acts) = actions.filter(|a| a.kind() == ActionKind::UnitSphere) {
        writeln!(out, "# action_kind=unit_sphere").unwrap();
        for i in 0..acts.num_actions() {
            let coords: Vec<String> = acts.action(i).iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "# a{i}={}", coords.join(",")).unwrap();
        }
    }
    writeln!(out, "{COLUMN_HEADER}").unwrap();
    for &(a, r) in ds.pairs() {
        writeln!(out, "{a},{r:.16e}").unwrap();
    }
    out
}

pub fn write_dataset(path: &Path, ds: &OfflineDataset, actions: Option<&ActionSet>) -> Result<()> {
    std::fs::write(path, format_dataset(ds, actions)).map_err(|e| AppError::io(path, e))
}

/// Parsed dataset plus its action set when the file carries vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub dataset: OfflineDataset,
    pub actions: Option<ActionSet>,
}

impl DatasetFile {
    /// Stored action set, or the K-dimensional basis.
    pub fn action_set(&self) -> Result<ActionSet> {
        match &self.actions {
            Some(a) => Ok(a.clone()),
            None => Ok(ActionSet::basis(self.dataset.num_actions())?),
        }
    }
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<DatasetFile> {
    let err = |line: usize, msg: String| AppError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut k: Option<usize> = None;
    let mut policy = None;
    let mut beta = None;
    let mut inv_lambda = None;
    let mut env_seed = None;
    let mut kind = ActionKind::Basis;
    let mut vectors: Vec<(usize, DVector<f64>)> = Vec::new();
    let mut pairs = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line == COLUMN_HEADER {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.trim().split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| err(lineno, format!("bad number {v:?} for {key}")))
            };
            match key {
                "K" => {
                    k = Some(
                        value
                            .parse()
                            .map_err(|_| err(lineno, format!("bad K {value:?}")))?,
                    )
                }
                "policy" => {
                    policy = Some(match value {
                        "softmax" => PolicyKind::Softmax,
                        "epsilon_greedy" => PolicyKind::EpsilonGreedy,
                        _ => return Err(err(lineno, format!("unknown policy {value:?}"))),
                    })
                }
                "beta" => beta = Some(num(value)?),
                "inv_lambda" => inv_lambda = Some(num(value)?),
                "env_seed" => {
                    env_seed = Some(
                        value
                            .parse()
                            .map_err(|_| err(lineno, format!("bad env_seed {value:?}")))?,
                    )
                }
                "action_kind" => {
                    kind = match value {
                        "basis" => ActionKind::Basis,
                        "unit_sphere" => ActionKind::UnitSphere,
                        _ => return Err(err(lineno, format!("unknown action kind {value:?}"))),
                    }
                }
                _ => {
                    if let Some(idx) = key.strip_prefix('a').and_then(|s| s.parse::<usize>().ok()) {
                        let coords = value
                            .split(',')
                            .map(|c| num(c.trim()))
                            .collect::<Result<Vec<_>>>()?;
                        vectors.push((idx, DVector::from_vec(coords)));
                    }
                }
            }
            continue;
        }
        let (a, r) = line
            .split_once(',')
            .ok_or_else(|| err(lineno, "expected action_index,reward".into()))?;
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("bad action index {a:?}")))?;
        let r: f64 = r
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("bad reward {r:?}")))?;
        if !r.is_finite() {
            return Err(err(lineno, "reward must be finite".into()));
        }
        let k = k.ok_or_else(|| err(lineno, "data row before the K header".into()))?;
        if a >= k {
            return Err(err(
                lineno,
                format!("action index {a} out of range for K = {k}"),
            ));
        }
        pairs.push((a, r));
    }

    let k = k.ok_or_else(|| err(0, "missing K header".into()))?;
    let mut dataset = OfflineDataset::new(k, pairs)?;
    if let (Some(policy), Some(beta)) = (policy, beta) {
        let competence = Competence::new(beta, inv_lambda.unwrap_or(0.0))?;
        dataset = dataset.with_meta(DatasetMeta {
            competence,
            policy,
            env_seed,
        });
    }
    let actions = if vectors.is_empty() {
        None
    } else {
        vectors.sort_by_key(|(i, _)| *i);
        if vectors.len() != k || vectors.iter().enumerate().any(|(j, (i, _))| *i != j) {
            return Err(err(0, format!("expected action vectors a0..a{}", k - 1)));
        }
        let vs: Vec<DVector<f64>> = vectors.into_iter().map(|(_, v)| v).collect();
        Some(ActionSet::from_vectors(kind, &vs)?)
    };
    Ok(DatasetFile { dataset, actions })
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_dataset(&text, path)
}
