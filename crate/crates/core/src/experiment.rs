//! Experiment configuration, paired episodes and regret aggregation.
//!
//! Each run index gets its own environment and demonstration set, shared by
//! every agent in the config. Randomness is split into named streams:
//! `environment` and `expert` per run, plus `agent/<label>` and
//! `rewards/<label>` per agent, so adding an agent never changes another
//! agent's draws.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{DMatrix, DVector};

use crate::agents::{Agent, AgentDiagnostics, AgentKind, AgentSettings};
use crate::bandit::{
    instant_regret, pull, sample_environment, ActionConfig, ActionKind, Environment, PriorSpec,
};
use crate::bootstrap::SolverSettings;
use crate::error::{Error, Result};
use crate::estimate::{estimate_beta, BetaMethod, EstimatorSettings};
use crate::expert::{generate_demonstrations, Competence, OfflineDataset, PolicyKind};
use crate::posterior::GridSpec;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriorConfig {
    pub mean: Vec<f64>,
    /// Row-major covariance rows.
    pub covariance: Vec<Vec<f64>>,
}

impl PriorConfig {
    pub fn to_spec(&self) -> Result<PriorSpec> {
        let d = self.mean.len();
        if self.covariance.len() != d || self.covariance.iter().any(|row| row.len() != d) {
            return Err(Error::config("prior covariance must be d x d"));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| self.covariance[i][j]);
        PriorSpec::new(DVector::from_vec(self.mean.clone()), cov)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EnvConfig {
    pub kind: ActionKind,
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub num_actions: usize,
    /// Defaults to K for basis actions.
    #[cfg_attr(feature = "serde", serde(rename = "d", default))]
    pub dim: Option<usize>,
    /// Defaults to N(0, I_d).
    #[cfg_attr(feature = "serde", serde(default))]
    pub prior: Option<PriorConfig>,
}

impl EnvConfig {
    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(self.num_actions)
    }

    pub fn prior_spec(&self) -> Result<PriorSpec> {
        match &self.prior {
            Some(p) => {
                let spec = p.to_spec()?;
                if spec.dim() != self.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim(),
                        found: spec.dim(),
                    });
                }
                Ok(spec)
            }
            None => Ok(PriorSpec::standard(self.dim())),
        }
    }

    pub fn action_config(&self) -> ActionConfig {
        ActionConfig {
            kind: self.kind,
            num_actions: self.num_actions,
            dim: self.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ExpertConfig {
    pub policy_kind: PolicyKind,
    pub beta_true: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub inv_lambda_true: f64,
    #[cfg_attr(feature = "serde", serde(rename = "N"))]
    pub num_demos: usize,
}

impl ExpertConfig {
    pub fn competence(&self) -> Result<Competence> {
        Competence::new(self.beta_true, self.inv_lambda_true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NamedBeta {
    /// Copy the expert's β.
    True,
    Mle,
    Entropy,
}

/// Where an agent's β comes from: a number or `"true"`, `"mle"`, `"entropy"`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum BetaSource {
    Fixed(f64),
    Named(NamedBeta),
}

impl Default for BetaSource {
    fn default() -> Self {
        BetaSource::Named(NamedBeta::True)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AgentSpec {
    pub label: String,
    pub kind: AgentKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub beta_alg: BetaSource,
    /// Defaults to the expert's true 1/λ.
    #[cfg_attr(feature = "serde", serde(default))]
    pub inv_lambda_alg: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub solver: SolverSettings,
    #[cfg_attr(feature = "serde", serde(default))]
    pub grid: GridSpec,
}

impl AgentSpec {
    pub fn new(label: &str, kind: AgentKind) -> Self {
        Self {
            label: label.into(),
            kind,
            beta_alg: BetaSource::default(),
            inv_lambda_alg: None,
            solver: SolverSettings::default(),
            grid: GridSpec::default(),
        }
    }

    pub fn with_beta(mut self, beta: BetaSource) -> Self {
        self.beta_alg = beta;
        self
    }

    pub fn with_inv_lambda(mut self, inv_lambda: f64) -> Self {
        self.inv_lambda_alg = Some(inv_lambda);
        self
    }
}

fn default_c0() -> f64 {
    1.0
}
fn default_ridge() -> f64 {
    1.0
}
fn default_beta_max() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub expert: ExpertConfig,
    pub agents: Vec<AgentSpec>,
    #[cfg_attr(feature = "serde", serde(rename = "T"))]
    pub horizon: usize,
    pub runs: usize,
    pub master_seed: u64,
    #[cfg_attr(feature = "serde", serde(default = "default_c0"))]
    pub c0: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_ridge"))]
    pub ridge: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_beta_max"))]
    pub beta_max: f64,
}

impl ExperimentConfig {
    /// Config with default estimator settings.
    pub fn new(
        env: EnvConfig,
        expert: ExpertConfig,
        agents: Vec<AgentSpec>,
        horizon: usize,
        runs: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            env,
            expert,
            agents,
            horizon,
            runs,
            master_seed,
            c0: default_c0(),
            ridge: default_ridge(),
            beta_max: default_beta_max(),
        }
    }

    pub fn estimator_settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            ridge: self.ridge,
            beta_max: self.beta_max,
            c0: self.c0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("T must be at least 1"));
        }
        if self.runs < 1 {
            return Err(Error::config("runs must be at least 1"));
        }
        let env = &self.env;
        if env.num_actions < 2 {
            return Err(Error::config("K must be at least 2"));
        }
        if env.dim() < 1 {
            return Err(Error::config("d must be at least 1"));
        }
        if env.kind == ActionKind::Basis && env.dim() != env.num_actions {
            return Err(Error::config("basis actions require d = K"));
        }
        env.prior_spec()?;
        self.expert.competence()?;
        if self.expert.policy_kind == PolicyKind::EpsilonGreedy && self.expert.beta_true > 1.0 {
            return Err(Error::config("epsilon-greedy beta_true must lie in [0, 1]"));
        }
        for (name, v) in [
            ("c0", self.c0),
            ("ridge", self.ridge),
            ("beta_max", self.beta_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite")));
            }
        }
        let mut labels = BTreeSet::new();
        for agent in &self.agents {
            if agent.label.is_empty() || agent.label.contains(',') {
                return Err(Error::config(format!(
                    "invalid agent label {:?}",
                    agent.label
                )));
            }
            if !labels.insert(agent.label.as_str()) {
                return Err(Error::config(format!(
                    "duplicate agent label {:?}",
                    agent.label
                )));
            }
            if let BetaSource::Fixed(b) = agent.beta_alg {
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(Error::config(format!(
                        "agent {:?}: beta_alg must be finite and >= 0",
                        agent.label
                    )));
                }
            }
            if let Some(il) = agent.inv_lambda_alg {
                if !(il >= 0.0 && il.is_finite()) {
                    return Err(Error::config(format!(
                        "agent {:?}: inv_lambda_alg must be finite and >= 0",
                        agent.label
                    )));
                }
            }
            if agent.kind == AgentKind::Grid && env.dim() != 2 {
                return Err(Error::UnsupportedDimension(env.dim()));
            }
            if agent.solver.tol.is_nan() || agent.solver.tol <= 0.0 || agent.solver.max_iters == 0 {
                return Err(Error::config(format!(
                    "agent {:?}: invalid solver settings",
                    agent.label
                )));
            }
            if agent.grid.resolution < 2 || agent.grid.marginal_draws == 0 {
                return Err(Error::config(format!(
                    "agent {:?}: invalid grid settings",
                    agent.label
                )));
            }
        }
        Ok(())
    }
}

/// Environment and demonstrations of one run index.
#[derive(Debug, Clone, PartialEq)]
pub struct RunWorld {
    pub env: Environment,
    pub prior: PriorSpec,
    pub offline: OfflineDataset,
    pub env_seed: u64,
}

pub fn sample_world(config: &ExperimentConfig, run_index: u64) -> Result<RunWorld> {
    let prior = config.env.prior_spec()?;
    let mut env_rng = RngStream::derive(config.master_seed, run_index, "environment");
    let env = sample_environment(&prior, config.env.action_config(), &mut env_rng)?;
    let mut expert_rng = RngStream::derive(config.master_seed, run_index, "expert");
    let mut offline = generate_demonstrations(
        &env,
        &config.expert.competence()?,
        config.expert.policy_kind,
        config.expert.num_demos,
        &mut expert_rng,
    )?;
    if let Some(meta) = offline.meta.as_mut() {
        meta.env_seed = Some(env_rng.seed());
    }
    Ok(RunWorld {
        env,
        prior,
        offline,
        env_seed: env_rng.seed(),
    })
}

/// Competence handed to an agent after resolving its β source.
pub fn algorithm_competence(
    config: &ExperimentConfig,
    spec: &AgentSpec,
    world: &RunWorld,
) -> Result<Competence> {
    let beta = match spec.beta_alg {
        BetaSource::Fixed(b) => b,
        BetaSource::Named(NamedBeta::True) => config.expert.beta_true,
        BetaSource::Named(NamedBeta::Mle) => {
            estimate_beta(
                BetaMethod::Mle,
                &world.offline,
                world.env.actions(),
                &config.estimator_settings(),
            )?
            .beta_hat
        }
        BetaSource::Named(NamedBeta::Entropy) => {
            estimate_beta(
                BetaMethod::Entropy,
                &world.offline,
                world.env.actions(),
                &config.estimator_settings(),
            )?
            .beta_hat
        }
    };
    Competence::new(
        beta,
        spec.inv_lambda_alg.unwrap_or(config.expert.inv_lambda_true),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    /// Cumulative expected regret after each of the T steps.
    pub cumulative: Vec<f64>,
    pub run_seed: u64,
    pub agent_label: String,
    pub beta_used: f64,
    pub diagnostics: AgentDiagnostics,
}

/// Plays one agent for T steps in an already sampled world.
pub fn play(
    config: &ExperimentConfig,
    spec: &AgentSpec,
    world: &RunWorld,
    run_index: u64,
) -> Result<RegretTrace> {
    let wrap = |e: Error, t: usize| e.in_episode(run_index, t);
    let comp = algorithm_competence(config, spec, world).map_err(|e| wrap(e, 0))?;
    let settings = AgentSettings {
        solver: spec.solver,
        grid: spec.grid,
    };
    let actions = world.env.actions();
    let mut agent = Agent::new(
        spec.kind,
        &world.offline,
        &world.prior,
        comp,
        actions,
        &settings,
    )
    .map_err(|e| wrap(e, 0))?;
    let mut act_rng = RngStream::derive(
        config.master_seed,
        run_index,
        &format!("agent/{}", spec.label),
    );
    let mut reward_rng = RngStream::derive(
        config.master_seed,
        run_index,
        &format!("rewards/{}", spec.label),
    );
    let mut cumulative = Vec::with_capacity(config.horizon);
    let mut total = 0.0;
    for t in 1..=config.horizon {
        let a = agent.act(&mut act_rng).map_err(|e| wrap(e, t))?;
        let r = pull(&world.env, a, &mut reward_rng).map_err(|e| wrap(e, t))?;
        agent.observe(a, r).map_err(|e| wrap(e, t))?;
        total += instant_regret(&world.env, a).map_err(|e| wrap(e, t))?;
        cumulative.push(total);
    }
    Ok(RegretTrace {
        cumulative,
        run_seed: world.env_seed,
        agent_label: spec.label.clone(),
        beta_used: comp.beta,
        diagnostics: agent.diagnostics(),
    })
}

/// One agent on one run index.
pub fn run_episode(
    config: &ExperimentConfig,
    spec: &AgentSpec,
    run_index: u64,
) -> Result<RegretTrace> {
    config.validate()?;
    let world = sample_world(config, run_index).map_err(|e| e.in_episode(run_index, 0))?;
    play(config, spec, &world, run_index)
}

/// Every agent of the config on the same world; traces in config order.
pub fn run_paired(config: &ExperimentConfig, run_index: u64) -> Result<Vec<RegretTrace>> {
    let world = sample_world(config, run_index).map_err(|e| e.in_episode(run_index, 0))?;
    config
        .agents
        .iter()
        .map(|spec| play(config, spec, &world, run_index))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentAggregate {
    pub label: String,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub final_mean: f64,
    pub final_stderr: f64,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub horizon: usize,
    pub runs: usize,
    pub agents: Vec<AgentAggregate>,
}

impl AggregateResult {
    pub fn agent(&self, label: &str) -> Option<&AgentAggregate> {
        self.agents.iter().find(|a| a.label == label)
    }
}

/// Pointwise mean and standard error over runs, summed in run order.
///
/// `per_run[i]` holds the traces of run index `i` in agent order.
pub fn aggregate(
    labels: &[String],
    horizon: usize,
    per_run: &[Vec<RegretTrace>],
) -> Result<AggregateResult> {
    let runs = per_run.len();
    let mut agents = Vec::with_capacity(labels.len());
    for (j, label) in labels.iter().enumerate() {
        let mut sum = vec![0.0; horizon];
        let mut nonconverged = 0;
        for traces in per_run {
            let trace = traces.get(j).ok_or(Error::config("missing trace"))?;
            if trace.cumulative.len() != horizon {
                return Err(Error::DimensionMismatch {
                    expected: horizon,
                    found: trace.cumulative.len(),
                });
            }
            for (s, v) in sum.iter_mut().zip(&trace.cumulative) {
                *s += v;
            }
            nonconverged += trace.diagnostics.nonconverged;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / runs as f64).collect();
        let mut sq = vec![0.0; horizon];
        for traces in per_run {
            for ((q, v), m) in sq.iter_mut().zip(&traces[j].cumulative).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let stderr: Vec<f64> = if runs > 1 {
            sq.iter()
                .map(|q| (q / (runs - 1) as f64).sqrt() / (runs as f64).sqrt())
                .collect()
        } else {
            vec![0.0; horizon]
        };
        agents.push(AgentAggregate {
            label: label.clone(),
            final_mean: mean.last().copied().unwrap_or(0.0),
            final_stderr: stderr.last().copied().unwrap_or(0.0),
            mean,
            stderr,
            nonconverged,
        });
    }
    Ok(AggregateResult {
        horizon,
        runs,
        agents,
    })
}

/// Runs everything on the calling thread.
pub fn run_experiment_serial(config: &ExperimentConfig) -> Result<AggregateResult> {
    config.validate()?;
    let per_run = (0..config.runs as u64)
        .map(|i| run_paired(config, i))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = config.agents.iter().map(|a| a.label.clone()).collect();
    aggregate(&labels, config.horizon, &per_run)
}
