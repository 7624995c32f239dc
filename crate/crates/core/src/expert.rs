//! Expert policies parameterized by competence, and offline demonstrations.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DVector;

use crate::bandit::{argmax, pull, ActionSet, Environment};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Expert competence: deliberateness β and inverse knowledgeability 1/λ.
///
/// `inv_lambda = 0` encodes perfect knowledge (λ = ∞).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Competence {
    pub beta: f64,
    pub inv_lambda: f64,
}

impl Competence {
    pub fn new(beta: f64, inv_lambda: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::config("beta must be finite and >= 0"));
        }
        if !(inv_lambda >= 0.0 && inv_lambda.is_finite()) {
            return Err(Error::config("inv_lambda must be finite and >= 0"));
        }
        Ok(Self { beta, inv_lambda })
    }

    /// λ², or `None` when λ = ∞.
    pub fn lambda_squared(&self) -> Option<f64> {
        if self.inv_lambda == 0.0 {
            None
        } else {
            Some(1.0 / (self.inv_lambda * self.inv_lambda))
        }
    }
}

/// The expert's belief ϑ about θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertKnowledge {
    pub vartheta: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PolicyKind {
    Softmax,
    EpsilonGreedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub competence: Competence,
    pub policy: PolicyKind,
    pub env_seed: Option<u64>,
}

/// Offline demonstrations `(action_index, reward)` over an action set of
/// `num_actions` arms.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    num_actions: usize,
    pairs: Vec<(usize, f64)>,
    pub meta: Option<DatasetMeta>,
}

impl OfflineDataset {
    pub fn new(num_actions: usize, pairs: Vec<(usize, f64)>) -> Result<Self> {
        if let Some(&(index, _)) = pairs.iter().find(|(a, _)| *a >= num_actions) {
            return Err(Error::ActionOutOfRange { index, num_actions });
        }
        Ok(Self {
            num_actions,
            pairs,
            meta: None,
        })
    }

    pub fn empty(num_actions: usize) -> Self {
        Self {
            num_actions,
            pairs: Vec::new(),
            meta: None,
        }
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn pairs(&self) -> &[(usize, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Per-arm action counts.
    pub fn action_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_actions];
        for &(a, _) in &self.pairs {
            counts[a] += 1;
        }
        counts
    }

    pub(crate) fn check_actions(&self, actions: &ActionSet) -> Result<()> {
        if self.num_actions != actions.num_actions() {
            return Err(Error::DimensionMismatch {
                expected: actions.num_actions(),
                found: self.num_actions,
            });
        }
        Ok(())
    }
}

/// ϑ = θ + (1/λ)·z, z ~ N(0, I). Exactly θ when 1/λ = 0.
pub fn sample_expert_knowledge(
    env: &Environment,
    comp: &Competence,
    rng: &mut RngStream,
) -> ExpertKnowledge {
    let theta = env.theta();
    if comp.inv_lambda == 0.0 {
        return ExpertKnowledge {
            vartheta: theta.clone(),
        };
    }
    let z = rng.normal_vector(theta.len());
    ExpertKnowledge {
        vartheta: theta + z * comp.inv_lambda,
    }
}

/// Log-sum-exp of `beta * scores` and the matching softmax probabilities.
pub fn softmax_with_lse(beta: f64, scores: &DVector<f64>) -> (f64, DVector<f64>) {
    let max = scores
        .iter()
        .map(|s| beta * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = scores.map(|s| (beta * s - max).exp());
    let total = probs.sum();
    probs /= total;
    (max + total.ln(), probs)
}

/// Softmax policy exp(β a⊤ϑ) / Σ_b exp(β b⊤ϑ).
pub fn softmax_action_probs(
    knowledge: &ExpertKnowledge,
    beta: f64,
    actions: &ActionSet,
) -> Vec<f64> {
    let (_, probs) = softmax_with_lse(beta, &actions.scores(&knowledge.vartheta));
    probs.iter().copied().collect()
}

/// ε-greedy policy: β on the argmax of a⊤ϑ plus (1−β)/K everywhere.
pub fn epsilon_greedy_action_probs(
    knowledge: &ExpertKnowledge,
    beta: f64,
    actions: &ActionSet,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config("epsilon-greedy beta must lie in [0, 1]"));
    }
    let k = actions.num_actions();
    let best = argmax(actions.scores(&knowledge.vartheta).as_slice());
    let base = (1.0 - beta) / k as f64;
    let mut probs = alloc::vec![base; k];
    probs[best] += beta;
    Ok(probs)
}

pub fn policy_probs(
    kind: PolicyKind,
    knowledge: &ExpertKnowledge,
    beta: f64,
    actions: &ActionSet,
) -> Result<Vec<f64>> {
    match kind {
        PolicyKind::Softmax => Ok(softmax_action_probs(knowledge, beta, actions)),
        PolicyKind::EpsilonGreedy => epsilon_greedy_action_probs(knowledge, beta, actions),
    }
}

/// Samples ϑ once, then `n` i.i.d. actions from the expert policy, each with a
/// unit-noise reward from the environment.
pub fn generate_demonstrations(
    env: &Environment,
    comp: &Competence,
    policy: PolicyKind,
    n: usize,
    rng: &mut RngStream,
) -> Result<OfflineDataset> {
    let actions = env.actions();
    let knowledge = sample_expert_knowledge(env, comp, rng);
    let probs = policy_probs(policy, &knowledge, comp.beta, actions)?;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.categorical(&probs);
        let r = pull(env, a, rng)?;
        pairs.push((a, r));
    }
    Ok(OfflineDataset {
        num_actions: actions.num_actions(),
        pairs,
        meta: Some(DatasetMeta {
            competence: *comp,
            policy,
            env_seed: None,
        }),
    })
}
