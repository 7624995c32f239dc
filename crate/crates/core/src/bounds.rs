//! Closed-form regret-bound quantities for informed Thompson sampling on a
//! K-armed Gaussian bandit with prior N(0, I_K).
//!
//! All logarithms are natural.

use alloc::collections::BTreeSet;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::expert::OfflineDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub num_actions: usize,
    pub horizon: usize,
    pub num_demos: usize,
    pub beta: f64,
    /// 1/λ; zero for λ = ∞.
    pub inv_lambda: f64,
}

/// Regimes where a formula was patched to stay finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoundFlags {
    /// β ≤ 1/T, so α₁ was pinned to K.
    pub beta_fallback: bool,
    /// α₁ ≥ 1, so log T / log(1/α₁) was replaced by T.
    pub loose_regime: bool,
    /// K < log₂ T: the informative-set lemma's technical condition fails.
    pub condition_violated: bool,
    /// f₁ was clipped into [0, 1].
    pub f1_clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub alpha1: f64,
    pub alpha2: f64,
    pub f1: f64,
    pub f2: f64,
    pub main_term: f64,
    pub remainder_term: f64,
    pub total_bound: f64,
    pub flags: BoundFlags,
}

/// Distinct action indices appearing in the demonstrations.
pub fn informative_set(offline: &OfflineDataset) -> BTreeSet<usize> {
    offline.pairs().iter().map(|&(a, _)| a).collect()
}

/// 2·√(2 ln K), an upper bound on E[max_a ⟨a, θ⟩ − min_a ⟨a, θ⟩].
pub fn reward_range_bound(num_actions: usize) -> f64 {
    2.0 * (2.0 * (num_actions as f64).ln()).sqrt()
}

pub fn compute_bounds(inputs: &BoundInputs) -> Result<BoundReport> {
    let BoundInputs {
        num_actions,
        horizon,
        num_demos,
        beta,
        inv_lambda,
    } = *inputs;
    if num_actions < 2 {
        return Err(Error::config("K must be at least 2"));
    }
    if horizon < 1 {
        return Err(Error::config("T must be at least 1"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config("beta must be positive and finite"));
    }
    if !(inv_lambda >= 0.0 && inv_lambda.is_finite()) {
        return Err(Error::config("lambda must be positive (inf allowed)"));
    }
    let k = num_actions as f64;
    let t = horizon as f64;
    let n = num_demos as f64;
    let mut flags = BoundFlags {
        condition_violated: k < t.log2(),
        ..BoundFlags::default()
    };

    let alpha1 = if beta * t <= 1.0 {
        flags.beta_fallback = true;
        k
    } else {
        k * ((t * beta).ln() / beta).min(1.0)
    };
    let alpha2 = (beta * (2.0 * (t * k).ln()).sqrt() * inv_lambda).exp();

    let log_ratio = if alpha1 < 1.0 {
        t.ln() / (1.0 / alpha1).ln()
    } else {
        flags.loose_regime = true;
        t
    };
    let denom = alpha2 * (1.0 + alpha1 + log_ratio + k / (t * beta));
    let raw_f1 = 3.0 / t + (1.0 - 1.0 / denom).powf(n);
    let f1 = raw_f1.clamp(0.0, 1.0);
    flags.f1_clipped = f1 != raw_f1;
    let f2 = (alpha1 + 1.0 + alpha2 * k * n / (t * beta) + 1.0 / t).min(k);

    let entropy = if f1 > 0.0 { f1 * (k / f1).ln() } else { 0.0 };
    let main_term = (t * f2 * (f2.ln() + entropy)).sqrt();
    let c1 = reward_range_bound(num_actions);
    let remainder_term = c1 * t * f1 + 2.0 * c1;
    Ok(BoundReport {
        alpha1,
        alpha2,
        f1,
        f2,
        main_term,
        remainder_term,
        total_bound: main_term + remainder_term,
        flags,
    })
}
