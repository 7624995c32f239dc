//! Estimating the expert's deliberateness β from offline data.

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::bandit::ActionSet;
use crate::error::{Error, Result};
use crate::expert::{softmax_with_lse, OfflineDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BetaMethod {
    Mle,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    pub method: BetaMethod,
    /// Negative log-likelihood at `beta_hat` (MLE) or the empirical action
    /// entropy in nats (entropy method).
    pub diagnostic: f64,
}

/// Estimator knobs shared by both methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub ridge: f64,
    pub beta_max: f64,
    pub c0: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            ridge: 1.0,
            beta_max: 100.0,
            c0: 1.0,
        }
    }
}

/// (ridge·I + Σ Ā Ā⊤)⁻¹ Σ R̄ Ā.
pub fn ridge_least_squares(
    offline: &OfflineDataset,
    actions: &ActionSet,
    ridge: f64,
) -> Result<DVector<f64>> {
    if ridge.is_nan() || ridge <= 0.0 {
        return Err(Error::config("ridge must be positive"));
    }
    offline.check_actions(actions)?;
    let d = actions.dim();
    let mut gram = DMatrix::identity(d, d) * ridge;
    let mut target = DVector::zeros(d);
    for &(a, r) in offline.pairs() {
        let act = actions.action(a);
        gram.ger(1.0, &act, &act, 1.0);
        target.axpy(r, &act, 1.0);
    }
    let chol = gram
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("ridge system"))?;
    Ok(chol.solve(&target))
}

/// −Σ_n (β Ā_n⊤ϑ − log Σ_b exp(β b⊤ϑ)) for a fixed knowledge estimate ϑ.
pub fn softmax_nll(
    beta: f64,
    offline: &OfflineDataset,
    actions: &ActionSet,
    vartheta: &DVector<f64>,
) -> f64 {
    let scores = actions.scores(vartheta);
    let (lse, _) = softmax_with_lse(beta, &scores);
    offline
        .pairs()
        .iter()
        .map(|&(a, _)| lse - beta * scores[a])
        .sum()
}

/// d/dβ of [`softmax_nll`]: Σ_n (E_p[b⊤ϑ] − Ā_n⊤ϑ).
pub fn softmax_nll_slope(
    beta: f64,
    offline: &OfflineDataset,
    actions: &ActionSet,
    vartheta: &DVector<f64>,
) -> f64 {
    let scores = actions.scores(vartheta);
    let (_, probs) = softmax_with_lse(beta, &scores);
    offline
        .pairs()
        .iter()
        .map(|&(a, _)| {
            probs
                .iter()
                .zip(&scores)
                .map(|(p, s)| p * (s - scores[a]))
                .sum::<f64>()
        })
        .sum()
}

const GOLDEN_TOL: f64 = 1e-4;

/// Golden-section minimization of the softmax NLL over β ∈ [0, beta_max],
/// with ϑ fixed at the ridge least-squares estimate.
pub fn estimate_beta_mle(
    offline: &OfflineDataset,
    actions: &ActionSet,
    ridge: f64,
    beta_max: f64,
) -> Result<BetaEstimate> {
    if offline.is_empty() {
        return Err(Error::InsufficientData(
            "beta MLE needs at least one demonstration",
        ));
    }
    if beta_max.is_nan() || beta_max <= 0.0 {
        return Err(Error::config("beta_max must be positive"));
    }
    let vartheta = ridge_least_squares(offline, actions, ridge)?;
    let nll = |b: f64| softmax_nll(b, offline, actions, &vartheta);
    let slope = |b: f64| softmax_nll_slope(b, offline, actions, &vartheta);

    // convexity: the sign of the slope at an endpoint settles boundary optima
    // even where the NLL itself is flat to machine precision
    if slope(0.0) >= 0.0 {
        return Ok(BetaEstimate {
            beta_hat: 0.0,
            method: BetaMethod::Mle,
            diagnostic: nll(0.0),
        });
    }
    if slope(beta_max) <= 0.0 {
        return Ok(BetaEstimate {
            beta_hat: beta_max,
            method: BetaMethod::Mle,
            diagnostic: nll(beta_max),
        });
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, beta_max);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (nll(x1), nll(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = nll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = nll(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let best = (nll(mid), mid);
    Ok(BetaEstimate {
        beta_hat: best.1,
        method: BetaMethod::Mle,
        diagnostic: best.0,
    })
}

/// Shannon entropy (nats) of the empirical action distribution.
pub fn action_entropy(offline: &OfflineDataset) -> f64 {
    let n = offline.len() as f64;
    offline
        .action_counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// β̂ = min(c0 / H(μ_A), beta_max), with H = 0 mapped to beta_max.
pub fn estimate_beta_entropy(
    offline: &OfflineDataset,
    c0: f64,
    beta_max: f64,
) -> Result<BetaEstimate> {
    if offline.is_empty() {
        return Err(Error::InsufficientData(
            "entropy estimate needs at least one demonstration",
        ));
    }
    if c0.is_nan() || c0 <= 0.0 {
        return Err(Error::config("c0 must be positive"));
    }
    let h = action_entropy(offline);
    let beta_hat = if h > 0.0 {
        (c0 / h).min(beta_max)
    } else {
        beta_max
    };
    Ok(BetaEstimate {
        beta_hat,
        method: BetaMethod::Entropy,
        diagnostic: h,
    })
}

pub fn estimate_beta(
    method: BetaMethod,
    offline: &OfflineDataset,
    actions: &ActionSet,
    settings: &EstimatorSettings,
) -> Result<BetaEstimate> {
    match method {
        BetaMethod::Mle => estimate_beta_mle(offline, actions, settings.ridge, settings.beta_max),
        BetaMethod::Entropy => estimate_beta_entropy(offline, settings.c0, settings.beta_max),
    }
}
