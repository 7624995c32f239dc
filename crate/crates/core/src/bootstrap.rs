//! Bayesian bootstrapping of the informed posterior.
//!
//! A posterior sample is approximated by the minimizer of a randomly
//! perturbed MAP loss over the environment parameter θ and the expert's
//! knowledge ϑ:
//!
//! ```text
//! L1 = -2 Σ_n w_n (β ϑ⊤Ā_n − log Σ_b exp(β ϑ⊤b))
//! L2 = Σ_n (R̄_n + ξ¹_n − θ⊤Ā_n)² + Σ_τ (R_τ + ξ²_τ − θ⊤A_τ)²
//! L3 = λ² ‖ϑ − θ − ϑ̃‖² + (θ − θ̃₀)⊤ Σ₀⁻¹ (θ − θ̃₀)
//! ```
//!
//! With λ = ∞ the knowledge variable is eliminated (ϑ ≡ θ) and the coupling
//! term disappears.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{DMatrix, DVector};

use crate::bandit::{ActionSet, PriorSpec};
use crate::error::{Error, Result};
use crate::expert::{softmax_with_lse, Competence, OfflineDataset};
use crate::rng::RngStream;

/// Variance used for the knowledge perturbation ϑ̃.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VarthetaNoise {
    /// ϑ̃ ~ N(0, I/λ²), matching the knowledge prior.
    #[default]
    InverseLambdaSquared,
    /// ϑ̃ ~ N(0, I/λ).
    InverseLambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SolverKind {
    /// Damped Newton steps with Armijo backtracking.
    #[default]
    Newton,
    /// Steepest descent with Armijo backtracking.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SolverSettings {
    pub kind: SolverKind,
    /// Stop once the joint gradient norm falls to this value.
    pub tol: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub armijo: f64,
    pub vartheta_noise: VarthetaNoise,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kind: SolverKind::Newton,
            tol: 1e-6,
            max_iters: 5000,
            initial_step: 1.0,
            armijo: 1e-4,
            vartheta_noise: VarthetaNoise::InverseLambdaSquared,
        }
    }
}

/// One round of resampled perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    /// Bootstrap weights on the offline actions, Exp(1).
    pub w: Vec<f64>,
    pub xi_offline: Vec<f64>,
    pub xi_online: Vec<f64>,
    pub theta0_tilde: DVector<f64>,
    pub vartheta_tilde: DVector<f64>,
}

pub fn sample_perturbations(
    n: usize,
    t: usize,
    prior: &PriorSpec,
    comp: &Competence,
    noise: VarthetaNoise,
    rng: &mut RngStream,
) -> PerturbationSet {
    let d = prior.dim();
    let w = (0..n).map(|_| rng.exponential()).collect();
    let xi_offline = (0..n).map(|_| rng.standard_normal()).collect();
    let xi_online = (0..t).map(|_| rng.standard_normal()).collect();
    let z = rng.normal_vector(d);
    let theta0_tilde = prior.chol_lower() * z;
    let vartheta_tilde = if comp.inv_lambda == 0.0 {
        DVector::zeros(d)
    } else {
        let scale = match noise {
            VarthetaNoise::InverseLambdaSquared => comp.inv_lambda,
            VarthetaNoise::InverseLambda => comp.inv_lambda.sqrt(),
        };
        rng.normal_vector(d) * scale
    };
    PerturbationSet {
        w,
        xi_offline,
        xi_online,
        theta0_tilde,
        vartheta_tilde,
    }
}

/// Everything the perturbed loss depends on, borrowed for one round.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub actions: &'a ActionSet,
    pub offline: &'a OfflineDataset,
    /// Online history as `(action_index, reward)`.
    pub online: &'a [(usize, f64)],
    pub competence: Competence,
    pub prior: &'a PriorSpec,
    pub perturbations: &'a PerturbationSet,
}

impl<'a> LossSpec<'a> {
    pub fn new(
        actions: &'a ActionSet,
        offline: &'a OfflineDataset,
        online: &'a [(usize, f64)],
        competence: Competence,
        prior: &'a PriorSpec,
        perturbations: &'a PerturbationSet,
    ) -> Result<Self> {
        let d = actions.dim();
        offline.check_actions(actions)?;
        for &(a, _) in online {
            actions.check_index(a)?;
        }
        let n = offline.len();
        let checks = [
            (d, prior.dim()),
            (d, perturbations.theta0_tilde.len()),
            (d, perturbations.vartheta_tilde.len()),
            (n, perturbations.w.len()),
            (n, perturbations.xi_offline.len()),
            (online.len(), perturbations.xi_online.len()),
        ];
        for (expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        Ok(Self {
            actions,
            offline,
            online,
            competence,
            prior,
            perturbations,
        })
    }

    fn dim(&self) -> usize {
        self.actions.dim()
    }

    /// True when ϑ is a free variable (λ < ∞).
    pub fn has_knowledge_variable(&self) -> bool {
        self.competence.inv_lambda != 0.0
    }
}

/// Perturbed loss evaluated term by term from the raw data.
///
/// With λ = ∞ the `vartheta` argument is ignored and ϑ = θ is used.
pub fn perturbed_loss(theta: &DVector<f64>, vartheta: &DVector<f64>, spec: &LossSpec<'_>) -> f64 {
    let p = spec.perturbations;
    let beta = spec.competence.beta;
    let vt = if spec.has_knowledge_variable() {
        vartheta
    } else {
        theta
    };
    let (lse, _) = softmax_with_lse(beta, &spec.actions.scores(vt));

    let mut l1 = 0.0;
    for (&(a, _), w) in spec.offline.pairs().iter().zip(&p.w) {
        let logit = beta * spec.actions.action(a).dot(vt);
        l1 -= 2.0 * w * (logit - lse);
    }

    let mut l2 = 0.0;
    for (&(a, r), xi) in spec.offline.pairs().iter().zip(&p.xi_offline) {
        let resid = r + xi - spec.actions.action(a).dot(theta);
        l2 += resid * resid;
    }
    for (&(a, r), xi) in spec.online.iter().zip(&p.xi_online) {
        let resid = r + xi - spec.actions.action(a).dot(theta);
        l2 += resid * resid;
    }

    let dt = theta - &p.theta0_tilde;
    let mut l3 = dt.dot(&(spec.prior.precision() * &dt));
    if let Some(lam2) = spec.competence.lambda_squared() {
        l3 += lam2 * (vartheta - theta - &p.vartheta_tilde).norm_squared();
    }
    l1 + l2 + l3
}

/// Analytic gradient of [`perturbed_loss`] with respect to `(θ, ϑ)`.
///
/// With λ = ∞ the θ-gradient is that of the reduced loss and the ϑ-gradient
/// is zero.
pub fn perturbed_loss_gradient(
    theta: &DVector<f64>,
    vartheta: &DVector<f64>,
    spec: &LossSpec<'_>,
) -> (DVector<f64>, DVector<f64>) {
    let d = spec.dim();
    let p = spec.perturbations;
    let beta = spec.competence.beta;
    let vt = if spec.has_knowledge_variable() {
        vartheta
    } else {
        theta
    };

    let mut g_theta = DVector::zeros(d);
    for (&(a, r), xi) in spec.offline.pairs().iter().zip(&p.xi_offline) {
        let act = spec.actions.action(a);
        g_theta.axpy(-2.0 * (r + xi - act.dot(theta)), &act, 1.0);
    }
    for (&(a, r), xi) in spec.online.iter().zip(&p.xi_online) {
        let act = spec.actions.action(a);
        g_theta.axpy(-2.0 * (r + xi - act.dot(theta)), &act, 1.0);
    }
    g_theta += spec.prior.precision() * (theta - &p.theta0_tilde) * 2.0;

    // −2β Σ_n w_n (Ā_n − p(ϑ))
    let (_, probs) = softmax_with_lse(beta, &spec.actions.scores(vt));
    let expected_action = spec.actions.matrix() * probs;
    let mut g_action = DVector::zeros(d);
    for (&(a, _), w) in spec.offline.pairs().iter().zip(&p.w) {
        let diff = spec.actions.action(a) - &expected_action;
        g_action.axpy(-2.0 * beta * w, &diff, 1.0);
    }

    match spec.competence.lambda_squared() {
        Some(lam2) => {
            let coupling = (vartheta - theta - &p.vartheta_tilde) * (2.0 * lam2);
            g_theta -= &coupling;
            (g_theta, g_action + coupling)
        }
        None => (g_theta + g_action, DVector::zeros(d)),
    }
}

/// The loss reduced to sufficient statistics, so one evaluation costs
/// O(K·d + d²) regardless of the amount of data.
struct Objective<'a> {
    actions: &'a ActionSet,
    beta: f64,
    lambda_squared: Option<f64>,
    /// Σ w_n
    weight_total: f64,
    /// Σ w_n Ā_n
    weighted_actions: DVector<f64>,
    /// Σ a a⊤ over offline and online data
    gram: DMatrix<f64>,
    /// Σ (r + ξ) a
    target: DVector<f64>,
    /// Σ (r + ξ)²
    offset: f64,
    precision: &'a DMatrix<f64>,
    theta0_tilde: &'a DVector<f64>,
    vartheta_tilde: &'a DVector<f64>,
}

impl<'a> Objective<'a> {
    fn compile(spec: &LossSpec<'a>) -> Self {
        let k = spec.actions.num_actions();
        let d = spec.dim();
        let p = spec.perturbations;
        let mut counts = alloc::vec![0.0; k];
        let mut sums = alloc::vec![0.0; k];
        let mut weights = alloc::vec![0.0; k];
        let mut offset = 0.0;
        for ((&(a, r), xi), w) in spec.offline.pairs().iter().zip(&p.xi_offline).zip(&p.w) {
            counts[a] += 1.0;
            sums[a] += r + xi;
            weights[a] += w;
            offset += (r + xi) * (r + xi);
        }
        for (&(a, r), xi) in spec.online.iter().zip(&p.xi_online) {
            counts[a] += 1.0;
            sums[a] += r + xi;
            offset += (r + xi) * (r + xi);
        }
        let mut gram = DMatrix::zeros(d, d);
        let mut target = DVector::zeros(d);
        let mut weighted_actions = DVector::zeros(d);
        for a in 0..k {
            let act = spec.actions.action(a);
            if counts[a] > 0.0 {
                gram.ger(counts[a], &act, &act, 1.0);
                target.axpy(sums[a], &act, 1.0);
            }
            if weights[a] > 0.0 {
                weighted_actions.axpy(weights[a], &act, 1.0);
            }
        }
        Self {
            actions: spec.actions,
            beta: spec.competence.beta,
            lambda_squared: spec.competence.lambda_squared(),
            weight_total: p.w.iter().sum(),
            weighted_actions,
            gram,
            target,
            offset,
            precision: spec.prior.precision(),
            theta0_tilde: &p.theta0_tilde,
            vartheta_tilde: &p.vartheta_tilde,
        }
    }

    fn dim(&self) -> usize {
        self.actions.dim()
    }

    #[cfg(test)]
    fn num_vars(&self) -> usize {
        if self.lambda_squared.is_some() {
            2 * self.dim()
        } else {
            self.dim()
        }
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let theta = x.rows(0, d).into_owned();
        let vartheta = if self.lambda_squared.is_some() {
            x.rows(d, d).into_owned()
        } else {
            theta.clone()
        };
        (theta, vartheta)
    }

    fn pack(&self, theta: &DVector<f64>, vartheta: &DVector<f64>) -> DVector<f64> {
        if self.lambda_squared.is_some() {
            let d = self.dim();
            let mut x = DVector::zeros(2 * d);
            x.rows_mut(0, d).copy_from(theta);
            x.rows_mut(d, d).copy_from(vartheta);
            x
        } else {
            theta.clone()
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let (theta, vartheta) = self.split(x);
        let (lse, _) = softmax_with_lse(self.beta, &self.actions.scores(&vartheta));
        let l1 =
            -2.0 * self.beta * self.weighted_actions.dot(&vartheta) + 2.0 * self.weight_total * lse;
        let l2 = theta.dot(&(&self.gram * &theta)) - 2.0 * self.target.dot(&theta) + self.offset;
        let dt = &theta - self.theta0_tilde;
        let mut l3 = dt.dot(&(self.precision * &dt));
        if let Some(lam2) = self.lambda_squared {
            l3 += lam2 * (&vartheta - &theta - self.vartheta_tilde).norm_squared();
        }
        l1 + l2 + l3
    }

    /// Loss, gradient and (optionally) Hessian at `x`.
    fn evaluate(
        &self,
        x: &DVector<f64>,
        with_hessian: bool,
    ) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
        let d = self.dim();
        let (theta, vartheta) = self.split(x);
        let (lse, probs) = softmax_with_lse(self.beta, &self.actions.scores(&vartheta));
        let mean_action = self.actions.matrix() * &probs;

        let gram_theta = &self.gram * &theta;
        let dt = &theta - self.theta0_tilde;
        let prec_dt = self.precision * &dt;
        let mut value = -2.0 * self.beta * self.weighted_actions.dot(&vartheta)
            + 2.0 * self.weight_total * lse
            + theta.dot(&gram_theta)
            - 2.0 * self.target.dot(&theta)
            + self.offset
            + dt.dot(&prec_dt);

        let g_reward = (gram_theta - &self.target + prec_dt) * 2.0;
        let g_action =
            (&mean_action * self.weight_total - &self.weighted_actions) * (2.0 * self.beta);

        // 2β²W (A diag(p) A⊤ − p p⊤)
        let h_action = with_hessian.then(|| {
            let a = self.actions.matrix();
            let mut scaled = a.clone();
            for (mut col, &pk) in scaled.column_iter_mut().zip(probs.iter()) {
                col *= pk;
            }
            let mut cov = scaled * a.transpose();
            cov.ger(-1.0, &mean_action, &mean_action, 1.0);
            cov * (2.0 * self.beta * self.beta * self.weight_total)
        });
        let h_reward = with_hessian.then(|| (&self.gram + self.precision) * 2.0);

        match self.lambda_squared {
            None => {
                let grad = g_reward + g_action;
                let hess = h_reward.zip(h_action).map(|(r, a)| r + a);
                (value, grad, hess)
            }
            Some(lam2) => {
                let resid = &vartheta - &theta - self.vartheta_tilde;
                value += lam2 * resid.norm_squared();
                let coupling = resid * (2.0 * lam2);
                let mut grad = DVector::zeros(2 * d);
                grad.rows_mut(0, d).copy_from(&(g_reward - &coupling));
                grad.rows_mut(d, d).copy_from(&(g_action + coupling));
                let hess = h_reward.zip(h_action).map(|(r, a)| {
                    let eye = DMatrix::<f64>::identity(d, d) * (2.0 * lam2);
                    let mut h = DMatrix::zeros(2 * d, 2 * d);
                    h.view_mut((0, 0), (d, d)).copy_from(&(r + &eye));
                    h.view_mut((0, d), (d, d)).copy_from(&(-&eye));
                    h.view_mut((d, 0), (d, d)).copy_from(&(-&eye));
                    h.view_mut((d, d), (d, d)).copy_from(&(a + eye));
                    h
                });
                (value, grad, hess)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub theta: DVector<f64>,
    pub vartheta: DVector<f64>,
    pub diagnostics: SolverDiagnostics,
}

/// Minimizes the perturbed loss from `init = (θ, ϑ)`.
///
/// Stops when the joint gradient norm is at most `settings.tol`; otherwise
/// returns the lowest-loss iterate with `converged = false`.
pub fn minimize(
    spec: &LossSpec<'_>,
    init: (&DVector<f64>, &DVector<f64>),
    settings: &SolverSettings,
) -> Result<Minimum> {
    if settings.tol.is_nan() || settings.tol <= 0.0 {
        return Err(Error::config("solver tolerance must be positive"));
    }
    let d = spec.dim();
    if init.0.len() != d || init.1.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: init.0.len(),
        });
    }
    let obj = Objective::compile(spec);
    let mut x = obj.pack(init.0, init.1);
    let newton = settings.kind == SolverKind::Newton;

    let (mut f, mut g, mut h) = obj.evaluate(&x, newton);
    let mut best = (f, x.clone(), g.norm());
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iters {
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iterate: x.iter().copied().collect(),
            });
        }
        let gnorm = g.norm();
        if f < best.0 || (f == best.0 && gnorm < best.2) {
            best = (f, x.clone(), gnorm);
        }
        if gnorm <= settings.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir = -&g;
        if let Some(hess) = h.take() {
            if let Some(chol) = hess.cholesky() {
                let nd = -chol.solve(&g);
                if nd.dot(&g) < 0.0 {
                    dir = nd;
                }
            }
        }
        let slope = dir.dot(&g);

        let mut step = settings.initial_step;
        let mut accepted = None;
        while step > 1e-20 {
            let cand = &x + &dir * step;
            let fc = obj.value(&cand);
            if fc.is_finite() {
                if fc <= f + settings.armijo * step * slope {
                    accepted = Some(cand);
                    break;
                }
                // near the optimum the decrease drops below the rounding
                // noise of f; accept if the gradient still shrinks
                if fc <= f + 1e-12 * f.abs().max(1.0) {
                    let (_, gc, _) = obj.evaluate(&cand, false);
                    if gc.norm() < gnorm {
                        accepted = Some(cand);
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        x = next;
        (f, g, h) = obj.evaluate(&x, newton);
    }

    if converged {
        best = (f, x, g.norm());
    } else if f.is_finite() {
        let gnorm = g.norm();
        if f < best.0 {
            best = (f, x, gnorm);
        }
    }
    let (loss, x, grad_norm) = best;
    let (theta, vartheta) = obj.split(&x);
    Ok(Minimum {
        theta,
        vartheta,
        diagnostics: SolverDiagnostics {
            iterations,
            grad_norm,
            loss,
            converged,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    struct Instance {
        actions: ActionSet,
        offline: OfflineDataset,
        online: Vec<(usize, f64)>,
        comp: Competence,
        prior: PriorSpec,
        perturbations: PerturbationSet,
    }

    impl Instance {
        fn spec(&self) -> LossSpec<'_> {
            LossSpec::new(
                &self.actions,
                &self.offline,
                &self.online,
                self.comp,
                &self.prior,
                &self.perturbations,
            )
            .unwrap()
        }
    }

    fn random_instance(seed: u64, beta: f64, inv_lambda: f64, d: usize, k: usize) -> Instance {
        let mut rng = RngStream::new(seed);
        let actions = if k == d && seed.is_multiple_of(2) {
            ActionSet::basis(k).unwrap()
        } else {
            ActionSet::unit_sphere(k, d, &mut rng).unwrap()
        };
        let n = 1 + (seed % 7) as usize;
        let t = (seed % 5) as usize;
        let pairs = (0..n)
            .map(|i| ((i * 3 + seed as usize) % k, rng.standard_normal()))
            .collect();
        let offline = OfflineDataset::new(k, pairs).unwrap();
        let online = (0..t)
            .map(|i| ((i + 1) % k, rng.standard_normal()))
            .collect();
        let comp = Competence::new(beta, inv_lambda).unwrap();
        let prior = PriorSpec::standard(d);
        let perturbations =
            sample_perturbations(n, t, &prior, &comp, VarthetaNoise::default(), &mut rng);
        Instance {
            actions,
            offline,
            online,
            comp,
            prior,
            perturbations,
        }
    }

    #[test]
    fn perturbation_moments_and_shapes() {
        let prior = PriorSpec::standard(3);
        let comp = Competence::new(1.0, 0.0).unwrap();
        let mut rng = RngStream::new(1);
        let p = sample_perturbations(
            100_000,
            0,
            &prior,
            &comp,
            VarthetaNoise::default(),
            &mut rng,
        );
        let mean = p.w.iter().sum::<f64>() / p.w.len() as f64;
        let var = p.w.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / p.w.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
        assert!(p.w.iter().all(|&w| w > 0.0));
        assert!(p.xi_online.is_empty());
        assert_eq!(p.vartheta_tilde, DVector::zeros(3));
    }

    #[test]
    fn vartheta_noise_variants() {
        let prior = PriorSpec::standard(1);
        let comp = Competence::new(1.0, 0.25).unwrap();
        for (noise, var) in [
            (VarthetaNoise::InverseLambdaSquared, 0.0625),
            (VarthetaNoise::InverseLambda, 0.25),
        ] {
            let mut rng = RngStream::new(2);
            let m = 50_000;
            let s: f64 = (0..m)
                .map(|_| {
                    sample_perturbations(0, 0, &prior, &comp, noise, &mut rng).vartheta_tilde[0]
                        .powi(2)
                })
                .sum();
            assert!((s / m as f64 / var - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn hand_evaluated_loss() {
        let inst = Instance {
            actions: ActionSet::basis(2).unwrap(),
            offline: OfflineDataset::new(2, vec![(0, 1.0)]).unwrap(),
            online: vec![],
            comp: Competence::new(1.0, 1.0).unwrap(),
            prior: PriorSpec::standard(2),
            perturbations: PerturbationSet {
                w: vec![1.0],
                xi_offline: vec![0.0],
                xi_online: vec![],
                theta0_tilde: DVector::zeros(2),
                vartheta_tilde: DVector::zeros(2),
            },
        };
        let z = DVector::zeros(2);
        let loss = perturbed_loss(&z, &z, &inst.spec());
        assert!((loss - (2.0 * 2f64.ln() + 1.0)).abs() < 1e-12);
        assert!((loss - 2.38629).abs() < 1e-5);
        let obj = Objective::compile(&inst.spec());
        assert!((obj.value(&obj.pack(&z, &z)) - loss).abs() < 1e-12);
    }

    #[test]
    fn prior_only_loss() {
        let prior = PriorSpec::standard(3);
        let comp = Competence::new(2.0, 0.0).unwrap();
        let inst = Instance {
            actions: ActionSet::basis(3).unwrap(),
            offline: OfflineDataset::empty(3),
            online: vec![],
            comp,
            prior,
            perturbations: PerturbationSet {
                w: vec![],
                xi_offline: vec![],
                xi_online: vec![],
                theta0_tilde: DVector::zeros(3),
                vartheta_tilde: DVector::zeros(3),
            },
        };
        let theta = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        assert!(
            (perturbed_loss(&theta, &theta, &inst.spec()) - theta.norm_squared()).abs() < 1e-12
        );
        let m = minimize(&inst.spec(), (&theta, &theta), &SolverSettings::default()).unwrap();
        assert!(m.theta.amax() < 1e-6);
    }

    #[test]
    fn prior_only_minimizer_is_theta0_tilde() {
        let v = DVector::from_vec(vec![0.7, -0.4]);
        for kind in [SolverKind::Newton, SolverKind::GradientDescent] {
            let inst = Instance {
                actions: ActionSet::basis(2).unwrap(),
                offline: OfflineDataset::empty(2),
                online: vec![],
                comp: Competence::new(0.0, 0.0).unwrap(),
                prior: PriorSpec::standard(2),
                perturbations: PerturbationSet {
                    w: vec![],
                    xi_offline: vec![],
                    xi_online: vec![],
                    theta0_tilde: v.clone(),
                    vartheta_tilde: DVector::zeros(2),
                },
            };
            let settings = SolverSettings {
                kind,
                ..SolverSettings::default()
            };
            let z = DVector::zeros(2);
            let m = minimize(&inst.spec(), (&z, &z), &settings).unwrap();
            assert!(m.diagnostics.converged);
            assert!((m.theta - &v).amax() < 1e-6);
        }
    }

    #[test]
    fn zero_beta_action_term_is_constant() {
        let inst = random_instance(4, 0.0, 0.5, 3, 3);
        let spec = inst.spec();
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let y = DVector::from_vec(vec![-1.0, 0.5, 2.0]);
        let (_, gv) = perturbed_loss_gradient(&x, &y, &spec);
        let lam2 = inst.comp.lambda_squared().unwrap();
        let expected = (&y - &x - &inst.perturbations.vartheta_tilde) * (2.0 * lam2);
        assert!((gv - expected).amax() < 1e-12);
    }

    fn fd_gradient(
        spec: &LossSpec<'_>,
        theta: &DVector<f64>,
        vartheta: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let h = 1e-5;
        let d = theta.len();
        let mut gt = DVector::zeros(d);
        let mut gv = DVector::zeros(d);
        for i in 0..d {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            gt[i] = (perturbed_loss(&tp, vartheta, spec) - perturbed_loss(&tm, vartheta, spec))
                / (2.0 * h);
            if spec.has_knowledge_variable() {
                let mut vp = vartheta.clone();
                let mut vm = vartheta.clone();
                vp[i] += h;
                vm[i] -= h;
                gv[i] = (perturbed_loss(theta, &vp, spec) - perturbed_loss(theta, &vm, spec))
                    / (2.0 * h);
            }
        }
        (gt, gv)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..60u64 {
            let beta = [0.0, 1.0, 10.0][(seed % 3) as usize];
            let inv_lambda = [0.0, 0.1, 1.0][((seed / 3) % 3) as usize];
            let inst = random_instance(
                seed,
                beta,
                inv_lambda,
                3,
                if seed.is_multiple_of(2) { 3 } else { 6 },
            );
            let spec = inst.spec();
            let mut rng = RngStream::new(seed + 1000);
            let theta = rng.normal_vector(3);
            let vartheta = rng.normal_vector(3);
            let (gt, gv) = perturbed_loss_gradient(&theta, &vartheta, &spec);
            let (ft, fv) = fd_gradient(&spec, &theta, &vartheta);
            let err = ((&gt - &ft).norm_squared() + (&gv - &fv).norm_squared()).sqrt();
            let scale = (ft.norm_squared() + fv.norm_squared()).sqrt().max(1.0);
            assert!(err / scale < 1e-5, "seed {seed}: {err} vs {scale}");

            // compiled objective agrees with the term-by-term route
            let obj = Objective::compile(&spec);
            let x = obj.pack(&theta, &vartheta);
            let (f, g, _) = obj.evaluate(&x, false);
            assert!((f - perturbed_loss(&theta, &vartheta, &spec)).abs() < 1e-9 * f.abs().max(1.0));
            assert!((g - obj.pack(&gt, &gv)).amax() < 1e-9 * scale);
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        for seed in 0..18u64 {
            let beta = [0.0, 1.0, 10.0][(seed % 3) as usize];
            let inv_lambda = [0.0, 0.1, 1.0][((seed / 3) % 3) as usize];
            let inst = random_instance(seed, beta, inv_lambda, 3, 5);
            let spec = inst.spec();
            let obj = Objective::compile(&spec);
            let mut rng = RngStream::new(seed);
            let x = rng.normal_vector(obj.num_vars()) * 0.3;
            let (_, _, h) = obj.evaluate(&x, true);
            let h = h.unwrap();
            let eps = 1e-6;
            for i in 0..obj.num_vars() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += eps;
                xm[i] -= eps;
                let col = (obj.evaluate(&xp, false).1 - obj.evaluate(&xm, false).1) / (2.0 * eps);
                let scale = h.column(i).amax().max(1.0);
                assert!((h.column(i) - col).amax() / scale < 1e-5);
            }
        }
    }

    #[test]
    fn quadratic_case_matches_ridge_solution() {
        for seed in 0..10u64 {
            let inst = random_instance(seed, 0.0, 0.0, 4, 7);
            let spec = inst.spec();
            let p = &inst.perturbations;
            // oracle: (Σ₀⁻¹ + Σ a a⊤)⁻¹ (Σ₀⁻¹ θ̃₀ + Σ (r + ξ) a)
            let mut a_mat = inst.prior.precision().clone();
            let mut rhs = inst.prior.precision() * &p.theta0_tilde;
            let all = inst
                .offline
                .pairs()
                .iter()
                .zip(&p.xi_offline)
                .chain(inst.online.iter().zip(&p.xi_online));
            for (&(a, r), xi) in all {
                let v = inst.actions.action(a).into_owned();
                a_mat += &v * v.transpose();
                rhs += v * (r + xi);
            }
            let oracle = a_mat.lu().solve(&rhs).unwrap();
            for kind in [SolverKind::Newton, SolverKind::GradientDescent] {
                let settings = SolverSettings {
                    kind,
                    ..SolverSettings::default()
                };
                let z = DVector::zeros(4);
                let m = minimize(&spec, (&z, &z), &settings).unwrap();
                assert!(m.diagnostics.converged, "{kind:?} {:?}", m.diagnostics);
                assert!((m.theta - &oracle).amax() < 1e-6);
            }
        }
    }

    /// Half-scaled MAP loss for λ = ∞ written out independently.
    fn half_loss_2d(th: [f64; 2], inst: &Instance) -> f64 {
        let beta = inst.comp.beta;
        let p = &inst.perturbations;
        let a = |i: usize| [inst.actions.action(i)[0], inst.actions.action(i)[1]];
        let dot = |u: [f64; 2], v: [f64; 2]| u[0] * v[0] + u[1] * v[1];
        let k = inst.actions.num_actions();
        let m = (0..k)
            .map(|b| beta * dot(a(b), th))
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m
            + (0..k)
                .map(|b| (beta * dot(a(b), th) - m).exp())
                .sum::<f64>()
                .ln();
        let mut total = 0.0;
        for (n, &(act, r)) in inst.offline.pairs().iter().enumerate() {
            total -= p.w[n] * (beta * dot(a(act), th) - lse);
            total += 0.5 * (r + p.xi_offline[n] - dot(a(act), th)).powi(2);
        }
        for (tau, &(act, r)) in inst.online.iter().enumerate() {
            total += 0.5 * (r + p.xi_online[tau] - dot(a(act), th)).powi(2);
        }
        let d0 = th[0] - p.theta0_tilde[0];
        let d1 = th[1] - p.theta0_tilde[1];
        total + 0.5 * (d0 * d0 + d1 * d1)
    }

    fn grid_argmin(inst: &Instance) -> [f64; 2] {
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        let coarse = 8.0 / 400.0;
        for i in 0..=400 {
            for j in 0..=400 {
                let th = [-4.0 + i as f64 * coarse, -4.0 + j as f64 * coarse];
                let f = half_loss_2d(th, inst);
                if f < best.0 {
                    best = (f, th);
                }
            }
        }
        let centre = best.1;
        let fine = 2.0 * coarse / 400.0;
        for i in 0..=400 {
            for j in 0..=400 {
                let th = [
                    centre[0] - coarse + i as f64 * fine,
                    centre[1] - coarse + j as f64 * fine,
                ];
                let f = half_loss_2d(th, inst);
                if f < best.0 {
                    best = (f, th);
                }
            }
        }
        best.1
    }

    #[test]
    fn full_loss_matches_grid_search() {
        for (seed, beta) in [(1u64, 1.0), (2, 3.0), (3, 10.0)] {
            let inst = random_instance(
                seed,
                beta,
                0.0,
                2,
                if seed.is_multiple_of(2) { 2 } else { 4 },
            );
            let z = DVector::zeros(2);
            let m = minimize(&inst.spec(), (&z, &z), &SolverSettings::default()).unwrap();
            assert!(m.diagnostics.converged);
            let oracle = grid_argmin(&inst);
            assert!((m.theta[0] - oracle[0]).abs() < 1e-2 && (m.theta[1] - oracle[1]).abs() < 1e-2);
        }
    }

    #[test]
    fn minimizer_reaches_tolerance_with_knowledge_variable() {
        for seed in 0..12u64 {
            let inst = random_instance(
                seed,
                [1.0, 10.0][(seed % 2) as usize],
                [0.1, 1.0][((seed / 2) % 2) as usize],
                3,
                6,
            );
            let spec = inst.spec();
            let z = DVector::zeros(3);
            let m = minimize(&spec, (&z, &z), &SolverSettings::default()).unwrap();
            assert!(m.diagnostics.converged);
            let (gt, gv) = perturbed_loss_gradient(&m.theta, &m.vartheta, &spec);
            let gnorm = (gt.norm_squared() + gv.norm_squared()).sqrt();
            assert!(gnorm <= 1e-6 * 1.0001, "gradient norm {gnorm}");
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let inst = random_instance(5, 10.0, 0.1, 3, 6);
        let settings = SolverSettings {
            kind: SolverKind::GradientDescent,
            max_iters: 2,
            ..SolverSettings::default()
        };
        let z = DVector::zeros(3);
        let m = minimize(&inst.spec(), (&z, &z), &settings).unwrap();
        assert!(!m.diagnostics.converged);
        assert!(m.diagnostics.loss.is_finite());
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let mut inst = random_instance(6, 1.0, 0.0, 2, 2);
        inst.perturbations.theta0_tilde[0] = f64::NAN;
        let z = DVector::zeros(2);
        assert!(matches!(
            minimize(&inst.spec(), (&z, &z), &SolverSettings::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn bootstrap_matches_conjugate_posterior() {
        // β = 0, λ = ∞: the perturbed minimizer is an exact posterior draw
        let actions = ActionSet::basis(2).unwrap();
        let offline = OfflineDataset::new(2, vec![(0, 1.2), (0, 0.4), (1, -0.5)]).unwrap();
        let online = vec![(1, 0.3), (0, 0.9)];
        let prior = PriorSpec::standard(2);
        let comp = Competence::new(0.0, 0.0).unwrap();
        let obs: Vec<(usize, f64)> = offline.pairs().iter().chain(&online).copied().collect();
        let exact = crate::posterior::GaussianPosterior::from_prior(&prior)
            .update_indexed(&actions, &obs)
            .unwrap();
        let mut rng = RngStream::new(9);
        let m = 10_000;
        let mut draws = Vec::with_capacity(m);
        let z = DVector::zeros(2);
        for _ in 0..m {
            let p = sample_perturbations(
                offline.len(),
                online.len(),
                &prior,
                &comp,
                VarthetaNoise::default(),
                &mut rng,
            );
            let spec = LossSpec::new(&actions, &offline, &online, comp, &prior, &p).unwrap();
            draws.push(
                minimize(&spec, (&z, &z), &SolverSettings::default())
                    .unwrap()
                    .theta,
            );
        }
        let mean = draws.iter().fold(DVector::zeros(2), |a, x| a + x) / m as f64;
        for i in 0..2 {
            let var = draws.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / (m - 1) as f64;
            assert!((mean[i] - exact.mean()[i]).abs() < 0.03);
            assert!((var / exact.covariance()[(i, i)] - 1.0).abs() < 0.15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn loss_is_convex(seed in any::<u64>(), bi in 0usize..3, li in 0usize..3) {
            let beta = [0.0, 1.0, 10.0][bi];
            let inv_lambda = [0.0, 0.1, 1.0][li];
            let inst = random_instance(seed, beta, inv_lambda, 3, 5);
            let spec = inst.spec();
            let mut rng = RngStream::new(seed ^ 0xabc);
            let (t1, v1) = (rng.normal_vector(3) * 2.0, rng.normal_vector(3) * 2.0);
            let (t2, v2) = (rng.normal_vector(3) * 2.0, rng.normal_vector(3) * 2.0);
            let tm = (&t1 + &t2) * 0.5;
            let vm = (&v1 + &v2) * 0.5;
            let mid = perturbed_loss(&tm, &vm, &spec);
            let avg = 0.5 * (perturbed_loss(&t1, &v1, &spec) + perturbed_loss(&t2, &v2, &spec));
            prop_assert!(mid <= avg + 1e-9);
        }
    }
}
