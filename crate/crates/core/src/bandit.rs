//! Linear Gaussian bandit environments.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActionKind {
    /// Standard basis vectors, K = d (independent arms).
    Basis,
    /// K unit-norm vectors in R^d.
    UnitSphere,
}

/// Finite action set stored as a d×K matrix whose columns are the actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    kind: ActionKind,
    matrix: DMatrix<f64>,
}

impl ActionSet {
    pub fn basis(num_actions: usize) -> Result<Self> {
        if num_actions < 2 {
            return Err(Error::config("action set needs K >= 2"));
        }
        Ok(Self {
            kind: ActionKind::Basis,
            matrix: DMatrix::identity(num_actions, num_actions),
        })
    }

    /// K independent standard normal d-vectors, each normalized to unit length.
    pub fn unit_sphere(num_actions: usize, dim: usize, rng: &mut RngStream) -> Result<Self> {
        if num_actions < 2 {
            return Err(Error::config("action set needs K >= 2"));
        }
        if dim == 0 {
            return Err(Error::config("action dimension must be positive"));
        }
        let mut matrix = DMatrix::zeros(dim, num_actions);
        for mut col in matrix.column_iter_mut() {
            // a zero draw has probability zero; redraw rather than divide by it
            loop {
                let z = rng.normal_vector(dim);
                let norm = z.norm();
                if norm > 1e-12 {
                    col.copy_from(&(z / norm));
                    break;
                }
            }
        }
        Ok(Self {
            kind: ActionKind::UnitSphere,
            matrix,
        })
    }

    /// Validated action set from explicit vectors.
    pub fn from_vectors(kind: ActionKind, vectors: &[DVector<f64>]) -> Result<Self> {
        let k = vectors.len();
        if k < 2 {
            return Err(Error::config("action set needs K >= 2"));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::config("action dimension must be positive"));
        }
        for v in vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        match kind {
            ActionKind::Basis => {
                if k != dim {
                    return Err(Error::config("basis action set requires K = d"));
                }
                for (i, v) in vectors.iter().enumerate() {
                    if v.iter()
                        .enumerate()
                        .any(|(j, &x)| x != if i == j { 1.0 } else { 0.0 })
                    {
                        return Err(Error::config("basis action i must equal e_i"));
                    }
                }
            }
            ActionKind::UnitSphere => {
                if vectors.iter().any(|v| (v.norm() - 1.0).abs() > 1e-12) {
                    return Err(Error::config("unit-sphere actions must have norm 1"));
                }
            }
        }
        Ok(Self {
            kind,
            matrix: DMatrix::from_columns(vectors),
        })
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn num_actions(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn action(&self, index: usize) -> DVectorView<'_, f64> {
        self.matrix.column(index)
    }

    /// The d×K matrix of actions.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Inner products ⟨a_i, v⟩ for every action.
    pub fn scores(&self, v: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(v)
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.num_actions() {
            Ok(())
        } else {
            Err(Error::ActionOutOfRange {
                index,
                num_actions: self.num_actions(),
            })
        }
    }

    /// Index of the best action for `v`, ties to the lowest index.
    pub fn greedy(&self, v: &DVector<f64>) -> usize {
        argmax(self.scores(v).as_slice())
    }
}

/// Index of the maximum, ties broken by lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gaussian prior N(mean, covariance) with its Cholesky factor and precision
/// computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl PriorSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: covariance.nrows(),
            });
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 {
            return Err(Error::config("prior covariance must be symmetric"));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("prior covariance"))?;
        let chol_lower = chol.l();
        let precision = chol.inverse();
        Ok(Self {
            mean,
            covariance,
            chol_lower,
            precision,
        })
    }

    /// N(0, I_d).
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim),
            chol_lower: DMatrix::identity(dim, dim),
            precision: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        let z = rng.normal_vector(self.dim());
        &self.mean + &self.chol_lower * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionConfig {
    pub kind: ActionKind,
    pub num_actions: usize,
    pub dim: usize,
}

/// Ground truth for one episode. Reward noise is standard Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    theta: DVector<f64>,
    actions: ActionSet,
}

impl Environment {
    pub const NOISE_STD: f64 = 1.0;

    pub fn new(theta: DVector<f64>, actions: ActionSet) -> Result<Self> {
        if theta.len() != actions.dim() {
            return Err(Error::DimensionMismatch {
                expected: actions.dim(),
                found: theta.len(),
            });
        }
        Ok(Self { theta, actions })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn mean_reward(&self, index: usize) -> Result<f64> {
        self.actions.check_index(index)?;
        Ok(self.actions.action(index).dot(&self.theta))
    }
}

/// Draws θ from the prior, then the action vectors.
pub fn sample_environment(
    prior: &PriorSpec,
    config: ActionConfig,
    rng: &mut RngStream,
) -> Result<Environment> {
    if config.num_actions < 2 {
        return Err(Error::config("K must be at least 2"));
    }
    if config.kind == ActionKind::Basis && config.num_actions != config.dim {
        return Err(Error::config("basis actions require K = d"));
    }
    if prior.dim() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            found: prior.dim(),
        });
    }
    let theta = prior.sample(rng);
    let actions = match config.kind {
        ActionKind::Basis => ActionSet::basis(config.num_actions)?,
        ActionKind::UnitSphere => ActionSet::unit_sphere(config.num_actions, config.dim, rng)?,
    };
    Environment::new(theta, actions)
}

/// One noisy reward ⟨a, θ⟩ + η with η ~ N(0, 1).
pub fn pull(env: &Environment, action_index: usize, rng: &mut RngStream) -> Result<f64> {
    let mean = env.mean_reward(action_index)?;
    Ok(mean + Environment::NOISE_STD * rng.standard_normal())
}

pub fn optimal_action(env: &Environment) -> usize {
    env.actions.greedy(&env.theta)
}

/// Expected-reward regret ⟨A*, θ⟩ − ⟨a, θ⟩.
pub fn instant_regret(env: &Environment, action_index: usize) -> Result<f64> {
    let scores = env.actions.scores(&env.theta);
    if action_index >= scores.len() {
        return Err(Error::ActionOutOfRange {
            index: action_index,
            num_actions: scores.len(),
        });
    }
    let best = scores[argmax(scores.as_slice())];
    Ok((best - scores[action_index]).max(0.0))
}

/// Mean reward vector for all actions; convenience for tests and reports.
pub fn mean_rewards(env: &Environment) -> Vec<f64> {
    env.actions.scores(&env.theta).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn env(theta: &[f64], actions: ActionSet) -> Environment {
        Environment::new(DVector::from_column_slice(theta), actions).unwrap()
    }

    #[test]
    fn basis_environment_shape() {
        let mut rng = RngStream::new(1);
        let cfg = ActionConfig {
            kind: ActionKind::Basis,
            num_actions: 5,
            dim: 5,
        };
        let e = sample_environment(&PriorSpec::standard(5), cfg, &mut rng).unwrap();
        assert_eq!(e.theta().len(), 5);
        for i in 0..5 {
            let a = e.actions().action(i);
            for j in 0..5 {
                assert_eq!(a[j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn unit_sphere_environment_shape() {
        let mut rng = RngStream::new(2);
        let cfg = ActionConfig {
            kind: ActionKind::UnitSphere,
            num_actions: 20,
            dim: 5,
        };
        let e = sample_environment(&PriorSpec::standard(5), cfg, &mut rng).unwrap();
        assert_eq!(e.actions().num_actions(), 20);
        for i in 0..20 {
            assert!((e.actions().action(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn configuration_errors() {
        let mut rng = RngStream::new(3);
        let bad_basis = ActionConfig {
            kind: ActionKind::Basis,
            num_actions: 4,
            dim: 5,
        };
        assert!(matches!(
            sample_environment(&PriorSpec::standard(5), bad_basis, &mut rng),
            Err(Error::Config(_))
        ));
        let one_arm = ActionConfig {
            kind: ActionKind::UnitSphere,
            num_actions: 1,
            dim: 5,
        };
        assert!(sample_environment(&PriorSpec::standard(5), one_arm, &mut rng).is_err());
        let zero_cov = PriorSpec::new(DVector::zeros(2), DMatrix::zeros(2, 2));
        assert_eq!(
            zero_cov,
            Err(Error::NotPositiveDefinite("prior covariance"))
        );
    }

    #[test]
    fn identical_seeds_identical_environments() {
        let cfg = ActionConfig {
            kind: ActionKind::UnitSphere,
            num_actions: 7,
            dim: 3,
        };
        let a = sample_environment(&PriorSpec::standard(3), cfg, &mut RngStream::new(9)).unwrap();
        let b = sample_environment(&PriorSpec::standard(3), cfg, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    fn empirical_mean(e: &Environment, index: usize, m: usize, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed);
        (0..m)
            .map(|_| pull(e, index, &mut rng).unwrap())
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn pull_is_unbiased() {
        let m = 100_000;
        let tol = 4.0 / (m as f64).sqrt();
        let zero = env(&[0.0, 0.0], ActionSet::basis(2).unwrap());
        assert!(empirical_mean(&zero, 0, m, 4).abs() < tol);
        let e1 = env(&[1.0, 0.0], ActionSet::basis(2).unwrap());
        assert!((empirical_mean(&e1, 0, m, 5) - 1.0).abs() < tol);
        let acts = ActionSet::from_vectors(
            ActionKind::UnitSphere,
            &[
                DVector::from_vec(vec![0.6, 0.8]),
                DVector::from_vec(vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let lin = env(&[0.3, -0.2], acts);
        assert!((lin.mean_reward(0).unwrap() - 0.02).abs() < 1e-15);
        assert!((empirical_mean(&lin, 0, m, 6) - 0.02).abs() < tol);
    }

    #[test]
    fn pull_out_of_range() {
        let e = env(&[0.0, 0.0], ActionSet::basis(2).unwrap());
        assert_eq!(
            pull(&e, 2, &mut RngStream::new(0)),
            Err(Error::ActionOutOfRange {
                index: 2,
                num_actions: 2
            })
        );
    }

    #[test]
    fn optimal_action_and_regret() {
        let e = env(&[3.0, 1.0, 2.0], ActionSet::basis(3).unwrap());
        assert_eq!(optimal_action(&e), 0);
        assert_eq!(instant_regret(&e, 0).unwrap(), 0.0);
        assert_eq!(instant_regret(&e, 1).unwrap(), 2.0);
        assert_eq!(instant_regret(&e, 2).unwrap(), 1.0);

        let tie = env(&[0.0, 0.0, 0.0], ActionSet::basis(3).unwrap());
        assert_eq!(optimal_action(&tie), 0);

        let acts = ActionSet::from_vectors(
            ActionKind::UnitSphere,
            &[
                DVector::from_vec(vec![0.6, 0.8]),
                DVector::from_vec(vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        assert_eq!(optimal_action(&env(&[1.0, 0.0], acts)), 1);
    }

    proptest! {
        #[test]
        fn regret_nonnegative_and_zero_only_at_max(seed in any::<u64>()) {
            let cfg = ActionConfig { kind: ActionKind::UnitSphere, num_actions: 8, dim: 4 };
            let e = sample_environment(&PriorSpec::standard(4), cfg, &mut RngStream::new(seed)).unwrap();
            let means = mean_rewards(&e);
            let best = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (i, &m) in means.iter().enumerate() {
                let r = instant_regret(&e, i).unwrap();
                prop_assert!(r >= 0.0);
                prop_assert_eq!(r == 0.0, m == best);
            }
        }
    }
}
