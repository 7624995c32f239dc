//! Thompson-sampling agents behind one interface.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DVector;

use crate::bandit::{ActionSet, PriorSpec};
use crate::bootstrap::{minimize, sample_perturbations, LossSpec, SolverSettings};
use crate::error::Result;
use crate::expert::{Competence, OfflineDataset};
use crate::posterior::{offline_grid_posterior, GaussianPosterior, GridPosterior, GridSpec};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AgentKind {
    /// Plain TS from the prior; ignores the demonstrations.
    Uninformed,
    /// Conjugate TS on the offline rewards only, treating the expert as naive.
    PartiallyInformed,
    /// Bootstrapped TS on the full informed posterior.
    Informed,
    /// Exact informed posterior on a 2-D grid.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentSettings {
    pub solver: SolverSettings,
    pub grid: GridSpec,
}

/// Running totals from the informed agent's optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AgentDiagnostics {
    pub solves: usize,
    pub solver_iterations: usize,
    /// Rounds where the solver hit its iteration cap.
    pub nonconverged: usize,
}

#[derive(Debug, Clone)]
enum State {
    Conjugate(GaussianPosterior),
    Informed {
        offline: OfflineDataset,
        competence: Competence,
        solver: SolverSettings,
        warm_theta: DVector<f64>,
        warm_vartheta: DVector<f64>,
    },
    Grid(GridPosterior),
}

#[derive(Debug, Clone)]
pub struct Agent {
    kind: AgentKind,
    actions: ActionSet,
    prior: PriorSpec,
    online: Vec<(usize, f64)>,
    state: State,
    diagnostics: AgentDiagnostics,
}

impl Agent {
    pub fn new(
        kind: AgentKind,
        offline: &OfflineDataset,
        prior: &PriorSpec,
        competence: Competence,
        actions: &ActionSet,
        settings: &AgentSettings,
    ) -> Result<Self> {
        offline.check_actions(actions)?;
        if prior.dim() != actions.dim() {
            return Err(crate::Error::DimensionMismatch {
                expected: actions.dim(),
                found: prior.dim(),
            });
        }
        let state = match kind {
            AgentKind::Uninformed => State::Conjugate(GaussianPosterior::from_prior(prior)),
            AgentKind::PartiallyInformed => State::Conjugate(
                GaussianPosterior::from_prior(prior).update_indexed(actions, offline.pairs())?,
            ),
            AgentKind::Informed => State::Informed {
                offline: offline.clone(),
                competence,
                solver: settings.solver,
                warm_theta: DVector::zeros(actions.dim()),
                warm_vartheta: DVector::zeros(actions.dim()),
            },
            AgentKind::Grid => State::Grid(offline_grid_posterior(
                prior,
                offline,
                &competence,
                actions,
                &settings.grid,
            )?),
        };
        Ok(Self {
            kind,
            actions: actions.clone(),
            prior: prior.clone(),
            online: Vec::new(),
            state,
            diagnostics: AgentDiagnostics::default(),
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn history(&self) -> &[(usize, f64)] {
        &self.online
    }

    pub fn diagnostics(&self) -> AgentDiagnostics {
        self.diagnostics
    }

    /// Conjugate posterior of the Gaussian variants.
    pub fn gaussian_posterior(&self) -> Option<&GaussianPosterior> {
        match &self.state {
            State::Conjugate(p) => Some(p),
            _ => None,
        }
    }

    pub fn grid_posterior(&self) -> Option<&GridPosterior> {
        match &self.state {
            State::Grid(g) => Some(g),
            _ => None,
        }
    }

    /// Draws a parameter from the agent's (approximate) posterior.
    pub fn sample_parameter(&mut self, rng: &mut RngStream) -> Result<DVector<f64>> {
        match &mut self.state {
            State::Conjugate(post) => post.sample(rng),
            State::Grid(grid) => grid.sample(rng),
            State::Informed {
                offline,
                competence,
                solver,
                warm_theta,
                warm_vartheta,
            } => {
                let perturbations = sample_perturbations(
                    offline.len(),
                    self.online.len(),
                    &self.prior,
                    competence,
                    solver.vartheta_noise,
                    rng,
                );
                let spec = LossSpec::new(
                    &self.actions,
                    offline,
                    &self.online,
                    *competence,
                    &self.prior,
                    &perturbations,
                )?;
                let min = minimize(&spec, (warm_theta, warm_vartheta), solver)?;
                self.diagnostics.solves += 1;
                self.diagnostics.solver_iterations += min.diagnostics.iterations;
                if !min.diagnostics.converged {
                    self.diagnostics.nonconverged += 1;
                }
                *warm_theta = min.theta.clone();
                *warm_vartheta = min.vartheta;
                Ok(min.theta)
            }
        }
    }

    /// Greedy action under a fresh posterior draw; ties go to the lowest index.
    pub fn act(&mut self, rng: &mut RngStream) -> Result<usize> {
        let theta = self.sample_parameter(rng)?;
        Ok(self.actions.greedy(&theta))
    }

    pub fn observe(&mut self, action: usize, reward: f64) -> Result<()> {
        self.actions.check_index(action)?;
        match &mut self.state {
            State::Conjugate(post) => post.observe(self.actions.action(action), reward),
            State::Grid(grid) => grid.observe(self.actions.action(action), reward),
            State::Informed { .. } => {}
        }
        self.online.push((action, reward));
        Ok(())
    }
}
