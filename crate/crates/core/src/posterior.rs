//! Gaussian conjugate posteriors and the brute-force grid posterior for d = 2.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::bandit::{ActionSet, PriorSpec};
use crate::error::{Error, Result};
use crate::expert::{Competence, OfflineDataset};
use crate::rng::RngStream;

const MIN_CHOL_PIVOT: f64 = 1e-10;

/// N(mean, covariance) over θ.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: covariance.nrows(),
            });
        }
        let post = Self { mean, covariance };
        post.cholesky()?;
        Ok(post)
    }

    pub fn from_prior(prior: &PriorSpec) -> Self {
        Self {
            mean: prior.mean().clone(),
            covariance: prior.covariance().clone(),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let l = self
            .covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("posterior covariance"))?
            .unpack();
        if l.diagonal().min() <= MIN_CHOL_PIVOT {
            return Err(Error::NotPositiveDefinite("posterior covariance"));
        }
        Ok(l)
    }

    /// Batch conjugate update with unit-noise observations `(a, r)`.
    pub fn update(&self, observations: &[(DVector<f64>, f64)]) -> Result<Self> {
        self.update_iter(observations.iter().map(|(a, r)| (a.as_view(), *r)))
    }

    /// Batch update from action indices into `actions`.
    pub fn update_indexed(
        &self,
        actions: &ActionSet,
        observations: &[(usize, f64)],
    ) -> Result<Self> {
        for &(a, _) in observations {
            actions.check_index(a)?;
        }
        self.update_iter(observations.iter().map(|&(a, r)| (actions.action(a), r)))
    }

    fn update_iter<'a>(
        &self,
        observations: impl Iterator<Item = (DVectorView<'a, f64>, f64)>,
    ) -> Result<Self> {
        let d = self.dim();
        let mut gram = DMatrix::zeros(d, d);
        let mut target = DVector::zeros(d);
        let mut any = false;
        for (a, r) in observations {
            if a.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: a.len(),
                });
            }
            gram.ger(1.0, &a, &a, 1.0);
            target.axpy(r, &a, 1.0);
            any = true;
        }
        if !any {
            return Ok(self.clone());
        }
        let l = self.cholesky()?;
        let precision = nalgebra::Cholesky::pack_dirty(l).inverse();
        let new_precision = &precision + gram;
        let new_chol = new_precision
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("updated precision"))?;
        let info = precision * &self.mean + target;
        let mean = new_chol.solve(&info);
        let covariance = new_chol.inverse();
        Ok(Self {
            mean,
            covariance: symmetrize(covariance),
        })
    }

    /// Rank-one update for a single observation.
    pub fn observe(&mut self, action: DVectorView<'_, f64>, reward: f64) {
        let ca = &self.covariance * action;
        let denom = 1.0 + action.dot(&ca);
        let resid = reward - action.dot(&self.mean);
        self.mean.axpy(resid / denom, &ca, 1.0);
        self.covariance.ger(-1.0 / denom, &ca, &ca, 1.0);
    }

    /// mean + L·z with L the lower Cholesky factor.
    pub fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        let l = self.cholesky()?;
        let z = rng.normal_vector(self.dim());
        Ok(&self.mean + l * z)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn conjugate_update(
    post: &GaussianPosterior,
    observations: &[(DVector<f64>, f64)],
) -> Result<GaussianPosterior> {
    post.update(observations)
}

pub fn sample_gaussian(post: &GaussianPosterior, rng: &mut RngStream) -> Result<DVector<f64>> {
    post.sample(rng)
}

/// Discretization of θ ∈ R² used by the grid posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Grid points per dimension, endpoints included.
    pub resolution: usize,
    /// ϑ-draws shared by every grid point when marginalizing the action
    /// likelihood over imperfect expert knowledge.
    pub marginal_draws: usize,
    pub marginal_seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: [-4.0, -4.0],
            hi: [4.0, 4.0],
            resolution: 201,
            marginal_draws: 64,
            marginal_seed: 0x5eed,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(Error::config("grid resolution must be at least 3"));
        }
        if !(0..2).all(|i| self.lo[i] < self.hi[i]) {
            return Err(Error::config("grid bounds must satisfy lo < hi"));
        }
        if self.marginal_draws == 0 {
            return Err(Error::config("marginal_draws must be positive"));
        }
        Ok(())
    }
}

/// Unnormalized log-posterior evaluated on a 2-D grid, row-major with the
/// first coordinate varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    spec: GridSpec,
    points: Vec<[f64; 2]>,
    log_weights: Vec<f64>,
}

impl GridPosterior {
    fn empty(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let res = spec.resolution;
        let step = spec.cell_width();
        let mut points = Vec::with_capacity(res * res);
        for i in 0..res {
            for j in 0..res {
                points.push([
                    spec.lo[0] + i as f64 * step[0],
                    spec.lo[1] + j as f64 * step[1],
                ]);
            }
        }
        Ok(Self {
            spec,
            log_weights: alloc::vec![0.0; points.len()],
            points,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Adds the unit-noise reward log-likelihood of one observation.
    pub fn observe(&mut self, action: DVectorView<'_, f64>, reward: f64) {
        let (a0, a1) = (action[0], action[1]);
        for (lw, p) in self.log_weights.iter_mut().zip(&self.points) {
            let resid = reward - (a0 * p[0] + a1 * p[1]);
            *lw -= 0.5 * resid * resid;
        }
    }

    /// Probabilities after max-subtraction and normalization.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegeneratePosterior);
        }
        let mut w: Vec<f64> = self.log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        Ok(w)
    }

    pub fn mean(&self) -> Result<[f64; 2]> {
        let w = self.normalized_weights()?;
        let mut m = [0.0; 2];
        for (p, wi) in self.points.iter().zip(&w) {
            m[0] += wi * p[0];
            m[1] += wi * p[1];
        }
        Ok(m)
    }

    pub fn covariance(&self) -> Result<[[f64; 2]; 2]> {
        let w = self.normalized_weights()?;
        let m = self.mean()?;
        let mut c = [[0.0; 2]; 2];
        for (p, wi) in self.points.iter().zip(&w) {
            let d = [p[0] - m[0], p[1] - m[1]];
            for r in 0..2 {
                for s in 0..2 {
                    c[r][s] += wi * d[r] * d[s];
                }
            }
        }
        Ok(c)
    }

    /// Draws a grid point from the normalized weights.
    pub fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegeneratePosterior);
        }
        let w: Vec<f64> = self.log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let p = self.points[rng.categorical(&w)];
        Ok(DVector::from_column_slice(&p))
    }
}

impl GridSpec {
    pub fn cell_width(&self) -> [f64; 2] {
        let n = (self.resolution - 1) as f64;
        [(self.hi[0] - self.lo[0]) / n, (self.hi[1] - self.lo[1]) / n]
    }
}

/// Grid posterior over offline actions, offline rewards and online rewards.
///
/// The action likelihood at θ_g is the softmax policy evaluated at ϑ = θ_g when
/// 1/λ = 0, otherwise its average over `marginal_draws` shared draws of
/// ϑ ~ N(θ_g, (1/λ)² I).
pub fn grid_posterior(
    prior: &PriorSpec,
    offline: &OfflineDataset,
    online: &[(DVector<f64>, f64)],
    comp: &Competence,
    actions: &ActionSet,
    grid: &GridSpec,
) -> Result<GridPosterior> {
    let mut gp = offline_grid_posterior(prior, offline, comp, actions, grid)?;
    for (a, r) in online {
        if a.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: a.len(),
            });
        }
        gp.observe(a.as_view(), *r);
    }
    Ok(gp)
}

/// Prior, offline action and offline reward terms only; online rewards are
/// folded in with [`GridPosterior::observe`].
pub fn offline_grid_posterior(
    prior: &PriorSpec,
    offline: &OfflineDataset,
    comp: &Competence,
    actions: &ActionSet,
    grid: &GridSpec,
) -> Result<GridPosterior> {
    if actions.dim() != 2 {
        return Err(Error::UnsupportedDimension(actions.dim()));
    }
    if prior.dim() != 2 {
        return Err(Error::UnsupportedDimension(prior.dim()));
    }
    offline.check_actions(actions)?;
    let mut gp = GridPosterior::empty(*grid)?;

    let k = actions.num_actions();
    let counts = offline.action_counts();
    let precision = prior.precision();
    let mu = prior.mean();
    let shifts: Vec<[f64; 2]> = if comp.inv_lambda == 0.0 || comp.beta == 0.0 {
        alloc::vec![[0.0, 0.0]]
    } else {
        let mut rng = RngStream::new(grid.marginal_seed);
        (0..grid.marginal_draws)
            .map(|_| {
                let z0 = rng.standard_normal();
                let z1 = rng.standard_normal();
                [comp.inv_lambda * z0, comp.inv_lambda * z1]
            })
            .collect()
    };
    let cols: Vec<[f64; 2]> = (0..k)
        .map(|i| [actions.action(i)[0], actions.action(i)[1]])
        .collect();
    let log_q = (shifts.len() as f64).ln();
    let mut logits = alloc::vec![0.0; k];
    let mut log_lik = alloc::vec![0.0; k];
    let n_draws = shifts.len();
    let mut per_draw = alloc::vec![0.0; k * n_draws];

    for (lw, p) in gp.log_weights.iter_mut().zip(&gp.points) {
        let d0 = p[0] - mu[0];
        let d1 = p[1] - mu[1];
        let quad = precision[(0, 0)] * d0 * d0
            + 2.0 * precision[(0, 1)] * d0 * d1
            + precision[(1, 1)] * d1 * d1;
        let mut acc = -0.5 * quad;

        if comp.beta != 0.0 && !offline.is_empty() {
            // log P(a | θ_g) for every action, averaged over ϑ draws in log space
            for (q, s) in shifts.iter().enumerate() {
                let v = [p[0] + s[0], p[1] + s[1]];
                for (b, c) in cols.iter().enumerate() {
                    logits[b] = comp.beta * (c[0] * v[0] + c[1] * v[1]);
                }
                let lse = log_sum_exp(&logits);
                for a in 0..k {
                    per_draw[a * n_draws + q] = logits[a] - lse;
                }
            }
            for a in 0..k {
                log_lik[a] = log_sum_exp(&per_draw[a * n_draws..(a + 1) * n_draws]) - log_q;
            }
            for a in 0..k {
                if counts[a] > 0 {
                    acc += counts[a] as f64 * log_lik[a];
                }
            }
        }

        for &(a, r) in offline.pairs() {
            let resid = r - (cols[a][0] * p[0] + cols[a][1] * p[1]);
            acc -= 0.5 * resid * resid;
        }
        *lw = acc;
    }
    Ok(gp)
}

/// Log-sum-exp with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sample_grid(gp: &GridPosterior, rng: &mut RngStream) -> Result<DVector<f64>> {
    gp.sample(rng)
}
