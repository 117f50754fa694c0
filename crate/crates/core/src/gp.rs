//! Gaussian-process surrogate of real-world reward over DR parameters.
//!
//! Inputs are scaled to the unit box of the parameter space and targets are
//! standardized before fitting. The kernel is squared-exponential with one
//! length-scale per dimension; hyperparameters come from a fixed grid scored
//! by log marginal likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::space::{ParamSpace, ParamVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal jitter added, in order, when factorization of the Gram matrix fails.
pub const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    /// Per-dimension length-scales in unit-box units.
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn isotropic(ndim: usize, lengthscale: f64, signal_var: f64, noise_var: f64) -> Self {
        Self {
            lengthscales: vec![lengthscale; ndim],
            signal_var,
            noise_var,
        }
    }
}

/// Candidate values searched when fitting hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub lengthscales: Vec<f64>,
    pub signal_vars: Vec<f64>,
    pub noise_vars: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            lengthscales: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            signal_vars: vec![0.5, 1.0, 2.0],
            noise_vars: vec![1e-6, 1e-4, 1e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub phi: ParamVector,
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    space: ParamSpace,
    observations: Vec<Observation>,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
}

/// Relative posterior variance treated as exactly zero.
const VAR_FLOOR_REL: f64 = 1e-12;

fn sq_exp(a: &[f64], b: &[f64], hyper: &GpHyper) -> f64 {
    let d2: f64 = a
        .iter()
        .zip(b)
        .zip(&hyper.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    hyper.signal_var * (-0.5 * d2).exp()
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

fn factor(x: &[Vec<f64>], y: &DVector<f64>, hyper: &GpHyper) -> Option<Factored> {
    let n = x.len();
    let gram = DMatrix::from_fn(n, n, |i, j| sq_exp(&x[i], &x[j], hyper));
    let attempts = std::iter::once(0.0).chain(JITTER_LADDER);
    for jitter in attempts {
        let mut k = gram.clone();
        for i in 0..n {
            k[(i, i)] += hyper.noise_var + jitter;
        }
        if let Some(chol) = k.cholesky() {
            let alpha = chol.solve(y);
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let lml = -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * LN_2PI;
            if lml.is_finite() && alpha.iter().all(|v| v.is_finite()) {
                return Some(Factored {
                    chol,
                    alpha,
                    jitter,
                    lml,
                });
            }
        }
    }
    None
}

impl GpSurrogate {
    /// Fits with hyperparameters chosen from `grid` by log marginal likelihood.
    ///
    /// The search scores every isotropic combination first, then runs two
    /// coordinate sweeps over per-dimension length-scales.
    pub fn fit(space: &ParamSpace, observations: Vec<Observation>, grid: &HyperGrid) -> Result<Self> {
        let (x, y, y_mean, y_scale) = prepare(space, &observations)?;
        let d = space.ndim();

        let mut best: Option<(GpHyper, Factored)> = None;
        let consider = |h: GpHyper, best: &mut Option<(GpHyper, Factored)>| {
            if let Some(f) = factor(&x, &y, &h) {
                if best.as_ref().is_none_or(|(_, b)| f.lml > b.lml) {
                    *best = Some((h, f));
                }
            }
        };
        for &l in &grid.lengthscales {
            for &s in &grid.signal_vars {
                for &nv in &grid.noise_vars {
                    consider(GpHyper::isotropic(d, l, s, nv), &mut best);
                }
            }
        }
        if d > 1 {
            for _sweep in 0..2 {
                for k in 0..d {
                    let Some((base, _)) = best.as_ref() else { break };
                    let base = base.clone();
                    for &l in &grid.lengthscales {
                        if l == base.lengthscales[k] {
                            continue;
                        }
                        let mut h = base.clone();
                        h.lengthscales[k] = l;
                        consider(h, &mut best);
                    }
                }
            }
        }
        let (hyper, f) = best.ok_or_else(|| {
            Error::Gp("Gram matrix singular for every hyperparameter candidate".into())
        })?;
        Ok(Self::assemble(space, observations, x, y_mean, y_scale, hyper, f))
    }

    /// Fits with fixed hyperparameters.
    pub fn fit_with(space: &ParamSpace, observations: Vec<Observation>, hyper: GpHyper) -> Result<Self> {
        if hyper.lengthscales.len() != space.ndim() {
            return Err(Error::DimensionMismatch {
                expected: space.ndim(),
                actual: hyper.lengthscales.len(),
            });
        }
        let (x, y, y_mean, y_scale) = prepare(space, &observations)?;
        let f = factor(&x, &y, &hyper)
            .ok_or_else(|| Error::Gp("Gram matrix singular after jitter escalation".into()))?;
        Ok(Self::assemble(space, observations, x, y_mean, y_scale, hyper, f))
    }

    fn assemble(
        space: &ParamSpace,
        observations: Vec<Observation>,
        x: Vec<Vec<f64>>,
        y_mean: f64,
        y_scale: f64,
        hyper: GpHyper,
        f: Factored,
    ) -> Self {
        Self {
            space: space.clone(),
            observations,
            x,
            y_mean,
            y_scale,
            hyper,
            jitter: f.jitter,
            chol: f.chol,
            alpha: f.alpha,
            log_marginal_likelihood: f.lml,
        }
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    /// Jitter that was needed on top of the noise variance (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    /// Target standardization `(mean, scale)`.
    pub fn target_standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    pub fn best_observed(&self) -> f64 {
        self.observations
            .iter()
            .map(|o| o.r)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Prior mean and std in reward units.
    pub fn prior(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale * self.hyper.signal_var.sqrt())
    }

    /// Posterior mean and standard deviation in reward units.
    pub fn predict(&self, phi: &ParamVector) -> (f64, f64) {
        self.predict_unit(&self.space.to_unit(phi))
    }

    pub(crate) fn predict_unit(&self, u: &[f64]) -> (f64, f64) {
        let kstar = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| sq_exp(u, xi, &self.hyper)),
        );
        let mean = kstar.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("cholesky factor has a nonzero diagonal");
        let mut var = self.hyper.signal_var - v.dot(&v);
        // below this the subtraction is pure cancellation error
        if var < VAR_FLOOR_REL * self.hyper.signal_var {
            var = 0.0;
        }
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }

    /// Refit including `(phi, r)`, re-running the hyperparameter grid.
    pub fn updated(&self, phi: ParamVector, r: f64, grid: &HyperGrid) -> Result<Self> {
        let mut obs = self.observations.clone();
        obs.push(Observation { phi, r });
        Self::fit(&self.space, obs, grid)
    }

    pub fn expected_improvement(&self, phi: &ParamVector, best_r: f64) -> f64 {
        let (mu, sigma) = self.predict(phi);
        expected_improvement(mu, sigma, best_r)
    }
}

type Prepared = (Vec<Vec<f64>>, DVector<f64>, f64, f64);

fn prepare(space: &ParamSpace, observations: &[Observation]) -> Result<Prepared> {
    if observations.is_empty() {
        return Err(Error::Gp("no observations".into()));
    }
    for o in observations {
        space.check_contains(&o.phi)?;
        if !o.r.is_finite() {
            return Err(Error::NonFinite(format!("observed reward {}", o.r)));
        }
    }
    let n = observations.len() as f64;
    let y_mean = observations.iter().map(|o| o.r).sum::<f64>() / n;
    let var = observations
        .iter()
        .map(|o| (o.r - y_mean).powi(2))
        .sum::<f64>()
        / n;
    let y_scale = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    let x = observations.iter().map(|o| space.to_unit(&o.phi)).collect();
    let y = DVector::from_iterator(
        observations.len(),
        observations.iter().map(|o| (o.r - y_mean) / y_scale),
    );
    Ok((x, y, y_mean, y_scale))
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement of a Gaussian `N(mu, sigma^2)` over `best_r`.
pub fn expected_improvement(mu: f64, sigma: f64, best_r: f64) -> f64 {
    let gain = mu - best_r;
    if sigma < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}
