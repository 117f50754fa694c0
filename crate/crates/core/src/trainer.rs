//! Policy optimization by evolution strategies (antithetic Gaussian
//! perturbations, rank-shaped fitness) under an environment-step budget.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::envs::{self, EnvSpec, GroundTruth};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng;
use crate::space::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct EsConfig {
    pub population: usize,
    pub noise_std: f64,
    pub step_size: f64,
    pub antithetic: bool,
    pub rank_shaping: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population: 16,
            noise_std: 0.05,
            step_size: 0.01,
            antithetic: true,
            rank_shaping: true,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::InvalidConfig("ES population must be >= 2".into()));
        }
        if self.antithetic && !self.population.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "ES population must be even with antithetic sampling".into(),
            ));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("ES noise std must be > 0".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("ES step size must be > 0".into()));
        }
        Ok(())
    }

    /// Environment steps one generation can consume at most.
    pub fn generation_steps(&self, horizon: usize) -> u64 {
        (self.population * horizon) as u64
    }
}

/// Where each training episode draws its dynamics parameters from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainDist {
    /// Around a proposed φ, per the environment's DR mode.
    Proposal(ParamVector),
    /// Uniform over the whole DR space.
    Uniform,
    /// The ground-truth episode distribution.
    Truth(GroundTruth),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationPoint {
    /// Environment steps consumed so far in this training call.
    pub steps: u64,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<GenerationPoint>,
    pub consumed: u64,
}

/// Fitness evaluation result: return and environment steps consumed.
pub type Evaluation = (f64, u64);

fn noise(d: usize, seed: u64, j: usize) -> Vec<f64> {
    let mut r = rng::rng_at(seed, &[j as u64]);
    (0..d).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Average ranks mapped to `[-0.5, 0.5]`.
pub fn centered_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks.iter().map(|r| r / (n - 1) as f64 - 0.5).collect()
}

fn standardized(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values
        .iter()
        .map(|v| if std > 0.0 { (v - mean) / std } else { 0.0 })
        .collect()
}

struct Generation {
    gradient: Vec<f64>,
    mean_return: f64,
    steps: u64,
}

fn run_generation<F>(theta: &[f64], cfg: &EsConfig, gen_seed: u64, fitness: &F) -> Result<Generation>
where
    F: Fn(&[f64], u64) -> Result<Evaluation> + Sync,
{
    let d = theta.len();
    let sigma = cfg.noise_std;
    let n_noise = if cfg.antithetic {
        cfg.population / 2
    } else {
        cfg.population
    };
    let eps: Vec<Vec<f64>> = (0..n_noise).map(|j| noise(d, gen_seed, j)).collect();
    // member m uses noise m / 2 with sign +, - when antithetic; pairs share an episode seed
    let members: Vec<(usize, f64)> = if cfg.antithetic {
        (0..n_noise).flat_map(|j| [(j, 1.0), (j, -1.0)]).collect()
    } else {
        (0..n_noise).map(|j| (j, 1.0)).collect()
    };
    let evals: Vec<Evaluation> = members
        .par_iter()
        .map(|&(j, sign)| {
            let perturbed: Vec<f64> = theta
                .iter()
                .zip(&eps[j])
                .map(|(t, e)| t + sign * sigma * e)
                .collect();
            fitness(&perturbed, rng::derive(gen_seed, &[0xE9, j as u64]))
        })
        .collect::<Result<_>>()?;
    let returns: Vec<f64> = evals.iter().map(|e| e.0).collect();
    if let Some(bad) = returns.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!(
            "ES fitness {bad} encountered; aborting training"
        )));
    }
    let shaped = if cfg.rank_shaping {
        centered_ranks(&returns)
    } else {
        standardized(&returns)
    };
    let mut gradient = vec![0.0; d];
    for (&(j, sign), w) in members.iter().zip(&shaped) {
        for (g, e) in gradient.iter_mut().zip(&eps[j]) {
            *g += sign * w * e;
        }
    }
    let scale = 1.0 / (members.len() as f64 * sigma);
    gradient.iter_mut().for_each(|g| *g *= scale);
    Ok(Generation {
        gradient,
        mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
        steps: evals.iter().map(|e| e.1).sum(),
    })
}

/// ES search-gradient estimate at `theta` for one generation.
pub fn es_gradient<F>(theta: &[f64], cfg: &EsConfig, seed: u64, fitness: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], u64) -> Result<Evaluation> + Sync,
{
    cfg.validate()?;
    Ok(run_generation(theta, cfg, seed, &fitness)?.gradient)
}

/// Generic ES loop. Runs whole generations while fewer than `budget` steps
/// have been consumed. `max_generation_steps` is the most one generation can
/// consume; a smaller budget is an error.
///
/// Each update is `step_size * gradient`, with its norm capped at the
/// exploration radius `noise_std * sqrt(dim)`.
pub fn es_optimize<F>(
    theta: Vec<f64>,
    cfg: &EsConfig,
    budget: u64,
    max_generation_steps: u64,
    seed: u64,
    fitness: F,
) -> Result<(Vec<f64>, Vec<GenerationPoint>, u64)>
where
    F: Fn(&[f64], u64) -> Result<Evaluation> + Sync,
{
    cfg.validate()?;
    if budget < max_generation_steps {
        return Err(Error::BudgetTooSmall {
            budget,
            generation: max_generation_steps,
        });
    }
    if let Some(v) = theta.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("initial parameter {v}")));
    }
    let mut theta = theta;
    let max_norm = cfg.noise_std * (theta.len() as f64).sqrt();
    let mut consumed = 0u64;
    let mut curve = Vec::new();
    let mut gen = 0u64;
    while consumed < budget {
        let g = run_generation(&theta, cfg, rng::derive(seed, &[gen]), &fitness)?;
        let norm = g.gradient.iter().map(|v| v * v).sum::<f64>().sqrt() * cfg.step_size;
        let factor = if norm > max_norm {
            cfg.step_size * max_norm / norm
        } else {
            cfg.step_size
        };
        for (t, gi) in theta.iter_mut().zip(&g.gradient) {
            *t += factor * gi;
        }
        consumed += g.steps;
        curve.push(GenerationPoint {
            steps: consumed,
            mean_return: g.mean_return,
        });
        gen += 1;
    }
    Ok((theta, curve, consumed))
}

/// Dynamics parameters of the training episode with seed `ep_seed`.
pub fn episode_phi(spec: &EnvSpec, dist: &TrainDist, ep_seed: u64) -> ParamVector {
    let mut r = rng::rng_at(ep_seed, &[0xD1]);
    match dist {
        TrainDist::Proposal(phi) => spec.episode_phi(phi, &mut r),
        TrainDist::Uniform => spec.space.uniform_sample_with(&mut r),
        TrainDist::Truth(gt) => gt.sample_episode(&spec.space, &mut r),
    }
}

/// Fine-tunes `init` for `budget` environment steps with episodes drawn from `dist`.
pub fn train(
    init: &Policy,
    spec: &EnvSpec,
    dist: &TrainDist,
    budget: u64,
    cfg: &EsConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if let TrainDist::Proposal(phi) = dist {
        spec.space.check_contains(phi)?;
    }
    let arch = init.arch();
    let fitness = |theta: &[f64], ep_seed: u64| -> Result<Evaluation> {
        let policy = Policy::from_params(arch, theta.to_vec())?;
        let state = envs::reset_exact(spec, episode_phi(spec, dist, ep_seed), ep_seed)?;
        let out = envs::rollout_from(spec, &policy, state)?;
        Ok((out.ret, out.steps))
    };
    let (theta, curve, consumed) = es_optimize(
        init.params().to_vec(),
        cfg,
        budget,
        cfg.generation_steps(spec.horizon),
        seed,
        fitness,
    )?;
    Ok(TrainOutcome {
        policy: Policy::from_params(arch, theta)?,
        curve,
        consumed,
    })
}

/// `PolOpt(θ; φ; T)`: fine-tune at the proposed `phi`.
pub fn pol_opt(
    init: &Policy,
    spec: &EnvSpec,
    phi: &ParamVector,
    budget: u64,
    cfg: &EsConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train(init, spec, &TrainDist::Proposal(phi.clone()), budget, cfg, seed)
}

/// Initial training from a fresh policy at the center of the DR space
/// (or uniformly over the whole space with `full_range`).
pub fn bootstrap_train(
    spec: &EnvSpec,
    cfg: &EsConfig,
    t_bootstrap: u64,
    full_range: bool,
    seed: u64,
) -> Result<TrainOutcome> {
    let init = Policy::init(spec.arch(), rng::derive(seed, &[0x1417]));
    let dist = if full_range {
        TrainDist::Uniform
    } else {
        TrainDist::Proposal(spec.space.center())
    };
    train(&init, spec, &dist, t_bootstrap, cfg, rng::derive(seed, &[0xB0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvId, EnvSpec};

    fn quadratic(theta: &[f64], _seed: u64) -> Result<Evaluation> {
        Ok((-(theta[0] - 3.0).powi(2), 1))
    }

    #[test]
    fn centered_ranks_handle_ties() {
        assert_eq!(centered_ranks(&[3.0, 1.0, 2.0]), vec![0.5, -0.5, 0.0]);
        assert_eq!(centered_ranks(&[1.0, 1.0]), vec![0.0, 0.0]);
        assert_eq!(centered_ranks(&[5.0, 1.0, 5.0, 0.0]), vec![
            (2.5 / 3.0) - 0.5,
            (1.0 / 3.0) - 0.5,
            (2.5 / 3.0) - 0.5,
            -0.5
        ]);
    }

    #[test]
    fn config_validation() {
        assert!(EsConfig::default().validate().is_ok());
        let odd = EsConfig {
            population: 15,
            ..EsConfig::default()
        };
        assert!(odd.validate().is_err());
        let flat = EsConfig {
            noise_std: 0.0,
            ..EsConfig::default()
        };
        assert!(flat.validate().is_err());
    }

    #[test]
    fn one_generation_budget_is_exact() {
        let spec = EnvSpec::new(EnvId::PuckSlide1d);
        let cfg = EsConfig::default();
        let budget = cfg.generation_steps(spec.horizon);
        let init = Policy::init(spec.arch(), 0);
        let out = pol_opt(&init, &spec, &spec.space.center(), budget, &cfg, 1).unwrap();
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.consumed, 16 * 200);
        assert_ne!(out.policy, init);
    }

    #[test]
    fn budget_below_one_generation_is_an_error() {
        let spec = EnvSpec::new(EnvId::PuckSlide1d);
        let init = Policy::init(spec.arch(), 0);
        let err = pol_opt(&init, &spec, &spec.space.center(), 100, &EsConfig::default(), 1);
        assert!(matches!(err, Err(Error::BudgetTooSmall { .. })));
    }

    #[test]
    fn vanishing_noise_leaves_params_in_place() {
        let spec = EnvSpec::new(EnvId::PuckSlide1d);
        let cfg = EsConfig {
            noise_std: 1e-9,
            ..EsConfig::default()
        };
        let init = Policy::init(spec.arch(), 0);
        let out = pol_opt(&init, &spec, &spec.space.center(), 3200, &cfg, 1).unwrap();
        let moved = init
            .params()
            .iter()
            .zip(out.policy.params())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(moved <= 1e-6, "moved {moved}");
    }

    #[test]
    fn quadratic_converges() {
        let cfg = EsConfig::default();
        let (theta, curve, consumed) =
            es_optimize(vec![0.0], &cfg, 200 * 16, 16, 4, quadratic).unwrap();
        assert_eq!(curve.len(), 200);
        assert_eq!(consumed, 3200);
        assert!((theta[0] - 3.0).abs() < 0.1, "theta {}", theta[0]);
    }

    #[test]
    fn non_finite_fitness_aborts() {
        let err = es_optimize(vec![0.0], &EsConfig::default(), 16, 16, 0, |_, _| {
            Ok((f64::NAN, 1))
        });
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let spec = EnvSpec::new(EnvId::CartpoleDr);
        let init = Policy::init(spec.arch(), 3);
        let phi = spec.space.center();
        let cfg = EsConfig::default();
        let a = pol_opt(&init, &spec, &phi, 6400, &cfg, 9).unwrap();
        let b = pol_opt(&init, &spec, &phi, 6400, &cfg, 9).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.consumed, b.consumed);
        assert_eq!(a.consumed, a.curve.last().unwrap().steps);
    }
}
