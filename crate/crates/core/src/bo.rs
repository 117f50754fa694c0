//! Sequential Bayesian optimization over the DR parameter box.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::{GpSurrogate, HyperGrid, Observation};
use crate::rng;
use crate::space::{ParamSpace, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    /// Observations required before queries become model-based.
    pub n_init: usize,
    pub n_candidates: usize,
    pub refine_steps: usize,
    pub grid: HyperGrid,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            n_init: 3,
            n_candidates: 1024,
            refine_steps: 50,
            grid: HyperGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub candidate: ParamVector,
    /// Expected improvement at `candidate`; `None` for space-filling proposals.
    pub acquisition: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BayesOpt {
    space: ParamSpace,
    config: BoConfig,
    design_seed: u64,
    surrogate: Option<GpSurrogate>,
}

impl BayesOpt {
    pub fn new(space: ParamSpace, config: BoConfig, design_seed: u64) -> Self {
        Self {
            space,
            config,
            design_seed,
            surrogate: None,
        }
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn surrogate(&self) -> Option<&GpSurrogate> {
        self.surrogate.as_ref()
    }

    pub fn n_observations(&self) -> usize {
        self.surrogate.as_ref().map_or(0, GpSurrogate::len)
    }

    pub fn update(&mut self, phi: ParamVector, r: f64) -> Result<()> {
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reward {r} passed to BO update")));
        }
        self.space.check_contains(&phi)?;
        let next = match &self.surrogate {
            Some(gp) => gp.updated(phi, r, &self.config.grid)?,
            None => GpSurrogate::fit(&self.space, vec![Observation { phi, r }], &self.config.grid)?,
        };
        self.surrogate = Some(next);
        Ok(())
    }

    /// Next DR parameters to try. Deterministic in `seed` and the current
    /// surrogate.
    pub fn query(&self, seed: u64) -> AcquisitionResult {
        match &self.surrogate {
            Some(gp) if gp.len() >= self.config.n_init => maximize_ei(gp, &self.config, seed),
            _ => AcquisitionResult {
                candidate: self.stratified_point(seed),
                acquisition: None,
            },
        }
    }

    /// Latin-hypercube style initial design: the j-th initial query lands in
    /// a distinct stratum per dimension.
    fn stratified_point(&self, seed: u64) -> ParamVector {
        let n = self.config.n_init.max(1);
        let j = self.n_observations() % n;
        let mut within = rng::rng_for(seed);
        let u: Vec<f64> = (0..self.space.ndim())
            .map(|k| {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng::rng_at(self.design_seed, &[k as u64]));
                (perm[j] as f64 + within.random::<f64>()) / n as f64
            })
            .collect();
        self.space
            .clamp(&self.space.from_unit(&u))
            .expect("dimension matches space")
    }
}

fn ei_at(gp: &GpSurrogate, u: &[f64], best: f64) -> (ParamVector, f64) {
    let space = gp.space();
    let phi = space
        .clamp(&space.from_unit(u))
        .expect("dimension matches space");
    let ei = gp.expected_improvement(&phi, best);
    (phi, ei)
}

/// Multistart random search followed by coordinate descent with step halving.
pub fn maximize_ei(gp: &GpSurrogate, config: &BoConfig, seed: u64) -> AcquisitionResult {
    let d = gp.space().ndim();
    let best_r = gp.best_observed();
    let mut rng = rng::rng_for(seed);
    let candidates: Vec<Vec<f64>> = (0..config.n_candidates.max(1))
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let scored: Vec<f64> = candidates
        .par_iter()
        .map(|u| ei_at(gp, u, best_r).1)
        .collect();
    let start = scored
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > scored[b] { i } else { b });

    let mut u = candidates[start].clone();
    let mut value = scored[start];
    let mut step = 0.05;
    for _ in 0..config.refine_steps {
        let mut improved: Option<(Vec<f64>, f64)> = None;
        for k in 0..d {
            for sign in [-1.0, 1.0] {
                let mut trial = u.clone();
                trial[k] = (trial[k] + sign * step).clamp(0.0, 1.0);
                let (_, ei) = ei_at(gp, &trial, best_r);
                if ei > improved.as_ref().map_or(value, |b| b.1) {
                    improved = Some((trial, ei));
                }
            }
        }
        match improved {
            Some((trial, ei)) => {
                u = trial;
                value = ei;
            }
            None => step *= 0.5,
        }
    }
    let (candidate, acquisition) = ei_at(gp, &u, best_r);
    AcquisitionResult {
        candidate,
        acquisition: Some(acquisition),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Dim;

    fn space2() -> ParamSpace {
        ParamSpace::new(vec![
            Dim::continuous("friction", 0.5, 1.25),
            Dim::integer("delay", 0.0, 8.0),
        ])
        .unwrap()
    }

    #[test]
    fn empty_optimizer_proposes_inside_space() {
        let bo = BayesOpt::new(space2(), BoConfig::default(), 1);
        for seed in 0..50 {
            let q = bo.query(seed);
            assert!(bo.space().contains(&q.candidate));
            assert!(q.acquisition.is_none());
            assert_eq!(q.candidate.0[1].fract(), 0.0);
        }
    }

    #[test]
    fn initial_design_is_stratified() {
        let space = ParamSpace::new(vec![Dim::continuous("x", 0.0, 3.0)]).unwrap();
        let mut bo = BayesOpt::new(space, BoConfig::default(), 9);
        let mut strata = vec![];
        for i in 0..3 {
            let q = bo.query(100 + i);
            strata.push(q.candidate.0[0].floor() as usize);
            bo.update(q.candidate, i as f64).unwrap();
        }
        strata.sort();
        assert_eq!(strata, vec![0, 1, 2]);
    }

    #[test]
    fn query_is_deterministic() {
        let mut bo = BayesOpt::new(space2(), BoConfig::default(), 3);
        for (i, (f, d, r)) in [(0.6, 1.0, 1.0), (1.0, 5.0, 2.0), (0.8, 3.0, 0.5)].iter().enumerate() {
            bo.update(ParamVector(vec![*f, *d]), *r).unwrap();
            assert_eq!(bo.n_observations(), i + 1);
        }
        let a = bo.query(77);
        let b = bo.query(77);
        assert_eq!(a, b);
        assert!(a.acquisition.unwrap() >= 0.0);
        assert!(bo.space().contains(&a.candidate));
    }

    #[test]
    fn update_rejects_non_finite_reward() {
        let mut bo = BayesOpt::new(space2(), BoConfig::default(), 3);
        assert!(bo.update(ParamVector(vec![0.7, 2.0]), f64::INFINITY).is_err());
        assert!(bo.update(ParamVector(vec![2.0, 2.0]), 1.0).is_err());
    }
}
