//! Deterministic feedforward control policy with a flat parameter vector.
//!
//! Layout of the flat vector: hidden weights (row-major, `hidden x obs`),
//! hidden biases, output weights (row-major, `action x hidden`), output biases.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arch {
    pub obs_dim: usize,
    pub hidden: usize,
    pub action_dim: usize,
}

impl Arch {
    pub const fn new(obs_dim: usize, hidden: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            hidden,
            action_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.obs_dim * self.hidden + self.hidden + self.hidden * self.action_dim + self.action_dim
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.obs_dim, self.hidden, self.action_dim)
    }
}

/// Anything that maps an observation to a bounded action.
pub trait Actor: Sync {
    fn action_dim(&self) -> usize;
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    arch: Arch,
    theta: Vec<f64>,
}

impl Policy {
    /// Uniform init in `+-1/sqrt(fan_in)` per layer, biases included.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = rng::rng_for(seed);
        let s1 = 1.0 / (arch.obs_dim as f64).sqrt();
        let s2 = 1.0 / (arch.hidden as f64).sqrt();
        let first = arch.obs_dim * arch.hidden + arch.hidden;
        let theta = (0..arch.param_count())
            .map(|i| {
                let s = if i < first { s1 } else { s2 };
                rng.random_range(-s..=s)
            })
            .collect();
        Self { arch, theta }
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            theta: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_params(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                actual: theta.len(),
            });
        }
        if let Some(v) = theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("policy parameter {v}")));
        }
        Ok(Self { arch, theta })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_params(self) -> Vec<f64> {
        self.theta
    }

    /// One tanh hidden layer, tanh output head.
    pub fn forward(&self, obs: &[f64], out: &mut [f64]) -> Result<()> {
        let Arch {
            obs_dim,
            hidden,
            action_dim,
        } = self.arch;
        if obs.len() != obs_dim {
            return Err(Error::DimensionMismatch {
                expected: obs_dim,
                actual: obs.len(),
            });
        }
        if out.len() != action_dim {
            return Err(Error::DimensionMismatch {
                expected: action_dim,
                actual: out.len(),
            });
        }
        let (w1, rest) = self.theta.split_at(obs_dim * hidden);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden * action_dim);

        let mut h = [0.0f64; 64];
        let mut h_vec;
        let h: &mut [f64] = if hidden <= h.len() {
            &mut h[..hidden]
        } else {
            h_vec = vec![0.0; hidden];
            &mut h_vec
        };
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &w1[j * obs_dim..(j + 1) * obs_dim];
            let z: f64 = row.iter().zip(obs).map(|(w, x)| w * x).sum::<f64>() + b1[j];
            *hj = z.tanh();
        }
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w2[k * hidden..(k + 1) * hidden];
            let z: f64 = row.iter().zip(h.iter()).map(|(w, x)| w * x).sum::<f64>() + b2[k];
            *o = z.tanh();
        }
        Ok(())
    }
}

impl Actor for Policy {
    fn action_dim(&self) -> usize {
        self.arch.action_dim
    }

    fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.arch.action_dim];
        self.forward(obs, &mut out)?;
        Ok(out)
    }
}
