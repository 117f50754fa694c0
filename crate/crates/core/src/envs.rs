//! Desk-scale environments whose dynamics depend on a DR parameter vector,
//! and the hidden ground-truth "real world" used for evaluation.
//!
//! All three environments integrate with semi-implicit Euler (velocity first,
//! then position from the new velocity). Actions pass through an integer
//! control-delay buffer, and a piecewise-constant random perturbation force is
//! resampled every [`PERTURB_INTERVAL`] steps where the environment has one.
//!
//! | id            | DR dimensions                                    | reward per step                       |
//! |---------------|--------------------------------------------------|---------------------------------------|
//! | puck-slide-1d | friction, mass_multiplier                        | `4 exp(-|x - 2| / 0.25)`              |
//! | cartpole-dr   | friction_multiplier, control_delay, force_max    | `+1` while upright                    |
//! | pendulum-dr   | mass_multiplier, damping, perturbation_max       | `-(angle^2 + 0.1 vel^2 + 0.001 u^2)`  |

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{Actor, Arch};
use crate::rng;
use crate::space::{Dim, ParamSpace, ParamVector};

pub const GRAVITY: f64 = 9.81;
/// Steps between resamples of the random perturbation force.
pub const PERTURB_INTERVAL: usize = 10;
pub const DEFAULT_HORIZON: usize = 200;
pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_BAND: f64 = 0.05;
pub const HIDDEN_WIDTH: usize = 16;

pub mod puck {
    pub const TARGET: f64 = 2.0;
    pub const REWARD_WEIGHT: f64 = 4.0;
    pub const REWARD_SCALE: f64 = 0.25;
    pub const BASE_MASS: f64 = 1.0;
    pub const MAX_FORCE: f64 = 80.0;
    /// The robot touches the puck only for the first steps, and can push but not pull.
    pub const PUSH_STEPS: usize = 10;
}

pub mod cartpole {
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const MAX_FORCE: f64 = 10.0;
    pub const CART_FRICTION: f64 = 0.1;
    pub const POLE_FRICTION: f64 = 0.002;
    pub const ANGLE_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
    pub const X_LIMIT: f64 = 2.4;
    pub const INIT_SPREAD: f64 = 0.05;
}

pub mod pendulum {
    pub const BASE_MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const SUBSTEPS: usize = 10;
    pub const INIT_VEL_SPREAD: f64 = 0.1;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    PuckSlide1d,
    CartpoleDr,
    PendulumDr,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::PuckSlide1d, EnvId::CartpoleDr, EnvId::PendulumDr];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::PuckSlide1d => "puck-slide-1d",
            EnvId::CartpoleDr => "cartpole-dr",
            EnvId::PendulumDr => "pendulum-dr",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvId::PuckSlide1d => 3,
            EnvId::CartpoleDr => 4,
            EnvId::PendulumDr => 3,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown environment `{s}`")))
    }
}

/// How a training episode turns the proposed φ into its dynamics parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrMode {
    /// Use φ exactly.
    Point,
    /// Truncated normal around φ with std `rel_std * (hi - lo)` per dimension.
    GaussianBand { rel_std: f64 },
}

impl fmt::Display for DrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DrMode::Point => f.write_str("point"),
            DrMode::GaussianBand { rel_std } => write!(f, "gaussian-band:{rel_std}"),
        }
    }
}

impl FromStr for DrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "point" {
            return Ok(DrMode::Point);
        }
        let rel = match s {
            "gaussian-band" => Some(DEFAULT_BAND),
            _ => s
                .strip_prefix("gaussian-band:")
                .and_then(|v| v.trim().parse::<f64>().ok()),
        };
        match rel {
            Some(r) if (0.0..=0.5).contains(&r) => Ok(DrMode::GaussianBand { rel_std: r }),
            Some(r) => Err(Error::InvalidConfig(format!(
                "gaussian-band relative std {r} outside [0, 0.5]"
            ))),
            None => Err(Error::InvalidConfig(format!(
                "unknown dr mode `{s}` (expected `point` or `gaussian-band:<rel>`)"
            ))),
        }
    }
}

/// Hidden real-world parameters and their per-episode spread.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub phi_star: ParamVector,
    pub episode_noise: Vec<f64>,
}

impl GroundTruth {
    pub fn sample_episode<R: Rng + ?Sized>(&self, space: &ParamSpace, rng: &mut R) -> ParamVector {
        space.sample_truncated_normal(&self.phi_star, &self.episode_noise, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub horizon: usize,
    pub dt: f64,
    pub space: ParamSpace,
    pub dr_mode: DrMode,
    pub ground_truth: GroundTruth,
    /// Scale of the initial-state randomization (see [`env_reset`]).
    pub init_spread: f64,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        let (dims, phi_star, noise, init_spread) = match id {
            EnvId::PuckSlide1d => (
                vec![
                    Dim::continuous("friction", 0.5, 1.25),
                    Dim::continuous("mass_multiplier", 0.25, 2.0),
                ],
                vec![0.75, 1.0],
                vec![0.01, 0.01],
                0.0,
            ),
            EnvId::CartpoleDr => (
                vec![
                    Dim::continuous("friction_multiplier", 0.8, 2.0),
                    Dim::integer("control_delay", 0.0, 8.0),
                    Dim::continuous("force_max", 0.0, 1.25),
                ],
                vec![1.5, 3.0, 0.9],
                vec![0.01, 0.0, 0.01],
                cartpole::INIT_SPREAD,
            ),
            EnvId::PendulumDr => (
                vec![
                    Dim::continuous("mass_multiplier", 0.5, 2.0),
                    Dim::continuous("damping", 0.0, 0.2),
                    Dim::continuous("perturbation_max", 0.0, 1.0),
                ],
                vec![1.2, 0.05, 0.3],
                vec![0.01, 0.01, 0.01],
                pendulum::INIT_VEL_SPREAD,
            ),
        };
        Self {
            id,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            space: ParamSpace::new(dims).expect("built-in spaces are valid"),
            dr_mode: DrMode::GaussianBand {
                rel_std: DEFAULT_BAND,
            },
            ground_truth: GroundTruth {
                phi_star: ParamVector(phi_star),
                episode_noise: noise,
            },
            init_spread,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be > 0".into()));
        }
        if let DrMode::GaussianBand { rel_std } = self.dr_mode {
            if !(0.0..=0.5).contains(&rel_std) {
                return Err(Error::InvalidConfig(format!(
                    "relative std {rel_std} outside [0, 0.5]"
                )));
            }
        }
        self.space.check_contains(&self.ground_truth.phi_star)?;
        if self.ground_truth.episode_noise.len() != self.space.ndim()
            || self.ground_truth.episode_noise.iter().any(|s| !(*s >= 0.0))
        {
            return Err(Error::InvalidConfig(
                "ground-truth noise must give one nonnegative std per dimension".into(),
            ));
        }
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        Arch::new(self.id.obs_dim(), HIDDEN_WIDTH, 1)
    }

    /// Per-episode dynamics parameters for a training episode at `phi`.
    pub fn episode_phi<R: Rng + ?Sized>(&self, phi: &ParamVector, rng: &mut R) -> ParamVector {
        match self.dr_mode {
            DrMode::Point => phi.clone(),
            DrMode::GaussianBand { rel_std } => {
                let std: Vec<f64> = self.space.dims().iter().map(|d| rel_std * d.width()).collect();
                self.space.sample_truncated_normal(phi, &std, rng)
            }
        }
    }
}

/// The three registered environments with their default configuration.
pub fn make_env_suite() -> Vec<EnvSpec> {
    EnvId::ALL.into_iter().map(EnvSpec::new).collect()
}

/// Dynamics coefficients fixed for one episode.
#[derive(Debug, Clone, PartialEq)]
struct Coeffs {
    mass: f64,
    friction: f64,
    damping: f64,
    delay: usize,
    perturb_max: f64,
}

impl Coeffs {
    fn from_phi(id: EnvId, phi: &[f64]) -> Self {
        match id {
            EnvId::PuckSlide1d => Coeffs {
                mass: puck::BASE_MASS * phi[1],
                friction: phi[0],
                damping: 0.0,
                delay: 0,
                perturb_max: 0.0,
            },
            EnvId::CartpoleDr => Coeffs {
                mass: cartpole::CART_MASS,
                friction: phi[0],
                damping: 0.0,
                delay: phi[1].round().max(0.0) as usize,
                perturb_max: phi[2],
            },
            EnvId::PendulumDr => Coeffs {
                mass: pendulum::BASE_MASS * phi[0],
                friction: 0.0,
                damping: phi[1],
                delay: 0,
                perturb_max: phi[2],
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    /// Physical state. puck: `[x, v]`; cartpole: `[x, x_dot, angle, angle_dot]`;
    /// pendulum: `[angle from upright, angular velocity]`.
    pub phys: Vec<f64>,
    pub t: usize,
    pub episode_phi: ParamVector,
    pub perturbation: f64,
    delay_buffer: VecDeque<f64>,
    coeffs: Coeffs,
    rng: ChaCha8Rng,
}

impl PartialEq for EnvState {
    fn eq(&self, other: &Self) -> bool {
        self.phys == other.phys
            && self.t == other.t
            && self.episode_phi == other.episode_phi
            && self.perturbation == other.perturbation
            && self.delay_buffer == other.delay_buffer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// Resets for a training episode: draws the episode's dynamics from `phi`
/// according to the environment's DR mode.
///
/// Initial states: puck at rest at the origin (target at +2 m); cartpole
/// state components each uniform in `+-init_spread`; pendulum hanging down
/// with angular velocity uniform in `+-init_spread`.
pub fn env_reset(spec: &EnvSpec, phi: &ParamVector, seed: u64) -> Result<EnvState> {
    spec.space.check_contains(phi)?;
    let mut rng = rng::rng_at(seed, &[0xD1]);
    let episode_phi = spec.episode_phi(phi, &mut rng);
    reset_exact(spec, episode_phi, seed)
}

/// Resets with the episode's dynamics set to `episode_phi` exactly.
pub fn reset_exact(spec: &EnvSpec, episode_phi: ParamVector, seed: u64) -> Result<EnvState> {
    spec.space.check_contains(&episode_phi)?;
    let mut rng = rng::rng_at(seed, &[0x5E]);
    let spread = spec.init_spread;
    let sym = |rng: &mut ChaCha8Rng| {
        if spread > 0.0 {
            rng.random_range(-spread..=spread)
        } else {
            0.0
        }
    };
    let phys = match spec.id {
        EnvId::PuckSlide1d => vec![0.0, 0.0],
        EnvId::CartpoleDr => (0..4).map(|_| sym(&mut rng)).collect(),
        EnvId::PendulumDr => vec![PI, sym(&mut rng)],
    };
    let coeffs = Coeffs::from_phi(spec.id, episode_phi.as_slice());
    Ok(EnvState {
        phys,
        t: 0,
        delay_buffer: VecDeque::from(vec![0.0; coeffs.delay]),
        episode_phi,
        perturbation: 0.0,
        coeffs,
        rng,
    })
}

pub fn observe(spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
    let s = &state.phys;
    match spec.id {
        EnvId::PuckSlide1d => vec![
            (s[0] - puck::TARGET) / puck::TARGET,
            s[1] / 4.0,
            state.t as f64 / puck::PUSH_STEPS as f64,
        ],
        EnvId::CartpoleDr => vec![
            s[0] / cartpole::X_LIMIT,
            s[1] / 3.0,
            s[2] / cartpole::ANGLE_LIMIT,
            s[3] / 3.0,
        ],
        EnvId::PendulumDr => vec![s[0].cos(), s[0].sin(), s[1] / 8.0],
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Coulomb-friction velocity update for the puck.
fn puck_velocity(v: f64, drive_acc: f64, friction_acc: f64, dt: f64) -> f64 {
    if v == 0.0 {
        if drive_acc.abs() <= friction_acc {
            0.0
        } else {
            dt * (drive_acc - friction_acc * drive_acc.signum())
        }
    } else {
        let next = v + dt * (drive_acc - friction_acc * v.signum());
        if next.signum() != v.signum() && drive_acc.abs() <= friction_acc {
            0.0
        } else {
            next
        }
    }
}

pub fn env_step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<Step> {
    let mut next = state.clone();
    let reward = step_in_place(spec, &mut next, action)?;
    let done = next.t >= spec.horizon
        || (spec.id == EnvId::CartpoleDr && reward == 0.0);
    Ok(Step {
        state: next,
        reward,
        done,
    })
}

fn step_in_place(spec: &EnvSpec, state: &mut EnvState, action: &[f64]) -> Result<f64> {
    if state.t >= spec.horizon {
        return Err(Error::Env(format!(
            "step called at t = {} >= horizon {}",
            state.t, spec.horizon
        )));
    }
    let a = match action {
        [a] if a.is_finite() => a.clamp(-1.0, 1.0),
        [a] => return Err(Error::NonFinite(format!("action {a}"))),
        _ => {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: action.len(),
            })
        }
    };
    let c = &state.coeffs;
    let applied = if c.delay == 0 {
        a
    } else {
        state.delay_buffer.push_back(a);
        state.delay_buffer.pop_front().unwrap_or(0.0)
    };
    if c.perturb_max > 0.0 && state.t.is_multiple_of(PERTURB_INTERVAL) {
        let mag = state.rng.random_range(0.0..=c.perturb_max);
        let sign = if state.rng.random::<bool>() { 1.0 } else { -1.0 };
        state.perturbation = sign * mag;
    }
    let dt = spec.dt;
    let s = &mut state.phys;
    let reward = match spec.id {
        EnvId::PuckSlide1d => {
            let force = if state.t < puck::PUSH_STEPS {
                applied.max(0.0) * puck::MAX_FORCE
            } else {
                0.0
            };
            let v = puck_velocity(s[1], force / c.mass, c.friction * GRAVITY, dt);
            s[1] = v;
            s[0] += dt * v;
            puck::REWARD_WEIGHT * (-(s[0] - puck::TARGET).abs() / puck::REWARD_SCALE).exp()
        }
        EnvId::CartpoleDr => {
            use cartpole::*;
            let total = CART_MASS + POLE_MASS;
            let pml = POLE_MASS * HALF_LENGTH;
            let (x_dot, th, th_dot) = (s[1], s[2], s[3]);
            let force = applied * MAX_FORCE + state.perturbation - CART_FRICTION * c.friction * x_dot;
            let (sin, cos) = th.sin_cos();
            let temp = (force + pml * th_dot * th_dot * sin) / total;
            let th_acc = (GRAVITY * sin - cos * temp - POLE_FRICTION * c.friction * th_dot / pml)
                / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
            let x_acc = temp - pml * th_acc * cos / total;
            s[1] += dt * x_acc;
            s[0] += dt * s[1];
            s[3] += dt * th_acc;
            s[2] += dt * s[3];
            let upright = s[2].abs() <= ANGLE_LIMIT && s[0].abs() <= X_LIMIT;
            if upright {
                1.0
            } else {
                0.0
            }
        }
        EnvId::PendulumDr => {
            use pendulum::*;
            let torque = applied * MAX_TORQUE;
            let inertia = c.mass * LENGTH * LENGTH;
            let h = dt / SUBSTEPS as f64;
            for _ in 0..SUBSTEPS {
                let acc = GRAVITY / LENGTH * s[0].sin()
                    + (torque + state.perturbation - c.damping * s[1]) / inertia;
                s[1] += h * acc;
                s[0] += h * s[1];
            }
            let angle = wrap_angle(s[0]);
            -(angle * angle + 0.1 * s[1] * s[1] + 0.001 * torque * torque)
        }
    };
    if let Some(v) = state.phys.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("state component {v}")));
    }
    state.t += 1;
    Ok(reward)
}

/// Pendulum mechanical energy measured from the bottom of the swing.
pub fn pendulum_energy(state: &EnvState) -> f64 {
    let m = state.coeffs.mass;
    let l = pendulum::LENGTH;
    0.5 * m * l * l * state.phys[1].powi(2) + m * GRAVITY * l * (1.0 + state.phys[0].cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub ret: f64,
    pub steps: u64,
}

/// Runs one episode from an already-reset state.
pub fn rollout_from<A: Actor + ?Sized>(spec: &EnvSpec, actor: &A, mut state: EnvState) -> Result<Rollout> {
    let mut ret = 0.0;
    let mut steps = 0;
    while state.t < spec.horizon {
        let obs = observe(spec, &state);
        let action = actor.act(&obs)?;
        let reward = step_in_place(spec, &mut state, &action)?;
        ret += reward;
        steps += 1;
        if spec.id == EnvId::CartpoleDr && reward == 0.0 {
            break;
        }
    }
    Ok(Rollout { ret, steps })
}

/// Undiscounted return of one training-mode episode at `phi`.
pub fn episodic_return<A: Actor + ?Sized>(
    spec: &EnvSpec,
    actor: &A,
    phi: &ParamVector,
    seed: u64,
) -> Result<Rollout> {
    rollout_from(spec, actor, env_reset(spec, phi, seed)?)
}

/// Mean return over `n_episodes` episodes in the ground-truth world.
pub fn real_eval<A: Actor + ?Sized>(
    spec: &EnvSpec,
    gt: &GroundTruth,
    actor: &A,
    n_episodes: usize,
    seed: u64,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be >= 1".into()));
    }
    let returns: Vec<f64> = (0..n_episodes)
        .into_par_iter()
        .map(|e| {
            let ep_seed = rng::derive(seed, &[e as u64]);
            let phi = gt.sample_episode(&spec.space, &mut rng::rng_at(ep_seed, &[0xD1]));
            rollout_from(spec, actor, reset_exact(spec, phi, ep_seed)?).map(|r| r.ret)
        })
        .collect::<Result<_>>()?;
    Ok(returns.iter().sum::<f64>() / n_episodes as f64)
}

/// The φ that [`real_eval`] uses for episode `e`.
pub fn real_eval_episode_phi(spec: &EnvSpec, gt: &GroundTruth, seed: u64, e: usize) -> ParamVector {
    let ep_seed = rng::derive(seed, &[e as u64]);
    gt.sample_episode(&spec.space, &mut rng::rng_at(ep_seed, &[0xD1]))
}

/// Adapts a closure into an [`Actor`] with one action dimension.
pub struct FnActor<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Actor for FnActor<F> {
    fn action_dim(&self) -> usize {
        1
    }

    fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![(self.0)(obs)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Policy;

    fn spec(id: EnvId) -> EnvSpec {
        EnvSpec::new(id)
    }

    fn gt_phi(s: &EnvSpec) -> ParamVector {
        s.ground_truth.phi_star.clone()
    }

    #[test]
    fn suite_has_three_valid_specs() {
        let suite = make_env_suite();
        assert_eq!(suite.len(), 3);
        for s in &suite {
            s.validate().unwrap();
            assert!(s.space.contains(&s.ground_truth.phi_star));
        }
        let puck = &suite[0];
        assert_eq!(puck.id, EnvId::PuckSlide1d);
        let d = &puck.space.dims()[0];
        assert_eq!((d.name.as_str(), d.lo, d.hi), ("friction", 0.5, 1.25));
        assert_eq!(puck.ground_truth.phi_star.0[0], 0.75);
        assert_eq!(puck.ground_truth.episode_noise[0], 0.01);
    }

    #[test]
    fn env_and_mode_names_parse() {
        for id in EnvId::ALL {
            assert_eq!(id.as_str().parse::<EnvId>().unwrap(), id);
        }
        assert!("hopper".parse::<EnvId>().is_err());
        assert_eq!("point".parse::<DrMode>().unwrap(), DrMode::Point);
        assert_eq!(
            "gaussian-band:0.1".parse::<DrMode>().unwrap(),
            DrMode::GaussianBand { rel_std: 0.1 }
        );
        assert!("gaussian-band:0.7".parse::<DrMode>().is_err());
    }

    #[test]
    fn puck_reset_is_at_origin() {
        let s = spec(EnvId::PuckSlide1d);
        for seed in 0..5 {
            let st = env_reset(&s, &ParamVector(vec![1.1, 0.4]), seed).unwrap();
            assert_eq!(st.phys, vec![0.0, 0.0]);
        }
        assert_eq!(puck::TARGET, 2.0);
    }

    #[test]
    fn cartpole_reset_within_documented_range_and_deterministic() {
        let s = spec(EnvId::CartpoleDr);
        for seed in 0..50 {
            let st = env_reset(&s, &gt_phi(&s), seed).unwrap();
            assert!(st.phys[2].abs() <= 0.05);
            assert_eq!(st, env_reset(&s, &gt_phi(&s), seed).unwrap());
        }
    }

    #[test]
    fn reset_rejects_phi_outside_space() {
        let s = spec(EnvId::PuckSlide1d);
        assert!(env_reset(&s, &ParamVector(vec![2.0, 1.0]), 0).is_err());
    }

    #[test]
    fn puck_stays_at_rest_without_action() {
        let s = spec(EnvId::PuckSlide1d);
        let mut st = reset_exact(&s, gt_phi(&s), 0).unwrap();
        for _ in 0..50 {
            st = env_step(&s, &st, &[0.0]).unwrap().state;
        }
        assert_eq!(st.phys, vec![0.0, 0.0]);
    }

    #[test]
    fn puck_cannot_be_pulled() {
        let s = spec(EnvId::PuckSlide1d);
        let st = reset_exact(&s, gt_phi(&s), 0).unwrap();
        let out = env_step(&s, &st, &[-1.0]).unwrap();
        assert_eq!(out.state.phys, vec![0.0, 0.0]);
    }

    #[test]
    fn puck_single_step_matches_hand_integration() {
        let s = spec(EnvId::PuckSlide1d);
        let st = reset_exact(&s, ParamVector(vec![0.6, 1.5]), 0).unwrap();
        let out = env_step(&s, &st, &[0.8]).unwrap();
        let acc = 0.8 * 80.0 / 1.5 - 0.6 * 9.81;
        let v = 0.02 * acc;
        let x = 0.02 * v;
        assert!((out.state.phys[1] - v).abs() < 1e-12);
        assert!((out.state.phys[0] - x).abs() < 1e-12);
        let r = 4.0 * (-(x - 2.0f64).abs() / 0.25).exp();
        assert!((out.reward - r).abs() < 1e-12);
    }

    #[test]
    fn puck_friction_stops_sliding_puck() {
        let s = spec(EnvId::PuckSlide1d);
        let mut st = reset_exact(&s, ParamVector(vec![1.0, 1.0]), 0).unwrap();
        st.phys = vec![0.0, 0.1];
        st.t = puck::PUSH_STEPS;
        let out = env_step(&s, &st, &[0.0]).unwrap();
        assert_eq!(out.state.phys[1], 0.0);
    }

    #[test]
    fn zero_delay_is_identity() {
        // cartpole with delay 0 vs the same dynamics driven by the raw action
        let s = spec(EnvId::CartpoleDr);
        let a = reset_exact(&s, ParamVector(vec![1.0, 0.0, 0.0]), 3).unwrap();
        let b = env_step(&s, &a, &[0.7]).unwrap();
        let delayed = reset_exact(&s, ParamVector(vec![1.0, 2.0, 0.0]), 3).unwrap();
        let d1 = env_step(&s, &delayed, &[0.7]).unwrap();
        assert_ne!(b.state.phys, d1.state.phys);
        let d2 = env_step(&s, &d1.state, &[0.0]).unwrap();
        let d3 = env_step(&s, &d2.state, &[0.0]).unwrap();
        // the 0.7 push reaches the cart on the third step
        let mut free = reset_exact(&s, ParamVector(vec![1.0, 0.0, 0.0]), 3).unwrap();
        free = env_step(&s, &free, &[0.0]).unwrap().state;
        free = env_step(&s, &free, &[0.0]).unwrap().state;
        free = env_step(&s, &free, &[0.7]).unwrap().state;
        assert_eq!(free.phys, d3.state.phys);
    }

    #[test]
    fn step_errors() {
        let s = spec(EnvId::PuckSlide1d);
        let st = reset_exact(&s, gt_phi(&s), 0).unwrap();
        assert!(env_step(&s, &st, &[f64::NAN]).is_err());
        assert!(env_step(&s, &st, &[0.0, 0.0]).is_err());
        let mut end = st.clone();
        end.t = s.horizon;
        assert!(env_step(&s, &end, &[0.0]).is_err());
    }

    #[test]
    fn pendulum_at_rest_returns_closed_form() {
        let mut s = spec(EnvId::PendulumDr);
        s.init_spread = 0.0;
        let phi = ParamVector(vec![1.0, 0.1, 0.0]);
        s.dr_mode = DrMode::Point;
        let zero = Policy::zeros(s.arch());
        let r = episodic_return(&s, &zero, &phi, 0).unwrap();
        let expected = s.horizon as f64 * -(PI * PI);
        assert!((r.ret - expected).abs() < 1e-9, "{} vs {}", r.ret, expected);
        assert_eq!(r.steps, s.horizon as u64);
    }

    #[test]
    fn pendulum_conserves_energy_without_damping() {
        let s = spec(EnvId::PendulumDr);
        let mut st = reset_exact(&s, ParamVector(vec![1.0, 0.0, 0.0]), 0).unwrap();
        st.phys = vec![PI - 1.0, 0.0];
        let e0 = pendulum_energy(&st);
        let mut worst: f64 = 0.0;
        while st.t < s.horizon {
            st = env_step(&s, &st, &[0.0]).unwrap().state;
            worst = worst.max((pendulum_energy(&st) - e0).abs() / e0);
        }
        assert!(worst < 0.01, "relative energy drift {worst}");
    }

    #[test]
    fn returns_are_deterministic_and_finite() {
        for s in make_env_suite() {
            let p = Policy::init(s.arch(), 4);
            let a = episodic_return(&s, &p, &gt_phi(&s), 9).unwrap();
            let b = episodic_return(&s, &p, &gt_phi(&s), 9).unwrap();
            assert_eq!(a, b);
            assert!(a.ret.is_finite());
        }
    }

    #[test]
    fn real_eval_with_zero_noise_is_point_mean() {
        let s = spec(EnvId::CartpoleDr);
        let gt = GroundTruth {
            phi_star: gt_phi(&s),
            episode_noise: vec![0.0; 3],
        };
        let p = Policy::init(s.arch(), 2);
        let got = real_eval(&s, &gt, &p, 4, 17).unwrap();
        let manual: f64 = (0..4)
            .map(|e| {
                let ep_seed = rng::derive(17, &[e]);
                rollout_from(&s, &p, reset_exact(&s, gt_phi(&s), ep_seed).unwrap())
                    .unwrap()
                    .ret
            })
            .sum::<f64>()
            / 4.0;
        assert_eq!(got, manual);
        assert!(real_eval(&s, &gt, &p, 0, 17).is_err());
    }

    #[test]
    fn single_episode_real_eval_equals_episode_return() {
        let s = spec(EnvId::PuckSlide1d);
        let gt = s.ground_truth.clone();
        let p = Policy::init(s.arch(), 2);
        let phi = real_eval_episode_phi(&s, &gt, 5, 0);
        assert!((phi.0[0] - 0.75).abs() < 0.1);
        let ep_seed = rng::derive(5, &[0]);
        let direct = rollout_from(&s, &p, reset_exact(&s, phi, ep_seed).unwrap()).unwrap();
        assert_eq!(real_eval(&s, &gt, &p, 1, 5).unwrap(), direct.ret);
    }

    #[test]
    fn puck_displacement_is_monotone_in_friction() {
        let s = spec(EnvId::PuckSlide1d);
        let push = FnActor(|obs: &[f64]| if obs[2] < 0.5 { 1.0 } else { 0.0 });
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let mu = 0.5 + 0.75 * k as f64 / 9.0;
            let mut st = reset_exact(&s, ParamVector(vec![mu, 1.0]), 0).unwrap();
            while st.t < s.horizon {
                let a = push.act(&observe(&s, &st)).unwrap();
                st = env_step(&s, &st, &a).unwrap().state;
            }
            assert!(st.phys[0] <= last);
            last = st.phys[0];
        }
    }

    #[test]
    fn return_is_continuous_in_phi() {
        let mut s = spec(EnvId::PendulumDr);
        s.dr_mode = DrMode::Point;
        let p = Policy::init(s.arch(), 1);
        let phi = ParamVector(vec![1.0, 0.1, 0.0]);
        let moved = ParamVector(vec![1.0 + 1e-6, 0.1, 0.0]);
        let a = episodic_return(&s, &p, &phi, 3).unwrap().ret;
        let b = episodic_return(&s, &p, &moved, 3).unwrap().ret;
        assert!((a - b).abs() < 1e-3);
    }
}
