use std::sync::atomic::{AtomicU64, Ordering};

use bayrntune::checkpoint::{self, CheckpointMeta};
use bayrntune::envs::{self, EnvId, EnvSpec};
use bayrntune::eval;
use bayrntune::policy::Policy;
use bayrntune::rng;
use bayrntune::trainer::{self, EsConfig, TrainDist};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Mean ground-truth return of the seed-7 initial puck policy over 8 episodes.
const PUCK_GOLDEN: f64 = 0.285_524_772_949_652_4;

fn mean_return_at_center(spec: &EnvSpec, policy: &Policy, seed: u64) -> f64 {
    let phi = spec.space.center();
    (0..8)
        .map(|e| envs::episodic_return(spec, policy, &phi, rng::derive(seed, &[e])).unwrap().ret)
        .sum::<f64>()
        / 8.0
}

#[test]
fn bootstrap_beats_random_init() {
    let spec = EnvSpec::new(EnvId::PuckSlide1d);
    let es = EsConfig::default();
    let mut gains: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let out = trainer::bootstrap_train(&spec, &es, 16_000, false, seed).unwrap();
            let init = Policy::init(spec.arch(), rng::derive(seed, &[0x1417]));
            mean_return_at_center(&spec, &out.policy, 99) - mean_return_at_center(&spec, &init, 99)
        })
        .collect();
    let median = eval::median(&mut gains);
    assert!(median > 0.0, "median gain {median}");
}

#[test]
fn fine_tuning_improves_in_expectation() {
    let spec = EnvSpec::new(EnvId::PendulumDr);
    let es = EsConfig::default();
    let phi = spec.space.center();
    let mut deltas: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let init = Policy::init(spec.arch(), seed);
            let out = trainer::pol_opt(&init, &spec, &phi, 10 * es.generation_steps(spec.horizon), &es, seed).unwrap();
            out.curve.last().unwrap().mean_return - out.curve[0].mean_return
        })
        .collect();
    let median = eval::median(&mut deltas);
    assert!(median >= 0.0, "median delta {median}");
}

#[test]
fn step_accounting_is_exact() {
    // cartpole terminates early, so episode lengths vary
    let spec = EnvSpec::new(EnvId::CartpoleDr);
    let es = EsConfig::default();
    let init = Policy::init(spec.arch(), 3);
    let simulated = AtomicU64::new(0);
    let dist = TrainDist::Proposal(spec.space.center());
    let arch = init.arch();
    let budget = 12_345;
    let (_, curve, consumed) = trainer::es_optimize(
        init.params().to_vec(),
        &es,
        budget,
        es.generation_steps(spec.horizon),
        8,
        |theta: &[f64], ep_seed: u64| {
            let p = Policy::from_params(arch, theta.to_vec())?;
            let state = envs::reset_exact(&spec, trainer::episode_phi(&spec, &dist, ep_seed), ep_seed)?;
            let out = envs::rollout_from(&spec, &p, state)?;
            simulated.fetch_add(out.steps, Ordering::Relaxed);
            Ok((out.ret, out.steps))
        },
    )
    .unwrap();
    assert_eq!(simulated.load(Ordering::Relaxed), consumed);
    assert_eq!(curve.last().unwrap().steps, consumed);
    assert!(consumed >= budget && consumed < budget + es.generation_steps(spec.horizon));

    let out = trainer::train(&init, &spec, &dist, budget, &es, 8).unwrap();
    assert_eq!(out.consumed, consumed);
}

#[test]
fn checkpoint_round_trip_preserves_return() {
    let spec = EnvSpec::new(EnvId::PendulumDr);
    let policy = Policy::init(spec.arch(), 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(checkpoint::file_name(4));
    let phi = spec.space.uniform_sample(2);
    let meta = CheckpointMeta {
        iteration: 4,
        parent: Some(2),
        reward: -12.5,
        phi: phi.clone(),
    };
    checkpoint::save(&path, &policy, &meta).unwrap();
    let (loaded, loaded_meta) = checkpoint::load(&path, spec.arch()).unwrap();
    assert_eq!(loaded_meta, meta);
    let a = envs::episodic_return(&spec, &policy, &phi, 77).unwrap();
    let b = envs::episodic_return(&spec, &loaded, &phi, 77).unwrap();
    assert_eq!(a.ret.to_bits(), b.ret.to_bits());
    assert_eq!(a.steps, b.steps);
}

#[test]
fn puck_real_eval_golden_value() {
    let spec = EnvSpec::new(EnvId::PuckSlide1d);
    let policy = Policy::init(spec.arch(), 7);
    let r = envs::real_eval(&spec, &spec.ground_truth, &policy, 8, 2024).unwrap();
    assert!(r.is_finite());
    assert!((r - PUCK_GOLDEN).abs() <= 1e-9 * PUCK_GOLDEN.abs().max(1.0), "{r}");
}

#[test]
fn noiseless_real_eval_averages_fixed_phi_returns() {
    let mut spec = EnvSpec::new(EnvId::PendulumDr);
    spec.ground_truth.episode_noise = vec![0.0; 3];
    let policy = Policy::init(spec.arch(), 5);
    let r = envs::real_eval(&spec, &spec.ground_truth, &policy, 4, 31).unwrap();
    let expected = (0..4u64)
        .map(|e| {
            let state = envs::reset_exact(&spec, spec.ground_truth.phi_star.clone(), rng::derive(31, &[e])).unwrap();
            envs::rollout_from(&spec, &policy, state).unwrap().ret
        })
        .sum::<f64>()
        / 4.0;
    assert!((r - expected).abs() < 1e-12);
    let one = envs::real_eval(&spec, &spec.ground_truth, &policy, 1, 31).unwrap();
    let phi = envs::real_eval_episode_phi(&spec, &spec.ground_truth, 31, 0);
    let state = envs::reset_exact(&spec, phi, rng::derive(31, &[0])).unwrap();
    assert_eq!(one, envs::rollout_from(&spec, &policy, state).unwrap().ret);
}

#[test]
fn bootstrap_with_one_generation_budget() {
    let spec = EnvSpec::new(EnvId::PuckSlide1d);
    let es = EsConfig::default();
    let out = trainer::bootstrap_train(&spec, &es, es.generation_steps(spec.horizon), true, 1).unwrap();
    assert_eq!(out.consumed, es.generation_steps(spec.horizon));
    assert_eq!(out.curve.len(), 1);
}
