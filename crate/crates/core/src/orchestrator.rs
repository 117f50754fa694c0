//! The BayRnTune outer loop and the baseline runners.
//!
//! Every runner shares the same total step budget
//! `T_bootstrap + N * T_tune` and reports one real-world evaluation per
//! iteration boundary, so their max-historical curves line up.

use std::path::PathBuf;
use std::time::Instant;

use crate::bo::BayesOpt;
use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{ExperimentConfig, Runner};
use crate::envs::{self, EnvSpec, GroundTruth};
use crate::error::{Error, Result};
use crate::eval::{self, CurvePoint};
use crate::gp::{GpHyper, Observation};
use crate::policy::Policy;
use crate::rng;
use crate::rundir::{RunTarget, RunWriter};
use crate::space::{ParamVector, RunningStats};
use crate::strategies::{self, History, HistoryEntry};
use crate::trainer::{self, GenerationPoint, TrainDist};

// seed-derivation tags
const TAG_INIT: u64 = 0x1417;
const TAG_BOOTSTRAP: u64 = 1;
const TAG_EVAL: u64 = 2;
const TAG_BO_DESIGN: u64 = 3;
const TAG_BO_QUERY: u64 = 4;
const TAG_TRAIN: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub iteration: u64,
    /// `None` when trained from a fresh initialization.
    pub parent: Option<u64>,
    pub phi: ParamVector,
    pub reward: f64,
    pub consumed: u64,
    pub cumulative: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainCurveRow {
    pub iteration: u64,
    pub generation: usize,
    pub cumulative: u64,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub runner: Runner,
    pub label: String,
    pub seed: u64,
    pub rows: Vec<RunRow>,
    pub train_curves: Vec<TrainCurveRow>,
    /// Seconds since the run started, per row.
    pub wall_clock: Vec<f64>,
    pub bo_observations: Vec<Observation>,
    pub bo_hyper: Option<GpHyper>,
    pub best_iteration: u64,
    pub best_reward: f64,
    pub best_policy: Policy,
    pub run_dir: Option<PathBuf>,
}

impl RunRecord {
    pub fn total_timesteps(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.cumulative)
    }

    pub fn curve(&self) -> Vec<CurvePoint> {
        max_historical_curve(&self.rows)
    }

    /// Parent links from every row end at a fresh-init root without cycles.
    pub fn lineage_is_rooted(&self) -> bool {
        self.rows.iter().all(|row| {
            let mut cur = Some(row);
            let mut hops = 0;
            while let Some(r) = cur {
                let Some(p) = r.parent else { return true };
                if p >= r.iteration || hops > self.rows.len() {
                    return false;
                }
                cur = self.rows.iter().find(|x| x.iteration == p);
                hops += 1;
            }
            false
        })
    }
}

pub fn max_historical_curve(rows: &[RunRow]) -> Vec<CurvePoint> {
    eval::max_historical(rows.iter().map(|r| (r.cumulative, r.reward)))
}

/// Where to write artifacts, and an optional callback invoked after each
/// evaluated iteration.
#[derive(Default, Clone, Copy)]
pub struct RunOptions<'a> {
    pub target: Option<RunTarget<'a>>,
    pub progress: Option<&'a (dyn Fn(&RunRow) + Sync)>,
}

struct Ctx<'a> {
    cfg: ExperimentConfig,
    spec: EnvSpec,
    gt: GroundTruth,
    seed: u64,
    started: Instant,
    writer: Option<RunWriter>,
    rows: Vec<RunRow>,
    train_curves: Vec<TrainCurveRow>,
    wall_clock: Vec<f64>,
    best: Option<(u64, f64, Policy)>,
    progress: Option<&'a (dyn Fn(&RunRow) + Sync)>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &ExperimentConfig, runner: Runner, seed: u64, opts: &RunOptions<'a>) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.runner = runner;
        let spec = cfg.env_spec()?;
        let gt = spec.ground_truth.clone();
        let writer = match &opts.target {
            Some(t) => Some(RunWriter::create(t, &cfg, seed, &spec)?),
            None => None,
        };
        Ok(Self {
            cfg,
            spec,
            gt,
            seed,
            started: Instant::now(),
            writer,
            rows: vec![],
            train_curves: vec![],
            wall_clock: vec![],
            best: None,
            progress: opts.progress,
        })
    }

    fn cumulative(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.cumulative)
    }

    /// Budget for the next training chunk so that cumulative steps track
    /// `target`; overshoot from early-terminating episodes is paid back.
    fn chunk_budget(&self, target: u64) -> u64 {
        let generation = self.cfg.es.generation_steps(self.spec.horizon);
        target.saturating_sub(self.cumulative()).max(generation)
    }

    fn evaluate(&self, policy: &Policy, iteration: u64) -> Result<f64> {
        envs::real_eval(
            &self.spec,
            &self.gt,
            policy,
            self.cfg.n_eval,
            rng::derive(self.seed, &[TAG_EVAL, iteration]),
        )
    }

    fn record(
        &mut self,
        iteration: u64,
        parent: Option<u64>,
        phi: ParamVector,
        reward: f64,
        policy: &Policy,
        curve: &[GenerationPoint],
        consumed: u64,
    ) -> Result<()> {
        let base = self.cumulative();
        for (g, p) in curve.iter().enumerate() {
            self.train_curves.push(TrainCurveRow {
                iteration,
                generation: g,
                cumulative: base + p.steps,
                mean_return: p.mean_return,
            });
        }
        let row = RunRow {
            iteration,
            parent,
            phi: phi.clone(),
            reward,
            consumed,
            cumulative: base + consumed,
        };
        if self.best.as_ref().is_none_or(|b| reward > b.1) {
            self.best = Some((iteration, reward, policy.clone()));
        }
        self.rows.push(row);
        self.wall_clock.push(self.started.elapsed().as_secs_f64());
        if let Some(w) = &self.writer {
            let meta = CheckpointMeta {
                iteration,
                parent,
                reward,
                phi,
            };
            checkpoint::save(&w.dir().join(checkpoint::file_name(iteration)), policy, &meta)?;
            w.write_history(&self.rows)?;
            w.write_curves(&self.rows)?;
            w.write_train_curves(&self.train_curves)?;
        }
        if let Some(f) = self.progress {
            f(self.rows.last().expect("row just pushed"));
        }
        Ok(())
    }

    fn finish(self, bo: Option<&BayesOpt>) -> Result<RunRecord> {
        let (best_iteration, best_reward, best_policy) = self
            .best
            .ok_or_else(|| Error::RunData("run produced no evaluations".into()))?;
        let (bo_observations, bo_hyper) = match bo.and_then(BayesOpt::surrogate) {
            Some(gp) => (gp.observations().to_vec(), Some(gp.hyper().clone())),
            None => (vec![], None),
        };
        if let (Some(w), Some(gp)) = (&self.writer, bo.and_then(BayesOpt::surrogate)) {
            w.write_bo(gp)?;
        }
        Ok(RunRecord {
            runner: self.cfg.runner,
            label: self.cfg.label(),
            seed: self.seed,
            rows: self.rows,
            train_curves: self.train_curves,
            wall_clock: self.wall_clock,
            bo_observations,
            bo_hyper,
            best_iteration,
            best_reward,
            best_policy,
            run_dir: self.writer.map(|w| w.dir().to_path_buf()),
        })
    }
}

fn fresh_policy(spec: &EnvSpec, seed: u64, index: u64) -> Policy {
    Policy::init(spec.arch(), rng::derive(seed, &[TAG_INIT, index]))
}

/// Bootstrap, then `N` rounds of query, checkpoint lookup, fine-tuning,
/// real-world evaluation and BO update.
pub fn run_bayrntune(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions<'_>) -> Result<RunRecord> {
    let mut ctx = Ctx::new(cfg, Runner::BayRnTune, seed, opts)?;
    let spec = ctx.spec.clone();
    let es = ctx.cfg.es.clone();
    let mut bo = BayesOpt::new(
        spec.space.clone(),
        ctx.cfg.bo.clone(),
        rng::derive(seed, &[TAG_BO_DESIGN]),
    );

    let phi0 = spec.space.center();
    let dist = if ctx.cfg.bootstrap_full_range {
        TrainDist::Uniform
    } else {
        TrainDist::Proposal(phi0.clone())
    };
    let boot = trainer::train(
        &fresh_policy(&spec, seed, 0),
        &spec,
        &dist,
        ctx.cfg.t_bootstrap,
        &es,
        rng::derive(seed, &[TAG_BOOTSTRAP]),
    )?;
    let r0 = ctx.evaluate(&boot.policy, 0)?;
    ctx.record(0, None, phi0.clone(), r0, &boot.policy, &boot.curve, boot.consumed)?;
    bo.update(phi0.clone(), r0)?;

    let mut history = History::new();
    history.push(HistoryEntry {
        iteration: 0,
        policy: boot.policy,
        phi: phi0.clone(),
        reward: r0,
        parent: None,
        checkpoint: ctx.writer.as_ref().map(|w| w.dir().join(checkpoint::file_name(0))),
    })?;
    let mut stats = RunningStats::new(spec.space.ndim());
    stats.push(&phi0)?;

    for i in 1..=ctx.cfg.iterations as u64 {
        let phi = bo.query(rng::derive(seed, &[TAG_BO_QUERY, i])).candidate;
        stats.push(&phi)?;
        let parent = strategies::select_checkpoint(ctx.cfg.strategy, &phi, &history, &stats)?;
        let start = history
            .get(parent)
            .expect("strategy returns a history member")
            .policy
            .clone();
        let budget = ctx.chunk_budget(ctx.cfg.t_bootstrap + i * ctx.cfg.t_tune);
        let tuned = trainer::pol_opt(
            &start,
            &spec,
            &phi,
            budget,
            &es,
            rng::derive(seed, &[TAG_TRAIN, i]),
        )?;
        let r = ctx.evaluate(&tuned.policy, i)?;
        bo.update(phi.clone(), r)?;
        ctx.record(i, Some(parent), phi.clone(), r, &tuned.policy, &tuned.curve, tuned.consumed)?;
        history.push(HistoryEntry {
            iteration: i,
            policy: tuned.policy,
            phi,
            reward: r,
            parent: Some(parent),
            checkpoint: ctx.writer.as_ref().map(|w| w.dir().join(checkpoint::file_name(i))),
        })?;
    }
    ctx.finish(Some(&bo))
}

/// Continuous training from one initialization with a fixed episode
/// distribution, evaluated at the same boundaries as BayRnTune.
fn run_continuous(
    cfg: &ExperimentConfig,
    runner: Runner,
    seed: u64,
    opts: &RunOptions<'_>,
    dist: impl Fn(&EnvSpec) -> TrainDist,
    recorded_phi: impl Fn(&EnvSpec) -> ParamVector,
) -> Result<RunRecord> {
    let mut ctx = Ctx::new(cfg, runner, seed, opts)?;
    let spec = ctx.spec.clone();
    let es = ctx.cfg.es.clone();
    let dist = dist(&spec);
    let phi = recorded_phi(&spec);
    let mut policy = fresh_policy(&spec, seed, 0);
    let mut parent = None;
    for i in 0..=ctx.cfg.iterations as u64 {
        let budget = ctx.chunk_budget(ctx.cfg.t_bootstrap + i * ctx.cfg.t_tune);
        let tag = if i == 0 {
            rng::derive(seed, &[TAG_BOOTSTRAP])
        } else {
            rng::derive(seed, &[TAG_TRAIN, i])
        };
        let out = trainer::train(&policy, &spec, &dist, budget, &es, tag)?;
        let r = ctx.evaluate(&out.policy, i)?;
        ctx.record(i, parent, phi.clone(), r, &out.policy, &out.curve, out.consumed)?;
        policy = out.policy;
        parent = Some(i);
    }
    ctx.finish(None)
}

/// Uniform DR over the whole space, no adaptation.
pub fn run_vanilla_dr(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions<'_>) -> Result<RunRecord> {
    run_continuous(
        cfg,
        Runner::VanillaDr,
        seed,
        opts,
        |_| TrainDist::Uniform,
        |spec| spec.space.center(),
    )
}

/// Trains on the ground-truth episode distribution.
pub fn run_oracle(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions<'_>) -> Result<RunRecord> {
    run_continuous(
        cfg,
        Runner::Oracle,
        seed,
        opts,
        |spec| TrainDist::Truth(spec.ground_truth.clone()),
        |spec| spec.ground_truth.phi_star.clone(),
    )
}

/// BO over DR parameters with a fresh policy trained for `T_scratch` steps
/// every iteration; as many iterations as fit in the shared budget.
pub fn run_bayesian_dr(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions<'_>) -> Result<RunRecord> {
    let mut ctx = Ctx::new(cfg, Runner::BayesianDr, seed, opts)?;
    let spec = ctx.spec.clone();
    let es = ctx.cfg.es.clone();
    let t_scratch = ctx.cfg.t_scratch();
    let n = ctx.cfg.total_budget() / t_scratch;
    let mut bo = BayesOpt::new(
        spec.space.clone(),
        ctx.cfg.bo.clone(),
        rng::derive(seed, &[TAG_BO_DESIGN]),
    );
    for i in 1..=n {
        let phi = bo.query(rng::derive(seed, &[TAG_BO_QUERY, i])).candidate;
        let out = trainer::pol_opt(
            &fresh_policy(&spec, seed, i),
            &spec,
            &phi,
            ctx.chunk_budget(i * t_scratch),
            &es,
            rng::derive(seed, &[TAG_TRAIN, i]),
        )?;
        let r = ctx.evaluate(&out.policy, i)?;
        bo.update(phi.clone(), r)?;
        ctx.record(i, None, phi, r, &out.policy, &out.curve, out.consumed)?;
    }
    ctx.finish(Some(&bo))
}

pub fn run(cfg: &ExperimentConfig, runner: Runner, seed: u64, opts: &RunOptions<'_>) -> Result<RunRecord> {
    match runner {
        Runner::BayRnTune => run_bayrntune(cfg, seed, opts),
        Runner::VanillaDr => run_vanilla_dr(cfg, seed, opts),
        Runner::BayesianDr => run_bayesian_dr(cfg, seed, opts),
        Runner::Oracle => run_oracle(cfg, seed, opts),
    }
}
