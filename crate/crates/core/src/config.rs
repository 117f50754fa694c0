//! Experiment configuration: a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Each key may appear
//! once. Recognized keys and defaults:
//!
//! ```text
//! env                  = puck-slide-1d      # puck-slide-1d | cartpole-dr | pendulum-dr
//! runner               = bayrntune          # bayrntune | vanilla-dr | bayesian-dr | oracle
//! strategy             = infinite-chain     # normalized-closest | infinite-chain | best-only | best-of-last-m:M
//! iterations           = 20                 # BO iterations N
//! t_bootstrap          = 160000
//! t_tune               = 32000
//! t_scratch            = <t_bootstrap>      # per-iteration budget of the bayesian-dr baseline
//! n_eval               = 8                  # real-world episodes per evaluation
//! seeds                = 1                  # comma-separated
//! horizon              = 200
//! dr_mode              = gaussian-band:0.05 # point | gaussian-band:<rel>
//! ground_truth         = <env default>      # comma-separated, one value per DR dimension
//! ground_truth_noise   = <env default>
//! bootstrap_full_range = false
//! output_dir           = runs               # falls back to $BAYRNTUNE_OUT, then ./runs
//! es.population        = 16
//! es.noise_std         = 0.05
//! es.step_size         = 0.01
//! es.antithetic        = true
//! es.rank_shaping      = true
//! bo.n_init            = 3
//! bo.candidates        = 1024
//! bo.refine_steps      = 50
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::bo::BoConfig;
use crate::envs::{DrMode, EnvId, EnvSpec, GroundTruth};
use crate::error::{Error, Result};
use crate::space::ParamVector;
use crate::strategies::StrategyKind;
use crate::trainer::EsConfig;

pub const KNOWN_KEYS: &[&str] = &[
    "env",
    "runner",
    "strategy",
    "iterations",
    "t_bootstrap",
    "t_tune",
    "t_scratch",
    "n_eval",
    "seeds",
    "horizon",
    "dr_mode",
    "ground_truth",
    "ground_truth_noise",
    "bootstrap_full_range",
    "output_dir",
    "es.population",
    "es.noise_std",
    "es.step_size",
    "es.antithetic",
    "es.rank_shaping",
    "bo.n_init",
    "bo.candidates",
    "bo.refine_steps",
];

pub const OUT_ENV_VAR: &str = "BAYRNTUNE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Runner {
    BayRnTune,
    VanillaDr,
    BayesianDr,
    Oracle,
}

impl Runner {
    pub const ALL: [Runner; 4] = [
        Runner::BayRnTune,
        Runner::VanillaDr,
        Runner::BayesianDr,
        Runner::Oracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Runner::BayRnTune => "bayrntune",
            Runner::VanillaDr => "vanilla-dr",
            Runner::BayesianDr => "bayesian-dr",
            Runner::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Runner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Runner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Runner::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown runner `{s}` (expected bayrntune, vanilla-dr, bayesian-dr or oracle)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub runner: Runner,
    pub strategy: StrategyKind,
    pub iterations: usize,
    pub t_bootstrap: u64,
    pub t_tune: u64,
    pub t_scratch: Option<u64>,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub dr_mode: DrMode,
    pub ground_truth: Option<Vec<f64>>,
    pub ground_truth_noise: Option<Vec<f64>>,
    pub bootstrap_full_range: bool,
    pub output_dir: Option<PathBuf>,
    pub es: EsConfig,
    pub bo: BoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvId::PuckSlide1d,
            runner: Runner::BayRnTune,
            strategy: StrategyKind::InfiniteChain,
            iterations: 20,
            t_bootstrap: 160_000,
            t_tune: 32_000,
            t_scratch: None,
            n_eval: 8,
            seeds: vec![1],
            horizon: crate::envs::DEFAULT_HORIZON,
            dr_mode: DrMode::GaussianBand {
                rel_std: crate::envs::DEFAULT_BAND,
            },
            ground_truth: None,
            ground_truth_noise: None,
            bootstrap_full_range: false,
            output_dir: None,
            es: EsConfig::default(),
            bo: BoConfig::default(),
        }
    }
}

/// Where a setting came from, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Line(usize),
    Override,
}

fn located(source: Source, message: String) -> Error {
    match source {
        Source::Line(line) => Error::ConfigLine { line, message },
        Source::Override => Error::InvalidConfig(format!("override: {message}")),
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse `{s}`")))
        .collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.replace('_', "")
        .parse::<T>()
        .map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn split_pair(text: &str) -> Option<(&str, &str)> {
    let (k, v) = text.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty()).then_some((k, v))
}

impl ExperimentConfig {
    /// Parses config text, then applies `key=value` overrides on top.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut entries: BTreeMap<String, (Source, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = split_pair(content).ok_or_else(|| Error::ConfigLine {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            if !KNOWN_KEYS.contains(&k) {
                return Err(Error::ConfigLine {
                    line,
                    message: format!("unknown key `{k}`"),
                });
            }
            if let Some((Source::Line(prev), _)) = entries.get(k) {
                return Err(Error::ConfigLine {
                    line,
                    message: format!("duplicate key `{k}` (first set on line {prev})"),
                });
            }
            entries.insert(k.to_string(), (Source::Line(line), v.to_string()));
        }
        for o in overrides {
            let (k, v) = split_pair(o).ok_or_else(|| {
                Error::InvalidConfig(format!("override `{o}` is not `key=value`"))
            })?;
            if !KNOWN_KEYS.contains(&k) {
                return Err(Error::InvalidConfig(format!("override: unknown key `{k}`")));
            }
            entries.insert(k.to_string(), (Source::Override, v.to_string()));
        }

        let mut cfg = ExperimentConfig::default();
        for (key, (src, v)) in &entries {
            cfg.set(key, v).map_err(|m| located(*src, format!("`{key}`: {m}")))?;
        }
        cfg.validate_located(&entries)?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let e = |err: Error| match err {
            Error::InvalidConfig(m) => m,
            other => other.to_string(),
        };
        match key {
            "env" => self.env = v.parse().map_err(e)?,
            "runner" => self.runner = v.parse().map_err(e)?,
            "strategy" => self.strategy = v.parse().map_err(e)?,
            "iterations" => self.iterations = parse_num(v)?,
            "t_bootstrap" => self.t_bootstrap = parse_num(v)?,
            "t_tune" => self.t_tune = parse_num(v)?,
            "t_scratch" => self.t_scratch = Some(parse_num(v)?),
            "n_eval" => self.n_eval = parse_num(v)?,
            "seeds" => self.seeds = parse_list(v)?,
            "horizon" => self.horizon = parse_num(v)?,
            "dr_mode" => self.dr_mode = v.parse().map_err(e)?,
            "ground_truth" => self.ground_truth = Some(parse_list(v)?),
            "ground_truth_noise" => self.ground_truth_noise = Some(parse_list(v)?),
            "bootstrap_full_range" => self.bootstrap_full_range = parse_bool(v)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(v)),
            "es.population" => self.es.population = parse_num(v)?,
            "es.noise_std" => self.es.noise_std = parse_num(v)?,
            "es.step_size" => self.es.step_size = parse_num(v)?,
            "es.antithetic" => self.es.antithetic = parse_bool(v)?,
            "es.rank_shaping" => self.es.rank_shaping = parse_bool(v)?,
            "bo.n_init" => self.bo.n_init = parse_num(v)?,
            "bo.candidates" => self.bo.n_candidates = parse_num(v)?,
            "bo.refine_steps" => self.bo.refine_steps = parse_num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn validate_located(&self, entries: &BTreeMap<String, (Source, String)>) -> Result<()> {
        let at = |key: &str, msg: String| match entries.get(key) {
            Some((src, _)) => located(*src, format!("`{key}`: {msg}")),
            None => Error::InvalidConfig(format!("`{key}`: {msg}")),
        };
        if self.iterations == 0 {
            return Err(at("iterations", "must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(at("seeds", "at least one seed required".into()));
        }
        if self.n_eval == 0 {
            return Err(at("n_eval", "must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(at("horizon", "must be >= 1".into()));
        }
        self.es
            .validate()
            .map_err(|err| at("es.population", err.to_string()))?;
        let generation = self.es.generation_steps(self.horizon);
        for (key, value) in [
            ("t_bootstrap", self.t_bootstrap),
            ("t_tune", self.t_tune),
            ("t_scratch", self.t_scratch()),
        ] {
            if value < generation {
                return Err(at(
                    key,
                    format!("{value} is smaller than one ES generation ({generation} steps)"),
                ));
            }
        }
        if self.total_budget() / self.t_scratch() == 0 {
            return Err(at("t_scratch", "exceeds the total budget".into()));
        }
        if self.bo.n_candidates == 0 {
            return Err(at("bo.candidates", "must be >= 1".into()));
        }
        self.env_spec().map_err(|err| {
            let key = if entries.contains_key("ground_truth_noise")
                && !matches!(err, Error::OutsideSpace { .. })
            {
                "ground_truth_noise"
            } else {
                "ground_truth"
            };
            at(key, err.to_string())
        })?;
        Ok(())
    }

    pub fn t_scratch(&self) -> u64 {
        self.t_scratch.unwrap_or(self.t_bootstrap)
    }

    /// `T_bootstrap + N * T_tune`, shared by all runners.
    pub fn total_budget(&self) -> u64 {
        self.t_bootstrap + self.iterations as u64 * self.t_tune
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let mut spec = EnvSpec::new(self.env);
        spec.horizon = self.horizon;
        spec.dr_mode = self.dr_mode;
        if let Some(gt) = &self.ground_truth {
            if gt.len() != spec.space.ndim() {
                return Err(Error::DimensionMismatch {
                    expected: spec.space.ndim(),
                    actual: gt.len(),
                });
            }
            spec.ground_truth.phi_star = ParamVector(gt.clone());
        }
        if let Some(noise) = &self.ground_truth_noise {
            spec.ground_truth.episode_noise = noise.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        Ok(self.env_spec()?.ground_truth)
    }

    /// Settings that are legal but probably unintended.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = vec![];
        if self.t_bootstrap < self.t_tune {
            out.push(format!(
                "t_bootstrap ({}) is smaller than t_tune ({})",
                self.t_bootstrap, self.t_tune
            ));
        }
        out
    }

    /// Run label used for directory names and comparison groups.
    pub fn label(&self) -> String {
        match self.runner {
            Runner::BayRnTune => format!("bayrntune-{}", self.strategy).replace(':', "-"),
            r => r.to_string(),
        }
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_bootstrap_warns() {
        assert!(ExperimentConfig::default().warnings().is_empty());
        let cfg = ExperimentConfig::parse("t_bootstrap = 6400\nt_tune = 9600\nt_scratch = 6400\n").unwrap();
        assert_eq!(cfg.warnings().len(), 1);
    }

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.total_budget(), 800_000);
        assert_eq!(cfg.t_bootstrap, 5 * cfg.t_tune);
    }

    #[test]
    fn full_config_parses() {
        let text = "env = cartpole-dr\nstrategy = best-of-last-m:5 # window\niterations=3\n\
                    t_bootstrap = 16_000\nt_tune = 3200\nseeds = 1, 2,3\ndr_mode = point\n\
                    es.population = 8\nbootstrap_full_range = yes\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.env, EnvId::CartpoleDr);
        assert_eq!(cfg.strategy, StrategyKind::BestOfLastM(5));
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.dr_mode, DrMode::Point);
        assert_eq!(cfg.t_bootstrap, 16_000);
        assert!(cfg.bootstrap_full_range);
        assert_eq!(cfg.label(), "bayrntune-best-of-last-m-5");
    }

    #[test]
    fn errors_are_line_anchored() {
        let err = ExperimentConfig::parse("env = puck-slide-1d\nstrategy = closest\n").unwrap_err();
        match err {
            Error::ConfigLine { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("strategy"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        let err = ExperimentConfig::parse("bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = ExperimentConfig::parse("n_eval = 1\nn_eval = 2\n").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 2, .. }));
        let err = ExperimentConfig::parse("just words\n").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 1, .. }));
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = ExperimentConfig::parse_with_overrides(
            "strategy = best-only\n",
            &["strategy=best-of-last-m:5".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.strategy, StrategyKind::BestOfLastM(5));
        let err = ExperimentConfig::parse_with_overrides("", &["nope=1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn invariants_are_enforced() {
        for bad in [
            "iterations = 0",
            "seeds = ",
            "t_tune = 100",
            "es.population = 15",
            "ground_truth = 2.0, 1.0",
            "ground_truth = 0.75",
            "t_scratch = 10000000",
        ] {
            assert!(ExperimentConfig::parse(bad).is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn ground_truth_override_reaches_spec() {
        let cfg = ExperimentConfig::parse("ground_truth = 1.0, 1.5\nground_truth_noise = 0, 0").unwrap();
        let gt = cfg.ground_truth().unwrap();
        assert_eq!(gt.phi_star.0, vec![1.0, 1.5]);
        assert_eq!(gt.episode_noise, vec![0.0, 0.0]);
    }
}
