//! Run-directory layout, writers and readers.
//!
//! ```text
//! <run dir>/
//!   config.snapshot      config text exactly as given
//!   run.meta             key = value facts about the run (label, seed, dims, ground truth)
//!   history.csv          iteration,parent,phi_<dim>...,reward,consumed_steps,cumulative_steps
//!   curves.csv           cumulative_steps,max_historical_reward
//!   train_curves.csv     iteration,generation,cumulative_steps,mean_return
//!   bo_observations.csv  index,phi_<dim>...,reward
//!   bo_model.csv         parameter,value
//!   ckpt_<i>.bin
//! ```
//!
//! `parent` is `-1` for policies trained from a fresh initialization. Floats
//! are written with the shortest representation that round-trips exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::gp::GpSurrogate;
use crate::orchestrator::{self, RunRow, TrainCurveRow};
use crate::space::ParamVector;

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const META_FILE: &str = "run.meta";
pub const HISTORY_FILE: &str = "history.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const TRAIN_CURVES_FILE: &str = "train_curves.csv";
pub const BO_OBSERVATIONS_FILE: &str = "bo_observations.csv";
pub const BO_MODEL_FILE: &str = "bo_model.csv";

/// Where a run writes its artifacts and the config text to snapshot.
#[derive(Debug, Clone, Copy)]
pub struct RunTarget<'a> {
    pub dir: &'a Path,
    pub config_text: &'a str,
}

/// `<root>/<label>/seed-<seed>`
pub fn run_dir_for(root: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    root.join(cfg.label()).join(format!("seed-{seed}"))
}

pub fn history_header(spec_dims: &[String]) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "parent".to_string()];
    h.extend(spec_dims.iter().map(|n| format!("phi_{n}")));
    h.extend(["reward", "consumed_steps", "cumulative_steps"].map(String::from));
    h
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::RunData(format!("csv buffer: {e}")))
}

#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    dims: Vec<String>,
}

impl RunWriter {
    pub fn create(target: &RunTarget<'_>, cfg: &ExperimentConfig, seed: u64, spec: &EnvSpec) -> Result<Self> {
        fs::create_dir_all(target.dir)?;
        fs::write(target.dir.join(SNAPSHOT_FILE), target.config_text)?;
        let meta = RunMeta {
            label: cfg.label(),
            runner: cfg.runner.to_string(),
            seed,
            env: spec.id.to_string(),
            dims: spec.space.names().map(String::from).collect(),
            ground_truth: spec.ground_truth.phi_star.0.clone(),
            total_budget: cfg.total_budget(),
        };
        fs::write(target.dir.join(META_FILE), meta.render())?;
        Ok(Self {
            dir: target.dir.to_path_buf(),
            dims: spec.space.names().map(String::from).collect(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_history(&self, rows: &[RunRow]) -> Result<()> {
        let body = csv_bytes(
            &history_header(&self.dims),
            rows.iter().map(|r| {
                let mut rec = vec![
                    r.iteration.to_string(),
                    r.parent.map_or("-1".to_string(), |p| p.to_string()),
                ];
                rec.extend(r.phi.0.iter().map(f64::to_string));
                rec.push(r.reward.to_string());
                rec.push(r.consumed.to_string());
                rec.push(r.cumulative.to_string());
                rec
            }),
        )?;
        write_atomic(&self.dir.join(HISTORY_FILE), &body)
    }

    pub fn write_curves(&self, rows: &[RunRow]) -> Result<()> {
        let header = ["cumulative_steps", "max_historical_reward"].map(String::from);
        let body = csv_bytes(
            &header,
            orchestrator::max_historical_curve(rows)
                .iter()
                .map(|p| vec![p.timesteps.to_string(), p.reward.to_string()]),
        )?;
        write_atomic(&self.dir.join(CURVES_FILE), &body)
    }

    pub fn write_train_curves(&self, rows: &[TrainCurveRow]) -> Result<()> {
        let header = ["iteration", "generation", "cumulative_steps", "mean_return"].map(String::from);
        let body = csv_bytes(
            &header,
            rows.iter().map(|r| {
                vec![
                    r.iteration.to_string(),
                    r.generation.to_string(),
                    r.cumulative.to_string(),
                    r.mean_return.to_string(),
                ]
            }),
        )?;
        write_atomic(&self.dir.join(TRAIN_CURVES_FILE), &body)
    }

    pub fn write_bo(&self, gp: &GpSurrogate) -> Result<()> {
        let mut header = vec!["index".to_string()];
        header.extend(self.dims.iter().map(|n| format!("phi_{n}")));
        header.push("reward".into());
        let body = csv_bytes(
            &header,
            gp.observations().iter().enumerate().map(|(k, o)| {
                let mut rec = vec![k.to_string()];
                rec.extend(o.phi.0.iter().map(f64::to_string));
                rec.push(o.r.to_string());
                rec
            }),
        )?;
        write_atomic(&self.dir.join(BO_OBSERVATIONS_FILE), &body)?;

        let h = gp.hyper();
        let (y_mean, y_scale) = gp.target_standardization();
        let mut rows: Vec<Vec<String>> = self
            .dims
            .iter()
            .zip(&h.lengthscales)
            .map(|(n, l)| vec![format!("lengthscale_{n}"), l.to_string()])
            .collect();
        for (k, v) in [
            ("signal_var", h.signal_var),
            ("noise_var", h.noise_var),
            ("jitter", gp.jitter()),
            ("target_mean", y_mean),
            ("target_scale", y_scale),
            ("log_marginal_likelihood", gp.log_marginal_likelihood()),
        ] {
            rows.push(vec![k.to_string(), v.to_string()]);
        }
        let body = csv_bytes(&["parameter", "value"].map(String::from), rows)?;
        write_atomic(&self.dir.join(BO_MODEL_FILE), &body)
    }
}

/// Contents of `run.meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub label: String,
    pub runner: String,
    pub seed: u64,
    pub env: String,
    pub dims: Vec<String>,
    pub ground_truth: Vec<f64>,
    pub total_budget: u64,
}

impl RunMeta {
    pub fn render(&self) -> String {
        let gt: Vec<String> = self.ground_truth.iter().map(f64::to_string).collect();
        format!(
            "label = {}\nrunner = {}\nseed = {}\nenv = {}\ndims = {}\nground_truth = {}\ntotal_budget = {}\n",
            self.label,
            self.runner,
            self.seed,
            self.env,
            self.dims.join(","),
            gt.join(","),
            self.total_budget
        )
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::RunData(format!("{}: {e}", path.display())))?;
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let bad = |what: &str| Error::RunData(format!("{}: bad or missing `{what}`", path.display()));
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(k));
        let list = |s: &str| -> Vec<String> {
            s.split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(String::from)
                .collect()
        };
        Ok(Self {
            label: get("label")?.to_string(),
            runner: get("runner")?.to_string(),
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            env: get("env")?.to_string(),
            dims: list(get("dims")?),
            ground_truth: list(get("ground_truth")?)
                .iter()
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("ground_truth"))?,
            total_budget: get("total_budget")?.parse().map_err(|_| bad("total_budget"))?,
        })
    }
}

/// Reads `history.csv`, returning the dimension names and the rows.
pub fn read_history(dir: &Path) -> Result<(Vec<String>, Vec<RunRow>)> {
    let path = dir.join(HISTORY_FILE);
    let bad = |reason: String| Error::RunData(format!("{}: {reason}", path.display()));
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header.len() < 5 || header[0] != "iteration" || header[1] != "parent" {
        return Err(bad("unexpected header".into()));
    }
    let dims: Vec<String> = header[2..header.len() - 3]
        .iter()
        .map(|h| h.strip_prefix("phi_").map(String::from).ok_or_else(|| bad(format!("column `{h}`"))))
        .collect::<Result<_>>()?;
    if history_header(&dims) != header {
        return Err(bad("unexpected header".into()));
    }
    let d = dims.len();
    let mut rows = vec![];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("row {} is short", line + 1)));
        let num = |k: usize| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|_| bad(format!("row {}: bad number in column {}", line + 1, header[k])))
        };
        let int = |k: usize| -> Result<i64> {
            field(k)?
                .parse()
                .map_err(|_| bad(format!("row {}: bad integer in column {}", line + 1, header[k])))
        };
        let parent = int(1)?;
        rows.push(RunRow {
            iteration: int(0)? as u64,
            parent: (parent >= 0).then_some(parent as u64),
            phi: ParamVector((0..d).map(|k| num(2 + k)).collect::<Result<_>>()?),
            reward: num(2 + d)?,
            consumed: int(3 + d)? as u64,
            cumulative: int(4 + d)? as u64,
        });
    }
    Ok((dims, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trip() {
        let m = RunMeta {
            label: "bayrntune-infinite-chain".into(),
            runner: "bayrntune".into(),
            seed: 7,
            env: "puck-slide-1d".into(),
            dims: vec!["friction".into(), "mass_multiplier".into()],
            ground_truth: vec![0.75, 1.0],
            total_budget: 800_000,
        };
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(META_FILE), m.render()).unwrap();
        assert_eq!(RunMeta::read(dir.path()).unwrap(), m);
    }

    #[test]
    fn history_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let w = RunWriter {
            dir: dir.path().to_path_buf(),
            dims: vec!["a".into(), "b".into()],
        };
        let rows = vec![
            RunRow {
                iteration: 0,
                parent: None,
                phi: ParamVector(vec![0.1, 1.0 / 3.0]),
                reward: -0.1 + 0.2,
                consumed: 100,
                cumulative: 100,
            },
            RunRow {
                iteration: 1,
                parent: Some(0),
                phi: ParamVector(vec![f64::MIN_POSITIVE, 2.0]),
                reward: 1e-300,
                consumed: 50,
                cumulative: 150,
            },
        ];
        w.write_history(&rows).unwrap();
        let (dims, back) = read_history(dir.path()).unwrap();
        assert_eq!(dims, vec!["a", "b"]);
        assert_eq!(back, rows);
        let text = fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
        assert!(text.starts_with("iteration,parent,phi_a,phi_b,reward,consumed_steps,cumulative_steps\n"));
        assert!(text.contains("\n0,-1,"));
    }

    #[test]
    fn missing_history_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_history(dir.path()).is_err());
        assert!(RunMeta::read(dir.path()).is_err());
    }
}
