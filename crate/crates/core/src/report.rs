//! Comparison tables and plot-ready CSV built from finished run directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{self, Aggregate, CurvePoint};
use crate::orchestrator::{self, RunRow};
use crate::rundir::{self, RunMeta};

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub dims: Vec<String>,
    pub rows: Vec<RunRow>,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = RunMeta::read(dir)?;
        let (dims, rows) = rundir::read_history(dir)?;
        if dims != meta.dims {
            return Err(Error::RunData(format!(
                "{}: history columns {dims:?} disagree with run.meta dims {:?}",
                dir.display(),
                meta.dims
            )));
        }
        if rows.is_empty() {
            return Err(Error::RunData(format!("{}: history is empty", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            dims,
            rows,
        })
    }

    pub fn curve(&self) -> Vec<CurvePoint> {
        orchestrator::max_historical_curve(&self.rows)
    }
}

/// Groups run directories by their recorded label, in first-seen order.
pub fn group_by_label(dirs: &[PathBuf]) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut groups: Vec<(String, Vec<PathBuf>)> = vec![];
    for d in dirs {
        let label = RunMeta::read(d)?.label;
        match groups.iter_mut().find(|g| g.0 == label) {
            Some(g) => g.1.push(d.clone()),
            None => groups.push((label, vec![d.clone()])),
        }
    }
    Ok(groups)
}

pub fn aggregate_curve(dirs: &[PathBuf], mode: Aggregate) -> Result<Vec<CurvePoint>> {
    let curves = dirs
        .iter()
        .map(|d| LoadedRun::load(d).map(|r| r.curve()))
        .collect::<Result<Vec<_>>>()?;
    eval::aggregate_seeds(&curves, mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub runs: usize,
    pub final_timesteps: u64,
    pub final_reward: f64,
    /// `final_reward` over the weakest group's; NaN when that is not positive.
    pub ratio: f64,
}

pub fn compare(groups: &[(String, Vec<PathBuf>)], mode: Aggregate) -> Result<Vec<CompareRow>> {
    if groups.len() < 2 {
        return Err(Error::RunData(format!(
            "compare needs at least two groups, got {}",
            groups.len()
        )));
    }
    let mut rows = vec![];
    for (label, dirs) in groups {
        let curve = aggregate_curve(dirs, mode)?;
        let last = curve.last().expect("aggregate of non-empty curves");
        rows.push(CompareRow {
            label: label.clone(),
            runs: dirs.len(),
            final_timesteps: last.timesteps,
            final_reward: last.reward,
            ratio: f64::NAN,
        });
    }
    let weakest = rows.iter().map(|r| r.final_reward).fold(f64::INFINITY, f64::min);
    for r in &mut rows {
        if weakest > 0.0 {
            r.ratio = r.final_reward / weakest;
        }
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("label,runs,final_timesteps,final_reward,ratio_vs_weakest\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.label, r.runs, r.final_timesteps, r.final_reward, r.ratio
        );
    }
    s
}

pub fn compare_table(rows: &[CompareRow], mode: Aggregate) -> String {
    let w = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut s = format!(
        "{:<w$}  {:>4}  {:>12}  {:>14}  {:>8}\n",
        "label", "runs", "timesteps", format!("{mode} reward"), "ratio"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<w$}  {:>4}  {:>12}  {:>14.4}  {:>8.3}",
            r.label, r.runs, r.final_timesteps, r.final_reward, r.ratio
        );
    }
    s
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("cumulative_steps,max_historical_reward\n");
    for p in curve {
        let _ = writeln!(s, "{},{}", p.timesteps, p.reward);
    }
    s
}

pub fn scatter_header(dims: &[String]) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "ground_truth".to_string()];
    h.extend(dims.iter().map(|d| format!("phi_{d}")));
    h.push("reward".into());
    h
}

/// Reward over DR parameters, one row per iteration plus a final row
/// (`ground_truth = 1`, no iteration or reward) holding φ*.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Scatter {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn scatter(dir: &Path) -> Result<Scatter> {
    let run = LoadedRun::load(dir)?;
    if run.meta.ground_truth.len() != run.dims.len() {
        return Err(Error::RunData(format!(
            "{}: ground truth has {} components for {} dims",
            dir.display(),
            run.meta.ground_truth.len(),
            run.dims.len()
        )));
    }
    let mut rows: Vec<Vec<String>> = run
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.iteration.to_string(), "0".to_string()];
            v.extend(r.phi.0.iter().map(f64::to_string));
            v.push(r.reward.to_string());
            v
        })
        .collect();
    let mut gt = vec![String::new(), "1".to_string()];
    gt.extend(run.meta.ground_truth.iter().map(f64::to_string));
    gt.push(String::new());
    rows.push(gt);
    Ok(Scatter {
        header: scatter_header(&run.dims),
        rows,
    })
}
