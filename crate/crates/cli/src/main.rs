use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayrntune::config::{ExperimentConfig, Runner};
use bayrntune::eval::Aggregate;
use bayrntune::orchestrator::{self, RunOptions, RunRow};
use bayrntune::report;
use bayrntune::rundir::{self, RunTarget};
use bayrntune::Error;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Bayesian-optimized domain randomization with checkpoint fine-tuning.
#[derive(Parser)]
#[command(name = "bayrntune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment for one or more seeds and runners.
    Run(RunArgs),
    /// Compare final max-historical reward across groups of runs.
    Compare(CompareArgs),
    /// Emit the (aggregated) max-historical reward curve as CSV.
    Curve(CurveArgs),
    /// Emit reward over DR parameters for one run, plus the ground truth.
    Scatter(ScatterArgs),
    /// Parse and check a config exactly as `run` would.
    ValidateConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated seeds; replaces the config's `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated runners; replaces the config's `runner`.
    #[arg(long, value_delimiter = ',')]
    runner: Option<Vec<String>>,
    /// Output root; defaults to the config's `output_dir`, then $BAYRNTUNE_OUT, then ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing run directories.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directories, or roots containing them; grouped by run label.
    dirs: Vec<PathBuf>,
    /// Explicit group `name=dir[,dir...]`; repeatable, replaces label grouping.
    #[arg(long = "group", value_name = "NAME=DIRS")]
    groups: Vec<String>,
    #[arg(long, default_value = "median")]
    aggregate: String,
    /// Also write the table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    /// Run directories, or roots containing them.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    #[arg(long, default_value = "median")]
    aggregate: String,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScatterArgs {
    run_dir: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_)
            | Error::ConfigLine { .. }
            | Error::InvalidSpace(_)
            | Error::OutsideSpace { .. }
            | Error::BudgetTooSmall { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn runtime(message: String) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message,
    }
}

fn load_config(args: &ConfigArgs) -> Result<(ExperimentConfig, String), Failure> {
    let text = fs::read_to_string(&args.config).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", args.config.display()),
    })?;
    let cfg = ExperimentConfig::parse_with_overrides(&text, &args.overrides).map_err(|e| {
        let f = Failure::from(e);
        Failure {
            message: format!("{}: {}", args.config.display(), f.message),
            ..f
        }
    })?;
    for w in cfg.warnings() {
        eprintln!("warning: {}: {w}", args.config.display());
    }
    Ok((cfg, text))
}

fn validate_config(args: &ConfigArgs) -> Result<(), Failure> {
    let (cfg, _) = load_config(args)?;
    println!(
        "{}: ok ({} {}, {} iterations, {} total steps, seeds {:?})",
        args.config.display(),
        cfg.env,
        cfg.label(),
        cfg.iterations,
        cfg.total_budget(),
        cfg.seeds
    );
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let (mut cfg, text) = load_config(&args.config)?;
    if let Some(seeds) = &args.seeds {
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("--seeds is empty".into()).into());
        }
        cfg.seeds = seeds.clone();
    }
    let runners = match &args.runner {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Runner>())
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![cfg.runner],
    };
    let root = args.out.clone().unwrap_or_else(|| cfg.resolved_output_dir());

    let mut jobs = vec![];
    for &runner in &runners {
        let mut c = cfg.clone();
        c.runner = runner;
        for &seed in &cfg.seeds {
            let dir = rundir::run_dir_for(&root, &c, seed);
            if dir.exists() {
                if !args.force {
                    return Err(runtime(format!(
                        "{} already exists (use --force to replace it)",
                        dir.display()
                    )));
                }
                fs::remove_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            }
            jobs.push((c.clone(), seed, dir));
        }
    }

    let results: Vec<Result<PathBuf, Failure>> = jobs
        .par_iter()
        .map(|(c, seed, dir)| {
            let tag = format!("[{} seed={seed}]", c.label());
            let progress = |row: &RunRow| {
                println!(
                    "{tag} iteration {:>3}  reward {:>12.4}  steps {:>10}",
                    row.iteration, row.reward, row.cumulative
                );
            };
            let opts = RunOptions {
                target: Some(RunTarget {
                    dir,
                    config_text: &text,
                }),
                progress: Some(&progress),
            };
            match orchestrator::run(c, c.runner, *seed, &opts) {
                Ok(rec) => {
                    println!(
                        "{tag} done: best reward {:.4} at iteration {} -> {}",
                        rec.best_reward,
                        rec.best_iteration,
                        dir.display()
                    );
                    Ok(dir.clone())
                }
                Err(e) => {
                    let f = Failure::from(e);
                    eprintln!("{tag} failed: {}", f.message);
                    Err(f)
                }
            }
        })
        .collect();
    let failures: Vec<Failure> = results.into_iter().filter_map(Result::err).collect();
    match failures.into_iter().next() {
        Some(f) => Err(Failure {
            message: format!("one or more runs failed; first error: {}", f.message),
            ..f
        }),
        None => Ok(()),
    }
}

/// Expands roots into the run directories beneath them.
fn expand_run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    fn walk(p: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        if p.join(rundir::META_FILE).is_file() {
            out.push(p.to_path_buf());
            return Ok(());
        }
        let mut subdirs: Vec<PathBuf> = fs::read_dir(p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for s in subdirs {
            walk(&s, out)?;
        }
        Ok(())
    }
    let mut out = vec![];
    for p in paths {
        let before = out.len();
        walk(p, &mut out).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        if out.len() == before {
            return Err(runtime(format!("{}: no run directories found", p.display())));
        }
    }
    Ok(out)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn compare(args: &CompareArgs) -> Result<(), Failure> {
    let mode: Aggregate = args.aggregate.parse()?;
    let groups = if args.groups.is_empty() {
        report::group_by_label(&expand_run_dirs(&args.dirs)?)?
    } else {
        if !args.dirs.is_empty() {
            return Err(Error::InvalidConfig("pass either run directories or --group, not both".into()).into());
        }
        args.groups
            .iter()
            .map(|g| {
                let (name, dirs) = g
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidConfig(format!("--group `{g}` is not NAME=DIRS")))?;
                let dirs: Vec<PathBuf> = dirs.split(',').map(PathBuf::from).collect();
                Ok((name.to_string(), expand_run_dirs(&dirs)?))
            })
            .collect::<Result<Vec<_>, Failure>>()?
    };
    let rows = report::compare(&groups, mode)?;
    print!("{}", report::compare_table(&rows, mode));
    if let Some(p) = &args.csv {
        write_or_print(Some(p), &report::compare_csv(&rows))?;
    }
    Ok(())
}

fn curve(args: &CurveArgs) -> Result<(), Failure> {
    let mode: Aggregate = args.aggregate.parse()?;
    let curve = report::aggregate_curve(&expand_run_dirs(&args.dirs)?, mode)?;
    write_or_print(args.out.as_deref(), &report::curve_csv(&curve))
}

fn scatter(args: &ScatterArgs) -> Result<(), Failure> {
    let s = report::scatter(&args.run_dir)?;
    write_or_print(args.out.as_deref(), &s.to_csv())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Curve(a) => curve(a),
        Command::Scatter(a) => scatter(a),
        Command::ValidateConfig(a) => validate_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
