//! Subcommand implementations. Each returns the rows or report it wrote so
//! callers and tests can inspect results without rereading files.

use std::path::{Path, PathBuf};

use dem_core::assembly::{demo_1d, DemoScheme, GradientMode};
use dem_core::models::NetworkKind;
use dem_core::reference::OracleSolution;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::{build_mesh, execute, solve_oracle, variant, write_artifacts};
use crate::report::RunReport;

pub const THREADS_ENV: &str = "DEM_SOLVE_THREADS";

/// Worker pool sized by `DEM_SOLVE_THREADS`, defaulting to the core count.
pub fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got \"{v}\"")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    let mesh = build_mesh(cfg)?;
    let oracle = if cfg.oracle.enabled { Some(solve_oracle(cfg, &mesh)?) } else { None };
    let out = execute(cfg, oracle.as_ref())?;
    write_artifacts(out_dir, &out, oracle.as_ref().map(|o| &o.u_ref))?;
    Ok(out.report)
}

/// Which backbones and gradient modes a multi-run command covers.
#[derive(Debug, Clone)]
pub struct Selection {
    pub methods: Vec<NetworkKind>,
    pub modes: Vec<GradientMode>,
}

impl Default for Selection {
    fn default() -> Self {
        Self { methods: vec![NetworkKind::Gcn, NetworkKind::Mlp], modes: vec![GradientMode::Ad, GradientMode::Sf] }
    }
}

/// One row of `table.csv` or `refine.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub method: String,
    pub mode: String,
    pub load: f64,
    pub dims: String,
    pub seed: u64,
    #[serde(rename = "mean_RD")]
    pub mean_rd: Option<f64>,
    pub final_loss: f64,
    pub train_time_s: f64,
    pub diverged: bool,
    pub localization_flag: bool,
    pub localization_metric: f64,
    pub status: String,
}

struct Job {
    cfg: ExperimentConfig,
    dir: PathBuf,
    oracle: Option<usize>,
}

fn study_row(job: &Job, result: Result<RunReport, CliError>) -> StudyRow {
    let cfg = &job.cfg;
    let d = cfg.geometry.dims;
    let mut row = StudyRow {
        method: cfg.network.kind.tag().into(),
        mode: cfg.gradient_mode.tag().into(),
        load: cfg.tractions[0].traction[1],
        dims: format!("{}x{}x{}", d[0], d[1], d[2]),
        seed: cfg.network.seed,
        mean_rd: None,
        final_loss: f64::NAN,
        train_time_s: f64::NAN,
        diverged: false,
        localization_flag: false,
        localization_metric: f64::NAN,
        status: "ok".into(),
    };
    match result {
        Ok(r) => {
            row.mean_rd = r.mean_rd();
            row.final_loss = r.final_loss;
            row.train_time_s = r.wall_time;
            row.diverged = r.diverged;
            row.localization_flag = r.localization_flag;
            row.localization_metric = r.localization_metric;
        }
        Err(e) => {
            log::error!("{}: {e}", job.dir.display());
            row.status = format!("error: {e}");
        }
    }
    row
}

/// Solves the distinct oracle problems, then trains every job in parallel,
/// each into its own directory, and returns rows in job order.
fn run_jobs(
    jobs: Vec<Job>,
    oracles: Vec<ExperimentConfig>,
    pool: &rayon::ThreadPool,
) -> Vec<StudyRow> {
    let solved: Vec<Result<OracleSolution, String>> = pool.install(|| {
        oracles
            .par_iter()
            .map(|c| build_mesh(c).and_then(|m| solve_oracle(c, &m)).map_err(|e| e.to_string()))
            .collect()
    });
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let result = (|| {
                    let oracle = match job.oracle.map(|i| &solved[i]) {
                        Some(Ok(o)) => Some(o),
                        Some(Err(e)) => return Err(CliError::Io(format!("oracle: {e}"))),
                        None => None,
                    };
                    let out = execute(&job.cfg, oracle)?;
                    write_artifacts(&job.dir, &out, oracle.map(|o| &o.u_ref))?;
                    Ok(out.report)
                })();
                study_row(job, result)
            })
            .collect()
    })
}

fn write_rows(path: &Path, rows: &[StudyRow], columns: &[&str]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for r in rows {
        let value = serde_json::to_value(r)?;
        let rec: Vec<String> = columns
            .iter()
            .map(|c| match &value[*c] {
                serde_json::Value::Null if *c == "mean_RD" => String::new(),
                serde_json::Value::Null => "NaN".into(),
                serde_json::Value::String(s) => s.clone(),
                v => v.to_string(),
            })
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const TABLE_COLUMNS: [&str; 11] = [
    "method",
    "mode",
    "load",
    "mean_RD",
    "final_loss",
    "train_time_s",
    "diverged",
    "localization_flag",
    "localization_metric",
    "seed",
    "status",
];

pub const REFINE_COLUMNS: [&str; 11] = [
    "method",
    "mode",
    "dims",
    "seed",
    "mean_RD",
    "final_loss",
    "train_time_s",
    "diverged",
    "localization_flag",
    "localization_metric",
    "status",
];

fn tag_load(load: f64) -> String {
    format!("{load}").replace('-', "m").replace('.', "p")
}

pub fn cmd_sweep(
    base: &ExperimentConfig,
    loads: &[f64],
    sel: &Selection,
    out_dir: &Path,
    pool: &rayon::ThreadPool,
) -> Result<Vec<StudyRow>, CliError> {
    if loads.is_empty() {
        return Err(CliError::Usage("--loads must list at least one load".into()));
    }
    if let Some(bad) = loads.iter().find(|l| !l.is_finite()) {
        return Err(CliError::Usage(format!("load {bad} is not finite")));
    }
    let mut jobs = Vec::new();
    let mut oracles = Vec::new();
    for &load in loads {
        let at_load = base.clone().with_load(load);
        let oracle = if base.oracle.enabled {
            oracles.push(at_load.clone());
            Some(oracles.len() - 1)
        } else {
            None
        };
        for &kind in &sel.methods {
            for &mode in &sel.modes {
                for seed in base.run_seeds() {
                    let cfg = variant(&at_load, kind, mode, seed);
                    let dir = out_dir.join(format!("{kind}_{mode}_t{}_s{seed}", tag_load(load)));
                    jobs.push(Job { cfg, dir, oracle });
                }
            }
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let rows = run_jobs(jobs, oracles, pool);
    write_rows(&out_dir.join("table.csv"), &rows, &TABLE_COLUMNS)?;
    Ok(rows)
}

pub fn cmd_refine(
    base: &ExperimentConfig,
    dims: &[[usize; 3]],
    sel: &Selection,
    out_dir: &Path,
    pool: &rayon::ThreadPool,
) -> Result<Vec<StudyRow>, CliError> {
    if dims.is_empty() {
        return Err(CliError::Usage("--dims must list at least one grid".into()));
    }
    let mut jobs = Vec::new();
    let mut oracles = Vec::new();
    for &d in dims {
        let mut at_dims = base.clone();
        at_dims.geometry.dims = d;
        at_dims.validate()?;
        let oracle = if base.oracle.enabled {
            oracles.push(at_dims.clone());
            Some(oracles.len() - 1)
        } else {
            None
        };
        for &kind in &sel.methods {
            for &mode in &sel.modes {
                for seed in base.run_seeds() {
                    let cfg = variant(&at_dims, kind, mode, seed);
                    let dir = out_dir.join(format!("{kind}_{mode}_{}x{}x{}_s{seed}", d[0], d[1], d[2]));
                    jobs.push(Job { cfg, dir, oracle });
                }
            }
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let rows = run_jobs(jobs, oracles, pool);
    write_rows(&out_dir.join("refine.csv"), &rows, &REFINE_COLUMNS)?;
    Ok(rows)
}

/// Rows `(du, psi_ad, psi_sf)` on `steps + 1` evenly spaced points of `[0, du_max]`.
pub fn demo1d_rows(du_max: f64, steps: usize) -> Result<Vec<[f64; 3]>, CliError> {
    if !(du_max > 0.0 && du_max.is_finite()) || steps == 0 {
        return Err(CliError::Usage(format!("need du_max > 0 and steps > 0, got {du_max} and {steps}")));
    }
    Ok((0..=steps)
        .map(|i| {
            let du = du_max * i as f64 / steps as f64;
            [du, demo_1d(du, DemoScheme::AdTrapezoid), demo_1d(du, DemoScheme::SfGauss1)]
        })
        .collect())
}

pub fn cmd_demo1d(du_max: f64, steps: usize, out_dir: &Path) -> Result<Vec<[f64; 3]>, CliError> {
    let rows = demo1d_rows(du_max, steps)?;
    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("demo1d.csv"))?;
    w.write_record(["du", "psi_ad", "psi_sf"])?;
    for r in &rows {
        w.write_record(r.map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(rows)
}

/// Parses `"37,10,10;44,13,13"` (triples separated by `;` or whitespace).
pub fn parse_dims(text: &str) -> Result<Vec<[usize; 3]>, CliError> {
    text.split(|c: char| c == ';' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|t| {
            let v: Vec<usize> = t
                .split([',', 'x'])
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Usage(format!("bad dims \"{t}\": {e}")))?;
            <[usize; 3]>::try_from(v).map_err(|_| CliError::Usage(format!("dims \"{t}\" must have three entries")))
        })
        .collect()
}

pub fn parse_loads(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| CliError::Usage(format!("bad load \"{s}\": {e}"))))
        .collect()
}
