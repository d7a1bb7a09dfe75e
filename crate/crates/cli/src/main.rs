use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dem_cli::commands::{self, Selection};
use dem_cli::{CliError, ExperimentConfig};
use dem_core::assembly::GradientMode;
use dem_core::models::NetworkKind;

#[derive(Parser)]
#[command(name = "dem-solve", version, about = "Deep energy method experiments on hexahedral grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON, schema v1).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Network seed, overriding `network.seed` and `seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Filter {
    /// Comma-separated backbones (mlp, gcn).
    #[arg(long, value_delimiter = ',', default_values = ["gcn", "mlp"])]
    methods: Vec<String>,
    /// Comma-separated gradient modes (ad, sf).
    #[arg(long, value_delimiter = ',', default_values = ["ad", "sf"])]
    modes: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Loads x {ad, sf} x {mlp, gcn}; writes table.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated y tractions, e.g. "-2.5,-5,-25".
        #[arg(long, allow_hyphen_values = true)]
        loads: String,
        #[command(flatten)]
        filter: Filter,
    },
    /// One-dimensional energy comparison; writes demo1d.csv.
    Demo1d {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        du_max: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Repeats the configured study on each grid; writes refine.csv.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Grids as "37,10,10;44,13,13".
        #[arg(long)]
        dims: String,
        #[command(flatten)]
        filter: Filter,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.network.seed = s;
        cfg.seeds = vec![s];
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn selection(f: &Filter) -> Result<Selection, CliError> {
    let methods = f
        .methods
        .iter()
        .map(|m| match m.as_str() {
            "mlp" => Ok(NetworkKind::Mlp),
            "gcn" => Ok(NetworkKind::Gcn),
            _ => Err(CliError::Usage(format!("unknown method \"{m}\""))),
        })
        .collect::<Result<_, _>>()?;
    let modes = f
        .modes
        .iter()
        .map(|m| match m.as_str() {
            "ad" => Ok(GradientMode::Ad),
            "sf" => Ok(GradientMode::Sf),
            _ => Err(CliError::Usage(format!("unknown mode \"{m}\""))),
        })
        .collect::<Result<_, _>>()?;
    Ok(Selection { methods, modes })
}

fn print_rows(rows: &[commands::StudyRow]) {
    for r in rows {
        println!(
            "{:>4} {:>2} load={} dims={} seed={} final_loss={:.6e} diverged={} {}",
            r.method, r.mode, r.load, r.dims, r.seed, r.final_loss, r.diverged, r.status
        );
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common } => {
            let (cfg, out) = load(&common)?;
            let report = commands::cmd_run(&cfg, &out)?;
            println!("{}", report.summary());
        }
        Command::Sweep { common, loads, filter } => {
            let (cfg, out) = load(&common)?;
            let loads = commands::parse_loads(&loads)?;
            let sel = selection(&filter)?;
            let pool = commands::worker_pool()?;
            print_rows(&commands::cmd_sweep(&cfg, &loads, &sel, &out, &pool)?);
        }
        Command::Demo1d { config, out, du_max, steps } => {
            if let Some(path) = config {
                ExperimentConfig::load(&path)?;
            }
            let rows = commands::cmd_demo1d(du_max, steps, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.join("demo1d.csv").display());
        }
        Command::Refine { common, dims, filter } => {
            let (cfg, out) = load(&common)?;
            let dims = commands::parse_dims(&dims)?;
            let sel = selection(&filter)?;
            let pool = commands::worker_pool()?;
            print_rows(&commands::cmd_refine(&cfg, &dims, &sel, &out, &pool)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dem-solve: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
