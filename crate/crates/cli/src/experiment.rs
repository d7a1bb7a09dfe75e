//! Single training runs, oracle solves and their on-disk artifacts.

use std::path::Path;

use dem_core::assembly::{DemLoss, GradientMode};
use dem_core::graph::build_graph;
use dem_core::grid::{build_grid, build_hex_mesh, HexMesh};
use dem_core::models::{init_params, Network, NetworkKind, NetworkSpec};
use dem_core::reference::{direct_minimize, relative_difference, OracleSolution};
use dem_core::training::train;
use dem_core::Tensor;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::{OracleSummary, RdSummary, RunReport};
use crate::vtk;

/// Chebyshev order for graph backbones when the base config is an MLP.
pub const DEFAULT_GCN_ORDER: usize = 2;

pub struct RunOutcome {
    pub report: RunReport,
    pub mesh: HexMesh,
    pub loss: DemLoss,
    pub theta: Vec<f64>,
    pub u: Tensor,
}

pub fn build_mesh(cfg: &ExperimentConfig) -> Result<HexMesh, CliError> {
    Ok(build_hex_mesh(build_grid(cfg.geometry.dims, cfg.geometry.lengths)?))
}

pub fn build_loss(cfg: &ExperimentConfig, mesh: &HexMesh) -> Result<DemLoss, CliError> {
    let net = match cfg.network.kind {
        NetworkKind::Mlp => Network::mlp(&cfg.network)?,
        NetworkKind::Gcn => {
            let graph = build_graph(mesh.grid(), cfg.graph.radius, cfg.graph.weighting)?;
            for w in graph.warnings() {
                log::warn!("{w}");
            }
            Network::gcn(&cfg.network, &graph)?
        }
    };
    Ok(DemLoss::new(mesh, net, &cfg.loss_config())?)
}

/// Network spec for one backbone of a sweep, derived from the base config.
pub fn backbone_spec(base: &NetworkSpec, kind: NetworkKind, seed: u64) -> NetworkSpec {
    let order = match (kind, base.kind) {
        (NetworkKind::Mlp, _) => 1,
        (NetworkKind::Gcn, NetworkKind::Gcn) => base.cheb_order,
        (NetworkKind::Gcn, NetworkKind::Mlp) => DEFAULT_GCN_ORDER,
    };
    NetworkSpec { kind, layer_widths: base.layer_widths.clone(), cheb_order: order, seed }
}

/// Variant of `base` for one backbone, gradient mode and seed.
pub fn variant(base: &ExperimentConfig, kind: NetworkKind, mode: GradientMode, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.network = backbone_spec(&base.network, kind, seed);
    cfg.gradient_mode = mode;
    cfg
}

pub fn solve_oracle(cfg: &ExperimentConfig, mesh: &HexMesh) -> Result<OracleSolution, CliError> {
    Ok(direct_minimize(mesh, &cfg.material, &cfg.tractions, &cfg.dirichlet, &cfg.oracle.settings)?)
}

fn oracle_summary(u: &Tensor, oracle: &OracleSolution) -> Result<OracleSummary, CliError> {
    let rd = if u.all_finite() {
        let rd = relative_difference(u, &oracle.u_ref)?;
        RdSummary { mean: rd.mean, component_means: rd.component_means.to_vec(), absolute: rd.absolute }
    } else {
        RdSummary { mean: f64::NAN, component_means: vec![f64::NAN; 3], absolute: [false; 3] }
    };
    Ok(OracleSummary {
        energy: oracle.energy,
        residual_norm: oracle.residual_norm,
        iterations: oracle.iterations,
        load_step_energies: oracle.load_steps.iter().map(|s| s.energy).collect(),
        rd,
    })
}

/// Trains one configuration; `oracle`, when given, must come from the same mesh and loads.
pub fn execute(cfg: &ExperimentConfig, oracle: Option<&OracleSolution>) -> Result<RunOutcome, CliError> {
    let mesh = build_mesh(cfg)?;
    let loss = build_loss(cfg, &mesh)?;
    for w in loss.warnings() {
        log::warn!("{w}");
    }
    let theta0 = init_params(&cfg.network)?.theta;
    let (theta, train_report) = train(&loss, &theta0, &cfg.train, cfg.localization_threshold)?;
    let mut report = RunReport::from_train(
        cfg.network.kind.tag(),
        cfg.gradient_mode.tag(),
        cfg.geometry.dims,
        cfg.network.seed,
        theta0.len(),
        &train_report,
    );
    report.warnings = loss.warnings().to_vec();
    if let Some(o) = oracle {
        report.oracle = Some(oracle_summary(&train_report.final_u, o)?);
    }
    Ok(RunOutcome { report, mesh, loss, theta, u: train_report.final_u })
}

/// Writes `report.json`, `metrics.csv` and `field.vtk` into `dir`.
pub fn write_artifacts(dir: &Path, out: &RunOutcome, u_ref: Option<&Tensor>) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)?)?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["update", "loss"])?;
    for (i, l) in out.report.loss_history.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:e}")])?;
    }
    w.flush()?;
    vtk::write_field(&dir.join("field.vtk"), &out.mesh, out.loss.gradient_operator(), &out.u, u_ref)
}

pub fn read_report(path: &Path) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
