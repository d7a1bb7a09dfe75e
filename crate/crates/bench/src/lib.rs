//! Shared fixtures for the benchmarks.

use dem_core::assembly::{DemLoss, GradientMode, LossConfig, NodalScheme, TractionSpec, VolumeRule};
use dem_core::graph::{build_graph, EdgeWeighting, Radius};
use dem_core::grid::{build_grid, build_hex_mesh, Face, HexMesh};
use dem_core::materials::MaterialModel;
use dem_core::models::{init_params, DirichletSpec, Network, NetworkKind, NetworkSpec};

pub const BEAM: [f64; 3] = [4.0, 1.0, 1.0];

pub fn beam(dims: [usize; 3]) -> HexMesh {
    build_hex_mesh(build_grid(dims, BEAM).expect("valid grid"))
}

pub fn neo_hookean() -> MaterialModel {
    MaterialModel::NeoHookean { c10: 192.31, d1: 0.0024 }
}

pub fn tip_load(t: f64) -> Vec<TractionSpec> {
    vec![TractionSpec { face: Face::X1, traction: [0.0, t, 0.0] }]
}

/// Loss and initial parameters for one backbone on `mesh`.
pub fn loss_fixture(mesh: &HexMesh, kind: NetworkKind, order: usize, mode: GradientMode) -> (DemLoss, Vec<f64>) {
    let spec = NetworkSpec::new(kind).with_order(order);
    let net = match kind {
        NetworkKind::Mlp => Network::mlp(&spec),
        NetworkKind::Gcn => {
            let g = build_graph(mesh.grid(), Radius::Auto, EdgeWeighting::Binary).expect("graph");
            Network::gcn(&spec, &g)
        }
    }
    .expect("network");
    let cfg = LossConfig {
        mode,
        material: neo_hookean(),
        volume_rule: VolumeRule::Gauss2x2x2,
        nodal_scheme: NodalScheme::Trapezoid,
        tractions: tip_load(-15.0),
        dirichlet: DirichletSpec::default(),
    };
    let loss = DemLoss::new(mesh, net, &cfg).expect("loss");
    (loss, init_params(&spec).expect("params").theta)
}
