use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::energy::{nodal_forces, nodal_weights, record_nodal_gradients, NodalScheme, TractionSpec, WorkMode};
use super::quadrature::{GradientOperator, VolumeRule};
use crate::diffengine::{DiffProgram, LinearOperator, Tape, TangentMap, Var};
use crate::error::{DemError, Result};
use crate::grid::HexMesh;
use crate::materials::MaterialModel;
use crate::models::{DirichletSpec, Network};
use crate::tensor::Tensor;

/// Source of spatial gradients in the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Network input derivatives at nodes, nodal quadrature.
    Ad,
    /// Hex shape-function gradients at Gauss points.
    Sf,
}

impl GradientMode {
    pub fn tag(self) -> &'static str {
        match self {
            GradientMode::Ad => "ad",
            GradientMode::Sf => "sf",
        }
    }
}

impl std::fmt::Display for GradientMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub mode: GradientMode,
    pub material: MaterialModel,
    pub volume_rule: VolumeRule,
    pub nodal_scheme: NodalScheme,
    pub tractions: Vec<TractionSpec>,
    pub dirichlet: DirichletSpec,
}

/// Potential energy of the network displacement field as a program over the
/// network parameters.
#[derive(Clone)]
pub struct DemLoss {
    net: Network,
    x: Tensor,
    mode: GradientMode,
    material: MaterialModel,
    op: Arc<GradientOperator>,
    op_dyn: Arc<dyn LinearOperator>,
    gp_weights: Tensor,
    node_weights: Tensor,
    forces: Tensor,
    warnings: Vec<String>,
}

impl DemLoss {
    /// `net` is the raw backbone; the Dirichlet multiplier is added here.
    pub fn new(mesh: &HexMesh, net: Network, cfg: &LossConfig) -> Result<Self> {
        cfg.material.validate()?;
        if cfg.tractions.is_empty() {
            return Err(DemError::InvalidBc("at least one traction is required".into()));
        }
        let grid = mesh.grid();
        let x = Tensor::from_vec(grid.n_nodes(), 3, grid.coords_flat());
        cfg.dirichlet.validate(&x, grid.lengths())?;
        let net = net.with_dirichlet(cfg.dirichlet, grid.lengths());
        let op = Arc::new(GradientOperator::new(mesh, cfg.volume_rule)?);
        let op_dyn: Arc<dyn LinearOperator> = op.clone();
        let (w, mut warnings) = nodal_weights(grid, cfg.nodal_scheme);
        if cfg.mode == GradientMode::Sf {
            warnings.clear();
        }
        let work_mode = match cfg.mode {
            GradientMode::Sf => WorkMode::Sf,
            GradientMode::Ad => WorkMode::AdTrapezoid,
        };
        Ok(Self {
            net,
            mode: cfg.mode,
            material: cfg.material,
            gp_weights: op.weights_tensor(),
            node_weights: Tensor::from_vec(grid.n_nodes(), 1, w),
            forces: nodal_forces(mesh, &cfg.tractions, work_mode)?,
            op,
            op_dyn,
            x,
            warnings,
        })
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn gradient_operator(&self) -> &GradientOperator {
        &self.op
    }

    pub fn positions(&self) -> &Tensor {
        &self.x
    }

    pub fn forces(&self) -> &Tensor {
        &self.forces
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Constrained network displacements at the nodes.
    pub fn displacement(&self, theta: &[f64]) -> Result<Tensor> {
        self.net.evaluate(theta, &self.x)
    }

    fn sf_energy_on_tape(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let grad = tape.linear(&self.op_dyn, u)?;
        let psi = self.material.energy_density_on_tape(tape, grad)?;
        let w = tape.constant(self.gp_weights.clone());
        tape.dot(psi, w)
    }

    fn work_on_tape(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let f = tape.constant(self.forces.clone());
        tape.dot(u, f)
    }

    /// Shape-function loss of an arbitrary nodal field, bypassing the network.
    pub fn field_loss(&self, u: &Tensor) -> Result<f64> {
        if u.shape() != self.x.shape() {
            return Err(DemError::Contract(format!("field shape {:?}", u.shape())));
        }
        let mut tape = Tape::new();
        let uv = tape.constant(u.clone());
        let e = self.sf_energy_on_tape(&mut tape, uv)?;
        let w = self.work_on_tape(&mut tape, uv)?;
        let l = tape.sub(e, w)?;
        Ok(tape.value(l).item())
    }
}

impl DiffProgram for DemLoss {
    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn build(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let x = tape.constant(self.x.clone());
        let (u, energy) = match self.mode {
            GradientMode::Sf => {
                let (u, _) = self.net.forward_with_tangents(tape, theta, x, &[])?;
                (u, self.sf_energy_on_tape(tape, u)?)
            }
            GradientMode::Ad => {
                let (u, grad) = record_nodal_gradients(tape, &self.net, theta, x)?;
                let psi = self.material.energy_density_on_tape(tape, grad)?;
                let w = tape.constant(self.node_weights.clone());
                (u, tape.dot(psi, w)?)
            }
        };
        let work = self.work_on_tape(tape, u)?;
        tape.sub(energy, work)
    }
}
