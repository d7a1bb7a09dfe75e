use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::quadrature::{quad_shape, GradientOperator, QuadratureRule, VolumeRule, QUAD_CORNERS};
use crate::diffengine::{uniform_direction, Tape, TangentMap};
use crate::error::{DemError, Result};
use crate::grid::{Face, HexMesh, NodeGrid};
use crate::materials::MaterialModel;
use crate::tensor::{pairwise_sum, Tensor};

/// Composite rule for integrating nodal values over the structured grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodalScheme {
    #[default]
    Trapezoid,
    Simpson,
}

/// One-dimensional composite weights for `n` nodes at spacing `h`. Simpson
/// requires an odd node count; otherwise trapezoid is used and `false` is
/// returned in the second slot.
pub fn axis_weights(n: usize, h: f64, scheme: NodalScheme) -> (Vec<f64>, bool) {
    if n == 1 {
        return (vec![1.0], true);
    }
    if scheme == NodalScheme::Simpson && n % 2 == 1 {
        let w = (0..n)
            .map(|i| {
                let c = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        return (w, true);
    }
    let w = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
    (w, scheme == NodalScheme::Trapezoid)
}

/// Tensor-product nodal weights over the grid plus fallback warnings.
pub fn nodal_weights(grid: &NodeGrid, scheme: NodalScheme) -> (Vec<f64>, Vec<String>) {
    let dims = grid.dims();
    let h = grid.spacing();
    let mut warnings = Vec::new();
    let per_axis: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            let (w, honoured) = axis_weights(dims[a], h[a], scheme);
            if !honoured {
                warnings.push(format!(
                    "simpson needs an odd node count; axis {a} has {} nodes, using trapezoid",
                    dims[a]
                ));
            }
            w
        })
        .collect();
    let w = (0..grid.n_nodes())
        .map(|n| {
            let [i, j, k] = grid.node_ijk(n);
            per_axis[0][i] * per_axis[1][j] * per_axis[2][k]
        })
        .collect();
    (w, warnings)
}

/// Integral of nodal values with the composite scheme.
pub fn integrate_nodal(values: &[f64], grid: &NodeGrid, scheme: NodalScheme) -> Result<(f64, Vec<String>)> {
    if values.len() != grid.n_nodes() {
        return Err(DemError::Contract(format!("{} values for {} nodes", values.len(), grid.n_nodes())));
    }
    let (w, warnings) = nodal_weights(grid, scheme);
    let terms: Vec<f64> = values.iter().zip(&w).map(|(v, w)| v * w).collect();
    Ok((pairwise_sum(&terms), warnings))
}

fn check_field(u: &Tensor, n: usize) -> Result<()> {
    if u.shape() != (n, 3) {
        return Err(DemError::Contract(format!("nodal field has shape {:?}, expected ({n}, 3)", u.shape())));
    }
    if !u.all_finite() {
        return Err(DemError::NonFiniteLoss { op: "field" });
    }
    Ok(())
}

/// `sum_e sum_g w detJ Psi(grad u)` on a prebuilt gradient operator.
pub fn sf_energy(u: &Tensor, op: &GradientOperator, material: &MaterialModel) -> Result<f64> {
    check_field(u, op.n_nodes())?;
    let terms: Vec<f64> = (0..op.n_points())
        .map(|g| Ok(op.weights()[g] * material.energy_density(&op.gradient_at(u.data(), g))?))
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&terms))
}

pub fn internal_energy_sf(u: &Tensor, mesh: &HexMesh, material: &MaterialModel, rule: VolumeRule) -> Result<f64> {
    sf_energy(u, &GradientOperator::new(mesh, rule)?, material)
}

/// Gradient of [`sf_energy`] with respect to the flat nodal field.
pub fn sf_internal_force(u: &Tensor, op: &GradientOperator, material: &MaterialModel) -> Result<Vec<f64>> {
    check_field(u, op.n_nodes())?;
    let mut out = vec![0.0; 3 * op.n_nodes()];
    for g in 0..op.n_points() {
        let s = op.weights()[g] * material.stress(&op.gradient_at(u.data(), g))?;
        op.scatter_transpose(g, &s, &mut out);
    }
    Ok(out)
}

/// Action of the SF energy Hessian at `u` on the direction `du`.
pub fn sf_tangent_apply(u: &Tensor, du: &[f64], op: &GradientOperator, material: &MaterialModel) -> Result<Vec<f64>> {
    let mut out = vec![0.0; 3 * op.n_nodes()];
    for g in 0..op.n_points() {
        let h = op.gradient_at(du, g);
        let s = op.weights()[g] * material.stress_increment(&op.gradient_at(u.data(), g), &h)?;
        op.scatter_transpose(g, &s, &mut out);
    }
    Ok(out)
}

/// Per-node `du_i / dX_j` from three input tangents, `n x 9` row-major.
pub fn nodal_gradients_ad(net: &dyn TangentMap, theta: &[f64], x: &Tensor) -> Result<Tensor> {
    if theta.len() != net.n_params() {
        return Err(DemError::Contract("parameter length mismatch".into()));
    }
    let mut tape = Tape::new();
    let t = tape.constant(Tensor::from_vec(1, theta.len(), theta.to_vec()));
    let xv = tape.constant(x.clone());
    let grad = record_nodal_gradients(&mut tape, net, t, xv)?.1;
    Ok(tape.value(grad).clone())
}

/// Records `u` and its `n x 9` gradient on the tape.
pub(crate) fn record_nodal_gradients(
    tape: &mut Tape,
    net: &dyn TangentMap,
    theta: crate::diffengine::Var,
    x: crate::diffengine::Var,
) -> Result<(crate::diffengine::Var, crate::diffengine::Var)> {
    let n = tape.value(x).rows();
    let dirs: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .into_iter()
        .map(|d| tape.constant(uniform_direction(n, d)))
        .collect();
    let (u, tangents) = net.forward_with_tangents(tape, theta, x, &dirs)?;
    // concat gives column j * 3 + i = du_i / dX_j; reorder to i * 3 + j.
    let cat = tape.concat_cols(&tangents)?;
    let grad = tape.select_cols(cat, &crate::materials::TRANSPOSE_3X3)?;
    Ok((u, grad))
}

/// Composite nodal quadrature of `Psi(grad u)` over the grid.
pub fn internal_energy_ad(
    grad_nodes: &Tensor,
    material: &MaterialModel,
    grid: &NodeGrid,
    scheme: NodalScheme,
) -> Result<(f64, Vec<String>)> {
    if grad_nodes.shape() != (grid.n_nodes(), 9) {
        return Err(DemError::Contract(format!("gradient field has shape {:?}", grad_nodes.shape())));
    }
    let psi: Vec<f64> = (0..grid.n_nodes())
        .map(|n| material.energy_density(&Matrix3::from_row_slice(grad_nodes.row(n))))
        .collect::<Result<_>>()?;
    integrate_nodal(&psi, grid, scheme)
}

/// Constant traction on a tagged face of the undeformed body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TractionSpec {
    pub face: Face,
    pub traction: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkMode {
    /// 2x2 Gauss over facets with bilinear shape functions.
    Sf,
    /// Trapezoid rule over the face's node grid.
    AdTrapezoid,
}

/// Consistent nodal forces `n x 3` so that work is `sum f . u`.
pub fn nodal_forces(mesh: &HexMesh, tractions: &[TractionSpec], mode: WorkMode) -> Result<Tensor> {
    let n = mesh.n_nodes();
    let mut f = Tensor::zeros(n, 3);
    for tr in tractions {
        let facets: Vec<usize> = mesh.facets_on(tr.face).collect();
        if facets.is_empty() {
            return Err(DemError::InvalidBc(format!("no facets carry tag {}", tr.face)));
        }
        let mut nodal = vec![0.0; n];
        match mode {
            WorkMode::Sf => {
                let q = QuadratureRule::facet_2x2();
                for id in facets {
                    let nodes = mesh.facets()[id].nodes;
                    let x: Vec<Vector3<f64>> = nodes.iter().map(|&a| mesh.grid().coords()[a]).collect();
                    for (p, w) in q.points.iter().zip(&q.weights) {
                        let (s, t) = (p[0], p[1]);
                        let mut xs = Vector3::zeros();
                        let mut xt = Vector3::zeros();
                        for (a, c) in QUAD_CORNERS.iter().enumerate() {
                            xs += 0.25 * c[0] * (1.0 + c[1] * t) * x[a];
                            xt += 0.25 * c[1] * (1.0 + c[0] * s) * x[a];
                        }
                        let da = xs.cross(&xt).norm();
                        for (a, na) in quad_shape(s, t).iter().enumerate() {
                            nodal[nodes[a]] += w * na * da;
                        }
                    }
                }
            }
            WorkMode::AdTrapezoid => {
                let grid = mesh.grid();
                let axis = tr.face.axis();
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let h = grid.spacing();
                let dims = grid.dims();
                let (w1, _) = axis_weights(dims[a1], h[a1], NodalScheme::Trapezoid);
                let (w2, _) = axis_weights(dims[a2], h[a2], NodalScheme::Trapezoid);
                for node in mesh.face_nodes(tr.face) {
                    let ijk = grid.node_ijk(node);
                    nodal[node] += w1[ijk[a1]] * w2[ijk[a2]];
                }
            }
        }
        for (a, wa) in nodal.iter().enumerate() {
            for i in 0..3 {
                let v = f.get(a, i) + wa * tr.traction[i];
                f.set(a, i, v);
            }
        }
    }
    Ok(f)
}

/// `int t . u dA` over the traction faces.
pub fn external_work(u: &Tensor, mesh: &HexMesh, tractions: &[TractionSpec], mode: WorkMode) -> Result<f64> {
    check_field(u, mesh.n_nodes())?;
    let f = nodal_forces(mesh, tractions, mode)?;
    let terms: Vec<f64> = u.data().iter().zip(f.data()).map(|(a, b)| a * b).collect();
    Ok(pairwise_sum(&terms))
}
