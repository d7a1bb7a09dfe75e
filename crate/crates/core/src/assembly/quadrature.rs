use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::diffengine::LinearOperator;
use crate::error::{DemError, Result};
use crate::grid::{HexMesh, HEX_CORNERS};
use crate::tensor::Tensor;

/// Volume integration rule on the reference hex `[-1, 1]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VolumeRule {
    #[serde(rename = "gauss_1")]
    Gauss1,
    #[default]
    #[serde(rename = "gauss_2x2x2")]
    Gauss2x2x2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn volume(rule: VolumeRule) -> Self {
        match rule {
            VolumeRule::Gauss1 => Self { points: vec![[0.0; 3]], weights: vec![8.0] },
            VolumeRule::Gauss2x2x2 => {
                let g = 1.0 / 3f64.sqrt();
                let points = HEX_CORNERS.iter().map(|c| [c[0] * g, c[1] * g, c[2] * g]).collect();
                Self { points, weights: vec![1.0; 8] }
            }
        }
    }

    /// 2x2 Gauss rule on the reference quad `[-1, 1]^2` (third coordinate 0).
    pub fn facet_2x2() -> Self {
        let g = 1.0 / 3f64.sqrt();
        let points = QUAD_CORNERS.iter().map(|c| [c[0] * g, c[1] * g, 0.0]).collect();
        Self { points, weights: vec![1.0; 4] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub(crate) const QUAD_CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Bilinear facet shape functions at `(s, t)`.
pub(crate) fn quad_shape(s: f64, t: f64) -> [f64; 4] {
    QUAD_CORNERS.map(|c| 0.25 * (1.0 + c[0] * s) * (1.0 + c[1] * t))
}

fn hex_shape_derivatives(xi: [f64; 3]) -> [[f64; 3]; 8] {
    HEX_CORNERS.map(|c| {
        let f = [1.0 + c[0] * xi[0], 1.0 + c[1] * xi[1], 1.0 + c[2] * xi[2]];
        [0.125 * c[0] * f[1] * f[2], 0.125 * c[1] * f[0] * f[2], 0.125 * c[2] * f[0] * f[1]]
    })
}

/// Physical shape-function gradients at one integration point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGradients {
    /// `dphi_a / dX_j` for the 8 corners.
    pub grads: [[f64; 3]; 8],
    pub det_j: f64,
}

pub fn shape_gradients(mesh: &HexMesh, element: usize, rule: &QuadratureRule) -> Result<Vec<PointGradients>> {
    let x = mesh.element_coords(element);
    rule.points
        .iter()
        .map(|&xi| {
            let dn = hex_shape_derivatives(xi);
            // J[j][k] = dX_k / dxi_j
            let mut jac = Matrix3::zeros();
            for (a, d) in dn.iter().enumerate() {
                for j in 0..3 {
                    for k in 0..3 {
                        jac[(j, k)] += d[j] * x[a][k];
                    }
                }
            }
            let det_j = jac.determinant();
            if !(det_j > 0.0) {
                return Err(DemError::InvertedElement { det: det_j });
            }
            let inv = jac.try_inverse().ok_or(DemError::InvertedElement { det: det_j })?;
            let grads = dn.map(|d| {
                let g = inv * Vector3::from(d);
                [g[0], g[1], g[2]]
            });
            Ok(PointGradients { grads, det_j })
        })
        .collect()
}

/// Maps nodal fields `n x 3` to displacement gradients at every integration
/// point of the mesh, `ngp x 9`, row-major `grad_u[i * 3 + j] = du_i / dX_j`.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    n_nodes: usize,
    connectivity: Vec<[usize; 8]>,
    points_per_element: usize,
    grads: Vec<[[f64; 3]; 8]>,
    weights: Vec<f64>,
}

impl GradientOperator {
    pub fn new(mesh: &HexMesh, rule: VolumeRule) -> Result<Self> {
        let q = QuadratureRule::volume(rule);
        let ne = mesh.elements().len();
        let mut grads = Vec::with_capacity(ne * q.len());
        let mut weights = Vec::with_capacity(ne * q.len());
        for e in 0..ne {
            for (pg, w) in shape_gradients(mesh, e, &q)?.into_iter().zip(&q.weights) {
                grads.push(pg.grads);
                weights.push(w * pg.det_j);
            }
        }
        Ok(Self {
            n_nodes: mesh.n_nodes(),
            connectivity: mesh.elements().to_vec(),
            points_per_element: q.len(),
            grads,
            weights,
        })
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_elements(&self) -> usize {
        self.connectivity.len()
    }

    pub fn points_per_element(&self) -> usize {
        self.points_per_element
    }

    /// Quadrature weight times Jacobian determinant per point.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_tensor(&self) -> Tensor {
        Tensor::from_vec(self.n_points(), 1, self.weights.clone())
    }

    /// Element index and corner gradients of integration point `g`.
    pub fn point(&self, g: usize) -> (&[usize; 8], &[[f64; 3]; 8]) {
        (&self.connectivity[g / self.points_per_element], &self.grads[g])
    }

    /// Displacement gradient at point `g` of a flat `n x 3` nodal field.
    pub fn gradient_at(&self, u: &[f64], g: usize) -> Matrix3<f64> {
        let (conn, b) = self.point(g);
        let mut m = Matrix3::zeros();
        for (a, &node) in conn.iter().enumerate() {
            for i in 0..3 {
                let ua = u[node * 3 + i];
                for j in 0..3 {
                    m[(i, j)] += b[a][j] * ua;
                }
            }
        }
        m
    }

    /// Accumulates `sum_g B_g^T s_g` into a flat nodal vector.
    pub fn scatter_transpose(&self, g: usize, s: &Matrix3<f64>, out: &mut [f64]) {
        let (conn, b) = self.point(g);
        for (a, &node) in conn.iter().enumerate() {
            for i in 0..3 {
                out[node * 3 + i] += b[a][0] * s[(i, 0)] + b[a][1] * s[(i, 1)] + b[a][2] * s[(i, 2)];
            }
        }
    }

    pub fn into_arc(self) -> Arc<dyn LinearOperator> {
        Arc::new(self)
    }
}

impl LinearOperator for GradientOperator {
    fn output_shape(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        if input != (self.n_nodes, 3) {
            return Err(DemError::Contract(format!(
                "gradient operator expects ({}, 3) nodal input, got {input:?}",
                self.n_nodes
            )));
        }
        Ok((self.n_points(), 9))
    }

    fn apply(&self, x: &Tensor, out: &mut Tensor) {
        let u = x.data();
        for g in 0..self.n_points() {
            let m = self.gradient_at(u, g);
            let row = out.row_mut(g);
            for i in 0..3 {
                for j in 0..3 {
                    row[i * 3 + j] = m[(i, j)];
                }
            }
        }
    }

    fn apply_transpose_acc(&self, adj_out: &Tensor, adj_in: &mut Tensor) {
        let out = adj_in.data_mut();
        for g in 0..self.n_points() {
            let s = Matrix3::from_row_slice(adj_out.row(g));
            self.scatter_transpose(g, &s, out);
        }
    }
}
