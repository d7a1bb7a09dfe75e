//! Structured node grids and their trilinear hexahedral discretization.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{DemError, Result};

/// Structured tensor-product cloud of nodes, ordered x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrid {
    dims: [usize; 3],
    lengths: [f64; 3],
    coords: Vec<Vector3<f64>>,
}

impl NodeGrid {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn coords(&self) -> &[Vector3<f64>] {
        &self.coords
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    /// Uniform node spacing along each axis.
    pub fn spacing(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.lengths[a] / (self.dims[a] - 1) as f64)
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`NodeGrid::node_index`].
    #[inline]
    pub fn node_ijk(&self, n: usize) -> [usize; 3] {
        let i = n % self.dims[0];
        let j = (n / self.dims[0]) % self.dims[1];
        let k = n / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// Grid with explicit (possibly distorted) node positions.
    #[cfg(test)]
    pub(crate) fn from_coords_for_tests(dims: [usize; 3], coords: Vec<Vector3<f64>>) -> Self {
        let lengths = [0, 1, 2].map(|a| coords.iter().map(|x| x[a].abs()).fold(0.0, f64::max));
        Self { dims, lengths, coords }
    }

    /// Row-major `n x 3` copy of the coordinates.
    pub fn coords_flat(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|x| [x.x, x.y, x.z]).collect()
    }
}

/// Builds the tensor-product grid on `[0, Lx] x [0, Ly] x [0, Lz]`.
pub fn build_grid(dims: [usize; 3], lengths: [f64; 3]) -> Result<NodeGrid> {
    if let Some(a) = dims.iter().position(|&d| d < 2) {
        return Err(DemError::InvalidDiscretization(format!(
            "axis {a} has {} nodes, at least 2 are required",
            dims[a]
        )));
    }
    if let Some(a) = lengths.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(DemError::InvalidDiscretization(format!(
            "axis {a} has non-positive length {}",
            lengths[a]
        )));
    }
    let axis = |a: usize, i: usize| lengths[a] * i as f64 / (dims[a] - 1) as f64;
    let mut coords = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                coords.push(Vector3::new(axis(0, i), axis(1, j), axis(2, k)));
            }
        }
    }
    Ok(NodeGrid {
        dims,
        lengths,
        coords,
    })
}

/// One of the six faces of the box domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    X0,
    X1,
    Y0,
    Y1,
    Z0,
    Z1,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::X0, Face::X1, Face::Y0, Face::Y1, Face::Z0, Face::Z1];

    pub fn axis(self) -> usize {
        match self {
            Face::X0 | Face::X1 => 0,
            Face::Y0 | Face::Y1 => 1,
            Face::Z0 | Face::Z1 => 2,
        }
    }

    /// `true` for the face at the upper end of its axis.
    pub fn is_max(self) -> bool {
        matches!(self, Face::X1 | Face::Y1 | Face::Z1)
    }

    pub fn outward_normal(self) -> Vector3<f64> {
        let mut n = Vector3::zeros();
        n[self.axis()] = if self.is_max() { 1.0 } else { -1.0 };
        n
    }

    pub fn tag(self) -> &'static str {
        match self {
            Face::X0 => "x0",
            Face::X1 => "x1",
            Face::Y0 => "y0",
            Face::Y1 => "y1",
            Face::Z0 => "z0",
            Face::Z1 => "z1",
        }
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Face {
    type Err = DemError;

    fn from_str(s: &str) -> Result<Self> {
        Face::ALL
            .into_iter()
            .find(|f| f.tag() == s)
            .ok_or_else(|| DemError::Lookup(format!("unknown surface tag `{s}`")))
    }
}

/// Boundary quadrilateral with outward-oriented node ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    pub nodes: [usize; 4],
    pub normal: Vector3<f64>,
    pub face: Face,
}

/// Natural coordinates of the 8 hex corners in standard ordering.
pub const HEX_CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    grid: NodeGrid,
    elements: Vec<[usize; 8]>,
    facets: Vec<Facet>,
}

impl HexMesh {
    pub fn grid(&self) -> &NodeGrid {
        &self.grid
    }

    pub fn elements(&self) -> &[[usize; 8]] {
        &self.elements
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    /// Nodal coordinates of one element in corner order.
    pub fn element_coords(&self, e: usize) -> [Vector3<f64>; 8] {
        let conn = &self.elements[e];
        conn.map(|n| self.grid.coords[n])
    }

    /// Facet indices carrying the given surface tag.
    pub fn facets_on(&self, face: Face) -> impl Iterator<Item = usize> + '_ {
        self.facets
            .iter()
            .enumerate()
            .filter(move |(_, f)| f.face == face)
            .map(|(i, _)| i)
    }

    /// Area and unit outward normal of a boundary facet.
    pub fn facet_area_and_normal(&self, facet_id: usize) -> Result<(f64, Vector3<f64>)> {
        let facet = self
            .facets
            .get(facet_id)
            .ok_or_else(|| DemError::Lookup(format!("facet {facet_id} does not exist")))?;
        let x = facet.nodes.map(|n| self.grid.coords[n]);
        let cross = (x[2] - x[0]).cross(&(x[3] - x[1]));
        let area = 0.5 * cross.norm();
        Ok((area, cross / (2.0 * area)))
    }

    /// Locates the boundary facet spanned by the given four nodes (any order).
    pub fn find_facet(&self, nodes: [usize; 4]) -> Result<usize> {
        let mut key = nodes;
        key.sort_unstable();
        self.facets
            .iter()
            .position(|f| {
                let mut k = f.nodes;
                k.sort_unstable();
                k == key
            })
            .ok_or_else(|| DemError::Lookup(format!("nodes {nodes:?} do not span a boundary facet")))
    }

    /// Nodes lying on the given face, in grid order.
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        let d = self.grid.dims;
        let target = if face.is_max() { d[face.axis()] - 1 } else { 0 };
        (0..self.grid.n_nodes())
            .filter(|&n| self.grid.node_ijk(n)[face.axis()] == target)
            .collect()
    }
}

pub fn build_hex_mesh(grid: NodeGrid) -> HexMesh {
    let [nx, ny, nz] = grid.dims;
    let mut elements = Vec::with_capacity((nx - 1) * (ny - 1) * (nz - 1));
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let n = |di, dj, dk| grid.node_index(i + di, j + dj, k + dk);
                elements.push([
                    n(0, 0, 0),
                    n(1, 0, 0),
                    n(1, 1, 0),
                    n(0, 1, 0),
                    n(0, 0, 1),
                    n(1, 0, 1),
                    n(1, 1, 1),
                    n(0, 1, 1),
                ]);
            }
        }
    }

    let mut facets = Vec::new();
    for face in Face::ALL {
        let axis = face.axis();
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        let fixed = if face.is_max() { grid.dims[axis] - 1 } else { 0 };
        for q in 0..grid.dims[a2] - 1 {
            for p in 0..grid.dims[a1] - 1 {
                let node = |dp: usize, dq: usize| {
                    let mut ijk = [0usize; 3];
                    ijk[axis] = fixed;
                    ijk[a1] = p + dp;
                    ijk[a2] = q + dq;
                    grid.node_index(ijk[0], ijk[1], ijk[2])
                };
                // (a1, a2, axis) is a cyclic permutation so this order faces +axis.
                let mut nodes = [node(0, 0), node(1, 0), node(1, 1), node(0, 1)];
                if !face.is_max() {
                    nodes.swap(1, 3);
                }
                facets.push(Facet {
                    nodes,
                    normal: face.outward_normal(),
                    face,
                });
            }
        }
    }

    HexMesh {
        grid,
        elements,
        facets,
    }
}
