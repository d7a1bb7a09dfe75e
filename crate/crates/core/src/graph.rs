//! Radius graphs over node clouds and the scaled normalized Laplacian used by
//! Chebyshev graph convolutions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{DemError, Result};
use crate::grid::NodeGrid;
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

/// Relative slack on the threshold radius so that exact-spacing neighbours
/// survive rounding in the coordinates.
pub const RADIUS_REL_TOL: f64 = 1e-9;

/// Threshold radius for edge inclusion. Serialized as `"auto"` or a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    /// `Lx / (Nx - 1)`, the node spacing along x.
    Auto,
    Value(f64),
}

impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Radius::Auto => s.serialize_str("auto"),
            Radius::Value(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(r) => Ok(Radius::Value(r)),
            Raw::Text(t) if t == "auto" => Ok(Radius::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "radius must be \"auto\" or a number, got \"{t}\""
            ))),
        }
    }
}

impl Radius {
    pub fn resolve(self, grid: &NodeGrid) -> f64 {
        match self {
            Radius::Auto => grid.lengths()[0] / (grid.dims()[0] - 1) as f64,
            Radius::Value(r) => r,
        }
    }
}

/// How adjacency entries are populated from edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeighting {
    /// Every edge contributes 1.
    #[default]
    Binary,
    /// Every edge contributes its Euclidean length.
    Distance,
}

#[derive(Debug, Clone)]
pub struct Graph {
    n_nodes: usize,
    radius: f64,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    adjacency: CsrMatrix,
    degree: Vec<f64>,
    scaled_laplacian: CsrMatrix,
    isolated: Vec<usize>,
    warnings: Vec<String>,
}

impl Graph {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Euclidean length of each edge.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// Diagonal of the degree matrix (row sums of the adjacency).
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn scaled_laplacian(&self) -> &CsrMatrix {
        &self.scaled_laplacian
    }

    pub fn isolated_nodes(&self) -> &[usize] {
        &self.isolated
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Node degree counted in edges, independent of the weighting mode.
    pub fn edge_degree(&self, node: usize) -> usize {
        self.adjacency.row(node).count()
    }
}

/// Connects every pair of grid nodes closer than the threshold radius
/// (inclusive) and assembles adjacency, degree and scaled Laplacian.
pub fn build_graph(grid: &NodeGrid, radius: Radius, weighting: EdgeWeighting) -> Result<Graph> {
    let r = radius.resolve(grid);
    if !(r > 0.0 && r.is_finite()) {
        return Err(DemError::InvalidThreshold(r));
    }
    let (edges, weights) = radius_edges(grid.coords_flat().as_slice(), r);
    Ok(assemble(grid.n_nodes(), r, edges, weights, weighting))
}

/// Builds a graph from an explicit edge list (`i != j`, each pair once).
pub fn graph_from_edges(
    n_nodes: usize,
    edges: &[(usize, usize)],
    weights: &[f64],
    weighting: EdgeWeighting,
) -> Result<Graph> {
    if edges.len() != weights.len() {
        return Err(DemError::Contract("edge and weight counts differ".into()));
    }
    let mut canon: Vec<((usize, usize), f64)> = Vec::with_capacity(edges.len());
    for (&(i, j), &w) in edges.iter().zip(weights) {
        if i == j || i >= n_nodes || j >= n_nodes {
            return Err(DemError::Contract(format!("invalid edge ({i}, {j})")));
        }
        canon.push(((i.min(j), i.max(j)), w));
    }
    canon.sort_by_key(|e| e.0);
    let (edges, weights) = canon.into_iter().unzip();
    Ok(assemble(n_nodes, f64::INFINITY, edges, weights, weighting))
}

fn assemble(
    n_nodes: usize,
    radius: f64,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    weighting: EdgeWeighting,
) -> Graph {
    let mut triplets = Vec::with_capacity(2 * edges.len());
    for (&(i, j), &w) in edges.iter().zip(&weights) {
        let a = match weighting {
            EdgeWeighting::Binary => 1.0,
            EdgeWeighting::Distance => w,
        };
        triplets.push((i, j, a));
        triplets.push((j, i, a));
    }
    let adjacency = CsrMatrix::from_triplets(n_nodes, n_nodes, &triplets);
    let degree: Vec<f64> = (0..n_nodes).map(|r| adjacency.row(r).map(|(_, v)| v).sum()).collect();
    let isolated: Vec<usize> = (0..n_nodes).filter(|&i| degree[i] == 0.0).collect();
    let mut warnings = Vec::new();
    if !isolated.is_empty() {
        let msg = format!("{} of {n_nodes} nodes have no neighbours", isolated.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let scaled_laplacian = scaled_laplacian_from(&adjacency, &degree);
    Graph {
        n_nodes,
        radius,
        edges,
        weights,
        adjacency,
        degree,
        scaled_laplacian,
        isolated,
        warnings,
    }
}

/// `L - I` with `L = I - D^-1/2 A D^-1/2`; zero-degree nodes use
/// `D^-1/2 = 0`, which leaves their rows and columns empty.
pub fn scaled_laplacian(graph: &Graph) -> CsrMatrix {
    scaled_laplacian_from(&graph.adjacency, &graph.degree)
}

fn scaled_laplacian_from(adjacency: &CsrMatrix, degree: &[f64]) -> CsrMatrix {
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut triplets = Vec::with_capacity(adjacency.nnz());
    for r in 0..adjacency.n_rows() {
        for (c, a) in adjacency.row(r) {
            triplets.push((r, c, -inv_sqrt[r] * a * inv_sqrt[c]));
        }
    }
    CsrMatrix::from_triplets(adjacency.n_rows(), adjacency.n_cols(), &triplets)
}

/// Chebyshev basis `Z^1 = X`, `Z^2 = L X`, `Z^k = 2 L Z^(k-1) - Z^(k-2)`.
pub fn chebyshev_basis(laplacian: &CsrMatrix, x: &Tensor, order: usize) -> Result<Vec<Tensor>> {
    if order < 1 {
        return Err(DemError::InvalidOrder(order));
    }
    if x.rows() != laplacian.n_rows() {
        return Err(DemError::Contract(format!(
            "feature matrix has {} rows, graph has {} nodes",
            x.rows(),
            laplacian.n_rows()
        )));
    }
    let f = x.cols();
    let mut basis = vec![x.clone()];
    if order >= 2 {
        let mut z = Tensor::zeros(x.rows(), f);
        laplacian.mul_dense(x.data(), f, z.data_mut());
        basis.push(z);
    }
    for k in 2..order {
        let mut z = Tensor::zeros(x.rows(), f);
        laplacian.mul_dense(basis[k - 1].data(), f, z.data_mut());
        for (v, prev) in z.data_mut().iter_mut().zip(basis[k - 2].data()) {
            *v = 2.0 * *v - prev;
        }
        basis.push(z);
    }
    Ok(basis)
}

/// Radius neighbour search on a uniform cell binning of the points.
fn radius_edges(coords: &[f64], r: f64) -> (Vec<(usize, usize)>, Vec<f64>) {
    let n = coords.len() / 3;
    let cutoff = r * (1.0 + RADIUS_REL_TOL);
    let cell = |p: &[f64]| -> [i64; 3] { [0, 1, 2].map(|a| (p[a] / cutoff).floor() as i64) };

    let mut bins: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for i in 0..n {
        bins.entry(cell(&coords[3 * i..3 * i + 3])).or_default().push(i);
    }

    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        let p = &coords[3 * i..3 * i + 3];
        let c = cell(p);
        let mut found: Vec<(usize, f64)> = Vec::new();
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(bucket) = bins.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let q = &coords[3 * j..3 * j + 3];
                        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                        if d <= cutoff {
                            found.push((j, d));
                        }
                    }
                }
            }
        }
        found.sort_by_key(|&(j, _)| j);
        for (j, d) in found {
            edges.push((i, j));
            weights.push(d);
        }
    }
    (edges, weights)
}
