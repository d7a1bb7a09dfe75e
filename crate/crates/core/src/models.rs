//! Network backbones mapping node coordinates to raw displacements, and the
//! multiplicative hard Dirichlet constraint.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Tape, TangentMap, Var};
use crate::error::{DemError, Result};
use crate::graph::Graph;
use crate::grid::Face;
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Mlp,
    Gcn,
}

impl NetworkKind {
    pub fn tag(self) -> &'static str {
        match self {
            NetworkKind::Mlp => "mlp",
            NetworkKind::Gcn => "gcn",
        }
    }
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

fn default_widths() -> Vec<usize> {
    vec![3, 16, 32, 64, 32, 16, 3]
}

fn default_order() -> usize {
    1
}

/// Architecture of a backbone. Hidden layers use tanh, the output layer is
/// linear. `cheb_order` counts Chebyshev terms per layer (gcn only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    #[serde(default = "default_widths")]
    pub layer_widths: Vec<usize>,
    #[serde(default = "default_order")]
    pub cheb_order: usize,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(kind: NetworkKind) -> Self {
        Self { kind, layer_widths: default_widths(), cheb_order: 1, seed: 0 }
    }

    pub fn with_order(mut self, k: usize) -> Self {
        self.cheb_order = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 2 || w[0] != 3 || w[w.len() - 1] != 3 {
            return Err(DemError::Contract(format!("layer widths {w:?} must start and end with 3")));
        }
        if w.contains(&0) {
            return Err(DemError::Contract(format!("layer widths {w:?} must all be positive")));
        }
        if self.cheb_order == 0 {
            return Err(DemError::InvalidOrder(0));
        }
        Ok(())
    }

    /// Weight blocks per layer.
    pub fn blocks_per_layer(&self) -> usize {
        match self.kind {
            NetworkKind::Mlp => 1,
            NetworkKind::Gcn => self.cheb_order,
        }
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let k = self.blocks_per_layer();
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight_offsets = (0..k).map(|b| offset + b * fan_in * fan_out).collect();
                offset += k * fan_in * fan_out;
                let bias_offset = offset;
                offset += fan_out;
                LayerLayout { fan_in, fan_out, weight_offsets, bias_offset }
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        let k = self.blocks_per_layer();
        self.layer_widths.windows(2).map(|w| k * w[0] * w[1] + w[1]).sum()
    }
}

/// Position of one layer's blocks inside the flat parameter vector. Weight
/// blocks are row-major `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offsets: Vec<usize>,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub theta: Vec<f64>,
    pub layout: Vec<LayerLayout>,
}

/// Glorot-uniform weights and zero biases drawn from a ChaCha8 stream seeded
/// by `spec.seed`. A graph layer counts its fan-in over all Chebyshev blocks.
pub fn init_params(spec: &NetworkSpec) -> Result<NetworkParams> {
    spec.validate()?;
    let layout = spec.layout();
    let mut theta = vec![0.0; spec.n_params()];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for layer in &layout {
        let fan_in = layer.fan_in * layer.weight_offsets.len();
        let bound = (6.0 / (fan_in + layer.fan_out) as f64).sqrt();
        for &off in &layer.weight_offsets {
            for w in &mut theta[off..off + layer.fan_in * layer.fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(NetworkParams { theta, layout })
}

/// Clamped plane for the multiplicative constraint `u = g(X) u_raw`, where
/// `g` is the normalized distance from the plane along its axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletSpec {
    pub face: Face,
}

impl Default for DirichletSpec {
    fn default() -> Self {
        Self { face: Face::X0 }
    }
}

const PLANE_TOL: f64 = 1e-12;

impl DirichletSpec {
    /// Fails unless some row of `x` lies on the clamped plane.
    pub fn validate(&self, x: &Tensor, lengths: [f64; 3]) -> Result<()> {
        let (g, _) = self.multiplier(x, lengths)?;
        if !g.iter().any(|v| v.abs() <= PLANE_TOL) {
            return Err(DemError::InvalidBc(format!("no grid nodes lie on clamped face {}", self.face)));
        }
        Ok(())
    }

    /// Multiplier `g` and its constant gradient along the clamped axis.
    pub fn multiplier(&self, x: &Tensor, lengths: [f64; 3]) -> Result<(Vec<f64>, f64)> {
        let axis = self.face.axis();
        let len = lengths[axis];
        if !(len > 0.0) || x.cols() != 3 {
            return Err(DemError::InvalidBc(format!("invalid domain for clamped face {}", self.face)));
        }
        let g: Vec<f64> = (0..x.rows())
            .map(|r| {
                let c = x.get(r, axis);
                if self.face.is_max() {
                    (len - c) / len
                } else {
                    c / len
                }
            })
            .collect();
        let slope = if self.face.is_max() { -1.0 / len } else { 1.0 / len };
        Ok((g, slope))
    }
}

/// `U = g(X) U_raw` evaluated directly on values.
pub fn apply_dirichlet(u_raw: &Tensor, x: &Tensor, bc: &DirichletSpec, lengths: [f64; 3]) -> Result<Tensor> {
    if u_raw.shape() != x.shape() {
        return Err(DemError::Contract(format!("shape {:?} vs {:?}", u_raw.shape(), x.shape())));
    }
    bc.validate(x, lengths)?;
    let (g, _) = bc.multiplier(x, lengths)?;
    Ok(Tensor::from_fn(u_raw.rows(), 3, |r, c| g[r] * u_raw.get(r, c)))
}

/// A backbone, optionally wrapped by the Dirichlet multiplier, as a
/// [`TangentMap`] over node coordinates.
#[derive(Clone)]
pub struct Network {
    spec: NetworkSpec,
    layout: Vec<LayerLayout>,
    laplacian: Option<Arc<CsrMatrix>>,
    dirichlet: Option<(DirichletSpec, [f64; 3])>,
}

impl Network {
    pub fn mlp(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec: spec.clone(), layout: spec.layout(), laplacian: None, dirichlet: None })
    }

    pub fn gcn(spec: &NetworkSpec, graph: &Graph) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            layout: spec.layout(),
            laplacian: Some(Arc::new(graph.scaled_laplacian().clone())),
            dirichlet: None,
        })
    }

    /// Builds the backbone named by `spec.kind`; `graph` is required for gcn.
    pub fn from_spec(spec: &NetworkSpec, graph: Option<&Graph>) -> Result<Self> {
        match (spec.kind, graph) {
            (NetworkKind::Mlp, _) => Self::mlp(spec),
            (NetworkKind::Gcn, Some(g)) => Self::gcn(spec, g),
            (NetworkKind::Gcn, None) => Err(DemError::Contract("gcn backbone needs a graph".into())),
        }
    }

    pub fn with_dirichlet(mut self, bc: DirichletSpec, lengths: [f64; 3]) -> Self {
        self.dirichlet = Some((bc, lengths));
        self
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Displacements at `x` for parameters `theta`, by value.
    pub fn evaluate(&self, theta: &[f64], x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::from_vec(1, theta.len(), theta.to_vec()));
        let xv = tape.constant(x.clone());
        let (u, _) = self.forward_with_tangents(&mut tape, t, xv, &[])?;
        Ok(tape.value(u).clone())
    }

    /// `sum_k Z^k W^k` for one layer, where `Z^k` is the Chebyshev recursion
    /// of `h` (the identity term only for mlp or order 1).
    fn propagate(&self, tape: &mut Tape, theta: Var, h: Var, layer: &LayerLayout) -> Result<Var> {
        let weights: Vec<Var> = layer
            .weight_offsets
            .iter()
            .map(|&off| tape.slice(theta, off, layer.fan_in, layer.fan_out))
            .collect::<Result<_>>()?;
        let mut acc = tape.matmul(h, weights[0])?;
        if weights.len() > 1 {
            let lap = self.laplacian.as_ref().expect("gcn layout implies a laplacian");
            let mut prev = h;
            let mut cur = tape.spmatmul(lap, h)?;
            for (k, &w) in weights.iter().enumerate().skip(1) {
                if k > 1 {
                    let lz = tape.spmatmul(lap, cur)?;
                    let lz = tape.scale(lz, 2.0)?;
                    let next = tape.sub(lz, prev)?;
                    prev = cur;
                    cur = next;
                }
                let term = tape.matmul(cur, w)?;
                acc = tape.add(acc, term)?;
            }
        }
        Ok(acc)
    }
}

impl TangentMap for Network {
    fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    fn forward_with_tangents(
        &self,
        tape: &mut Tape,
        theta: Var,
        x: Var,
        directions: &[Var],
    ) -> Result<(Var, Vec<Var>)> {
        let n = tape.value(x).rows();
        if let Some(lap) = &self.laplacian {
            if lap.n_rows() != n {
                return Err(DemError::Contract(format!(
                    "graph has {} nodes, input has {n} rows",
                    lap.n_rows()
                )));
            }
        }
        let last = self.layout.len() - 1;
        let mut h = x;
        let mut dh: Vec<Var> = directions.to_vec();
        for (l, layer) in self.layout.iter().enumerate() {
            let bias = tape.slice(theta, layer.bias_offset, 1, layer.fan_out)?;
            let z = self.propagate(tape, theta, h, layer)?;
            let z = tape.add_row(z, bias)?;
            let dz: Vec<Var> = dh.iter().map(|&d| self.propagate(tape, theta, d, layer)).collect::<Result<_>>()?;
            if l == last {
                h = z;
                dh = dz;
            } else {
                h = tape.tanh(z)?;
                let slope = tape.one_minus_square(h)?;
                dh = dz.into_iter().map(|d| tape.mul(d, slope)).collect::<Result<_>>()?;
            }
        }

        let Some((bc, lengths)) = &self.dirichlet else {
            return Ok((h, dh));
        };
        let (g, slope) = bc.multiplier(tape.value(x), *lengths)?;
        let gv = tape.constant(Tensor::from_vec(n, 1, g));
        let u = tape.mul_col(h, gv)?;
        let axis = bc.face.axis();
        let mut du = Vec::with_capacity(dh.len());
        for (&d, &draw) in directions.iter().zip(&dh) {
            let dg = Tensor::from_fn(n, 1, |r, _| slope * tape.value(d).get(r, axis));
            let dg = tape.constant(dg);
            let a = tape.mul_col(h, dg)?;
            let b = tape.mul_col(draw, gv)?;
            du.push(tape.add(a, b)?);
        }
        Ok((u, du))
    }
}
