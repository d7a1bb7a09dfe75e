//! Ground-truth solutions by direct minimization of the shape-function energy
//! over nodal displacements, the nodal relative-difference metric, and a
//! finite-difference gradient audit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{nodal_forces, sf_energy, sf_internal_force, GradientOperator, TractionSpec, VolumeRule, WorkMode};
use crate::diffengine::{value, value_and_parameter_gradient, DiffProgram};
use crate::error::{DemError, Result};
use crate::grid::HexMesh;
use crate::materials::MaterialModel;
use crate::models::DirichletSpec;
use crate::sparse::CsrMatrix;
use crate::tensor::{pairwise_sum, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    /// Relative residual for the linear solves.
    pub cg_tol: f64,
    pub max_cg_iters: usize,
    /// Relative equilibrium residual at the end of each load step.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub load_steps: usize,
    pub volume_rule: VolumeRule,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            max_cg_iters: 20_000,
            newton_tol: 1e-8,
            max_newton_iters: 50,
            load_steps: 20,
            volume_rule: VolumeRule::Gauss2x2x2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub load_factor: f64,
    pub energy: f64,
    pub iterations: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub u_ref: Tensor,
    /// Potential energy `Psi_int(U) - f . U`.
    pub energy: f64,
    pub iterations: usize,
    /// `|f_int(U) - f|` over free degrees of freedom, relative to `|f|`.
    pub residual_norm: f64,
    pub load_steps: Vec<LoadStep>,
}

/// Stiffness or tangent matrix assembled from per-point material tangents.
pub fn assemble_tangent(u: &Tensor, op: &GradientOperator, material: &MaterialModel) -> Result<CsrMatrix> {
    let n = op.n_nodes();
    let ppe = op.points_per_element();
    let mut triplets = Vec::with_capacity(op.n_elements() * 576);
    let mut ke = [[0.0; 24]; 24];
    for e in 0..op.n_elements() {
        ke.iter_mut().for_each(|r| r.fill(0.0));
        for g in e * ppe..(e + 1) * ppe {
            let (_, b) = op.point(g);
            let gradu = op.gradient_at(u.data(), g);
            // a[ij][kl] = dS_ij / dG_kl
            let mut a = [[0.0; 9]; 9];
            for kl in 0..9 {
                let mut h = nalgebra::Matrix3::zeros();
                h[(kl / 3, kl % 3)] = 1.0;
                let ds = material.stress_increment(&gradu, &h)?;
                for (ij, row) in a.iter_mut().enumerate() {
                    row[kl] = ds[(ij / 3, ij % 3)];
                }
            }
            // t[ij][(b k)] = sum_l a[ij][kl] B_b[l]
            let mut t = [[0.0; 24]; 9];
            for (ij, trow) in t.iter_mut().enumerate() {
                for (bn, bb) in b.iter().enumerate() {
                    for k in 0..3 {
                        trow[bn * 3 + k] = a[ij][k * 3] * bb[0] + a[ij][k * 3 + 1] * bb[1] + a[ij][k * 3 + 2] * bb[2];
                    }
                }
            }
            let w = op.weights()[g];
            for (an, ba) in b.iter().enumerate() {
                for i in 0..3 {
                    for (c, r) in ke[an * 3 + i].iter_mut().enumerate() {
                        *r += w * (ba[0] * t[i * 3][c] + ba[1] * t[i * 3 + 1][c] + ba[2] * t[i * 3 + 2][c]);
                    }
                }
            }
        }
        let (conn, _) = op.point(e * ppe);
        for (r, row) in ke.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((conn[r / 3] * 3 + r % 3, conn[c / 3] * 3 + c % 3, v));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(3 * n, 3 * n, &triplets))
}

/// Degrees of freedom held at zero by the clamped face.
pub fn fixed_dofs(mesh: &HexMesh, bc: &DirichletSpec) -> Vec<bool> {
    let mut fixed = vec![false; 3 * mesh.n_nodes()];
    for n in mesh.face_nodes(bc.face) {
        fixed[3 * n..3 * n + 3].iter_mut().for_each(|v| *v = true);
    }
    fixed
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn masked(mut v: Vec<f64>, fixed: &[bool]) -> Vec<f64> {
    v.iter_mut().zip(fixed).filter(|(_, &f)| f).for_each(|(x, _)| *x = 0.0);
    v
}

struct CgResult {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Jacobi-preconditioned conjugate gradients on the free degrees of freedom.
/// Stops early on non-positive curvature and returns the current iterate.
fn pcg(k: &CsrMatrix, b: &[f64], fixed: &[bool], tol: f64, max_iters: usize) -> CgResult {
    let n = b.len();
    let diag = k.diagonal();
    let precond: Vec<f64> = diag
        .iter()
        .zip(fixed)
        .map(|(&d, &f)| if f || d <= 0.0 { 0.0 } else { 1.0 / d })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = masked(b.to_vec(), fixed);
    let bnorm = norm(&r);
    if bnorm == 0.0 {
        return CgResult { x, iterations: 0, converged: true };
    }
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, p)| a * p).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut kp = vec![0.0; n];
    for it in 1..=max_iters {
        k.mul_vec(&p, &mut kp);
        kp.iter_mut().zip(fixed).filter(|(_, &f)| f).for_each(|(v, _)| *v = 0.0);
        let pkp = dot(&p, &kp);
        if !(pkp > 0.0) {
            return CgResult { x, iterations: it, converged: false };
        }
        let alpha = rz / pkp;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&kp).for_each(|(ri, ki)| *ri -= alpha * ki);
        if norm(&r) <= tol * bnorm {
            return CgResult { x, iterations: it, converged: true };
        }
        z.iter_mut().zip(r.iter().zip(&precond)).for_each(|(zi, (ri, pi))| *zi = ri * pi);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    CgResult { x, iterations: max_iters, converged: false }
}

fn potential(u: &Tensor, op: &GradientOperator, material: &MaterialModel, f: &[f64]) -> Result<f64> {
    let work: Vec<f64> = u.data().iter().zip(f).map(|(a, b)| a * b).collect();
    Ok(sf_energy(u, op, material)? - pairwise_sum(&work))
}

/// Minimizes the shape-function potential over all free nodal displacements.
pub fn direct_minimize(
    mesh: &HexMesh,
    material: &MaterialModel,
    tractions: &[TractionSpec],
    bc: &DirichletSpec,
    settings: &OracleSettings,
) -> Result<OracleSolution> {
    material.validate()?;
    let op = GradientOperator::new(mesh, settings.volume_rule)?;
    let n = mesh.n_nodes();
    let fixed = fixed_dofs(mesh, bc);
    if !fixed.iter().any(|&f| f) {
        return Err(DemError::InvalidBc(format!("no nodes on clamped face {}", bc.face)));
    }
    let f_full = masked(nodal_forces(mesh, tractions, WorkMode::Sf)?.into_vec(), &fixed);
    let fnorm = norm(&f_full);
    let zero = Tensor::zeros(n, 3);
    if fnorm == 0.0 {
        return Ok(OracleSolution { u_ref: zero, energy: 0.0, iterations: 0, residual_norm: 0.0, load_steps: vec![] });
    }

    if !material.is_finite_strain() {
        let k = assemble_tangent(&zero, &op, material)?;
        let cg = pcg(&k, &f_full, &fixed, settings.cg_tol, settings.max_cg_iters);
        if !cg.converged {
            return Err(DemError::OracleFailure(format!("CG did not converge in {} iterations", cg.iterations)));
        }
        let u = Tensor::from_vec(n, 3, cg.x);
        let mut ku = vec![0.0; 3 * n];
        k.mul_vec(u.data(), &mut ku);
        let res: Vec<f64> = masked(ku.iter().zip(&f_full).map(|(a, b)| a - b).collect(), &fixed);
        let energy = potential(&u, &op, material, &f_full)?;
        let residual_norm = norm(&res) / fnorm;
        return Ok(OracleSolution {
            u_ref: u,
            energy,
            iterations: cg.iterations,
            residual_norm,
            load_steps: vec![LoadStep { load_factor: 1.0, energy, iterations: cg.iterations, residual_norm }],
        });
    }

    let mut u = zero;
    let mut total_iters = 0;
    let mut steps = Vec::with_capacity(settings.load_steps);
    let mut residual_norm = 0.0;
    for step in 1..=settings.load_steps {
        let lambda = step as f64 / settings.load_steps as f64;
        let f: Vec<f64> = f_full.iter().map(|v| lambda * v).collect();
        let f_norm = norm(&f);
        let mut e_cur = potential(&u, &op, material, &f)?;
        let mut iters = 0;
        loop {
            let fint = sf_internal_force(&u, &op, material)?;
            let g = masked(fint.iter().zip(&f).map(|(a, b)| a - b).collect(), &fixed);
            residual_norm = norm(&g) / f_norm;
            if residual_norm < settings.newton_tol {
                break;
            }
            if iters == settings.max_newton_iters {
                return Err(DemError::OracleFailure(format!(
                    "Newton stalled at load factor {lambda} with residual {residual_norm:e}"
                )));
            }
            iters += 1;
            let k = assemble_tangent(&u, &op, material)?;
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut du = pcg(&k, &rhs, &fixed, settings.cg_tol, settings.max_cg_iters).x;
            if dot(&du, &g) >= 0.0 {
                du = rhs;
            }
            let slope = dot(&du, &g);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = Tensor::from_fn(n, 3, |r, c| u.get(r, c) + alpha * du[r * 3 + c]);
                match potential(&trial, &op, material, &f) {
                    Ok(e) if e <= e_cur + 1e-4 * alpha * slope || (e - e_cur).abs() <= 1e-14 * e_cur.abs() => {
                        u = trial;
                        e_cur = e;
                        accepted = true;
                        break;
                    }
                    Ok(_) | Err(DemError::InvertedElement { .. }) => alpha *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            if !accepted {
                return Err(DemError::OracleFailure(format!("line search failed at load factor {lambda}")));
            }
        }
        total_iters += iters;
        steps.push(LoadStep { load_factor: lambda, energy: e_cur, iterations: iters, residual_norm });
    }
    let energy = potential(&u, &op, material, &f_full)?;
    Ok(OracleSolution { u_ref: u, energy, iterations: total_iters, residual_norm, load_steps: steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDifference {
    /// Per node, per component, in percent (or absolute where flagged).
    pub per_node: Vec<[f64; 3]>,
    pub component_means: [f64; 3],
    /// Mean over all nodes and components.
    pub mean: f64,
    /// Components whose reference field vanishes; reported as absolute differences.
    pub absolute: [bool; 3],
}

/// `|u_nn,i - u_ref,i| / max |u_ref,i| * 100` per node and component.
pub fn relative_difference(u_nn: &Tensor, u_ref: &Tensor) -> Result<RelativeDifference> {
    if u_nn.shape() != u_ref.shape() || u_nn.cols() != 3 {
        return Err(DemError::Contract(format!("shapes {:?} and {:?} differ", u_nn.shape(), u_ref.shape())));
    }
    let n = u_nn.rows();
    let mut absolute = [false; 3];
    let scale: [f64; 3] = std::array::from_fn(|c| {
        let m = (0..n).map(|r| u_ref.get(r, c).abs()).fold(0.0, f64::max);
        if m == 0.0 {
            absolute[c] = true;
            1.0
        } else {
            100.0 / m
        }
    });
    let per_node: Vec<[f64; 3]> = (0..n)
        .map(|r| std::array::from_fn(|c| (u_nn.get(r, c) - u_ref.get(r, c)).abs() * scale[c]))
        .collect();
    let component_means: [f64; 3] = std::array::from_fn(|c| {
        let v: Vec<f64> = per_node.iter().map(|p| p[c]).collect();
        pairwise_sum(&v) / n.max(1) as f64
    });
    let mean = component_means.iter().sum::<f64>() / 3.0;
    Ok(RelativeDifference { per_node, component_means, mean, absolute })
}

/// Worst relative mismatch between the reverse-mode directional derivative
/// and central differences along random unit directions.
pub fn fd_gradient_audit(prog: &dyn DiffProgram, theta: &[f64], n_probes: usize, seed: u64) -> Result<f64> {
    let (_, g) = value_and_parameter_gradient(prog, theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let mut v: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + h * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - h * d).collect();
        let fd = (value(prog, &plus)? - value(prog, &minus)?) / (2.0 * h);
        let an = dot(&g, &v);
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}
