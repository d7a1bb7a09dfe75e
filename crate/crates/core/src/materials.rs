//! Constitutive models: small-strain linear elasticity and compressible
//! Neo-Hookean hyperelasticity.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Tape, Var};
use crate::error::{DemError, Result};
use crate::tensor::Tensor;

pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialModel {
    LinearElastic {
        #[serde(rename = "E")]
        e: f64,
        nu: f64,
    },
    NeoHookean {
        #[serde(rename = "C10")]
        c10: f64,
        #[serde(rename = "D1")]
        d1: f64,
    },
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaterialModel::LinearElastic { e, nu } => {
                if !(e > 0.0) {
                    return Err(DemError::InvalidMaterial(format!("E = {e} must be positive")));
                }
                if nu >= 0.5 {
                    return Err(DemError::IncompressibleLimit(nu));
                }
                if !(nu > -1.0) {
                    return Err(DemError::InvalidMaterial(format!("nu = {nu} must exceed -1")));
                }
            }
            MaterialModel::NeoHookean { c10, d1 } => {
                if !(c10 > 0.0 && d1 > 0.0) {
                    return Err(DemError::InvalidMaterial(format!(
                        "C10 = {c10} and D1 = {d1} must be positive"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_finite_strain(&self) -> bool {
        matches!(self, MaterialModel::NeoHookean { .. })
    }

    /// Strain energy density as a function of the displacement gradient.
    pub fn energy_density(&self, gradu: &Mat3) -> Result<f64> {
        match *self {
            MaterialModel::LinearElastic { e, nu } => {
                let eps = strain(gradu);
                Ok(energy_linear(&eps, &stress_linear(&eps, e, nu)?))
            }
            MaterialModel::NeoHookean { c10, d1 } => energy_neohookean(&deformation_gradient(gradu), c10, d1),
        }
    }

    /// `dPsi / d(grad u)`: Cauchy stress for the linear model, first
    /// Piola-Kirchhoff stress for the Neo-Hookean model.
    pub fn stress(&self, gradu: &Mat3) -> Result<Mat3> {
        match *self {
            MaterialModel::LinearElastic { e, nu } => stress_linear(&strain(gradu), e, nu),
            MaterialModel::NeoHookean { c10, d1 } => pk1_stress(&deformation_gradient(gradu), c10, d1),
        }
    }

    /// Directional derivative of [`MaterialModel::stress`] along `h`.
    pub fn stress_increment(&self, gradu: &Mat3, h: &Mat3) -> Result<Mat3> {
        match *self {
            MaterialModel::LinearElastic { e, nu } => stress_linear(&strain(h), e, nu),
            MaterialModel::NeoHookean { c10, d1 } => pk1_increment(&deformation_gradient(gradu), h, c10, d1),
        }
    }

    /// Energy density of each row of an `n x 9` tape value of row-major
    /// displacement gradients, built from differentiable tape operations.
    pub fn energy_density_on_tape(&self, tape: &mut Tape, gradu: Var) -> Result<Var> {
        match *self {
            MaterialModel::LinearElastic { e, nu } => {
                let (mu, lambda) = lame(e, nu)?;
                let gt = tape.select_cols(gradu, &TRANSPOSE_3X3)?;
                let sym = tape.add(gradu, gt)?;
                let eps = tape.scale(sym, 0.5)?;
                let tr = tape.trace3(eps)?;
                let tr2 = tape.mul(tr, tr)?;
                let ee = tape.sum_sq_rows(eps)?;
                let shear = tape.scale(ee, mu)?;
                let vol = tape.scale(tr2, 0.5 * lambda)?;
                tape.add(shear, vol)
            }
            MaterialModel::NeoHookean { c10, d1 } => {
                let eye = tape.constant(Tensor::from_vec(1, 9, IDENTITY_3X3.to_vec()));
                let f = tape.add_row(gradu, eye)?;
                let j = tape.det3(f)?;
                let i1 = tape.sum_sq_rows(f)?;
                let jm = tape.powf(j, -2.0 / 3.0)?;
                let ibar = tape.mul(jm, i1)?;
                let dev = tape.add_scalar(ibar, -3.0)?;
                let dev = tape.scale(dev, c10)?;
                let jm1 = tape.add_scalar(j, -1.0)?;
                let vol = tape.mul(jm1, jm1)?;
                let vol = tape.scale(vol, 1.0 / d1)?;
                tape.add(dev, vol)
            }
        }
    }
}

/// Column permutation mapping a row-major 3x3 matrix to its transpose.
pub const TRANSPOSE_3X3: [usize; 9] = [0, 3, 6, 1, 4, 7, 2, 5, 8];
pub const IDENTITY_3X3: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

/// Shear modulus and first Lame parameter.
pub fn lame(e: f64, nu: f64) -> Result<(f64, f64)> {
    if nu >= 0.5 {
        return Err(DemError::IncompressibleLimit(nu));
    }
    Ok((e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))))
}

pub fn strain(gradu: &Mat3) -> Mat3 {
    0.5 * (gradu + gradu.transpose())
}

pub fn stress_linear(eps: &Mat3, e: f64, nu: f64) -> Result<Mat3> {
    let (mu, lambda) = lame(e, nu)?;
    Ok(2.0 * mu * eps + lambda * eps.trace() * Mat3::identity())
}

pub fn energy_linear(eps: &Mat3, sigma: &Mat3) -> f64 {
    0.5 * sigma.component_mul(eps).sum()
}

pub fn deformation_gradient(gradu: &Mat3) -> Mat3 {
    gradu + Mat3::identity()
}

fn positive_det(f: &Mat3) -> Result<f64> {
    let j = f.determinant();
    if j > 0.0 {
        Ok(j)
    } else {
        Err(DemError::InvertedElement { det: j })
    }
}

/// `C10 (tr(Fb Fb^T) - 3) + (J - 1)^2 / D1` with `Fb = J^(-1/3) F`.
pub fn energy_neohookean(f: &Mat3, c10: f64, d1: f64) -> Result<f64> {
    let j = positive_det(f)?;
    let fbar = j.powf(-1.0 / 3.0) * f;
    let dev = (fbar * fbar.transpose()).trace() - 3.0;
    Ok(c10 * dev + (j - 1.0).powi(2) / d1)
}

pub fn pk1_stress(f: &Mat3, c10: f64, d1: f64) -> Result<Mat3> {
    let j = positive_det(f)?;
    let f_inv_t = f.try_inverse().ok_or(DemError::InvertedElement { det: j })?.transpose();
    let i1 = f.norm_squared();
    Ok(2.0 * c10 * j.powf(-2.0 / 3.0) * (f - (i1 / 3.0) * f_inv_t) + (2.0 / d1) * (j - 1.0) * j * f_inv_t)
}

/// Directional derivative `dP[H]` of [`pk1_stress`].
pub fn pk1_increment(f: &Mat3, h: &Mat3, c10: f64, d1: f64) -> Result<Mat3> {
    let j = positive_det(f)?;
    let f_inv = f.try_inverse().ok_or(DemError::InvertedElement { det: j })?;
    let f_inv_t = f_inv.transpose();
    let i1 = f.norm_squared();
    let tr_fih = (f_inv * h).trace();
    let f_h = f.component_mul(h).sum();
    let d_finv_t = -f_inv_t * h.transpose() * f_inv_t;
    let jm = j.powf(-2.0 / 3.0);

    let dev = -2.0 / 3.0 * jm * tr_fih * (f - (i1 / 3.0) * f_inv_t)
        + jm * (h - (2.0 / 3.0) * f_h * f_inv_t - (i1 / 3.0) * d_finv_t);
    let vol = (2.0 * j - 1.0) * j * tr_fih * f_inv_t + (j - 1.0) * j * d_finv_t;
    Ok(2.0 * c10 * dev + (2.0 / d1) * vol)
}
