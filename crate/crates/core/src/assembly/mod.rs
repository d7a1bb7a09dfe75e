//! Discrete potential energy under either gradient engine, plus the
//! boundary work term.

mod demo;
mod energy;
mod loss;
mod quadrature;

pub use demo::{demo_1d, DemoScheme};
pub use energy::{
    axis_weights, external_work, integrate_nodal, internal_energy_ad, internal_energy_sf, nodal_forces,
    nodal_gradients_ad, nodal_weights, sf_energy, sf_internal_force, sf_tangent_apply, NodalScheme, TractionSpec,
    WorkMode,
};
pub use loss::{DemLoss, GradientMode, LossConfig};
pub use quadrature::{shape_gradients, GradientOperator, PointGradients, QuadratureRule, VolumeRule};
