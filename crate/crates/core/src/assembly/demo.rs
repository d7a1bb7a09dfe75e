//! Two-node bar with unit stiffness, unit end load and a localized
//! perturbation `u(x) = x + (du / 2) (tanh(20 (x - 0.5)) + 1)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoScheme {
    /// Analytic nodal derivatives, trapezoidal integration.
    AdTrapezoid,
    /// One-point Gauss with the linear-element gradient.
    SfGauss1,
}

const SHARPNESS: f64 = 20.0;

fn field(x: f64, du: f64) -> f64 {
    x + 0.5 * du * ((SHARPNESS * (x - 0.5)).tanh() + 1.0)
}

fn field_slope(x: f64, du: f64) -> f64 {
    let t = (SHARPNESS * (x - 0.5)).tanh();
    1.0 + 0.5 * du * SHARPNESS * (1.0 - t * t)
}

/// Potential energy of the perturbed bar under the given scheme.
pub fn demo_1d(du: f64, scheme: DemoScheme) -> f64 {
    let internal = match scheme {
        DemoScheme::AdTrapezoid => 0.5 * (0.5 * field_slope(0.0, du).powi(2) + 0.5 * field_slope(1.0, du).powi(2)),
        DemoScheme::SfGauss1 => 0.5 * (field(1.0, du) - field(0.0, du)).powi(2),
    };
    internal - field(1.0, du)
}
