//! Optimizer, stopping rules and divergence detection.

mod lbfgs;

use std::time::Instant;

pub use lbfgs::{lbfgs_minimize, OptimOutcome, StopReason, TrainConfig};

use crate::assembly::{DemLoss, GradientOperator, VolumeRule};
use crate::error::Result;
use crate::grid::HexMesh;
use crate::tensor::Tensor;

/// Default bound on the Frobenius norm of a displacement gradient before a
/// field counts as localized.
pub const LOCALIZATION_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
    pub wall_time: f64,
    pub stop_reason: StopReason,
    pub diverged: bool,
    pub localization_flag: bool,
    pub localization_metric: f64,
    pub epochs: usize,
    pub updates: usize,
    pub non_finite_op: Option<&'static str>,
    pub final_u: Tensor,
}

/// Largest Frobenius norm of the shape-function displacement gradient over
/// all integration points of a prebuilt operator.
pub fn localization_metric(u: &Tensor, op: &GradientOperator) -> f64 {
    (0..op.n_points()).map(|g| op.gradient_at(u.data(), g).norm()).fold(0.0, f64::max)
}

/// Shape-function audit of a nodal field: `(metric > threshold, metric)`.
pub fn detect_localization(u: &Tensor, mesh: &HexMesh, threshold: f64) -> Result<(bool, f64)> {
    let op = GradientOperator::new(mesh, VolumeRule::Gauss2x2x2)?;
    let m = localization_metric(u, &op);
    Ok((m > threshold, m))
}

/// Minimizes `loss` from `theta0` and audits the final field.
pub fn train(loss: &DemLoss, theta0: &[f64], cfg: &TrainConfig, threshold: f64) -> Result<(Vec<f64>, TrainReport)> {
    let start = Instant::now();
    let out = lbfgs_minimize(loss, theta0, cfg)?;
    let wall_time = start.elapsed().as_secs_f64();
    let final_u = loss.displacement(&out.theta)?;
    let metric = if final_u.all_finite() { localization_metric(&final_u, loss.gradient_operator()) } else { f64::INFINITY };
    let localization_flag = !(metric <= threshold);
    let final_loss = out.loss_history.last().copied().unwrap_or(f64::NAN);
    let report = TrainReport {
        final_loss,
        wall_time,
        stop_reason: out.stop_reason,
        diverged: out.stop_reason == StopReason::NonFinite || localization_flag,
        localization_flag,
        localization_metric: metric,
        epochs: out.epochs,
        updates: out.updates,
        non_finite_op: out.non_finite_op,
        loss_history: out.loss_history,
        final_u,
    };
    Ok((out.theta, report))
}
