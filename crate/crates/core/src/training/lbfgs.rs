use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::diffengine::{value_and_parameter_gradient, DiffProgram};
use crate::error::{DemError, Result};

/// Optimizer budget and stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Scales the first (steepest-descent) step and every memory restart.
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub inner_iters_per_epoch: usize,
    pub rel_loss_tol: f64,
    pub history_size: usize,
    pub max_halvings: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 20,
            inner_iters_per_epoch: 20,
            rel_loss_tol: 5e-5,
            history_size: 10,
            max_halvings: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.max_epochs > 0
            && self.inner_iters_per_epoch > 0
            && self.rel_loss_tol > 0.0
            && self.history_size > 0;
        if ok {
            Ok(())
        } else {
            Err(DemError::Contract(format!("training settings must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Converged,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub theta: Vec<f64>,
    /// Initial loss followed by the loss after each accepted update.
    pub loss_history: Vec<f64>,
    pub stop_reason: StopReason,
    pub epochs: usize,
    pub updates: usize,
    pub evaluations: usize,
    /// Operation that produced the first rejected non-finite value, if any.
    pub non_finite_op: Option<&'static str>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    cap: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alpha = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alpha.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alpha.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

enum Eval {
    Finite(f64, Vec<f64>),
    NonFinite(&'static str),
}

fn evaluate(prog: &dyn DiffProgram, theta: &[f64]) -> Result<Eval> {
    match value_and_parameter_gradient(prog, theta) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Ok(Eval::Finite(f, g)),
        Ok(_) => Ok(Eval::NonFinite("gradient")),
        Err(DemError::NonFiniteLoss { op }) => Ok(Eval::NonFinite(op)),
        Err(DemError::InvertedElement { .. }) => Ok(Eval::NonFinite("det")),
        Err(e) => Err(e),
    }
}

const ARMIJO: f64 = 1e-4;

/// Limited-memory BFGS with backtracking. The first update and every memory
/// restart take a steepest-descent step of length `lr * min(1, 1/|g|_1)`;
/// quasi-Newton updates start from the unit step. Each trial is halved up to
/// `max_halvings` times until the loss decreases (Armijo); non-finite trials
/// count as rejections.
pub fn lbfgs_minimize(prog: &dyn DiffProgram, theta0: &[f64], cfg: &TrainConfig) -> Result<OptimOutcome> {
    cfg.validate()?;
    let mut evaluations = 1;
    let (mut f, mut g) = match evaluate(prog, theta0)? {
        Eval::Finite(f, g) => (f, g),
        Eval::NonFinite(op) => {
            return Ok(OptimOutcome {
                theta: theta0.to_vec(),
                loss_history: vec![f64::NAN],
                stop_reason: StopReason::NonFinite,
                epochs: 0,
                updates: 0,
                evaluations,
                non_finite_op: Some(op),
            })
        }
    };
    let mut theta = theta0.to_vec();
    let mut history = vec![f];
    let mut memory = Memory { pairs: VecDeque::new(), cap: cfg.history_size };
    let mut updates = 0;
    let mut non_finite_op = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epoch_start = f;
    let mut epochs = 0;

    'outer: for epoch in 0..cfg.max_epochs {
        epochs = epoch + 1;
        for _ in 0..cfg.inner_iters_per_epoch {
            let gnorm1: f64 = g.iter().map(|v| v.abs()).sum();
            if gnorm1 == 0.0 {
                stop_reason = StopReason::Converged;
                break 'outer;
            }
            let mut accepted = None;
            let mut all_non_finite = true;
            // Quasi-Newton direction first, steepest descent as the restart.
            for restart in [false, true] {
                if restart {
                    memory.pairs.clear();
                }
                let (d, mut step) = if memory.pairs.is_empty() {
                    (g.iter().map(|v| -v).collect::<Vec<_>>(), cfg.learning_rate * (1.0 / gnorm1).min(1.0))
                } else {
                    (memory.direction(&g), 1.0)
                };
                let slope = dot(&g, &d);
                if slope >= 0.0 {
                    continue;
                }
                for _ in 0..=cfg.max_halvings {
                    let trial: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + step * di).collect();
                    evaluations += 1;
                    match evaluate(prog, &trial)? {
                        Eval::Finite(ft, gt) => {
                            all_non_finite = false;
                            if ft <= f + ARMIJO * step * slope {
                                accepted = Some((trial, ft, gt));
                                break;
                            }
                        }
                        Eval::NonFinite(op) => {
                            non_finite_op.get_or_insert(op);
                        }
                    }
                    step *= 0.5;
                }
                if accepted.is_some() || memory.pairs.is_empty() {
                    break;
                }
            }
            let Some((trial, ft, gt)) = accepted else {
                stop_reason = if all_non_finite { StopReason::NonFinite } else { StopReason::Converged };
                break 'outer;
            };
            let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
            memory.push(s, y);
            theta = trial;
            f = ft;
            g = gt;
            updates += 1;
            history.push(f);
        }
        let rel = (f - epoch_start).abs() / epoch_start.abs().max(f64::MIN_POSITIVE);
        log::info!("epoch {epochs:>3}  loss {f:.6e}  rel change {rel:.3e}");
        if rel < cfg.rel_loss_tol {
            stop_reason = StopReason::Converged;
            break;
        }
        epoch_start = f;
    }

    if stop_reason != StopReason::NonFinite {
        non_finite_op = None;
    }
    Ok(OptimOutcome { theta, loss_history: history, stop_reason, epochs, updates, evaluations, non_finite_op })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::{FnProgram, Tape};
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_bowl_in_one_epoch() {
        let c = [1.0, -2.0, 0.5, 3.0];
        let prog = FnProgram::new(4, move |tape: &mut Tape, t| {
            let cv = tape.constant(Tensor::from_vec(1, 4, c.to_vec()));
            let d = tape.sub(t, cv)?;
            tape.dot(d, d)
        });
        let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
        let out = lbfgs_minimize(&prog, &[0.0; 4], &cfg).unwrap();
        assert!(*out.loss_history.last().unwrap() < 1e-10, "{:?}", out.loss_history);
        for (a, b) in out.theta.iter().zip(c) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    fn rosenbrock() -> impl DiffProgram {
        FnProgram::new(2, |tape: &mut Tape, t| {
            let x = tape.slice(t, 0, 1, 1)?;
            let y = tape.slice(t, 1, 1, 1)?;
            let a = tape.scale(x, -1.0)?;
            let a = tape.add_scalar(a, 1.0)?;
            let a2 = tape.mul(a, a)?;
            let x2 = tape.mul(x, x)?;
            let b = tape.sub(y, x2)?;
            let b2 = tape.mul(b, b)?;
            let b2 = tape.scale(b2, 100.0)?;
            tape.add(a2, b2)
        })
    }

    #[test]
    fn rosenbrock_within_budget() {
        let cfg = TrainConfig { rel_loss_tol: 1e-300, ..TrainConfig::default() };
        let out = lbfgs_minimize(&rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        assert!(out.updates <= 400);
        assert!(*out.loss_history.last().unwrap() < 1e-6, "{:?}", &out.loss_history[out.loss_history.len() - 3..]);
    }

    #[test]
    fn history_is_monotone() {
        let out = lbfgs_minimize(&rosenbrock(), &[0.3, -0.8], &TrainConfig::default()).unwrap();
        assert!(out.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_is_reported() {
        let prog = FnProgram::new(1, |tape: &mut Tape, t| {
            let p = tape.powf(t, 0.5)?;
            tape.sum(p)
        });
        let out = lbfgs_minimize(&prog, &[-1.0], &TrainConfig::default()).unwrap();
        assert_eq!(out.stop_reason, StopReason::NonFinite);
        assert_eq!(out.non_finite_op, Some("powf"));
        assert_eq!(out.theta, vec![-1.0]);
        assert_eq!(out.loss_history.len(), 1);
    }

    #[test]
    fn wall_of_non_finite_values_is_never_accepted() {
        // sqrt(1 - t) decreases toward t = 1 and is undefined beyond it.
        let prog = FnProgram::new(1, |tape: &mut Tape, t| {
            let a = tape.scale(t, -1.0)?;
            let a = tape.add_scalar(a, 1.0)?;
            let p = tape.powf(a, 0.5)?;
            tape.sum(p)
        });
        let cfg = TrainConfig { learning_rate: 10.0, ..TrainConfig::default() };
        let out = lbfgs_minimize(&prog, &[0.0], &cfg).unwrap();
        assert!(out.theta[0] < 1.0);
        assert!(out.loss_history.iter().all(|v| v.is_finite()));
        assert!(out.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(*out.loss_history.last().unwrap() < 0.1);
    }
}
