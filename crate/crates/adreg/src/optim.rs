//! Adam on flat parameter vectors, plus per-epoch scalar schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam optimizer state for one flat parameter vector.
///
/// Standard configuration: beta1 = 0.9, beta2 = 0.999, eps = 1e-8, with
/// bias-corrected moment estimates. The learning rate is public so a
/// schedule can update it between steps without resetting the moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One in-place Adam update. Rejects non-finite gradients so a numerical
/// blow-up stops the run at the step that produced it instead of
/// propagating NaN into the parameters.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam state holds {} parameters, got {} params / {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite gradient component {i} at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Epoch-indexed scalar schedule for learning rates and batch sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `base` at every epoch.
    Constant { base: f64 },
    /// `base * rate^epoch`.
    ExponentialDecay { base: f64, rate: f64 },
    /// `base * rate^floor(epoch / interval)`.
    StepDecay {
        base: f64,
        rate: f64,
        interval: u32,
    },
}

impl Schedule {
    pub fn constant(base: f64) -> Schedule {
        Schedule::Constant { base }
    }

    pub fn exponential(base: f64, rate: f64) -> Schedule {
        Schedule::ExponentialDecay { base, rate }
    }

    pub fn step(base: f64, rate: f64, interval: u32) -> Schedule {
        Schedule::StepDecay {
            base,
            rate,
            interval,
        }
    }

    /// Base > 0 and rate > 0 (rates above 1 grow, used for batch sizes).
    pub fn validate(&self, what: &str) -> Result<()> {
        let (base, rate) = match *self {
            Schedule::Constant { base } => (base, 1.0),
            Schedule::ExponentialDecay { base, rate } => (base, rate),
            Schedule::StepDecay {
                base,
                rate,
                interval,
            } => {
                if interval == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "{what}: step schedule interval must be at least 1"
                    )));
                }
                (base, rate)
            }
        };
        if !base.is_finite() || base <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{what}: schedule base must be positive, got {base}"
            )));
        }
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{what}: schedule rate must be positive, got {rate}"
            )));
        }
        Ok(())
    }

    pub fn value(&self, epoch: usize) -> f64 {
        match *self {
            Schedule::Constant { base } => base,
            Schedule::ExponentialDecay { base, rate } => base * rate.powi(epoch as i32),
            Schedule::StepDecay {
                base,
                rate,
                interval,
            } => base * rate.powi((epoch / interval as usize) as i32),
        }
    }

    /// Schedule value rounded to an integer batch size, never below 1.
    pub fn batch_size(&self, epoch: usize) -> usize {
        (self.value(epoch).round() as i64).max(1) as usize
    }
}
