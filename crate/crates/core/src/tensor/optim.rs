//! Adam with bias correction, and the cosine-annealing learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
///
/// `name` identifies the parameter in the error raised for a non-finite
/// gradient; nothing is modified in that case.
pub fn adam_step(
    name: &str,
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() || param.len() != state.v.len() {
        return Err(Error::shape(
            format!("{} values for `{name}`", param.len()),
            format!("gradient {} / state {}", grad.len(), state.m.len()),
        ));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric { param: name.into() });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a fixed list of parameter slots.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, slot_lens: impl IntoIterator<Item = usize>) -> Self {
        Adam {
            config,
            states: slot_lens.into_iter().map(AdamState::new).collect(),
        }
    }

    pub fn state(&self, slot: usize) -> &AdamState {
        &self.states[slot]
    }

    /// Updates slot `slot`; a missing gradient counts as all zeros.
    pub fn step(&mut self, slot: usize, name: &str, param: &mut [f64], grad: Option<&[f64]>, lr: f64) -> Result<()> {
        let zeros;
        let grad = match grad {
            Some(g) => g,
            None => {
                zeros = vec![0.0; param.len()];
                &zeros
            }
        };
        adam_step(name, param, grad, &mut self.states[slot], &self.config, lr)
    }
}

/// Cosine-annealed learning rate per epoch.
///
/// By default the angle is `π·(t mod T_max)/T_max`, so the schedule restarts
/// every `T_max` epochs. `restart = false` uses `t` directly and
/// `with_pi = false` drops the π from the angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub t_max: u32,
    pub restart: bool,
    pub with_pi: bool,
}

impl CosineSchedule {
    pub fn new(eta_max: f64, eta_min: f64, t_max: u32) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::config("T_max must be at least 1"));
        }
        if !eta_min.is_finite() || !eta_max.is_finite() || eta_max < eta_min {
            return Err(Error::config(format!(
                "maximum learning rate {eta_max} is below the minimum {eta_min}"
            )));
        }
        Ok(CosineSchedule {
            eta_max,
            eta_min,
            t_max,
            restart: true,
            with_pi: true,
        })
    }

    pub fn lr(&self, epoch: u32) -> f64 {
        let t = if self.restart { epoch % self.t_max } else { epoch };
        let mut angle = f64::from(t) / f64::from(self.t_max);
        if self.with_pi {
            angle *= PI;
        }
        self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (1.0 + angle.cos())
    }
}

/// Learning rate of the default (restarting, π) schedule at epoch `t`.
pub fn cosine_lr(t: u32, eta_max: f64, eta_min: f64, t_max: u32) -> Result<f64> {
    Ok(CosineSchedule::new(eta_max, eta_min, t_max)?.lr(t))
}
