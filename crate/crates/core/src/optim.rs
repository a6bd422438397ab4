//! SGD, Adam, and a linear schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// `params − lr·grads`.
pub fn sgd_step(params: &ParamVector, grads: &ParamVector, lr: f32) -> Result<ParamVector> {
    params.check_layout(grads, "sgd_step")?;
    let mut out = params.clone();
    out.values_mut()
        .iter_mut()
        .zip(grads.values())
        .for_each(|(p, &g)| *p -= lr * g);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamVector) -> Self {
        Self {
            config,
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f32] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f32] {
        &self.v
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &ParamVector, grads: &ParamVector) -> Result<ParamVector> {
        params.check_layout(grads, "adam_step")?;
        if self.m.len() != params.len() {
            return Err(Error::Layout("adam_step"));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.t as i32);
        let step = (lr as f64 * bc2.sqrt() / bc1) as f32;
        let eps_hat = (eps as f64 * bc2.sqrt()) as f32;
        let mut out = params.clone();
        for (((p, &g), m), v) in out
            .values_mut()
            .iter_mut()
            .zip(grads.values())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step * *m / (v.sqrt() + eps_hat);
        }
        Ok(out)
    }
}

/// `start + (end − start)·step/total`, held at `end` past `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDecay {
    pub start_value: f64,
    pub end_value: f64,
    pub total_steps: u64,
}

impl LinearDecay {
    pub fn new(start_value: f64, end_value: f64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid("linear decay needs at least one step"));
        }
        Ok(Self {
            start_value,
            end_value,
            total_steps,
        })
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return self.end_value;
        }
        let s = step as f64;
        self.start_value + (self.end_value - self.start_value) * s / self.total_steps as f64
    }
}
