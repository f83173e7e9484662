use super::{ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    RmsProp,
    Adam,
}

pub const RMSPROP_SMOOTHING: f64 = 0.9;
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const OPT_EPS: f64 = 1e-8;

/// Moment buffers and schedule for one parameter set.
///
/// The learning rate is `initial * decay_factor^(epoch / decay_epoch)`, so the
/// decay fires exactly once at every `decay_epoch` boundary.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub initial_lr: f64,
    pub decay_factor: f64,
    /// Zero disables the schedule.
    pub decay_epoch: usize,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, learning_rate: f64, decay_factor: f64, decay_epoch: usize) -> Result<Self> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::config(format!("learning rate must be finite and non-negative, got {learning_rate}")));
        }
        Ok(OptimizerState {
            algorithm,
            initial_lr: learning_rate,
            decay_factor,
            decay_epoch,
            lr: learning_rate,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Sets the learning rate for a zero-based epoch index.
    pub fn begin_epoch(&mut self, epoch: usize) {
        let decays = epoch.checked_div(self.decay_epoch).unwrap_or(0);
        self.lr = self.initial_lr * self.decay_factor.powi(decays as i32);
    }

    /// Applies one update from the gradients stored on `params`, then clears them.
    pub fn step<T: Real>(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if let Some(pos) = params.tensors().position(|t| t.grad().is_none()) {
            return Err(Error::usage(format!("parameter tensor {pos} has no gradient")));
        }
        if self.first.is_empty() {
            self.first = params.tensors().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.layers().len() * 2 {
            return Err(Error::usage("optimizer state belongs to a different parameter set"));
        }
        self.step += 1;
        let lr = self.lr;
        let t = self.step as i32;
        for (i, tensor) in params.tensors_mut().enumerate() {
            let grad: Vec<f64> = tensor.grad().expect("checked above").iter().map(|g| g.f64()).collect();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            if m.len() != grad.len() {
                return Err(Error::usage("optimizer moment buffer shape mismatch"));
            }
            let data = tensor.data_mut();
            match self.algorithm {
                Algorithm::RmsProp => {
                    let rho = RMSPROP_SMOOTHING;
                    for ((p, &g), s) in data.iter_mut().zip(&grad).zip(v.iter_mut()) {
                        *s = rho * *s + (1.0 - rho) * g * g;
                        if g != 0.0 {
                            *p = T::c(p.f64() - lr * g / (*s + OPT_EPS).sqrt());
                        }
                    }
                }
                Algorithm::Adam => {
                    let (b1, b2) = ADAM_BETAS;
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    for (((p, &g), m1), m2) in data.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m1 = b1 * *m1 + (1.0 - b1) * g;
                        *m2 = b2 * *m2 + (1.0 - b2) * g * g;
                        if *m1 != 0.0 {
                            let mhat = *m1 / c1;
                            let vhat = *m2 / c2;
                            *p = T::c(p.f64() - lr * mhat / (vhat.sqrt() + OPT_EPS));
                        }
                    }
                }
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}
