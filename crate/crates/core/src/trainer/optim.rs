use super::TrainError;
use crate::encoder::{EncoderParams, GradientBundle};

/// Plain SGD: `params <- params - lr * grads`.
pub fn sgd_step(params: &mut EncoderParams<f64>, grads: &GradientBundle<f64>, learning_rate: f64) -> Result<(), TrainError> {
    if !grads.all_finite() {
        return Err(TrainError::NonFiniteUpdate);
    }
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (x, &dx) in p.iter_mut().zip(g) {
            *x -= learning_rate * dx;
        }
    }
    if !params.all_finite() {
        return Err(TrainError::NonFiniteUpdate);
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<EncoderParams<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self { learning_rate, momentum, velocity: None }
    }

    pub fn step(&mut self, params: &mut EncoderParams<f64>, grads: &GradientBundle<f64>) -> Result<(), TrainError> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, self.learning_rate);
        }
        if !grads.all_finite() {
            return Err(TrainError::NonFiniteUpdate);
        }
        let v = self.velocity.get_or_insert_with(|| EncoderParams::zeros(params.shape));
        for (vt, g) in v.tensors_mut().into_iter().zip(grads.tensors()) {
            for (x, &dx) in vt.iter_mut().zip(g) {
                *x = self.momentum * *x + dx;
            }
        }
        sgd_step(params, &GradientBundle(v.clone()), self.learning_rate)
    }
}
