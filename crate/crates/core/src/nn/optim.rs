use crate::error::{invalid, Result};
use crate::nn::{NetParams, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;

/// AdaMax moments for every parameter tensor, in [`NetParams::tensors`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaMaxState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
}

impl<T: Scalar> AdaMaxState<T> {
    pub fn new(params: &NetParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::ZERO; t.2.len()]).collect();
        Self { step: 0, m: zeros.clone(), u: zeros }
    }

    pub fn cast<U: Scalar>(&self) -> AdaMaxState<U> {
        let conv = |v: &Vec<Vec<T>>| v.iter().map(|t| t.iter().map(|x| U::from_f64(x.to_f64())).collect()).collect();
        AdaMaxState { step: self.step, m: conv(&self.m), u: conv(&self.u) }
    }
}

/// One AdaMax update; cells whose infinity-norm accumulator is zero are left alone.
pub fn adamax_step<T: Scalar>(
    params: &mut NetParams<T>,
    grads: &NetParams<T>,
    state: &mut AdaMaxState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(invalid(format!("learning rate must be positive, got {lr}")));
    }
    if grads.plan != params.plan || state.m.len() != params.layers.len() * 2 {
        return Err(invalid("optimizer state or gradients do not match the parameters"));
    }
    state.step += 1;
    let (b1, b2) = (T::from_f64(BETA1), T::from_f64(BETA2));
    let one_minus_b1 = T::from_f64(1.0 - BETA1);
    let scale = T::from_f64(lr / (1.0 - BETA1.powi(state.step.min(i32::MAX as u64) as i32)));
    let grad_tensors = grads.tensors();
    for (i, p) in params.tensors_mut().into_iter().enumerate() {
        let g = grad_tensors[i].2;
        let (m, u) = (&mut state.m[i], &mut state.u[i]);
        if g.len() != p.len() || m.len() != p.len() {
            return Err(invalid("optimizer tensor size mismatch"));
        }
        for j in 0..p.len() {
            m[j] = b1 * m[j] + one_minus_b1 * g[j];
            let decayed = b2 * u[j];
            let ag = g[j].abs();
            u[j] = if ag > decayed { ag } else { decayed };
            if u[j] > T::ZERO {
                p[j] -= scale * m[j] / u[j];
            }
        }
    }
    Ok(())
}
