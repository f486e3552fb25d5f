//! Closed-form forward noising and the clean-image/noise conversion used by
//! training and sampling.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::schedule::NoiseSchedule;

/// One noised training sample: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
#[derive(Debug, Clone)]
pub struct NoisedSample {
    pub x_t: Tensor,
    pub t: usize,
    pub eps: Tensor,
}

pub fn q_sample(s: &NoiseSchedule, x0: &Tensor, t: usize, eps: &Tensor) -> Result<NoisedSample> {
    if t < 1 || t > s.t_max() {
        return Err(Error::range("q_sample timestep", format!("t={t}")));
    }
    if x0.shape() != eps.shape() {
        return Err(Error::shape("q_sample noise", x0.shape(), eps.shape()));
    }
    let a = s.alpha_bar(t).sqrt() as f32;
    let b = s.sigma(t) as f32;
    let x_t = x0.zip(eps, |x, e| a * x + b * e)?;
    Ok(NoisedSample { x_t, t, eps: eps.clone() })
}

/// Invert the forward map: eps = (x_t - sqrt(abar_t) x0_hat) / sqrt(1-abar_t).
pub fn eps_from_x0(s: &NoiseSchedule, x_t: &Tensor, x0_hat: &Tensor, t: usize) -> Result<Tensor> {
    if t < 1 || t > s.t_max() {
        return Err(Error::range("eps_from_x0 timestep", format!("t={t}")));
    }
    let ab = s.alpha_bar(t);
    if ab >= 1.0 {
        return Err(Error::range("eps_from_x0", format!("alpha_bar({t}) = 1 divides by zero")));
    }
    if x_t.shape() != x0_hat.shape() {
        return Err(Error::shape("eps_from_x0", x_t.shape(), x0_hat.shape()));
    }
    let a = ab.sqrt() as f32;
    let inv = (1.0 / (1.0 - ab).sqrt()) as f32;
    x_t.zip(x0_hat, |xt, x0| (xt - a * x0) * inv)
}

/// Recover x0_hat from a noise prediction: x0 = (x_t - sqrt(1-abar) eps) / sqrt(abar).
pub fn x0_from_eps(x_t: &Tensor, eps_hat: &Tensor, abar: f64) -> Result<Tensor> {
    if x_t.shape() != eps_hat.shape() {
        return Err(Error::shape("x0_from_eps", x_t.shape(), eps_hat.shape()));
    }
    let sig = (1.0 - abar).sqrt() as f32;
    let inv = (1.0 / abar.sqrt()) as f32;
    x_t.zip(eps_hat, |xt, e| (xt - sig * e) * inv)
}
