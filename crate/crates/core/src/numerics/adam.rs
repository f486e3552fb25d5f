use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second-moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &ParamSet, hyper: AdamHyper) -> Self {
        let m = (0..params.len()).map(|i| Tensor::zeros(params.value(i).shape())).collect();
        let v = (0..params.len()).map(|i| Tensor::zeros(params.value(i).shape())).collect();
        AdamState { m, v, step: 0, hyper }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Math runs in f64; parameters and
/// accumulators are stored back as f32, so identical inputs give identical
/// bytes on every run.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("adam grads", &[params.len()], &[grads.len()]));
    }
    for i in 0..params.len() {
        if grads[i].shape() != params.value(i).shape() {
            return Err(Error::shape(
                format!("adam gradient for {}", params.name(i)),
                params.value(i).shape(),
                grads[i].shape(),
            ));
        }
        if grads[i].data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient for parameter {}", params.name(i))));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);

    for i in 0..params.len() {
        let g = grads[i].data();
        let p = params.value(i).data();
        let m = self_data(&state.m[i]);
        let v = self_data(&state.v[i]);
        let n = p.len();
        let mut new_p = Vec::with_capacity(n);
        let mut new_m = Vec::with_capacity(n);
        let mut new_v = Vec::with_capacity(n);
        for j in 0..n {
            let gj = g[j] as f64;
            let mj = h.beta1 * m[j] as f64 + (1.0 - h.beta1) * gj;
            let vj = h.beta2 * v[j] as f64 + (1.0 - h.beta2) * gj * gj;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            let upd = h.lr * m_hat / (v_hat.sqrt() + h.eps);
            new_p.push((p[j] as f64 - upd) as f32);
            new_m.push(mj as f32);
            new_v.push(vj as f32);
        }
        let shape = params.value(i).shape().to_vec();
        params.set_value(i, Tensor::new_unchecked(shape.clone(), new_p));
        state.m[i] = Tensor::new_unchecked(shape.clone(), new_m);
        state.v[i] = Tensor::new_unchecked(shape, new_v);
    }
    Ok(())
}

fn self_data(t: &Tensor) -> &[f32] {
    t.data()
}
