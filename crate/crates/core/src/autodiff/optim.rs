use alloc::vec::Vec;

use super::params::ParamStore;
use super::tensor::{Real, Tensor};

/// `p -= lr * g` for every parameter.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: T) {
    for id in params.ids().collect::<Vec<_>>() {
        let g = &grads[id.index()];
        for (p, &gv) in params.value_mut(id).data.iter_mut().zip(&g.data) {
            *p = *p - lr * gv;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamWState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Decoupled weight decay (applied only to parameters flagged for decay)
/// followed by a bias-corrected Adam update.
pub fn adamw_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamWState<T>, grads: &[Tensor<T>], cfg: &AdamW) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for id in params.ids().collect::<Vec<_>>() {
        let i = id.index();
        let decay = if params.decays(id) {
            T::one() - lr * T::lit(cfg.weight_decay)
        } else {
            T::one()
        };
        let p = params.value_mut(id);
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for j in 0..p.data.len() {
            let gj = g.data[j];
            m.data[j] = b1 * m.data[j] + (T::one() - b1) * gj;
            v.data[j] = b2 * v.data[j] + (T::one() - b2) * gj * gj;
            let mhat = m.data[j] / c1;
            let vhat = v.data[j] / c2;
            p.data[j] = p.data[j] * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
