use crate::autograd::{Gradients, ParamStore};
use crate::tensor::Tensor;

/// First and second moment estimates, indexed like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros(store: &ParamStore) -> Self {
        let z: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { step: 0, m: z.clone(), v: z }
    }

    pub fn round_to_f32(&mut self) {
        for t in self.m.iter_mut().chain(&mut self.v) {
            for x in t.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, state: AdamState::zeros(store) }
    }

    /// One bias-corrected update of every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, grad) in grads.params() {
            let Some(grad) = grad else { continue };
            let i = id.index();
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            let p = store.get_mut(id);
            for (((w, &g), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}
