use crate::autodiff::{Array, Gradients, ParamStore};

/// Adam with global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64, clip: f64) -> Self {
        let zeros: Vec<Array> = store.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            clip,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Clip `grads` in place; returns the norm before clipping.
    pub fn clip_grads(&self, grads: &mut Gradients) -> f64 {
        let norm = grads.global_norm();
        if norm > self.clip {
            grads.scale(self.clip / norm);
        }
        norm
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}
