use crate::error::{ensure, Result};
use crate::model::Params;
use crate::numcore::Tensor;

/// Adam with decoupled weight decay, applied to weight matrices only.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &Params, lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Tensor]) -> Result<()> {
        ensure!(grads.len() == params.tensors.len(), Shape, "gradient count mismatch");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            ensure!(g.shape() == params.tensors[i].shape(), Shape, "gradient {i} shape mismatch");
            let decay = if params.is_matrix(i) { self.weight_decay } else { 0.0 };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.tensors[i].data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                p[k] -= self.lr * (update + decay * p[k]);
            }
        }
        Ok(())
    }
}
