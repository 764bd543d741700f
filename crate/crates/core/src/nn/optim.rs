//! AdaDelta with the usual accumulator rule.

use super::{cast, Model, Scalar};

/// Per-parameter running averages of squared gradients and squared updates.
pub struct AdaDelta<F: Scalar> {
    rho: f64,
    eps: f64,
    acc_grad: Vec<Vec<F>>,
    acc_update: Vec<Vec<F>>,
}

impl<F: Scalar> AdaDelta<F> {
    pub fn new(rho: f64, eps: f64) -> Self {
        AdaDelta {
            rho,
            eps,
            acc_grad: Vec::new(),
            acc_update: Vec::new(),
        }
    }

    /// rho = 0.95, eps = 1e-7.
    pub fn default_params() -> Self {
        AdaDelta::new(0.95, 1e-7)
    }

    /// Apply one update from the gradients currently stored in the model,
    /// then clear them.
    pub fn step(&mut self, model: &mut Model<F>) {
        let rho = cast::<F>(self.rho);
        let one_m_rho = cast::<F>(1.0 - self.rho);
        let eps = cast::<F>(self.eps);
        let (acc_grad, acc_update) = (&mut self.acc_grad, &mut self.acc_update);
        model.visit_params(|idx, params, grads| {
            while acc_grad.len() <= idx {
                acc_grad.push(Vec::new());
                acc_update.push(Vec::new());
            }
            if acc_grad[idx].len() != params.len() {
                acc_grad[idx] = vec![F::zero(); params.len()];
                acc_update[idx] = vec![F::zero(); params.len()];
            }
            for i in 0..params.len() {
                let g = grads[i];
                let eg = rho * acc_grad[idx][i] + one_m_rho * g * g;
                acc_grad[idx][i] = eg;
                let delta = -((acc_update[idx][i] + eps) / (eg + eps)).sqrt() * g;
                acc_update[idx][i] = rho * acc_update[idx][i] + one_m_rho * delta * delta;
                params[i] = params[i] + delta;
                grads[i] = F::zero();
            }
        });
    }
}
