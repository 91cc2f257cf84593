//! Adam optimizer with global-norm gradient clipping.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::nn::params::Params;

/// Adam with bias correction; state is keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Parameters absent from `grads` are
    /// left untouched and their moments do not advance.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, ArrayD<f64>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads {
            let value = params.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            *m = &*m * self.beta1 + grad * (1.0 - self.beta1);
            *v = &*v * self.beta2 + &(grad * grad) * (1.0 - self.beta2);
            let m_hat = &*m / bc1;
            let v_hat = &*v / bc2;
            let update = &m_hat / &(v_hat.mapv(f64::sqrt) + self.eps);
            *value -= &(update * self.lr);
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, ArrayD<f64>>, max_norm: f64) -> f64 {
    let total: f64 = grads
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            *g *= scale;
        }
    }
    norm
}
