//! Adam with bias correction and a per-epoch exponential learning-rate decay.

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty folded into the gradient. Off by default.
    pub weight_decay: f64,
    /// Global gradient-norm clip. Off by default.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

/// Moment buffers, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn for_params(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![T::zero(); t.numel()]).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::for_params(store),
        }
    }

    /// One update from the gradients accumulated in `store`.
    ///
    /// Every gradient is validated before any parameter changes, so a
    /// non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.state.m.len() {
            return Err(TensorError::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.m.len(),
                store.len()
            )));
        }
        let mut sq_norm = 0.0f64;
        for (id, name, t) in store.iter() {
            if self.state.m[id.index()].len() != t.numel() {
                return Err(TensorError::Config(format!("optimizer state shape differs for {name}")));
            }
            if let Some(g) = t.grad() {
                if !g.iter().all(|x| x.is_finite()) {
                    return Err(TensorError::NonFinite(format!("gradient of {name}")));
                }
                sq_norm += g.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>();
            }
        }
        let clip = match self.config.max_grad_norm {
            Some(max) if sq_norm.sqrt() > max => max / sq_norm.sqrt(),
            _ => 1.0,
        };

        self.state.step += 1;
        let t = self.state.step as i32;
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let eps = T::from_f64(c.epsilon);
        let lr = T::from_f64(lr);
        let wd = T::from_f64(c.weight_decay);
        let clip = T::from_f64(clip);

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let Some(grad) = p.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let m = &mut self.state.m[id.index()];
            let v = &mut self.state.v[id.index()];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j] * clip + wd * *w;
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Exponential decay applied once per completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub eta0: f64,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn new(eta0: f64, gamma: f64) -> Self {
        Self { eta0, gamma }
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        self.eta0 * self.gamma.powi(epoch as i32)
    }
}
