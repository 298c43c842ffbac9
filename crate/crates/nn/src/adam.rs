use crate::error::{NnError, Result};
use crate::params::{Gradients, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates and step counter for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update. Frozen tensors are skipped entirely.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.tensors.len() != params.len() || self.m.len() != params.len() {
            return Err(NnError::shape("adam step", &[params.len()], &[grads.tensors.len()]));
        }
        for (i, (p, g)) in params.iter().zip(&grads.tensors).enumerate() {
            if p.value.shape() != g.shape() || self.m[i].shape() != g.shape() {
                return Err(NnError::shape(format!("adam `{}`", p.name), p.value.shape(), g.shape()));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step = T::lit(lr / c1);
        let inv_c2 = T::lit(1.0 / c2);
        let eps = T::lit(epsilon);
        for (i, p) in params.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads.tensors[i].data();
            for (((w, m), v), &g) in p.value.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *w -= step * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
