//! Adam optimizer over a flat parameter vector.

use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates. `step` performs gradient
/// *descent*; callers maximizing an objective pass the gradient of its
/// negation.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    /// Standard coefficients: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Rebuild from checkpointed moments.
    pub fn restore(t: u64, m: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::DimMismatch {
                what: "adam moment vectors",
                expected: m.len(),
                got: v.len(),
            });
        }
        Ok(Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t,
            m,
            v,
        })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Number of updates applied so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// First and second moment accumulators, in parameter order.
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One descent update in place.
    pub fn step(&mut self, lr: f64, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::DimMismatch {
                what: "adam parameter vector",
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grad.len() != self.m.len() {
            return Err(Error::DimMismatch {
                what: "adam gradient vector",
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
