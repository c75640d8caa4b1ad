use alloc::string::ToString;
use alloc::vec::Vec;

use crate::math;
use crate::params::ParamStore;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and decoupled weight decay.
///
/// Each step first shrinks a parameter by `1 - lr * weight_decay`, then
/// applies the Adam delta `lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter. `grads[i]` is the gradient of the i-th
    /// parameter of `params`; `None` is treated as zero.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<&Matrix>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: (params.len(), 1),
                rhs: (grads.len(), 1),
            });
        }
        for ((_, name, p), g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        lhs: p.shape(),
                        rhs: g.shape(),
                    });
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(c.beta1, t);
        let bc2 = 1.0 - math::powi(c.beta2, t);
        let shrink = 1.0 - c.learning_rate * c.weight_decay;
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id).as_mut_slice();
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            let g = grads[k].map(|g| g.as_slice());
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] * shrink - c.learning_rate * m_hat / (math::sqrt(v_hat) + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Matrix::filled(1, 1, p)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), &s);
        let g = Matrix::zeros(1, 1);
        adam.step(&mut s, &[Some(&g)]).unwrap();
        assert_eq!(s.get(s.id("p").unwrap())[(0, 0)], 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), &s);
        let g = Matrix::filled(1, 1, 1.0);
        adam.step(&mut s, &[Some(&g)]).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction at t = 1
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(s.id("p").unwrap())[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.1), &s);
        adam.step(&mut s, &[None]).unwrap();
        assert!((s.get(s.id("p").unwrap())[(0, 0)] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), &s);
        let g = Matrix::filled(1, 1, f64::NAN);
        assert_eq!(
            adam.step(&mut s, &[Some(&g)]),
            Err(Error::NonFiniteGradient("p".into()))
        );
        assert_eq!(adam.steps(), 0);
        assert_eq!(s.get(s.id("p").unwrap())[(0, 0)], 1.0);
    }
}
