use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Adam {
            config,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter in place, then zeroes the gradients.
    ///
    /// `grads` is indexed like the store; a `None` entry aborts before any
    /// parameter changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Config(alloc::format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            match &grads[id.index()] {
                None => return Err(Error::MissingGrad(store.name(id).into())),
                Some(g) if g.len() != store.get(id).len() => {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: store.get(id).shape().to_vec(),
                        rhs: vec![g.len()],
                    })
                }
                Some(_) => {}
            }
        }
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.steps as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let g = grads[k].as_mut().expect("checked above");
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (((p, gi), mi), vi) in store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= learning_rate * m_hat / (math::sqrt(v_hat) + epsilon);
            }
            g.fill(0.0);
        }
        Ok(())
    }
}
