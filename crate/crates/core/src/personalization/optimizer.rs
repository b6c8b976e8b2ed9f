use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::nets::{GradTable, TrainableWeights};
use crate::params::TensorTable;

/// Adam with bias correction, keyed by `<group>/<tensor name>`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {}", learning_rate));
        }
        Ok(Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: BTreeMap::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Advances the shared step counter; call once per update before
    /// [`Adam::update_table`].
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update_table(&mut self, group: &str, table: &mut TensorTable, grads: &TensorTable) -> Result<()> {
        let t = self.t.max(1) as i32;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for (name, p) in table.iter_mut() {
            let g = grads.get(name)?;
            if g.shape() != p.shape() {
                return Err(invalid!("gradient for {} has shape {:?}, expected {:?}", name, g.shape(), p.shape()));
            }
            let (m, v) = self
                .moments
                .entry(format!("{group}/{name}"))
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.learning_rate * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }

    /// One update of `theta` and `phi`; the autoencoder is never touched.
    pub fn step(&mut self, weights: &mut TrainableWeights, grads: &GradTable) -> Result<()> {
        self.begin_step();
        self.update_table("theta", &mut weights.theta, &grads.theta)?;
        self.update_table("phi", &mut weights.phi, &grads.phi)?;
        weights.version += 1;
        Ok(())
    }
}
