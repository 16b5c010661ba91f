use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{join, Module, Param, Visitor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with per-parameter moment buffers keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

struct Update<'a> {
    cfg: AdamConfig,
    t: u64,
    moments: &'a mut BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Visitor for Update<'_> {
    fn param(&mut self, name: &str, p: &mut Param) {
        let n = p.value.len();
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let values = p.value.as_slice_mut().expect("standard layout");
        let grads = p.grad.as_slice_mut().expect("standard layout");
        for k in 0..n {
            let g = grads[k];
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            values[k] -= c.learning_rate * mh / (vh.sqrt() + c.eps);
            grads[k] = 0.0;
        }
    }
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every listed module, then zero their gradients.
    pub fn step(&mut self, modules: &mut [(&str, &mut dyn Module)]) {
        self.t += 1;
        let mut u = Update {
            cfg: self.config,
            t: self.t,
            moments: &mut self.moments,
        };
        for (name, m) in modules.iter_mut() {
            m.visit(&join("", name), &mut u);
        }
    }
}
