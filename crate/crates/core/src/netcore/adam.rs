//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient entry are left
    /// untouched (e.g. a frozen sub-model bound elsewhere).
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Array2<f64>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            for ((pv, gv), (mv, vv)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Moment arrays for checkpointing, keyed `adam_m.<name>` / `adam_v.<name>`.
    pub fn state_arrays(&self) -> BTreeMap<String, Array2<f64>> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.m {
            out.insert(format!("adam_m.{k}"), v.clone());
        }
        for (k, v) in &self.v {
            out.insert(format!("adam_v.{k}"), v.clone());
        }
        out
    }

    /// Restores moments saved by [`Adam::state_arrays`].
    pub fn restore(&mut self, step: u64, arrays: &BTreeMap<String, Array2<f64>>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (k, v) in arrays {
            if let Some(name) = k.strip_prefix("adam_m.") {
                self.m.insert(name.to_string(), v.clone());
            } else if let Some(name) = k.strip_prefix("adam_v.") {
                self.v.insert(name.to_string(), v.clone());
            }
        }
    }

    /// Rounds moments through f32 to match checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for v in self.m.values_mut() {
            v.mapv_inplace(|x| x as f32 as f64);
        }
        for v in self.v.values_mut() {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}
