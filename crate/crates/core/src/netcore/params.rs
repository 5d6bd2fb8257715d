//! Named parameter storage and deterministic initialization.

use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, Tape, Var};

/// Flat, name-keyed parameter set. Iteration order is the sorted key order,
/// which keeps optimizers and checkpoints deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            self.map.insert(name.to_string(), value).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_params(&self) -> usize {
        self.map.values().map(|m| m.len()).sum()
    }

    /// Rounds every value through f32, matching checkpoint precision.
    /// Trainers call this when saving so that a resumed run continues from
    /// exactly the stored state.
    pub fn round_to_f32(&mut self) {
        for v in self.map.values_mut() {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

/// Binds store parameters onto a tape, one leaf per name, so gradients can
/// be collected back by name after `backward`.
pub struct Binder<'a> {
    tape: &'a Tape,
    store: &'a ParamStore,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Self { tape, store, bound: RefCell::new(BTreeMap::new()) }
    }

    pub fn tape(&self) -> &'a Tape {
        self.tape
    }

    /// Leaf var for a named parameter; repeated calls return the same var.
    pub fn param(&self, name: &str) -> Var {
        if let Some(&v) = self.bound.borrow().get(name) {
            return v;
        }
        let v = self.tape.leaf(self.store.get(name).clone());
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.tape.constant(value)
    }

    /// Collects gradients for every bound parameter.
    pub fn collect_grads(&self, grads: &Gradients) -> BTreeMap<String, Array2<f64>> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, &var)| {
                let g = grads
                    .get(var)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(self.store.get(name).dim()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Xavier-uniform initialization: U(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

/// Square orthogonal initialization via modified Gram-Schmidt on a random
/// Gaussian matrix.
pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, n), |_| normal_sample(rng));
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|r| m[[r, i]] * m[[r, j]]).sum();
            for r in 0..n {
                m[[r, i]] -= dot * m[[r, j]];
            }
        }
        let norm: f64 = (0..n).map(|r| m[[r, i]] * m[[r, i]]).sum::<f64>().sqrt();
        let norm = norm.max(1e-12);
        for r in 0..n {
            m[[r, i]] /= norm;
        }
    }
    m
}

/// Standard normal via Box-Muller, driven by the explicit rng.
pub fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = orthogonal(&mut rng, 16);
        let qtq = q.t().dot(&q);
        for i in 0..16 {
            for j in 0..16 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn binder_collects_grads_by_name() {
        let mut store = ParamStore::new();
        store.insert("w", Array2::from_elem((2, 2), 1.5));
        let tape = Tape::new();
        let binder = Binder::new(&tape, &store);
        let w = binder.param("w");
        let w2 = binder.param("w");
        assert_eq!(w, w2);
        let y = tape.mean_all(tape.mul(w, w));
        let grads = tape.backward(y);
        let by_name = binder.collect_grads(&grads);
        // d/dw mean(w*w) = 2w/4
        assert!((by_name["w"][[0, 0]] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn store_rejects_duplicates() {
        let mut store = ParamStore::new();
        store.insert("a", Array2::zeros((1, 1)));
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            store.insert("a", Array2::zeros((1, 1)));
        }));
        assert!(result.is_err());
    }
}
