//! Diagonal AdaGrad with global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::model::ParamStore;
use crate::numerics::Tensor;

pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Per-parameter accumulators of squared gradients. Accumulators are
/// nonnegative and never decrease.
#[derive(Debug, Clone)]
pub struct AdaGradState {
    acc: BTreeMap<String, Tensor>,
    pub epsilon: f64,
}

impl AdaGradState {
    pub fn new(store: &ParamStore) -> Self {
        let acc = store
            .names()
            .map(|n| (n.to_string(), Tensor::zeros(store.get(n).shape().to_vec())))
            .collect();
        AdaGradState { acc, epsilon: ADAGRAD_EPSILON }
    }

    pub fn accumulator(&self, name: &str) -> &Tensor {
        &self.acc[name]
    }

    pub fn accumulator_mut(&mut self, name: &str) -> &mut Tensor {
        self.acc.get_mut(name).unwrap_or_else(|| panic!("unknown accumulator {name:?}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.acc.keys().map(String::as_str)
    }

    /// acc += g²; param -= lr·g / (√acc + ε), for every parameter the
    /// filter admits. Zero gradients leave both accumulator and parameter
    /// untouched.
    pub fn apply(&mut self, store: &mut ParamStore, lr: f64, filter: impl Fn(&str) -> bool) {
        let names: Vec<String> =
            store.names().filter(|n| filter(n)).map(str::to_string).collect();
        for name in names {
            let grad = store.grad(&name).data().to_vec();
            let acc = self.acc.get_mut(&name).expect("accumulator exists for every param");
            let param = store.value_mut(&name);
            for ((p, a), g) in param.data_mut().iter_mut().zip(acc.data_mut()).zip(&grad) {
                if *g != 0.0 {
                    *a += g * g;
                    *p -= lr * g / (a.sqrt() + ADAGRAD_EPSILON);
                }
            }
        }
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        sq += store.grad(&name).data().iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("actor/w", Tensor::vector(value));
        s
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let mut store = store_with(vec![1.0, -1.0]);
        store.add_to_grad("actor/w", &[0.5, -2.0]);
        let mut opt = AdaGradState::new(&store);
        opt.apply(&mut store, 0.1, |_| true);
        let p = store.get("actor/w").data();
        // param -= lr·g/(|g|+ε) ≈ param ∓ lr
        assert!((p[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((p[1] - (-1.0 + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn zero_grad_changes_nothing() {
        let mut store = store_with(vec![3.0]);
        let mut opt = AdaGradState::new(&store);
        opt.apply(&mut store, 0.1, |_| true);
        assert_eq!(store.get("actor/w").data(), &[3.0]);
        assert_eq!(opt.accumulator("actor/w").data(), &[0.0]);
    }

    #[test]
    fn repeated_identical_grads_shrink_steps() {
        let mut store = store_with(vec![0.0]);
        let mut opt = AdaGradState::new(&store);
        let mut deltas = Vec::new();
        let mut prev = 0.0;
        for _ in 0..4 {
            store.zero_grads();
            store.add_to_grad("actor/w", &[1.0]);
            opt.apply(&mut store, 0.1, |_| true);
            let now = store.get("actor/w").data()[0];
            deltas.push((now - prev).abs());
            prev = now;
        }
        for pair in deltas.windows(2) {
            assert!(pair[1] < pair[0], "steps must shrink: {deltas:?}");
        }
        // Accumulator is nondecreasing by construction.
        assert!(opt.accumulator("actor/w").data()[0] >= 4.0 - 1e-12);
    }

    #[test]
    fn filtered_params_stay_fixed() {
        let mut store = ParamStore::new();
        store.register("actor/w", Tensor::vector(vec![1.0]));
        store.register("critic/v", Tensor::vector(vec![1.0]));
        store.add_to_grad("actor/w", &[1.0]);
        store.add_to_grad("critic/v", &[1.0]);
        let mut opt = AdaGradState::new(&store);
        opt.apply(&mut store, 0.1, |n| n.starts_with("critic/"));
        assert_eq!(store.get("actor/w").data(), &[1.0]);
        assert_ne!(store.get("critic/v").data(), &[1.0]);
    }

    #[test]
    fn clip_bounds_global_norm() {
        let mut store = ParamStore::new();
        store.register("actor/a", Tensor::vector(vec![0.0, 0.0]));
        store.register("actor/b", Tensor::vector(vec![0.0]));
        store.add_to_grad("actor/a", &[3.0, 4.0]);
        store.add_to_grad("actor/b", &[12.0]);
        let pre = clip_gradients(&mut store, 5.0);
        assert!((pre - 13.0).abs() < 1e-12);
        let mut sq = 0.0;
        for n in ["actor/a", "actor/b"] {
            sq += store.grad(n).data().iter().map(|g| g * g).sum::<f64>();
        }
        assert!((sq.sqrt() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut store = store_with(vec![0.0]);
        store.add_to_grad("actor/w", &[0.25]);
        clip_gradients(&mut store, 5.0);
        assert_eq!(store.grad("actor/w").data(), &[0.25]);
    }
}
