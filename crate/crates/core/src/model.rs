//! Named parameter storage and model assembly.
//!
//! All trainable weights live in a [`ParamStore`] keyed by path-like names;
//! the value head carries the `critic/` prefix, everything else `actor/`.
//! A [`Binder`] enters parameters onto a pass's tape exactly once so that
//! gradients from repeated use accumulate into a single leaf.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocab;
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Value};

/// Scale of the uniform weight initialization.
const INIT_RANGE: f64 = 0.08;

/// Structural sizes of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub hidden: usize,
    pub embed: usize,
    pub code_vocab: usize,
    pub ast_vocab: usize,
    pub comment_vocab: usize,
    pub use_attention: bool,
}

#[derive(Debug, Clone)]
struct Param {
    value: Tensor,
    grad: Tensor,
}

/// Named collection of all trainable tensors with gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

/// Value-head parameters belong to the critic; the rest to the actor.
pub fn is_critic_param(name: &str) -> bool {
    name.starts_with("critic/")
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape().to_vec());
        let prev = self.params.insert(name.into(), Param { value, grad });
        debug_assert!(prev.is_none(), "parameter registered twice");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}")).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}")).grad
    }

    pub fn add_to_grad(&mut self, name: &str, delta: &[f64]) {
        let p = self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        debug_assert_eq!(p.grad.len(), delta.len());
        for (g, d) in p.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for p in self.params.values_mut() {
            for g in p.grad.data_mut() {
                *g *= k;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Parameter names in sorted (deterministic) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn entry_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

/// Caches tape entries for parameters during one forward pass so each
/// parameter becomes exactly one leaf per tape.
#[derive(Default)]
pub struct Binder {
    bound: HashMap<String, Value>,
    order: Vec<String>,
}

impl Binder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, name: &str) -> Value {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = tape.leaf(store.get(name).clone());
        self.bound.insert(name.to_string(), v);
        self.order.push(name.to_string());
        v
    }

    /// Copy the tape's leaf gradients into the store's accumulators.
    pub fn harvest(&self, tape: &Tape, store: &mut ParamStore) {
        for name in &self.order {
            let v = self.bound[name];
            store.add_to_grad(name, tape.grad(v));
        }
    }
}

/// The full network: dimensions, parameters and the three vocabularies.
#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ParamStore,
    pub code_vocab: Vocab,
    pub ast_vocab: Vocab,
    pub comment_vocab: Vocab,
}

/// Register one LSTM cell's parameters under `prefix` for `n_children`
/// child slots: per-gate input matrices and biases, per-slot recurrent
/// matrices, and one forget-gate matrix per (gate, slot) pair.
pub fn register_lstm_cell(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    n_children: usize,
    hidden: usize,
    embed: usize,
) {
    for gate in ["i", "f", "o", "u"] {
        store.register(format!("{prefix}/w_{gate}"), uniform(rng, vec![hidden, embed]));
    }
    for l in 0..n_children {
        store.register(format!("{prefix}/u_i_{l}"), uniform(rng, vec![hidden, hidden]));
    }
    for k in 0..n_children {
        for l in 0..n_children {
            store.register(format!("{prefix}/u_f_{k}_{l}"), uniform(rng, vec![hidden, hidden]));
        }
    }
    for l in 0..n_children {
        store.register(format!("{prefix}/u_o_{l}"), uniform(rng, vec![hidden, hidden]));
    }
    for l in 0..n_children {
        store.register(format!("{prefix}/u_u_{l}"), uniform(rng, vec![hidden, hidden]));
    }
    for gate in ["i", "f", "o", "u"] {
        // Forget gates start open so memory flows from the first updates.
        let bias = if gate == "f" {
            Tensor::new(vec![hidden], vec![1.0; hidden]).expect("finite bias")
        } else {
            Tensor::zeros(vec![hidden])
        };
        store.register(format!("{prefix}/b_{gate}"), bias);
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
    Tensor::new(shape, data).expect("uniform init is finite")
}

impl Model {
    /// Assemble a freshly initialized model. Weights are drawn uniformly
    /// from a ChaCha stream seeded by `seed`, biases start at zero.
    pub fn new(
        hidden: usize,
        embed: usize,
        use_attention: bool,
        code_vocab: Vocab,
        ast_vocab: Vocab,
        comment_vocab: Vocab,
        seed: u64,
    ) -> Result<Model> {
        let dims = ModelDims {
            hidden,
            embed,
            code_vocab: code_vocab.len(),
            ast_vocab: ast_vocab.len(),
            comment_vocab: comment_vocab.len(),
            use_attention,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (h, e) = (hidden, embed);

        params.register("actor/emb_code", uniform(&mut rng, vec![dims.code_vocab, e]));
        params.register("actor/emb_ast", uniform(&mut rng, vec![dims.ast_vocab, e]));
        params.register("actor/emb_comment", uniform(&mut rng, vec![dims.comment_vocab, e]));

        register_lstm_cell(&mut params, &mut rng, "actor/enc_seq", 1, h, e);
        register_lstm_cell(&mut params, &mut rng, "actor/enc_tree", 2, h, e);
        register_lstm_cell(&mut params, &mut rng, "actor/dec", 1, h, e);

        params.register("actor/init_w", uniform(&mut rng, vec![h, 2 * h]));
        params.register("actor/init_b", Tensor::zeros(vec![h]));
        params.register("actor/fuse_wd", uniform(&mut rng, vec![h, 2 * h]));
        params.register("actor/fuse_bd", Tensor::zeros(vec![h]));
        params.register("actor/fuse_wc", uniform(&mut rng, vec![h, 2 * h]));
        params.register("actor/fuse_bc", Tensor::zeros(vec![h]));
        params.register("actor/out_w", uniform(&mut rng, vec![dims.comment_vocab, h]));
        params.register("actor/out_b", Tensor::zeros(vec![dims.comment_vocab]));

        params.register("critic/value_w", uniform(&mut rng, vec![h]));
        params.register("critic/value_b", Tensor::scalar(0.0));

        Ok(Model { dims, params, code_vocab, ast_vocab, comment_vocab })
    }
}
