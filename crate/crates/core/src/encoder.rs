//! Hybrid code representation: a sequential LSTM over code tokens and an
//! N-ary LSTM over binarized syntax trees.
//!
//! One cell implementation serves both: with a single child slot it is the
//! standard LSTM (the degenerate-chain case), with two slots it is the
//! tree unit with one forget gate per child and child-indexed recurrent
//! matrices for every gate.

use crate::ast::BinaryAst;
use crate::error::{Error, Result};
use crate::model::{Binder, Model, ParamStore};
use crate::numerics::{Tape, Value};

/// Handle to one registered LSTM cell's weights.
#[derive(Debug, Clone)]
pub struct LstmCell {
    prefix: String,
    pub n_children: usize,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, n_children: usize) -> Self {
        LstmCell { prefix: prefix.into(), n_children }
    }

    fn p(&self, suffix: &str) -> String {
        format!("{}/{}", self.prefix, suffix)
    }

    /// One cell update. `children` holds the (h, c) pairs of up to
    /// `n_children` predecessors; absent slots contribute zero states.
    pub fn step(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x: Value,
        children: &[(Value, Value)],
    ) -> Result<(Value, Value)> {
        if children.len() > self.n_children {
            return Err(Error::InvalidOperand {
                op: "lstm_step",
                msg: format!(
                    "{} children exceed the cell's {} slots",
                    children.len(),
                    self.n_children
                ),
            });
        }
        let hidden = store.get(&self.p("b_i")).len();
        let mut slots: Vec<(Value, Value)> = Vec::with_capacity(self.n_children);
        for l in 0..self.n_children {
            match children.get(l) {
                Some(&hc) => slots.push(hc),
                None => {
                    let zh = tape.zeros_vec(hidden);
                    let zc = tape.zeros_vec(hidden);
                    slots.push((zh, zc));
                }
            }
        }

        let gate = |tape: &mut Tape,
                    binder: &mut Binder,
                    w: &str,
                    u_names: &[String],
                    b: &str,
                    slots: &[(Value, Value)]|
         -> Result<Value> {
            let wv = binder.bind(tape, store, w);
            let mut acc = tape.matvec(wv, x)?;
            for (l, u_name) in u_names.iter().enumerate() {
                let uv = binder.bind(tape, store, u_name);
                let term = tape.matvec(uv, slots[l].0)?;
                acc = tape.add(acc, term)?;
            }
            let bv = binder.bind(tape, store, b);
            tape.add(acc, bv)
        };

        let u_names = |g: &str| -> Vec<String> {
            (0..self.n_children).map(|l| self.p(&format!("u_{g}_{l}"))).collect()
        };

        let i_pre = gate(tape, binder, &self.p("w_i"), &u_names("i"), &self.p("b_i"), &slots)?;
        let i = tape.sigmoid(i_pre)?;
        let o_pre = gate(tape, binder, &self.p("w_o"), &u_names("o"), &self.p("b_o"), &slots)?;
        let o = tape.sigmoid(o_pre)?;
        let u_pre = gate(tape, binder, &self.p("w_u"), &u_names("u"), &self.p("b_u"), &slots)?;
        let u = tape.tanh(u_pre)?;

        // c = i ⊙ u + Σ_k f_k ⊙ c_k, one forget gate per child slot.
        let mut c = tape.mul(i, u)?;
        for k in 0..self.n_children {
            let f_names: Vec<String> =
                (0..self.n_children).map(|l| self.p(&format!("u_f_{k}_{l}"))).collect();
            let f_pre = gate(tape, binder, &self.p("w_f"), &f_names, &self.p("b_f"), &slots)?;
            let f = tape.sigmoid(f_pre)?;
            let fc = tape.mul(f, slots[k].1)?;
            c = tape.add(c, fc)?;
        }
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}

/// Per-sample encoder output: one state per code token and per tree node.
pub struct EncodedCode {
    /// (h, c) per code token, left to right.
    pub seq_states: Vec<(Value, Value)>,
    /// (h, c) per tree node in post-order (children before parent).
    pub tree_states: Vec<(Value, Value)>,
    /// Token hidden states stacked as rows, `[n_tokens, hidden]`.
    pub seq_matrix: Value,
    /// Node hidden states stacked as rows, `[n_nodes, hidden]`.
    pub tree_matrix: Value,
    /// Hidden state after the last code token.
    pub final_txt: Value,
    /// Hidden state of the tree root.
    pub root_str: Value,
    /// Vocab key of each tree node, aligned with `tree_states`.
    pub tree_keys: Vec<String>,
}

/// Run the sequential LSTM over token embeddings from `emb_name` rows.
pub fn encode_sequence(
    tape: &mut Tape,
    binder: &mut Binder,
    store: &ParamStore,
    cell: &LstmCell,
    emb_name: &str,
    token_ids: &[usize],
) -> Result<Vec<(Value, Value)>> {
    let hidden = store.get(&cell.p("b_i")).len();
    let emb = binder.bind(tape, store, emb_name);
    let mut states = Vec::with_capacity(token_ids.len());
    let zh = tape.zeros_vec(hidden);
    let zc = tape.zeros_vec(hidden);
    let mut prev = (zh, zc);
    for &id in token_ids {
        let x = tape.row(emb, id)?;
        prev = cell.step(tape, binder, store, x, &[prev])?;
        states.push(prev);
    }
    Ok(states)
}

/// Run the tree LSTM bottom-up; returns post-order states and keys.
pub fn encode_tree(
    tape: &mut Tape,
    binder: &mut Binder,
    store: &ParamStore,
    cell: &LstmCell,
    emb_name: &str,
    lookup: &dyn Fn(&str) -> usize,
    root: &BinaryAst,
) -> Result<(Vec<(Value, Value)>, Vec<String>)> {
    let emb = binder.bind(tape, store, emb_name);
    let mut states = Vec::new();
    let mut keys = Vec::new();
    walk_tree(tape, binder, store, cell, emb, lookup, root, &mut states, &mut keys)?;
    Ok((states, keys))
}

#[allow(clippy::too_many_arguments)]
fn walk_tree(
    tape: &mut Tape,
    binder: &mut Binder,
    store: &ParamStore,
    cell: &LstmCell,
    emb: Value,
    lookup: &dyn Fn(&str) -> usize,
    node: &BinaryAst,
    states: &mut Vec<(Value, Value)>,
    keys: &mut Vec<String>,
) -> Result<(Value, Value)> {
    let mut child_states = Vec::with_capacity(node.children.len());
    for child in &node.children {
        child_states.push(walk_tree(tape, binder, store, cell, emb, lookup, child, states, keys)?);
    }
    let key = node.vocab_key();
    let x = tape.row(emb, lookup(&key))?;
    let hc = cell.step(tape, binder, store, x, &child_states)?;
    states.push(hc);
    keys.push(key);
    Ok(hc)
}

/// Produce the hybrid representation of one sample.
pub fn encode(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    code_token_ids: &[usize],
    tree: &BinaryAst,
) -> Result<EncodedCode> {
    if code_token_ids.is_empty() {
        return Err(Error::InvalidData("cannot encode a sample with no code tokens".into()));
    }
    let seq_cell = LstmCell::new("actor/enc_seq", 1);
    let tree_cell = LstmCell::new("actor/enc_tree", 2);

    let seq_states =
        encode_sequence(tape, binder, &model.params, &seq_cell, "actor/emb_code", code_token_ids)?;
    let lookup = |key: &str| model.ast_vocab.lookup(key);
    let (tree_states, tree_keys) = encode_tree(
        tape,
        binder,
        &model.params,
        &tree_cell,
        "actor/emb_ast",
        &lookup,
        tree,
    )?;

    let seq_h: Vec<Value> = seq_states.iter().map(|&(h, _)| h).collect();
    let tree_h: Vec<Value> = tree_states.iter().map(|&(h, _)| h).collect();
    let seq_matrix = tape.stack_rows(&seq_h)?;
    let tree_matrix = tape.stack_rows(&tree_h)?;
    let final_txt = *seq_h.last().expect("nonempty token sequence");
    let root_str = *tree_h.last().expect("tree has at least the root");

    Ok(EncodedCode {
        seq_states,
        tree_states,
        seq_matrix,
        tree_matrix,
        final_txt,
        root_str,
        tree_keys,
    })
}
