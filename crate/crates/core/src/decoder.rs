//! The generation stack: hybrid attention over both encoders, context
//! fusion, decoder LSTM, softmax word head, and the critic's scalar value
//! head hanging off the same states.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EOS, START};
use crate::encoder::{encode, EncodedCode, LstmCell};
use crate::error::{Error, Result};
use crate::model::{Binder, Model};
use crate::numerics::{Tape, Value};

/// How the next action is chosen during a rollout.
pub enum DecodeMode<'a> {
    /// Argmax of the word distribution; deterministic.
    Greedy,
    /// Draw from the word distribution with the given stream.
    Sample(&'a mut ChaCha8Rng),
    /// Follow a reference index sequence (which ends with EOS).
    TeacherForced(&'a [usize]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Eos,
    MaxSteps,
}

/// One decoding step's tape handles and bookkeeping.
pub struct StepTrace {
    pub action: usize,
    /// log π(action | state), scalar on the tape.
    pub logprob: Value,
    /// V(state), scalar on the tape (gradient flows only into the head).
    pub value: Value,
    /// Copies of the attention weights, present when recording was asked.
    pub alpha_str: Option<Vec<f64>>,
    pub alpha_txt: Option<Vec<f64>>,
}

/// A full decoding trajectory with live tape handles.
pub struct Rollout {
    pub steps: Vec<StepTrace>,
    pub terminated_by: Termination,
}

/// Plain-data view of one rollout.
#[derive(Debug, Clone)]
pub struct Episode {
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub reward: f64,
    pub terminated_by: Termination,
}

impl Rollout {
    pub fn episode(&self, tape: &Tape, reward: f64) -> Episode {
        Episode {
            actions: self.steps.iter().map(|s| s.action).collect(),
            logprobs: self.steps.iter().map(|s| tape.value(s.logprob).item()).collect(),
            values: self.steps.iter().map(|s| tape.value(s.value).item()).collect(),
            reward,
            terminated_by: self.terminated_by,
        }
    }

    /// Emitted tokens up to (not including) the EOS marker.
    pub fn emitted_tokens(&self, model: &Model) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| s.action)
            .take_while(|&a| a != EOS)
            .map(|a| model.comment_vocab.token(a).to_string())
            .collect()
    }
}

/// Attention weights and context over one encoded matrix: scores are the
/// inner products of each row with the decoder state.
pub fn attend(tape: &mut Tape, matrix: Value, state: Value) -> Result<(Value, Value)> {
    let scores = tape.matvec(matrix, state)?;
    let alpha = tape.softmax(scores)?;
    let context = tape.matvec_t(matrix, alpha)?;
    Ok((alpha, context))
}

/// Combine the structural and textual contexts into the attentional
/// hidden state s̃ = tanh(W_c·[s; W_d·[d_str; d_txt] + b_d] + b_c).
pub fn fuse(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    state: Value,
    d_str: Value,
    d_txt: Value,
) -> Result<Value> {
    let wd = binder.bind(tape, &model.params, "actor/fuse_wd");
    let bd = binder.bind(tape, &model.params, "actor/fuse_bd");
    let cat = tape.concat(&[d_str, d_txt])?;
    let projected = tape.matvec(wd, cat)?;
    let d_t = tape.add(projected, bd)?;

    let wc = binder.bind(tape, &model.params, "actor/fuse_wc");
    let bc = binder.bind(tape, &model.params, "actor/fuse_bc");
    let cat2 = tape.concat(&[state, d_t])?;
    let pre = tape.matvec(wc, cat2)?;
    let pre_b = tape.add(pre, bc)?;
    tape.tanh(pre_b)
}

/// Log-probabilities over the comment vocabulary for one state.
pub fn word_distribution(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    s_tilde: Value,
) -> Result<Value> {
    let w = binder.bind(tape, &model.params, "actor/out_w");
    let b = binder.bind(tape, &model.params, "actor/out_b");
    let logits = tape.matvec(w, s_tilde)?;
    let logits_b = tape.add(logits, b)?;
    tape.log_softmax(logits_b)
}

/// Scalar value estimate. The input is detached so the estimate's loss
/// trains only the head parameters, never the shared stack.
pub fn value_estimate(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    s_tilde: Value,
) -> Result<Value> {
    let w = binder.bind(tape, &model.params, "critic/value_w");
    let b = binder.bind(tape, &model.params, "critic/value_b");
    let detached = tape.detach(s_tilde)?;
    let proj = tape.dot(w, detached)?;
    tape.add(proj, b)
}

/// Decoder start state: h₀ = tanh(W_init·[final_txt; root_str] + b_init),
/// c₀ = 0.
fn initial_state(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    enc: &EncodedCode,
) -> Result<(Value, Value)> {
    let w = binder.bind(tape, &model.params, "actor/init_w");
    let b = binder.bind(tape, &model.params, "actor/init_b");
    let cat = tape.concat(&[enc.final_txt, enc.root_str])?;
    let proj = tape.matvec(w, cat)?;
    let pre = tape.add(proj, b)?;
    let h = tape.tanh(pre)?;
    let c = tape.zeros_vec(model.dims.hidden);
    Ok((h, c))
}

/// Run one decoding trajectory. Each step feeds the previous word's
/// embedding into the decoder LSTM, attends over both encoders (when
/// attention is enabled), and draws the next action per `mode`. Stops on
/// EOS or after `max_steps` actions.
pub fn rollout(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    enc: &EncodedCode,
    mut mode: DecodeMode,
    max_steps: usize,
    record_attention: bool,
) -> Result<Rollout> {
    if max_steps == 0 {
        return Err(Error::InvalidOperand { op: "rollout", msg: "max_steps must be >= 1".into() });
    }
    let dec_cell = LstmCell::new("actor/dec", 1);
    let emb = binder.bind(tape, &model.params, "actor/emb_comment");
    let mut state = initial_state(tape, binder, model, enc)?;
    let mut prev_word = START;
    let mut steps = Vec::new();
    let mut terminated_by = Termination::MaxSteps;

    for t in 0..max_steps {
        let x = tape.row(emb, prev_word)?;
        state = dec_cell.step(tape, binder, &model.params, x, &[state])?;
        let s_t = state.0;

        let (s_tilde, alpha_str, alpha_txt) = if model.dims.use_attention {
            let (a_str, d_str) = attend(tape, enc.tree_matrix, s_t)?;
            let (a_txt, d_txt) = attend(tape, enc.seq_matrix, s_t)?;
            let s_tilde = fuse(tape, binder, model, s_t, d_str, d_txt)?;
            if record_attention {
                (
                    s_tilde,
                    Some(tape.value(a_str).data().to_vec()),
                    Some(tape.value(a_txt).data().to_vec()),
                )
            } else {
                (s_tilde, None, None)
            }
        } else {
            (s_t, None, None)
        };

        let logp = word_distribution(tape, binder, model, s_tilde)?;
        let value = value_estimate(tape, binder, model, s_tilde)?;

        let action = match &mut mode {
            DecodeMode::Greedy => argmax(tape.value(logp).data()),
            DecodeMode::Sample(rng) => sample_categorical(tape.value(logp).data(), rng),
            DecodeMode::TeacherForced(reference) => reference[t],
        };
        let logprob = tape.pick(logp, action)?;
        steps.push(StepTrace { action, logprob, value, alpha_str, alpha_txt });

        if action == EOS {
            terminated_by = Termination::Eos;
            break;
        }
        if let DecodeMode::TeacherForced(reference) = &mode {
            if t + 1 >= reference.len() {
                terminated_by = Termination::MaxSteps;
                break;
            }
        }
        prev_word = action;
    }
    Ok(Rollout { steps, terminated_by })
}

fn argmax(data: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in data.iter().enumerate() {
        if x > data[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(logp: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut cum = 0.0;
    for (i, &lp) in logp.iter().enumerate() {
        cum += lp.exp();
        if u < cum {
            return i;
        }
    }
    logp.len() - 1
}

// ── attention dump ──────────────────────────────────────────────────────

/// Plain-text record of where the decoder looked at each output step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AttentionDump {
    pub steps: Vec<AttentionStep>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AttentionStep {
    pub word: String,
    /// Top-k (tree-node key, weight) pairs, strongest first.
    pub structural: Vec<(String, f64)>,
    /// Top-k (code token, weight) pairs, strongest first.
    pub textual: Vec<(String, f64)>,
}

/// Assemble the per-step top-k attention table for a recorded rollout.
pub fn attention_dump(
    model: &Model,
    rollout: &Rollout,
    tree_keys: &[String],
    code_tokens: &[String],
    top_k: usize,
) -> AttentionDump {
    let top = |weights: &[f64], labels: &[String]| -> Vec<(String, f64)> {
        let mut pairs: Vec<(String, f64)> = labels
            .iter()
            .cloned()
            .zip(weights.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        pairs.truncate(top_k);
        pairs
    };
    let steps = rollout
        .steps
        .iter()
        .map(|s| AttentionStep {
            word: model.comment_vocab.token(s.action).to_string(),
            structural: s.alpha_str.as_deref().map(|w| top(w, tree_keys)).unwrap_or_default(),
            textual: s.alpha_txt.as_deref().map(|w| top(w, code_tokens)).unwrap_or_default(),
        })
        .collect();
    AttentionDump { steps }
}

impl AttentionDump {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            out.push_str(&format!("step {:>2}  word={:?}\n", i + 1, step.word));
            let fmt = |pairs: &[(String, f64)]| {
                pairs
                    .iter()
                    .map(|(l, w)| format!("{l}={w:.4}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            out.push_str(&format!("  str: {}\n", fmt(&step.structural)));
            out.push_str(&format!("  txt: {}\n", fmt(&step.textual)));
        }
        out
    }
}

/// Greedy-decode a sample's comment tokens (EOS stripped).
pub fn greedy_decode(
    model: &Model,
    code_token_ids: &[usize],
    tree: &crate::ast::BinaryAst,
    max_steps: usize,
) -> Result<Vec<String>> {
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let enc = encode(&mut tape, &mut binder, model, code_token_ids, tree)?;
    let roll = rollout(&mut tape, &mut binder, model, &enc, DecodeMode::Greedy, max_steps, false)?;
    Ok(roll.emitted_tokens(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{binarize, AstNode};
    use crate::corpus::Vocab;
    use crate::model::Model;
    use crate::numerics::Tensor;
    use rand_chacha::rand_core::SeedableRng;

    fn vocab(tokens: &[&str]) -> Vocab {
        Vocab::from_tokens(tokens.iter().map(|s| s.to_string()))
    }

    fn test_model(seed: u64) -> Model {
        Model::new(
            4,
            4,
            true,
            vocab(&["t0", "t1", "t2"]),
            vocab(&["P", "t0", "t1"]),
            vocab(&["w0", "w1", "w2", "w3"]),
            seed,
        )
        .unwrap()
    }

    fn encoded<'a>(
        tape: &mut Tape,
        binder: &mut Binder,
        model: &'a Model,
    ) -> crate::encoder::EncodedCode {
        let ast = binarize(&AstNode::internal(
            "P",
            vec![AstNode::leaf("Name", "t0"), AstNode::leaf("Name", "t1")],
        ));
        encode(tape, binder, model, &[4, 5, 6], &ast).unwrap()
    }

    #[test]
    fn attention_normalizes_and_uniform_on_equal_rows() {
        let mut tape = Tape::new();
        let rows = vec![
            tape.leaf(Tensor::vector(vec![0.5, -0.5])),
            tape.leaf(Tensor::vector(vec![0.5, -0.5])),
            tape.leaf(Tensor::vector(vec![0.5, -0.5])),
        ];
        let m = tape.stack_rows(&rows).unwrap();
        let s = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let (alpha, ctx) = attend(&mut tape, m, s).unwrap();
        let a = tape.value(alpha).data();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for &w in a {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        for (c, r) in tape.value(ctx).data().iter().zip([0.5, -0.5]) {
            assert!((c - r).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_concentrates_on_aligned_row() {
        let mut tape = Tape::new();
        let aligned = tape.leaf(Tensor::vector(vec![40.0, 80.0]));
        let ortho = tape.leaf(Tensor::vector(vec![2.0, -1.0]));
        let m = tape.stack_rows(&[aligned, ortho]).unwrap();
        let s = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let (alpha, ctx) = attend(&mut tape, m, s).unwrap();
        let a = tape.value(alpha).data();
        assert!(a[0] > 1.0 - 1e-9);
        for (c, r) in tape.value(ctx).data().iter().zip([40.0, 80.0]) {
            assert!((c - r).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_single_row_is_delta() {
        let mut tape = Tape::new();
        let only = tape.leaf(Tensor::vector(vec![0.3, 0.7]));
        let m = tape.stack_rows(&[only]).unwrap();
        let s = tape.leaf(Tensor::vector(vec![-1.0, 1.0]));
        let (alpha, ctx) = attend(&mut tape, m, s).unwrap();
        assert_eq!(tape.value(alpha).data(), &[1.0]);
        assert_eq!(tape.value(ctx).data(), &[0.3, 0.7]);
    }

    #[test]
    fn fuse_zero_weights_yields_bias_tanh() {
        let mut m = test_model(2);
        for name in ["actor/fuse_wd", "actor/fuse_wc"] {
            let shape = m.params.get(name).shape().to_vec();
            *m.params.value_mut(name) = Tensor::zeros(shape);
        }
        *m.params.value_mut("actor/fuse_bc") = Tensor::vector(vec![0.5, -0.5, 0.0, 1.0]);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let s = tape.leaf(Tensor::vector(vec![1.0, 1.0, 1.0, 1.0]));
        let d1 = tape.leaf(Tensor::vector(vec![2.0, 2.0, 2.0, 2.0]));
        let d2 = tape.leaf(Tensor::vector(vec![3.0, 3.0, 3.0, 3.0]));
        let st = fuse(&mut tape, &mut binder, &m, s, d1, d2).unwrap();
        for (got, want) in tape.value(st).data().iter().zip([0.5f64, -0.5, 0.0, 1.0]) {
            assert!((got - want.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_block_identity_passes_structural_context() {
        // W_d = [I | 0] makes d_t = d_str + b_d.
        let mut m = test_model(2);
        let h = 4;
        let mut wd = vec![0.0; h * 2 * h];
        for i in 0..h {
            wd[i * 2 * h + i] = 1.0;
        }
        *m.params.value_mut("actor/fuse_wd") = Tensor::matrix(h, 2 * h, wd).unwrap();
        // Expose d_t directly: W_c = [0 | I], b_c = 0, so s̃ = tanh(d_t).
        let mut wc = vec![0.0; h * 2 * h];
        for i in 0..h {
            wc[i * 2 * h + h + i] = 1.0;
        }
        *m.params.value_mut("actor/fuse_wc") = Tensor::matrix(h, 2 * h, wc).unwrap();

        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let s = tape.leaf(Tensor::vector(vec![9.0; 4]));
        let d_str = tape.leaf(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
        let d_txt = tape.leaf(Tensor::vector(vec![5.0, 5.0, 5.0, 5.0]));
        let st = fuse(&mut tape, &mut binder, &m, s, d_str, d_txt).unwrap();
        for (got, want) in tape.value(st).data().iter().zip([0.1f64, 0.2, 0.3, 0.4]) {
            assert!((got - want.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_gradients_reach_both_contexts() {
        let m = test_model(2);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let s = tape.leaf(Tensor::vector(vec![0.1; 4]));
        let d_str = tape.leaf(Tensor::vector(vec![0.2; 4]));
        let d_txt = tape.leaf(Tensor::vector(vec![-0.3; 4]));
        let st = fuse(&mut tape, &mut binder, &m, s, d_str, d_txt).unwrap();
        let loss = tape.sum(st).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(d_str).iter().any(|&g| g != 0.0));
        assert!(tape.grad(d_txt).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn word_distribution_uniform_for_zero_head() {
        let mut m = test_model(3);
        let shape = m.params.get("actor/out_w").shape().to_vec();
        *m.params.value_mut("actor/out_w") = Tensor::zeros(shape);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let s = tape.leaf(Tensor::vector(vec![0.4, -0.2, 0.9, 0.0]));
        let logp = word_distribution(&mut tape, &mut binder, &m, s).unwrap();
        let v = m.dims.comment_vocab as f64;
        for &lp in tape.value(logp).data() {
            assert!((lp - (1.0 / v).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn word_distribution_sums_to_one_and_shift_invariant() {
        let m = test_model(3);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let s = tape.leaf(Tensor::vector(vec![0.4, -0.2, 0.9, 0.0]));
        let logp = word_distribution(&mut tape, &mut binder, &m, s).unwrap();
        let probs: Vec<f64> = tape.value(logp).data().iter().map(|lp| lp.exp()).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        // Shifting all logits by a constant must not move the argmax.
        let w = binder.bind(&mut tape, &m.params, "actor/out_w");
        let b = binder.bind(&mut tape, &m.params, "actor/out_b");
        let logits = tape.matvec(w, s).unwrap();
        let logits = tape.add(logits, b).unwrap();
        let shifted = tape.add_const(logits, 123.0).unwrap();
        let logp2 = tape.log_softmax(shifted).unwrap();
        assert_eq!(argmax(tape.value(logp).data()), argmax(tape.value(logp2).data()));
    }

    #[test]
    fn value_head_zero_params_gives_zero() {
        let mut m = test_model(4);
        *m.params.value_mut("critic/value_w") = Tensor::zeros(vec![4]);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let s = tape.leaf(Tensor::vector(vec![1.0, -1.0, 1.0, -1.0]));
        let v = value_estimate(&mut tape, &mut binder, &m, s).unwrap();
        assert_eq!(tape.value(v).item(), 0.0);
    }

    #[test]
    fn value_head_is_affine_and_finite_at_saturation() {
        let m = test_model(4);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let s0 = tape.zeros_vec(4);
        let s1 = tape.leaf(Tensor::vector(vec![1.0, -1.0, 1.0, -1.0]));
        let s2 = tape.leaf(Tensor::vector(vec![2.0, -2.0, 2.0, -2.0]));
        let v0 = value_estimate(&mut tape, &mut binder, &m, s0).unwrap();
        let v1 = value_estimate(&mut tape, &mut binder, &m, s1).unwrap();
        let v2 = value_estimate(&mut tape, &mut binder, &m, s2).unwrap();
        let (v0, v1, v2) = (tape.value(v0).item(), tape.value(v1).item(), tape.value(v2).item());
        assert!((v2 - v0 - 2.0 * (v1 - v0)).abs() < 1e-12);
        assert!(v1.is_finite());
    }

    #[test]
    fn teacher_forced_episode_length_matches_reference() {
        let m = test_model(5);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let enc = encoded(&mut tape, &mut binder, &m);
        let reference = [4usize, 5, EOS];
        let roll = rollout(
            &mut tape,
            &mut binder,
            &m,
            &enc,
            DecodeMode::TeacherForced(&reference),
            21,
            false,
        )
        .unwrap();
        assert_eq!(roll.steps.len(), 3);
        assert_eq!(roll.terminated_by, Termination::Eos);
        let actions: Vec<usize> = roll.steps.iter().map(|s| s.action).collect();
        assert_eq!(actions, reference);
    }

    #[test]
    fn max_steps_one_emits_one_action() {
        let m = test_model(5);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let enc = encoded(&mut tape, &mut binder, &m);
        let roll =
            rollout(&mut tape, &mut binder, &m, &enc, DecodeMode::Greedy, 1, false).unwrap();
        assert_eq!(roll.steps.len(), 1);
    }

    #[test]
    fn greedy_is_deterministic_and_sampling_reproducible() {
        let m = test_model(6);
        let run_greedy = || {
            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let enc = encoded(&mut tape, &mut binder, &m);
            let roll =
                rollout(&mut tape, &mut binder, &m, &enc, DecodeMode::Greedy, 8, false).unwrap();
            roll.steps.iter().map(|s| s.action).collect::<Vec<_>>()
        };
        assert_eq!(run_greedy(), run_greedy());

        let run_sampled = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let enc = encoded(&mut tape, &mut binder, &m);
            let roll = rollout(
                &mut tape,
                &mut binder,
                &m,
                &enc,
                DecodeMode::Sample(&mut rng),
                8,
                false,
            )
            .unwrap();
            roll.steps.iter().map(|s| s.action).collect::<Vec<_>>()
        };
        assert_eq!(run_sampled(33), run_sampled(33));
    }

    #[test]
    fn attention_dump_has_one_entry_per_step() {
        let m = test_model(6);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let enc = encoded(&mut tape, &mut binder, &m);
        let roll =
            rollout(&mut tape, &mut binder, &m, &enc, DecodeMode::Greedy, 4, true).unwrap();
        let code_tokens: Vec<String> = ["t0", "t1", "t2"].iter().map(|s| s.to_string()).collect();
        let dump = attention_dump(&m, &roll, &enc.tree_keys, &code_tokens, 2);
        assert_eq!(dump.steps.len(), roll.steps.len());
        for step in &dump.steps {
            assert!(step.structural.len() <= 2);
            assert!(!step.textual.is_empty());
            let rendered = dump.render();
            assert!(rendered.contains("str:"));
        }
    }
}
