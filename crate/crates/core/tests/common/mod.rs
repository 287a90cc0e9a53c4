//! Shared helpers for the integration suites: finite-difference gradient
//! checking and small model builders.

use acsm_core::ast::{binarize, minilang::parse_minilang, BinaryAst};
use acsm_core::corpus::{Sample, Vocab};
use acsm_core::model::{Binder, Model};
use acsm_core::numerics::{Tape, Tensor};
use acsm_core::training::{build_vocabs, prepare_samples, PreparedSample, TrainConfig};

/// Central finite-difference check of `loss` against the analytic
/// gradients stored in `model.params` (accumulated by one backward pass).
/// Relative error uses max(1, |analytic|, |numeric|) as the denominator.
/// Returns the worst relative error seen.
pub fn finite_difference_check(
    model: &mut Model,
    loss: &mut dyn FnMut(&Model) -> f64,
    h: f64,
    tol: f64,
) -> f64 {
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let analytic = model.params.grad(&name).data().to_vec();
        for k in 0..analytic.len() {
            let orig = model.params.get(&name).data()[k];
            model.params.value_mut(&name).data_mut()[k] = orig + h;
            let up = loss(model);
            model.params.value_mut(&name).data_mut()[k] = orig - h;
            let down = loss(model);
            model.params.value_mut(&name).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = 1.0f64.max(analytic[k].abs()).max(numeric.abs());
            let rel = (analytic[k] - numeric).abs() / denom;
            assert!(
                rel < tol,
                "gradient mismatch at {name}[{k}]: analytic {} vs numeric {} (rel {rel:.3e})",
                analytic[k],
                numeric
            );
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn vocab_of(tokens: &[&str]) -> Vocab {
    Vocab::from_tokens(tokens.iter().map(|s| s.to_string()))
}

/// hidden=4, embed=4, comment vocab 12 entries, 3-token code, 3-node AST.
pub fn tiny_gradcheck_setup() -> (Model, PreparedSample) {
    let model = Model::new(
        4,
        4,
        true,
        vocab_of(&["t0", "t1", "t2"]),
        vocab_of(&["P", "t0", "t1"]),
        vocab_of(&["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"]),
        13,
    )
    .unwrap();
    let tree: BinaryAst = binarize(&acsm_core::ast::AstNode::internal(
        "P",
        vec![
            acsm_core::ast::AstNode::leaf("Name", "t0"),
            acsm_core::ast::AstNode::leaf("Name", "t1"),
        ],
    ));
    assert_eq!(tree.node_count(), 3);
    let sample = PreparedSample {
        id: "g".into(),
        code_ids: vec![4, 5, 6],
        code_tokens: vec!["t0".into(), "t1".into(), "t2".into()],
        tree,
        target: vec![4, 6, 5, acsm_core::corpus::EOS],
        comment_tokens: vec!["w0".into(), "w2".into(), "w1".into()],
    };
    (model, sample)
}

/// Teacher-forced summed NLL of one sample, as a plain number (fresh tape).
pub fn xe_loss_value(model: &Model, sample: &PreparedSample) -> f64 {
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let enc = acsm_core::encoder::encode(&mut tape, &mut binder, model, &sample.code_ids, &sample.tree)
        .unwrap();
    let roll = acsm_core::decoder::rollout(
        &mut tape,
        &mut binder,
        model,
        &enc,
        acsm_core::decoder::DecodeMode::TeacherForced(&sample.target),
        sample.target.len(),
        false,
    )
    .unwrap();
    -roll
        .steps
        .iter()
        .map(|s| tape.value(s.logprob).item())
        .sum::<f64>()
}

/// One backward pass of the teacher-forced loss, leaving gradients in the
/// store. Returns the loss value.
pub fn xe_backward(model: &mut Model, sample: &PreparedSample) -> f64 {
    model.params.zero_grads();
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let enc = acsm_core::encoder::encode(&mut tape, &mut binder, model, &sample.code_ids, &sample.tree)
        .unwrap();
    let roll = acsm_core::decoder::rollout(
        &mut tape,
        &mut binder,
        model,
        &enc,
        acsm_core::decoder::DecodeMode::TeacherForced(&sample.target),
        sample.target.len(),
        false,
    )
    .unwrap();
    let logprobs: Vec<_> = roll.steps.iter().map(|s| s.logprob).collect();
    let mut acc = tape.scalar(0.0);
    for lp in logprobs {
        acc = tape.add(acc, lp).unwrap();
    }
    let loss = tape.neg(acc).unwrap();
    tape.backward(loss).unwrap();
    binder.harvest(&tape, &mut model.params);
    tape.value(loss).item()
}

/// Build a model and prepared samples from mini-language sources.
pub fn model_from_sources(
    sources: &[(&str, &str)],
    hidden: usize,
    seed: u64,
    use_attention: bool,
) -> (Model, Vec<PreparedSample>) {
    let samples: Vec<Sample> = sources
        .iter()
        .map(|(code, comment)| {
            let mut s = Sample::new(format!("s{code:.8}"), code, comment).unwrap();
            s.ast = Some(parse_minilang(code).unwrap());
            s
        })
        .collect();
    let config = TrainConfig::default();
    let (code, ast, comment) = build_vocabs(&samples, &config).unwrap();
    let model = Model::new(hidden, hidden, use_attention, code, ast, comment, seed).unwrap();
    let prepared = prepare_samples(&model, &samples).unwrap();
    (model, prepared)
}
