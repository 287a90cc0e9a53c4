//! Three-phase training: cross-entropy pretraining of the generator,
//! mean-square pretraining of the value head with the generator frozen,
//! then joint advantage-weighted policy-gradient updates with a terminal
//! sentence-BLEU reward. All phases optimize with diagonal AdaGrad and
//! clip gradients at a global norm.

mod adagrad;
pub mod bandit;
mod reward;

pub use adagrad::{clip_gradients, AdaGradState, ADAGRAD_EPSILON};
pub use reward::{clipped_counts, sentence_bleu};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::{binarize, BinaryAst};
use crate::corpus::{comment_target, Sample, Vocab};
use crate::decoder::{rollout, DecodeMode, Episode, Rollout};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::model::{is_critic_param, Binder, Model};
use crate::numerics::{Tape, Value};

// ── configuration ───────────────────────────────────────────────────────

/// Every training and model hyperparameter, serializable as canonical
/// `key=value` text (sorted keys) for config files and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub embed: usize,
    pub use_attention: bool,
    pub actor_epochs: u64,
    pub critic_epochs: u64,
    pub joint_epochs: u64,
    pub gamma: f64,
    pub max_steps: usize,
    pub clip_norm: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub mix_lambda: f64,
    pub code_vocab_max: usize,
    pub ast_vocab_max: usize,
    pub comment_vocab_max: usize,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            learning_rate: 0.001,
            batch_size: 8,
            hidden: 64,
            embed: 64,
            use_attention: true,
            actor_epochs: 10,
            critic_epochs: 10,
            joint_epochs: 10,
            gamma: 1.0,
            max_steps: 21,
            clip_norm: 5.0,
            log_every: 50,
            checkpoint_every: 0,
            mix_lambda: 0.0,
            code_vocab_max: 5000,
            ast_vocab_max: 5000,
            comment_vocab_max: 5000,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0,1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.mix_lambda) {
            return Err(Error::InvalidConfig(format!(
                "mix_lambda must lie in [0,1], got {}",
                self.mix_lambda
            )));
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.hidden == 0 || self.embed == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_steps, hidden and embed must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Sorted `key=value` lines, one per field.
    pub fn to_canonical_string(&self) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("actor_epochs", self.actor_epochs.to_string());
        kv.insert("ast_vocab_max", self.ast_vocab_max.to_string());
        kv.insert("batch_size", self.batch_size.to_string());
        kv.insert("checkpoint_every", self.checkpoint_every.to_string());
        kv.insert("clip_norm", self.clip_norm.to_string());
        kv.insert("code_vocab_max", self.code_vocab_max.to_string());
        kv.insert("comment_vocab_max", self.comment_vocab_max.to_string());
        kv.insert("critic_epochs", self.critic_epochs.to_string());
        kv.insert("embed", self.embed.to_string());
        kv.insert("gamma", self.gamma.to_string());
        kv.insert("hidden", self.hidden.to_string());
        kv.insert("joint_epochs", self.joint_epochs.to_string());
        kv.insert("learning_rate", self.learning_rate.to_string());
        kv.insert("log_every", self.log_every.to_string());
        kv.insert("max_steps", self.max_steps.to_string());
        kv.insert("min_count", self.min_count.to_string());
        kv.insert("mix_lambda", self.mix_lambda.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("use_attention", self.use_attention.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Parse `key=value` text (blank lines and `#` comments allowed) on
    /// top of the defaults.
    pub fn from_key_values(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidConfig(format!("cannot parse {value:?} for key {key:?}"))
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "embed" => self.embed = parse(key, value)?,
            "use_attention" => self.use_attention = parse(key, value)?,
            "actor_epochs" => self.actor_epochs = parse(key, value)?,
            "critic_epochs" => self.critic_epochs = parse(key, value)?,
            "joint_epochs" => self.joint_epochs = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "mix_lambda" => self.mix_lambda = parse(key, value)?,
            "code_vocab_max" => self.code_vocab_max = parse(key, value)?,
            "ast_vocab_max" => self.ast_vocab_max = parse(key, value)?,
            "comment_vocab_max" => self.comment_vocab_max = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

// ── bookkeeping ─────────────────────────────────────────────────────────

/// Where a run stands; stored in checkpoints so resuming replays the
/// exact remaining trajectory. Together with the seed these counters are
/// the complete RNG state: every stochastic stream is derived from
/// (seed, phase, epoch, batch, slot).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Progress {
    pub actor_epochs_done: u64,
    pub actor_batches_done: u64,
    pub actor_iterations: u64,
    pub critic_epochs_done: u64,
    pub critic_batches_done: u64,
    pub critic_iterations: u64,
    pub joint_epochs_done: u64,
    pub joint_batches_done: u64,
    pub joint_iterations: u64,
    pub global_iteration: u64,
}

/// One line of the append-only JSON Lines training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub phase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_loss: Option<f64>,
}

/// Training log sink: keeps entries in memory and optionally appends
/// them to a JSON Lines file.
pub struct TrainLog {
    path: Option<PathBuf>,
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn in_memory() -> Self {
        TrainLog { path: None, entries: Vec::new() }
    }

    pub fn to_file(path: impl Into<PathBuf>) -> Self {
        TrainLog { path: Some(path.into()), entries: Vec::new() }
    }

    pub fn append(&mut self, entry: LogEntry) -> Result<()> {
        if let Some(path) = &self.path {
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            serde_json::to_writer(&mut file, &entry)?;
            file.write_all(b"\n")?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Splitmix-style derivation of independent stream seeds from the master
/// seed and a coordinate path, so parallel or resumed runs draw the same
/// numbers for the same work item.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut x = splitmix(master ^ 0x9E37_79B9_7F4A_7C15);
    for &t in tags {
        x = splitmix(x.wrapping_add(t).wrapping_add(0x9E37_79B9_7F4A_7C15));
    }
    x
}

const PHASE_ACTOR: u64 = 1;
const PHASE_CRITIC: u64 = 2;
const PHASE_JOINT: u64 = 3;
const TAG_SHUFFLE: u64 = 0xA5;
const TAG_ROLLOUT: u64 = 0xB7;

fn shuffled_indices(n: usize, seed: u64, phase: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[phase, epoch, TAG_SHUFFLE]));
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

// ── sample preparation ──────────────────────────────────────────────────

/// A sample resolved against the model's vocabularies, ready to encode.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub code_ids: Vec<usize>,
    pub code_tokens: Vec<String>,
    pub tree: BinaryAst,
    /// Comment indices ending with EOS (the teacher-forcing target).
    pub target: Vec<usize>,
    /// Reward/metric reference: the comment tokens without EOS.
    pub comment_tokens: Vec<String>,
}

pub fn prepare_sample(model: &Model, sample: &Sample) -> Result<PreparedSample> {
    let ast = sample.ast.as_ref().ok_or_else(|| {
        Error::InvalidData(format!("sample {:?} carries no syntax tree", sample.id))
    })?;
    Ok(PreparedSample {
        id: sample.id.clone(),
        code_ids: model.code_vocab.encode(&sample.code_tokens),
        code_tokens: sample.code_tokens.clone(),
        tree: binarize(ast),
        target: comment_target(&model.comment_vocab, &sample.comment_tokens),
        comment_tokens: sample.comment_tokens.clone(),
    })
}

pub fn prepare_samples(model: &Model, samples: &[Sample]) -> Result<Vec<PreparedSample>> {
    samples.iter().map(|s| prepare_sample(model, s)).collect()
}

/// Build the three vocabularies from (training-split) samples.
pub fn build_vocabs(samples: &[Sample], config: &TrainConfig) -> Result<(Vocab, Vocab, Vocab)> {
    let code_seqs: Vec<&[String]> = samples.iter().map(|s| s.code_tokens.as_slice()).collect();
    let comment_seqs: Vec<&[String]> =
        samples.iter().map(|s| s.comment_tokens.as_slice()).collect();
    let ast_keys: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            s.ast
                .as_ref()
                .map(|a| collect_keys(&binarize(a)))
                .ok_or_else(|| Error::InvalidData(format!("sample {:?} carries no syntax tree", s.id)))
        })
        .collect::<Result<_>>()?;
    let ast_seqs: Vec<&[String]> = ast_keys.iter().map(|k| k.as_slice()).collect();

    let code = Vocab::build(code_seqs, config.code_vocab_max, config.min_count)?;
    let ast = Vocab::build(ast_seqs, config.ast_vocab_max, config.min_count)?;
    let comment = Vocab::build(comment_seqs, config.comment_vocab_max, config.min_count)?;
    Ok((code, ast, comment))
}

fn collect_keys(tree: &BinaryAst) -> Vec<String> {
    let mut keys = Vec::new();
    fn walk(node: &BinaryAst, keys: &mut Vec<String>) {
        for c in &node.children {
            walk(c, keys);
        }
        keys.push(node.vocab_key());
    }
    walk(tree, &mut keys);
    keys
}

// ── returns and advantage ───────────────────────────────────────────────

/// Monte-Carlo return of each step under terminal-only reward:
/// G_t = γ^(L-1-t) · r for an episode of length L.
pub fn monte_carlo_returns(episode_len: usize, reward: f64, gamma: f64) -> Vec<f64> {
    (0..episode_len).map(|t| gamma.powi((episode_len - 1 - t) as i32) * reward).collect()
}

/// Advantage of the action taken at step `t`: the sampled return minus
/// the critic's value estimate.
pub fn advantage(episode: &Episode, t: usize, gamma: f64) -> f64 {
    let returns = monte_carlo_returns(episode.actions.len(), episode.reward, gamma);
    returns[t] - episode.values[t]
}

// ── loss construction ───────────────────────────────────────────────────

fn sum_scalars(tape: &mut Tape, values: &[Value]) -> Result<Value> {
    let mut acc = tape.scalar(0.0);
    for &v in values {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Teacher-forced negative log-likelihood (summed over steps) for one
/// sample; returns the loss handle, the rollout, and the step count.
fn xe_loss(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    sample: &PreparedSample,
) -> Result<(Value, Rollout)> {
    let enc = encode(tape, binder, model, &sample.code_ids, &sample.tree)?;
    let roll = rollout(
        tape,
        binder,
        model,
        &enc,
        DecodeMode::TeacherForced(&sample.target),
        sample.target.len(),
        false,
    )?;
    let logprobs: Vec<Value> = roll.steps.iter().map(|s| s.logprob).collect();
    let total = sum_scalars(tape, &logprobs)?;
    let loss = tape.neg(total)?;
    Ok((loss, roll))
}

/// Half squared error between Monte-Carlo returns and value estimates,
/// summed over the episode's steps.
fn critic_loss(tape: &mut Tape, roll: &Rollout, returns: &[f64]) -> Result<Value> {
    let mut terms = Vec::with_capacity(roll.steps.len());
    for (step, &g) in roll.steps.iter().zip(returns) {
        let target = tape.scalar(g);
        let diff = tape.sub(target, step.value)?;
        let sq = tape.mul(diff, diff)?;
        terms.push(sq);
    }
    let total = sum_scalars(tape, &terms)?;
    tape.scale(total, 0.5)
}

fn diverged(phase: &'static str, iteration: u64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite { op } => Error::Diverged {
            phase,
            iteration,
            msg: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

// ── phases ──────────────────────────────────────────────────────────────

/// Per-iteration scalar series a phase produced (batch perplexity, batch
/// critic loss, or batch mean reward).
pub struct PhaseStats {
    pub per_iteration: Vec<f64>,
}

/// Hook invoked after an update step when a periodic checkpoint is due.
pub type CheckpointHook<'a> = &'a mut dyn FnMut(&Model, &AdaGradState, &Progress) -> Result<()>;

/// Cross-entropy pretraining of the generator under teacher forcing.
/// Minimizes mean per-token NLL; logs perplexity = exp(mean NLL).
pub fn pretrain_actor(
    model: &mut Model,
    optim: &mut AdaGradState,
    samples: &[PreparedSample],
    config: &TrainConfig,
    progress: &mut Progress,
    log: &mut TrainLog,
    mut on_checkpoint: Option<CheckpointHook>,
) -> Result<PhaseStats> {
    if samples.is_empty() {
        return Err(Error::InvalidData("no training samples".into()));
    }
    let mut stats = Vec::new();
    while progress.actor_epochs_done < config.actor_epochs {
        let epoch = progress.actor_epochs_done;
        let order = shuffled_indices(samples.len(), config.seed, PHASE_ACTOR, epoch);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (bi, batch) in batches.iter().enumerate().skip(progress.actor_batches_done as usize) {
            let iteration = progress.actor_iterations + 1;
            let mut total_nll = 0.0;
            let mut total_tokens = 0usize;
            for &si in batch.iter() {
                let sample = &samples[si];
                let mut tape = Tape::new();
                let mut binder = Binder::new();
                let (loss, roll) =
                    xe_loss(&mut tape, &mut binder, model, sample).map_err(diverged("pretrain-actor", iteration))?;
                tape.backward(loss).map_err(diverged("pretrain-actor", iteration))?;
                binder.harvest(&tape, &mut model.params);
                total_nll += tape.value(loss).item();
                total_tokens += roll.steps.len();
            }
            model.params.scale_grads(1.0 / total_tokens as f64);
            clip_gradients(&mut model.params, config.clip_norm);
            optim.apply(&mut model.params, config.learning_rate, |n| !is_critic_param(n));
            model.params.zero_grads();

            let ppl = (total_nll / total_tokens as f64).exp();
            if !ppl.is_finite() {
                return Err(Error::Diverged {
                    phase: "pretrain-actor",
                    iteration,
                    msg: format!("perplexity became {ppl}"),
                });
            }
            stats.push(ppl);
            progress.actor_iterations = iteration;
            progress.actor_batches_done = bi as u64 + 1;
            progress.global_iteration += 1;
            if config.log_every > 0 && iteration % config.log_every == 0 {
                log.append(LogEntry {
                    iteration,
                    phase: "pretrain-actor".into(),
                    perplexity: Some(ppl),
                    mean_reward: None,
                    critic_loss: None,
                })?;
            }
            if let Some(hook) = on_checkpoint.as_mut() {
                if config.checkpoint_every > 0
                    && progress.global_iteration % config.checkpoint_every == 0
                {
                    hook(model, optim, progress)?;
                }
            }
        }
        progress.actor_epochs_done += 1;
        progress.actor_batches_done = 0;
    }
    if let Some(&last) = stats.last() {
        log.append(LogEntry {
            iteration: progress.actor_iterations,
            phase: "pretrain-actor".into(),
            perplexity: Some(last),
            mean_reward: None,
            critic_loss: None,
        })?;
    }
    Ok(PhaseStats { per_iteration: stats })
}

/// Value-head regression on sampled rollouts with the generator frozen:
/// minimizes ½‖G_t − V(s_t)‖² against Monte-Carlo returns. Only `critic/`
/// parameters are updated (the shared stack also receives no gradient,
/// by the value head's detached input).
pub fn pretrain_critic(
    model: &mut Model,
    optim: &mut AdaGradState,
    samples: &[PreparedSample],
    config: &TrainConfig,
    progress: &mut Progress,
    log: &mut TrainLog,
    mut on_checkpoint: Option<CheckpointHook>,
) -> Result<PhaseStats> {
    if samples.is_empty() {
        return Err(Error::InvalidData("no training samples".into()));
    }
    let mut stats = Vec::new();
    while progress.critic_epochs_done < config.critic_epochs {
        let epoch = progress.critic_epochs_done;
        let order = shuffled_indices(samples.len(), config.seed, PHASE_CRITIC, epoch);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (bi, batch) in batches.iter().enumerate().skip(progress.critic_batches_done as usize) {
            let iteration = progress.critic_iterations + 1;
            let mut batch_loss = 0.0;
            for (slot, &si) in batch.iter().enumerate() {
                let sample = &samples[si];
                let mut tape = Tape::new();
                let mut binder = Binder::new();
                let enc = encode(&mut tape, &mut binder, model, &sample.code_ids, &sample.tree)
                    .map_err(diverged("pretrain-critic", iteration))?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    &[PHASE_CRITIC, epoch, bi as u64, slot as u64, TAG_ROLLOUT],
                ));
                let roll = rollout(
                    &mut tape,
                    &mut binder,
                    model,
                    &enc,
                    DecodeMode::Sample(&mut rng),
                    config.max_steps,
                    false,
                )
                .map_err(diverged("pretrain-critic", iteration))?;
                let cand = roll.emitted_tokens(model);
                let r = sentence_bleu(&cand, &sample.comment_tokens);
                let returns = monte_carlo_returns(roll.steps.len(), r, config.gamma);
                let loss = critic_loss(&mut tape, &roll, &returns)
                    .map_err(diverged("pretrain-critic", iteration))?;
                tape.backward(loss).map_err(diverged("pretrain-critic", iteration))?;
                binder.harvest(&tape, &mut model.params);
                batch_loss += tape.value(loss).item();
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            clip_gradients(&mut model.params, config.clip_norm);
            optim.apply(&mut model.params, config.learning_rate, is_critic_param);
            model.params.zero_grads();

            let mean_loss = batch_loss / batch.len() as f64;
            stats.push(mean_loss);
            progress.critic_iterations = iteration;
            progress.critic_batches_done = bi as u64 + 1;
            progress.global_iteration += 1;
            if config.log_every > 0 && iteration % config.log_every == 0 {
                log.append(LogEntry {
                    iteration,
                    phase: "pretrain-critic".into(),
                    perplexity: None,
                    mean_reward: None,
                    critic_loss: Some(mean_loss),
                })?;
            }
            if let Some(hook) = on_checkpoint.as_mut() {
                if config.checkpoint_every > 0
                    && progress.global_iteration % config.checkpoint_every == 0
                {
                    hook(model, optim, progress)?;
                }
            }
        }
        progress.critic_epochs_done += 1;
        progress.critic_batches_done = 0;
    }
    if let Some(&last) = stats.last() {
        log.append(LogEntry {
            iteration: progress.critic_iterations,
            phase: "pretrain-critic".into(),
            perplexity: None,
            mean_reward: None,
            critic_loss: Some(last),
        })?;
    }
    Ok(PhaseStats { per_iteration: stats })
}

/// Joint actor-critic updates. Per sample: one rollout is sampled under
/// the current policy, its terminal reward computed, and
///   actor loss  = Σ_t −A_t·log π(y_t|s_t)   (A_t held constant),
///   critic loss = ½ Σ_t (G_t − V(s_t))²
/// are minimized together, critic weights first, then actor weights.
/// An optional mixed objective λ·XE + (1−λ)·RL is available via
/// `mix_lambda` (off by default).
pub fn joint_train(
    model: &mut Model,
    optim: &mut AdaGradState,
    samples: &[PreparedSample],
    config: &TrainConfig,
    progress: &mut Progress,
    log: &mut TrainLog,
    mut on_checkpoint: Option<CheckpointHook>,
    reward_fn: &dyn Fn(&[String], &[String]) -> f64,
) -> Result<PhaseStats> {
    if samples.is_empty() {
        return Err(Error::InvalidData("no training samples".into()));
    }
    let mut stats = Vec::new();
    while progress.joint_epochs_done < config.joint_epochs {
        let epoch = progress.joint_epochs_done;
        let order = shuffled_indices(samples.len(), config.seed, PHASE_JOINT, epoch);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (bi, batch) in batches.iter().enumerate().skip(progress.joint_batches_done as usize) {
            let iteration = progress.joint_iterations + 1;
            let mut batch_reward = 0.0;
            for (slot, &si) in batch.iter().enumerate() {
                let sample = &samples[si];
                let mut tape = Tape::new();
                let mut binder = Binder::new();
                let enc = encode(&mut tape, &mut binder, model, &sample.code_ids, &sample.tree)
                    .map_err(diverged("joint", iteration))?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    &[PHASE_JOINT, epoch, bi as u64, slot as u64, TAG_ROLLOUT],
                ));
                let roll = rollout(
                    &mut tape,
                    &mut binder,
                    model,
                    &enc,
                    DecodeMode::Sample(&mut rng),
                    config.max_steps,
                    false,
                )
                .map_err(diverged("joint", iteration))?;
                let cand = roll.emitted_tokens(model);
                let r = reward_fn(&cand, &sample.comment_tokens);
                batch_reward += r;
                let returns = monte_carlo_returns(roll.steps.len(), r, config.gamma);

                // Advantages are plain numbers: the policy gradient never
                // backpropagates through the value estimates.
                let mut actor_terms = Vec::with_capacity(roll.steps.len());
                for (step, &g) in roll.steps.iter().zip(&returns) {
                    let a = g - tape.value(step.value).item();
                    let term = tape.scale(step.logprob, -a)?;
                    actor_terms.push(term);
                }
                let actor_sum = sum_scalars(&mut tape, &actor_terms)?;
                let actor_part = tape.scale(actor_sum, 1.0 - config.mix_lambda)?;
                let critic_part = critic_loss(&mut tape, &roll, &returns)
                    .map_err(diverged("joint", iteration))?;
                let mut total = tape.add(actor_part, critic_part)?;
                if config.mix_lambda > 0.0 {
                    let (xe, xe_roll) = xe_loss(&mut tape, &mut binder, model, sample)
                        .map_err(diverged("joint", iteration))?;
                    let xe_mean =
                        tape.scale(xe, config.mix_lambda / xe_roll.steps.len() as f64)?;
                    total = tape.add(total, xe_mean)?;
                }
                tape.backward(total).map_err(diverged("joint", iteration))?;
                binder.harvest(&tape, &mut model.params);
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            clip_gradients(&mut model.params, config.clip_norm);
            optim.apply(&mut model.params, config.learning_rate, is_critic_param);
            optim.apply(&mut model.params, config.learning_rate, |n| !is_critic_param(n));
            model.params.zero_grads();

            let mean_reward = batch_reward / batch.len() as f64;
            stats.push(mean_reward);
            progress.joint_iterations = iteration;
            progress.joint_batches_done = bi as u64 + 1;
            progress.global_iteration += 1;
            if config.log_every > 0 && iteration % config.log_every == 0 {
                log.append(LogEntry {
                    iteration,
                    phase: "joint".into(),
                    perplexity: None,
                    mean_reward: Some(mean_reward),
                    critic_loss: None,
                })?;
            }
            if let Some(hook) = on_checkpoint.as_mut() {
                if config.checkpoint_every > 0
                    && progress.global_iteration % config.checkpoint_every == 0
                {
                    hook(model, optim, progress)?;
                }
            }
        }
        progress.joint_epochs_done += 1;
        progress.joint_batches_done = 0;
    }
    if let Some(&last) = stats.last() {
        log.append(LogEntry {
            iteration: progress.joint_iterations,
            phase: "joint".into(),
            perplexity: None,
            mean_reward: Some(last),
            critic_loss: None,
        })?;
    }
    Ok(PhaseStats { per_iteration: stats })
}

/// Teacher-forced perplexity of a sample set under the current weights.
pub fn corpus_perplexity(model: &Model, samples: &[PreparedSample]) -> Result<f64> {
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for sample in samples {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let (loss, roll) = xe_loss(&mut tape, &mut binder, model, sample)?;
        total_nll += tape.value(loss).item();
        total_tokens += roll.steps.len();
    }
    Ok((total_nll / total_tokens as f64).exp())
}
