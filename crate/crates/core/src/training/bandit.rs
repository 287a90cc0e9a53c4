//! Two-arm bandit unit environment.
//!
//! The smallest possible policy-gradient exercise for the joint update:
//! one training sample, a one-step episode (T=1), a comment vocabulary of
//! {good, bad} plus the reserved entries, and reward 1 for emitting
//! "good", 0 otherwise. The learned policy's greedy action should converge
//! to the rewarded arm.

use crate::corpus::{Sample, Vocab};
use crate::decoder::greedy_decode;
use crate::error::Result;
use crate::model::Model;
use crate::training::{
    joint_train, prepare_samples, AdaGradState, PhaseStats, Progress, TrainConfig, TrainLog,
};

pub const REWARDED_ARM: &str = "good";
pub const OTHER_ARM: &str = "bad";

pub struct BanditOutcome {
    /// Greedy action after training equals the rewarded arm.
    pub converged: bool,
    /// π(rewarded arm) at the first step after training.
    pub final_mean_reward: f64,
    pub updates: u64,
}

/// Run `updates` joint actor-critic updates on the bandit and report
/// whether the greedy policy picked the rewarded arm.
pub fn run_two_arm_bandit(seed: u64, updates: u64, learning_rate: f64) -> Result<BanditOutcome> {
    let mut sample = Sample::new("bandit", "def f(): return 1", "good")?;
    sample.ast = Some(crate::ast::minilang::parse_minilang(&sample.code_text)?);

    let config = TrainConfig {
        seed,
        learning_rate,
        batch_size: 1,
        hidden: 4,
        embed: 4,
        actor_epochs: 0,
        critic_epochs: 0,
        joint_epochs: updates,
        max_steps: 1,
        log_every: 0,
        ..TrainConfig::default()
    };

    let code_vocab = Vocab::from_tokens(sample.code_tokens.iter().cloned());
    let ast_vocab = Vocab::from_tokens(["FunctionDef", "Params", "Return", "1"].map(String::from));
    let comment_vocab =
        Vocab::from_tokens([REWARDED_ARM.to_string(), OTHER_ARM.to_string()]);
    let mut model = Model::new(
        config.hidden,
        config.embed,
        config.use_attention,
        code_vocab,
        ast_vocab,
        comment_vocab,
        seed,
    )?;
    let prepared = prepare_samples(&model, &[sample])?;
    let mut optim = AdaGradState::new(&model.params);
    let mut progress = Progress::default();
    let mut log = TrainLog::in_memory();

    let reward = |cand: &[String], _reference: &[String]| -> f64 {
        if cand.first().map(String::as_str) == Some(REWARDED_ARM) {
            1.0
        } else {
            0.0
        }
    };
    let stats: PhaseStats = joint_train(
        &mut model,
        &mut optim,
        &prepared,
        &config,
        &mut progress,
        &mut log,
        None,
        &reward,
    )?;

    let decoded = greedy_decode(&model, &prepared[0].code_ids, &prepared[0].tree, 1)?;
    let converged = decoded.first().map(String::as_str) == Some(REWARDED_ARM);
    let tail = stats.per_iteration.iter().rev().take(20).sum::<f64>()
        / stats.per_iteration.len().min(20).max(1) as f64;
    Ok(BanditOutcome { converged, final_mean_reward: tail, updates })
}
