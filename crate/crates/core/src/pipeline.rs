//! Operator-level workflows shared by the CLI and the acceptance suite:
//! data preparation, the phase schedule with checkpointing and logging,
//! evaluation of a checkpoint, and single-snippet summarization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ast::minilang::parse_minilang;
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::corpus::{read_jsonl, split, write_jsonl, Sample, SplitSpec, Vocab};
use crate::decoder::{attention_dump, rollout, DecodeMode};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{Binder, Model};
use crate::numerics::Tape;
use crate::training::{
    build_vocabs, joint_train, prepare_samples, pretrain_actor, pretrain_critic, sentence_bleu,
    AdaGradState, Progress, TrainConfig, TrainLog,
};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const CODE_VOCAB_FILE: &str = "code.vocab";
pub const AST_VOCAB_FILE: &str = "ast.vocab";
pub const COMMENT_VOCAB_FILE: &str = "comment.vocab";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINAL_CHECKPOINT: &str = "final.acsm";
pub const TRAIN_LOG_FILE: &str = "train.log.jsonl";

/// Attach mini-language ASTs to samples that arrived without one.
pub fn ensure_asts(samples: &mut [Sample]) -> Result<()> {
    for s in samples.iter_mut() {
        if s.ast.is_none() {
            s.ast = Some(parse_minilang(&s.code_text).map_err(|e| {
                Error::InvalidData(format!("sample {:?}: no ast and code does not parse: {e}", s.id))
            })?);
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub fractions: (f64, f64, f64),
    pub counts: SplitCounts,
    pub vocab_sizes: VocabSizes,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VocabSizes {
    pub code: usize,
    pub ast: usize,
    pub comment: usize,
}

/// Shuffle, split, build vocabularies from the training split only, and
/// write the data directory.
pub fn prepare(
    input: &Path,
    out_dir: &Path,
    spec: &SplitSpec,
    config: &TrainConfig,
) -> Result<Manifest> {
    let mut samples = read_jsonl(input)?;
    ensure_asts(&mut samples)?;
    let (train, valid, test) = split(samples, spec)?;
    let (code_vocab, ast_vocab, comment_vocab) = build_vocabs(&train, config)?;

    std::fs::create_dir_all(out_dir)?;
    write_jsonl(&out_dir.join(TRAIN_FILE), &train)?;
    write_jsonl(&out_dir.join(VALID_FILE), &valid)?;
    write_jsonl(&out_dir.join(TEST_FILE), &test)?;
    code_vocab.save(&out_dir.join(CODE_VOCAB_FILE))?;
    ast_vocab.save(&out_dir.join(AST_VOCAB_FILE))?;
    comment_vocab.save(&out_dir.join(COMMENT_VOCAB_FILE))?;

    let manifest = Manifest {
        seed: spec.seed,
        fractions: spec.fractions,
        counts: SplitCounts { train: train.len(), valid: valid.len(), test: test.len() },
        vocab_sizes: VocabSizes {
            code: code_vocab.len(),
            ast: ast_vocab.len(),
            comment: comment_vocab.len(),
        },
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    std::fs::write(out_dir.join(MANIFEST_FILE), manifest_json)?;
    Ok(manifest)
}

/// A prepared data directory loaded back into memory.
pub struct DataDir {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
    pub code_vocab: Vocab,
    pub ast_vocab: Vocab,
    pub comment_vocab: Vocab,
}

pub fn load_data_dir(dir: &Path) -> Result<DataDir> {
    let read = |name: &str| -> Result<Vec<Sample>> {
        let mut samples = read_jsonl(&dir.join(name))?;
        ensure_asts(&mut samples)?;
        Ok(samples)
    };
    Ok(DataDir {
        train: read(TRAIN_FILE)?,
        valid: read(VALID_FILE)?,
        test: read(TEST_FILE)?,
        code_vocab: Vocab::load(&dir.join(CODE_VOCAB_FILE))?,
        ast_vocab: Vocab::load(&dir.join(AST_VOCAB_FILE))?,
        comment_vocab: Vocab::load(&dir.join(COMMENT_VOCAB_FILE))?,
    })
}

fn check_vocab_match(data: &DataDir, model: &Model) -> Result<()> {
    if data.code_vocab != model.code_vocab
        || data.ast_vocab != model.ast_vocab
        || data.comment_vocab != model.comment_vocab
    {
        return Err(Error::InvalidData(
            "checkpoint/vocab mismatch: the data directory's vocabularies differ from the \
             checkpoint's"
                .into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSelect {
    PretrainActor,
    PretrainCritic,
    Joint,
    All,
}

impl std::str::FromStr for PhaseSelect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain-actor" => Ok(PhaseSelect::PretrainActor),
            "pretrain-critic" => Ok(PhaseSelect::PretrainCritic),
            "joint" => Ok(PhaseSelect::Joint),
            "all" => Ok(PhaseSelect::All),
            other => Err(Error::InvalidConfig(format!(
                "unknown phase {other:?} (expected pretrain-actor|pretrain-critic|joint|all)"
            ))),
        }
    }
}

/// Run the requested training phase(s), writing periodic and final
/// checkpoints plus the JSON Lines log into `out_dir`. Returns the final
/// checkpoint path.
pub fn train(
    data_dir: &Path,
    out_dir: &Path,
    phase: PhaseSelect,
    config: Option<TrainConfig>,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    let data = load_data_dir(data_dir)?;
    std::fs::create_dir_all(out_dir)?;

    let (config, mut model, mut optim, mut progress) = match resume {
        Some(ckpt_path) => {
            let ck = load_checkpoint(ckpt_path)?;
            if let Some(explicit) = config {
                if explicit != ck.config {
                    return Err(Error::InvalidConfig(
                        "resume requires the checkpoint's own config; drop --config or make \
                         it identical"
                            .into(),
                    ));
                }
            }
            check_vocab_match(&data, &ck.model)?;
            (ck.config, ck.model, ck.optim, ck.progress)
        }
        None => {
            let config = config.unwrap_or_default();
            config.validate()?;
            let model = Model::new(
                config.hidden,
                config.embed,
                config.use_attention,
                data.code_vocab.clone(),
                data.ast_vocab.clone(),
                data.comment_vocab.clone(),
                config.seed,
            )?;
            let optim = AdaGradState::new(&model.params);
            (config, model, optim, Progress::default())
        }
    };

    // Phase prerequisites mirror the schedule: the critic regresses
    // against a pretrained actor's rollouts, and joint training needs
    // both pretrained.
    match phase {
        PhaseSelect::PretrainCritic if progress.actor_iterations == 0 => {
            return Err(Error::PhaseOrder(
                "pretrain-critic needs a checkpoint with a pretrained actor".into(),
            ));
        }
        PhaseSelect::Joint
            if progress.actor_iterations == 0 || progress.critic_iterations == 0 =>
        {
            return Err(Error::PhaseOrder(
                "joint needs a checkpoint with pretrained actor and critic".into(),
            ));
        }
        _ => {}
    }

    let prepared = prepare_samples(&model, &data.train)?;
    let mut log = TrainLog::to_file(out_dir.join(TRAIN_LOG_FILE));

    let ckpt_dir = out_dir.to_path_buf();
    let ckpt_config = config.clone();
    let mut periodic = move |m: &Model, o: &AdaGradState, p: &Progress| -> Result<()> {
        let path = ckpt_dir.join(format!("ckpt_iter{:06}.acsm", p.global_iteration));
        save_checkpoint(&path, &ckpt_config, m, o, p)
    };

    let run_actor = matches!(phase, PhaseSelect::PretrainActor | PhaseSelect::All);
    let run_critic = matches!(phase, PhaseSelect::PretrainCritic | PhaseSelect::All);
    let run_joint = matches!(phase, PhaseSelect::Joint | PhaseSelect::All);

    if run_actor {
        pretrain_actor(
            &mut model,
            &mut optim,
            &prepared,
            &config,
            &mut progress,
            &mut log,
            Some(&mut periodic),
        )?;
        save_checkpoint(&out_dir.join("ckpt_pretrain_actor.acsm"), &config, &model, &optim, &progress)?;
    }
    if run_critic {
        pretrain_critic(
            &mut model,
            &mut optim,
            &prepared,
            &config,
            &mut progress,
            &mut log,
            Some(&mut periodic),
        )?;
        save_checkpoint(&out_dir.join("ckpt_pretrain_critic.acsm"), &config, &model, &optim, &progress)?;
    }
    if run_joint {
        joint_train(
            &mut model,
            &mut optim,
            &prepared,
            &config,
            &mut progress,
            &mut log,
            Some(&mut periodic),
            &|c, r| sentence_bleu(c, r),
        )?;
        save_checkpoint(&out_dir.join("ckpt_joint.acsm"), &config, &model, &optim, &progress)?;
    }

    let final_path = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &config, &model, &optim, &progress)?;
    Ok(final_path)
}

/// Evaluate a checkpoint on the data directory's test split.
pub fn evaluate_checkpoint(ckpt_path: &Path, data_dir: &Path) -> Result<EvalReport> {
    let ck = load_checkpoint(ckpt_path)?;
    let data = load_data_dir(data_dir)?;
    check_vocab_match(&data, &ck.model)?;
    evaluate(&ck.model, &data.test, ck.config.max_steps)
}

pub struct Summary {
    pub comment: String,
    pub attention: Option<String>,
}

/// Summarize one code snippet with a trained checkpoint. The snippet is
/// parsed with the built-in mini-language unless a pre-parsed AST
/// document is supplied.
pub fn summarize(
    ckpt: &Checkpoint,
    code_text: &str,
    ast_json: Option<&str>,
    dump_attention: bool,
) -> Result<Summary> {
    let mut sample = Sample::new("snippet", code_text, "placeholder")?;
    sample.ast = Some(match ast_json {
        Some(doc) => crate::ast::load_ast(doc)?,
        None => parse_minilang(code_text)?,
    });
    let prepared = prepare_samples(&ckpt.model, std::slice::from_ref(&sample))?;
    let p = &prepared[0];

    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let enc = encode(&mut tape, &mut binder, &ckpt.model, &p.code_ids, &p.tree)?;
    let roll = rollout(
        &mut tape,
        &mut binder,
        &ckpt.model,
        &enc,
        DecodeMode::Greedy,
        ckpt.config.max_steps,
        dump_attention,
    )?;
    let comment = roll.emitted_tokens(&ckpt.model).join(" ");
    let attention = dump_attention.then(|| {
        attention_dump(&ckpt.model, &roll, &enc.tree_keys, &p.code_tokens, 5).render()
    });
    Ok(Summary { comment, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::TOY_CORPUS_JSONL;

    fn write_toy(dir: &Path) -> PathBuf {
        let input = dir.join("toy.jsonl");
        std::fs::write(&input, TOY_CORPUS_JSONL).unwrap();
        input
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            seed: 11,
            hidden: 8,
            embed: 8,
            learning_rate: 0.1,
            batch_size: 4,
            actor_epochs: 2,
            critic_epochs: 1,
            joint_epochs: 1,
            max_steps: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn prepare_writes_expected_files_and_sizes() {
        let tmp = tempfile::tempdir().unwrap();
        let input = write_toy(tmp.path());
        let out = tmp.path().join("data");
        let spec = SplitSpec::new(7, (0.6, 0.2, 0.2)).unwrap();
        let manifest = prepare(&input, &out, &spec, &TrainConfig::default()).unwrap();
        assert_eq!(
            (manifest.counts.train, manifest.counts.valid, manifest.counts.test),
            (12, 4, 4)
        );
        for f in [TRAIN_FILE, VALID_FILE, TEST_FILE, CODE_VOCAB_FILE, AST_VOCAB_FILE, COMMENT_VOCAB_FILE, MANIFEST_FILE] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        let data = load_data_dir(&out).unwrap();
        assert_eq!(data.train.len(), 12);
    }

    #[test]
    fn prepare_is_byte_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let input = write_toy(tmp.path());
        let spec = SplitSpec::new(3, (0.6, 0.2, 0.2)).unwrap();
        let out1 = tmp.path().join("d1");
        let out2 = tmp.path().join("d2");
        prepare(&input, &out1, &spec, &TrainConfig::default()).unwrap();
        prepare(&input, &out2, &spec, &TrainConfig::default()).unwrap();
        for f in [TRAIN_FILE, VALID_FILE, TEST_FILE, CODE_VOCAB_FILE, MANIFEST_FILE] {
            assert_eq!(
                std::fs::read(out1.join(f)).unwrap(),
                std::fs::read(out2.join(f)).unwrap(),
                "{f} differs"
            );
        }
    }

    #[test]
    fn phase_ordering_enforced() {
        let tmp = tempfile::tempdir().unwrap();
        let input = write_toy(tmp.path());
        let data = tmp.path().join("data");
        let spec = SplitSpec::new(7, (0.6, 0.2, 0.2)).unwrap();
        prepare(&input, &data, &spec, &TrainConfig::default()).unwrap();

        let out = tmp.path().join("run");
        let err = train(&data, &out, PhaseSelect::Joint, Some(quick_config()), None).unwrap_err();
        assert!(matches!(err, Error::PhaseOrder(_)), "{err}");
        let err =
            train(&data, &out, PhaseSelect::PretrainCritic, Some(quick_config()), None).unwrap_err();
        assert!(matches!(err, Error::PhaseOrder(_)), "{err}");
    }

    #[test]
    fn full_schedule_produces_final_checkpoint_and_log() {
        let tmp = tempfile::tempdir().unwrap();
        let input = write_toy(tmp.path());
        let data = tmp.path().join("data");
        let spec = SplitSpec::new(7, (0.6, 0.2, 0.2)).unwrap();
        prepare(&input, &data, &spec, &TrainConfig::default()).unwrap();

        let out = tmp.path().join("run");
        let final_path =
            train(&data, &out, PhaseSelect::All, Some(quick_config()), None).unwrap();
        assert!(final_path.exists());
        assert!(out.join(TRAIN_LOG_FILE).exists());

        let report = evaluate_checkpoint(&final_path, &data).unwrap();
        assert_eq!(report.sample_count, 4);
        let buckets: usize = report.code_length_buckets.iter().map(|b| b.count).sum();
        assert_eq!(buckets, 4);

        let ck = load_checkpoint(&final_path).unwrap();
        let s = summarize(&ck, "def add(a, b): return a + b", None, true).unwrap();
        assert!(s.attention.is_some());
    }

    #[test]
    fn resumed_phases_match_single_run() {
        let tmp = tempfile::tempdir().unwrap();
        let input = write_toy(tmp.path());
        let data = tmp.path().join("data");
        let spec = SplitSpec::new(7, (0.6, 0.2, 0.2)).unwrap();
        prepare(&input, &data, &spec, &TrainConfig::default()).unwrap();

        let all = train(&data, &tmp.path().join("one"), PhaseSelect::All, Some(quick_config()), None)
            .unwrap();

        let a = train(
            &data,
            &tmp.path().join("two_a"),
            PhaseSelect::PretrainActor,
            Some(quick_config()),
            None,
        )
        .unwrap();
        let b = train(&data, &tmp.path().join("two_b"), PhaseSelect::PretrainCritic, None, Some(&a))
            .unwrap();
        let c =
            train(&data, &tmp.path().join("two_c"), PhaseSelect::Joint, None, Some(&b)).unwrap();

        assert_eq!(std::fs::read(&all).unwrap(), std::fs::read(&c).unwrap());
    }
}
