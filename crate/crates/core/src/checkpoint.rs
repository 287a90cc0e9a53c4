//! Single-file binary checkpoint: magic "ACSM", version, config snapshot,
//! vocabularies, named parameter tensors, optimizer accumulators, and
//! progress counters. All integers and f64 payloads are little-endian.
//!
//! The RNG state is the config's seed plus the progress counters: every
//! stochastic stream is derived from (seed, phase, epoch, batch, slot),
//! so save→load→continue replays the exact trajectory of an
//! uninterrupted run, and save→load→save is byte-identical.

use std::path::Path;

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, ParamStore};
use crate::numerics::Tensor;
use crate::training::{AdaGradState, Progress, TrainConfig};

pub const MAGIC: &[u8; 4] = b"ACSM";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub optim: AdaGradState,
    pub progress: Progress,
}

// ── writing ─────────────────────────────────────────────────────────────

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(buf, name);
    put_u32(buf, t.shape().len() as u32);
    for &d in t.shape() {
        put_u64(buf, d as u64);
    }
    for &x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_vocab(buf: &mut Vec<u8>, v: &Vocab) {
    let tokens = v.plain_tokens();
    put_u32(buf, tokens.len() as u32);
    for t in tokens {
        put_str(buf, t);
    }
}

/// Serialize a checkpoint to disk.
pub fn save_checkpoint(
    path: &Path,
    config: &TrainConfig,
    model: &Model,
    optim: &AdaGradState,
    progress: &Progress,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_str(&mut buf, &config.to_canonical_string());
    put_vocab(&mut buf, &model.code_vocab);
    put_vocab(&mut buf, &model.ast_vocab);
    put_vocab(&mut buf, &model.comment_vocab);

    let names: Vec<&str> = model.params.names().collect();
    put_u32(&mut buf, names.len() as u32);
    for name in &names {
        put_tensor(&mut buf, name, model.params.get(name));
    }
    put_u32(&mut buf, names.len() as u32);
    for name in &names {
        put_tensor(&mut buf, name, optim.accumulator(name));
    }

    for v in [
        progress.actor_epochs_done,
        progress.actor_batches_done,
        progress.actor_iterations,
        progress.critic_epochs_done,
        progress.critic_batches_done,
        progress.critic_iterations,
        progress.joint_epochs_done,
        progress.joint_batches_done,
        progress.joint_iterations,
        progress.global_iteration,
    ] {
        put_u64(&mut buf, v);
    }
    std::fs::write(path, buf)?;
    Ok(())
}

// ── reading ─────────────────────────────────────────────────────────────

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::InvalidCheckpoint(format!(
                "truncated while reading {what} (need {n} bytes at offset {})",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::InvalidCheckpoint(format!("non-utf8 string in {what}")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string("tensor name")?;
        let ndim = self.u32(&format!("tensor {name:?} rank"))? as usize;
        if ndim > 4 {
            return Err(Error::InvalidCheckpoint(format!("tensor {name:?} has rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64(&format!("tensor {name:?} dims"))? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8, &format!("tensor {name:?} payload"))?;
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::InvalidCheckpoint(format!("tensor {name:?}: {e}")))?;
        Ok((name, t))
    }

    fn vocab(&mut self, what: &str) -> Result<Vocab> {
        let count = self.u32(what)? as usize;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            tokens.push(self.string(what)?);
        }
        Ok(Vocab::from_tokens(tokens))
    }
}

fn fill_store(target: &mut ParamStore, tensors: Vec<(String, Tensor)>, what: &str) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (name, tensor) in tensors {
        if !target.contains(&name) {
            return Err(Error::InvalidCheckpoint(format!("unexpected {what} tensor {name:?}")));
        }
        if target.get(&name).shape() != tensor.shape() {
            return Err(Error::InvalidCheckpoint(format!(
                "{what} tensor {name:?} has shape {:?}, expected {:?}",
                tensor.shape(),
                target.get(&name).shape()
            )));
        }
        *target.value_mut(&name) = tensor;
        seen.insert(name);
    }
    for name in target.names() {
        if !seen.contains(name) {
            return Err(Error::InvalidCheckpoint(format!("missing {what} tensor {name:?}")));
        }
    }
    Ok(())
}

/// Load and validate a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)
        .map_err(|e| Error::InvalidCheckpoint(format!("cannot read {}: {e}", path.display())))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::InvalidCheckpoint("bad magic (expected ACSM)".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::InvalidCheckpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let config = TrainConfig::from_key_values(&cur.string("config")?)?;
    let code_vocab = cur.vocab("code vocab")?;
    let ast_vocab = cur.vocab("ast vocab")?;
    let comment_vocab = cur.vocab("comment vocab")?;

    let mut model = Model::new(
        config.hidden,
        config.embed,
        config.use_attention,
        code_vocab,
        ast_vocab,
        comment_vocab,
        config.seed,
    )?;
    let n_params = cur.u32("parameter count")? as usize;
    let mut tensors = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        tensors.push(cur.tensor()?);
    }
    fill_store(&mut model.params, tensors, "parameter")?;

    let mut optim = AdaGradState::new(&model.params);
    let n_acc = cur.u32("accumulator count")? as usize;
    for _ in 0..n_acc {
        let (name, tensor) = cur.tensor()?;
        let names: Vec<String> = optim.names().map(str::to_string).collect();
        if !names.iter().any(|n| n == &name) {
            return Err(Error::InvalidCheckpoint(format!("unexpected accumulator {name:?}")));
        }
        if tensor.data().iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidCheckpoint(format!(
                "accumulator {name:?} holds negative entries"
            )));
        }
        *optim.accumulator_mut(&name) = tensor;
    }

    let progress = Progress {
        actor_epochs_done: cur.u64("progress")?,
        actor_batches_done: cur.u64("progress")?,
        actor_iterations: cur.u64("progress")?,
        critic_epochs_done: cur.u64("progress")?,
        critic_batches_done: cur.u64("progress")?,
        critic_iterations: cur.u64("progress")?,
        joint_epochs_done: cur.u64("progress")?,
        joint_batches_done: cur.u64("progress")?,
        joint_iterations: cur.u64("progress")?,
        global_iteration: cur.u64("progress")?,
    };
    if cur.pos != buf.len() {
        return Err(Error::InvalidCheckpoint(format!(
            "{} trailing bytes after progress section",
            buf.len() - cur.pos
        )));
    }
    Ok(Checkpoint { config, model, optim, progress })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;

    fn sample_checkpoint() -> (TrainConfig, Model, AdaGradState, Progress) {
        let config = TrainConfig { hidden: 4, embed: 4, seed: 3, ..TrainConfig::default() };
        let v = |ts: &[&str]| Vocab::from_tokens(ts.iter().map(|s| s.to_string()));
        let model = Model::new(
            4,
            4,
            true,
            v(&["a", "b"]),
            v(&["P"]),
            v(&["w1", "w2", "w3"]),
            config.seed,
        )
        .unwrap();
        let mut optim = AdaGradState::new(&model.params);
        optim.accumulator_mut("actor/out_b").data_mut()[0] = 0.25;
        let progress = Progress { actor_epochs_done: 2, global_iteration: 17, ..Progress::default() };
        (config, model, optim, progress)
    }

    #[test]
    fn roundtrip_restores_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.acsm");
        let (config, model, optim, progress) = sample_checkpoint();
        save_checkpoint(&path, &config, &model, &optim, &progress).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.config, config);
        assert_eq!(ck.progress, progress);
        assert_eq!(ck.model.comment_vocab, model.comment_vocab);
        for name in model.params.names() {
            assert_eq!(ck.model.params.get(name).data(), model.params.get(name).data());
            assert_eq!(ck.optim.accumulator(name).data(), optim.accumulator(name).data());
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.acsm");
        let p2 = dir.path().join("b.acsm");
        let (config, model, optim, progress) = sample_checkpoint();
        save_checkpoint(&p1, &config, &model, &optim, &progress).unwrap();
        let ck = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &ck.config, &ck.model, &ck.optim, &ck.progress).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_payload_names_failing_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.acsm");
        let (config, model, optim, progress) = sample_checkpoint();
        save_checkpoint(&path, &config, &model, &optim, &progress).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("tensor"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.acsm");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
