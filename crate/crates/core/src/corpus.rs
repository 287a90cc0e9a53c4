//! Code/comment pairs: ingestion, tokenization, vocabularies and splits.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::AstNode;
use crate::error::{Error, Result};

/// Splitting on exactly these ten characters turns code into its lexical
/// token sequence; the delimiters themselves are dropped.
pub const CODE_DELIMITERS: [char; 10] = ['.', ',', '"', '\'', ':', ';', ')', '(', '!', ' '];

/// Code token sequences are cut here.
pub const MAX_CODE_TOKENS: usize = 100;
/// Comment token sequences are cut here (end-of-sequence excluded).
pub const MAX_COMMENT_TOKENS: usize = 20;

/// Split code on the ten delimiter characters, preserving case.
pub fn tokenize_code(code_text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = code_text
        .split(|c| CODE_DELIMITERS.contains(&c))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(Error::InvalidData(format!(
            "code {:?} tokenizes to an empty sequence",
            code_text
        )));
    }
    Ok(tokens)
}

/// Split a comment on whitespace and lowercase it.
pub fn tokenize_comment(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text.split_whitespace().map(|s| s.to_lowercase()).collect();
    if tokens.is_empty() {
        return Err(Error::InvalidData("blank comment".into()));
    }
    Ok(tokens)
}

/// One code/comment pair.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub code_text: String,
    pub code_tokens: Vec<String>,
    pub comment_tokens: Vec<String>,
    pub ast: Option<AstNode>,
}

/// JSON Lines record shape for corpus files.
#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    code: String,
    comment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    ast: Option<serde_json::Value>,
}

impl Sample {
    pub fn new(id: impl Into<String>, code: &str, comment: &str) -> Result<Self> {
        let mut code_tokens = tokenize_code(code)?;
        code_tokens.truncate(MAX_CODE_TOKENS);
        let mut comment_tokens = tokenize_comment(comment)?;
        comment_tokens.truncate(MAX_COMMENT_TOKENS);
        Ok(Sample {
            id: id.into(),
            code_text: code.to_string(),
            code_tokens,
            comment_tokens,
            ast: None,
        })
    }

    fn from_record(rec: SampleRecord) -> Result<Self> {
        let mut s = Sample::new(rec.id, &rec.code, &rec.comment)?;
        if let Some(ast) = &rec.ast {
            s.ast = Some(crate::ast::load_ast_value(ast)?);
        }
        Ok(s)
    }

    fn to_record(&self) -> SampleRecord {
        SampleRecord {
            id: self.id.clone(),
            code: self.code_text.clone(),
            comment: self.comment_tokens.join(" "),
            ast: self.ast.as_ref().map(crate::ast::ast_to_value),
        }
    }
}

/// Read a JSON Lines corpus file.
pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        samples.push(Sample::from_record(rec).map_err(|e| {
            Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(samples)
}

/// Parse an in-memory JSON Lines corpus (used for the bundled toy data).
pub fn parse_jsonl(content: &str) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::InvalidData(format!("line {}: {e}", lineno + 1)))?;
        samples.push(Sample::from_record(rec)?);
    }
    Ok(samples)
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for s in samples {
        serde_json::to_writer(&mut file, &s.to_record())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

// ── vocabulary ──────────────────────────────────────────────────────────

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Surface forms of the four reserved entries, in index order.
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token/index bijection with four reserved entries at indices 0..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Rank tokens by frequency (ties broken lexicographically), keep those
    /// seen at least `min_count` times, and cap the total size (reserved
    /// entries included) at `max_size`.
    pub fn build<'a, I>(token_seqs: I, max_size: usize, min_count: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_size < RESERVED_TOKENS.len() {
            return Err(Error::InvalidConfig(format!(
                "vocab max_size {} below reserved count {}",
                max_size,
                RESERVED_TOKENS.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for seq in token_seqs {
            any = true;
            for tok in seq {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::InvalidData("cannot build vocabulary from an empty sample set".into()));
        }
        let mut ranked: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED_TOKENS.len());
        Ok(Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string())))
    }

    /// Assemble from an ordered list of non-reserved tokens.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocab {
        let mut all: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of a token; unknown tokens map to [`UNK`].
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Non-reserved tokens in index order (the on-disk representation).
    pub fn plain_tokens(&self) -> &[String] {
        &self.tokens[RESERVED_TOKENS.len()..]
    }

    /// Write one token per line; the line at 0-based position `k` holds
    /// index `k + 4`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for tok in self.plain_tokens() {
            writeln!(file, "{tok}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidData(format!("cannot read vocab {}: {e}", path.display())))?;
        Ok(Vocab::from_tokens(content.lines().map(str::to_string)))
    }
}

/// Token indices a decoder is trained against: the comment tokens followed
/// by the end-of-sequence marker.
pub fn comment_target(vocab: &Vocab, comment_tokens: &[String]) -> Vec<usize> {
    let mut ids = vocab.encode(comment_tokens);
    ids.push(EOS);
    ids
}

// ── splits ──────────────────────────────────────────────────────────────

/// Deterministic shuffle-then-slice split specification.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub seed: u64,
    pub fractions: (f64, f64, f64),
}

impl SplitSpec {
    pub fn new(seed: u64, fractions: (f64, f64, f64)) -> Result<Self> {
        let (a, b, c) = fractions;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must all be positive, got {:?}",
                fractions
            )));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {:?}",
                fractions
            )));
        }
        Ok(SplitSpec { seed, fractions })
    }
}

/// Fisher-Yates shuffle with the spec's seed, then contiguous slices.
pub fn split(corpus: Vec<Sample>, spec: &SplitSpec) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    if corpus.is_empty() {
        return Err(Error::InvalidData("cannot split an empty corpus".into()));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (n as f64 * spec.fractions.0).floor() as usize;
    let n_valid = (n as f64 * spec.fractions.1).floor() as usize;
    let n_test = n - n_train - n_valid;
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::InvalidConfig(format!(
            "fractions {:?} produce an empty split for {} samples (sizes {}/{}/{})",
            spec.fractions, n, n_train, n_valid, n_test
        )));
    }
    let mut shuffled: Vec<Sample> = Vec::with_capacity(n);
    let mut source: Vec<Option<Sample>> = corpus.into_iter().map(Some).collect();
    for &i in &order {
        shuffled.push(source[i].take().expect("each index visited once"));
    }
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok((shuffled, valid, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_code_drops_delimiters() {
        let toks = tokenize_code("def f(a, b): return a").unwrap();
        assert_eq!(toks, vec!["def", "f", "a", "b", "return", "a"]);
    }

    #[test]
    fn tokenize_code_single_token() {
        assert_eq!(tokenize_code("x").unwrap(), vec!["x"]);
    }

    #[test]
    fn tokenize_code_all_delimiters_errors() {
        assert!(tokenize_code("(((").is_err());
        assert!(tokenize_code(" .,:; ").is_err());
    }

    #[test]
    fn tokenize_code_preserves_case() {
        assert_eq!(tokenize_code("getX setY").unwrap(), vec!["getX", "setY"]);
    }

    #[test]
    fn tokenize_comment_lowercases() {
        assert_eq!(tokenize_comment("Return X").unwrap(), vec!["return", "x"]);
    }

    #[test]
    fn tokenize_comment_ground_truth_case() {
        let toks = tokenize_comment("check if git is installed .").unwrap();
        assert_eq!(toks, vec!["check", "if", "git", "is", "installed", "."]);
    }

    #[test]
    fn tokenize_comment_blank_errors() {
        assert!(tokenize_comment(" ").is_err());
    }

    #[test]
    fn vocab_frequency_then_lexicographic() {
        let seqs: Vec<Vec<String>> =
            vec![vec!["a".into(), "b".into(), "a".into()]];
        let v = Vocab::build(seqs.iter().map(|s| s.as_slice()), 10, 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.lookup("a"), 4);
        assert_eq!(v.lookup("b"), 5);
    }

    #[test]
    fn vocab_min_count_filters_everything() {
        let seqs: Vec<Vec<String>> = vec![vec!["a".into(), "b".into()]];
        let v = Vocab::build(seqs.iter().map(|s| s.as_slice()), 10, 2).unwrap();
        assert_eq!(v.len(), RESERVED_TOKENS.len());
    }

    #[test]
    fn vocab_unknown_maps_to_unk() {
        let seqs: Vec<Vec<String>> = vec![vec!["a".into()]];
        let v = Vocab::build(seqs.iter().map(|s| s.as_slice()), 10, 1).unwrap();
        assert_eq!(v.lookup("never-seen"), UNK);
    }

    #[test]
    fn comment_target_ends_with_eos() {
        let seqs: Vec<Vec<String>> = vec![vec!["a".into()]];
        let v = Vocab::build(seqs.iter().map(|s| s.as_slice()), 10, 1).unwrap();
        let ids = comment_target(&v, &["a".to_string()]);
        assert_eq!(ids.last(), Some(&EOS));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let samples: Vec<Sample> = (0..10)
            .map(|i| Sample::new(format!("s{i}"), "def f(): return 1", "a comment").unwrap())
            .collect();
        let spec = SplitSpec::new(7, (0.6, 0.2, 0.2)).unwrap();
        let (tr1, va1, te1) = split(samples.clone(), &spec).unwrap();
        assert_eq!((tr1.len(), va1.len(), te1.len()), (6, 2, 2));
        let (tr2, va2, te2) = split(samples, &spec).unwrap();
        let ids = |xs: &[Sample]| xs.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&tr1), ids(&tr2));
        assert_eq!(ids(&va1), ids(&va2));
        assert_eq!(ids(&te1), ids(&te2));
    }

    #[test]
    fn split_partitions_corpus() {
        let samples: Vec<Sample> = (0..23)
            .map(|i| Sample::new(format!("s{i}"), "def f(): return 1", "c").unwrap())
            .collect();
        let spec = SplitSpec::new(3, (0.6, 0.2, 0.2)).unwrap();
        let (tr, va, te) = split(samples, &spec).unwrap();
        let mut all: Vec<String> = tr.iter().chain(&va).chain(&te).map(|s| s.id.clone()).collect();
        assert_eq!(all.len(), 23);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 23, "splits must be disjoint and cover the corpus");
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        assert!(SplitSpec::new(1, (1.0, 0.0, 0.0)).is_err());
        let samples: Vec<Sample> =
            vec![Sample::new("a", "def f(): return 1", "c").unwrap()];
        let spec = SplitSpec::new(1, (0.6, 0.2, 0.2)).unwrap();
        assert!(split(samples, &spec).is_err());
    }

    #[test]
    fn paper_scale_split_sizes() {
        let n = 100_000usize;
        let n_train = (n as f64 * 0.6).floor() as usize;
        let n_valid = (n as f64 * 0.2).floor() as usize;
        assert_eq!((n_train, n_valid, n - n_train - n_valid), (60_000, 20_000, 20_000));
    }

    proptest! {
        #[test]
        fn code_tokens_never_contain_delimiters(s in "[ -~]{1,60}") {
            if let Ok(toks) = tokenize_code(&s) {
                for t in toks {
                    prop_assert!(!t.chars().any(|c| CODE_DELIMITERS.contains(&c)));
                }
            }
        }

        #[test]
        fn encode_decode_roundtrip(idx in proptest::collection::vec(0usize..8, 0..12)) {
            let seqs: Vec<Vec<String>> = vec![(0..4).map(|i| format!("tok{i}")).collect()];
            let v = Vocab::build(seqs.iter().map(|s| s.as_slice()), 16, 1).unwrap();
            let capped: Vec<usize> = idx.into_iter().map(|i| i % v.len()).collect();
            let decoded = v.decode(&capped);
            prop_assert_eq!(v.encode(&decoded), capped);
        }
    }
}
