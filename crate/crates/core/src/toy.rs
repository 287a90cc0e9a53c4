//! The bundled 20-sample mini-language corpus. Everything downstream
//! (tests, the CLI walkthrough, acceptance runs) can work offline from
//! this file.

use crate::ast::minilang::parse_minilang;
use crate::corpus::{parse_jsonl, Sample};
use crate::error::Result;

pub const TOY_CORPUS_JSONL: &str = include_str!("../data/toy.jsonl");

/// Parse the bundled corpus and attach mini-language ASTs.
pub fn toy_corpus() -> Result<Vec<Sample>> {
    let mut samples = parse_jsonl(TOY_CORPUS_JSONL)?;
    for s in &mut samples {
        if s.ast.is_none() {
            s.ast = Some(parse_minilang(&s.code_text)?);
        }
    }
    Ok(samples)
}
