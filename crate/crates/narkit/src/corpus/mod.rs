//! Dataset ingestion, tokenization, vocabulary handling, and synthetic
//! corpus generation.
//!
//! Tokenization delegates to the grammar's lexer so that token positions
//! line up one-to-one with AST leaves. Out-of-vocabulary tokens map to UNK
//! for the model, but the original strings are kept so that `keep` actions
//! can copy them verbatim into patches.

mod toygen;
mod vocab;

pub use toygen::generate_toy_corpus;
pub use vocab::{build_vocab, Vocabulary, BOS_ID, EOS_ID, MASK_ID, PAD_ID, RESERVED, UNK_ID};

use crate::astdep::GrammarProvider;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("pair {id}: {side} text is empty")]
    EmptyText { id: String, side: &'static str },
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

/// A buggy/fixed source pair as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodePair {
    pub id: String,
    pub buggy: String,
    pub fixed: String,
}

impl CodePair {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.buggy.trim().is_empty() {
            return Err(CorpusError::EmptyText { id: self.id.clone(), side: "buggy" });
        }
        if self.fixed.trim().is_empty() {
            return Err(CorpusError::EmptyText { id: self.id.clone(), side: "fixed" });
        }
        Ok(())
    }
}

/// Aligned buggy/fixed token sequences with vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPair {
    pub buggy_tokens: Vec<String>,
    pub fixed_tokens: Vec<String>,
    pub buggy_ids: Vec<usize>,
    pub fixed_ids: Vec<usize>,
}

impl TokenizedPair {
    /// Tokenizes and encodes both sides, rejecting sequences longer than
    /// `max_seq_len` and an empty buggy side.
    pub fn from_pair(
        pair: &CodePair,
        grammar: &dyn GrammarProvider,
        vocab: &Vocabulary,
        max_seq_len: usize,
    ) -> Result<Self, CorpusError> {
        pair.validate()?;
        let buggy_tokens = tokenize(&pair.buggy, grammar);
        let fixed_tokens = tokenize(&pair.fixed, grammar);
        for toks in [&buggy_tokens, &fixed_tokens] {
            if toks.len() > max_seq_len {
                return Err(CorpusError::SequenceTooLong { len: toks.len(), max: max_seq_len });
            }
        }
        let buggy_ids = vocab.encode(&buggy_tokens);
        let fixed_ids = vocab.encode(&fixed_tokens);
        Ok(TokenizedPair { buggy_tokens, fixed_tokens, buggy_ids, fixed_ids })
    }
}

/// Splits `text` into tokens using the grammar's lexer. The lexer handles
/// arbitrary text (unknown characters become single-character tokens), so
/// the result equals the parse-tree leaves whenever the text parses and the
/// whitespace/punctuation fallback otherwise.
pub fn tokenize(text: &str, grammar: &dyn GrammarProvider) -> Vec<String> {
    grammar.lex(text).into_iter().map(|t| t.text).collect()
}

/// Reads one `CodePair` JSON object per line.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<CodePair>, CorpusError> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::BadRecord { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: CodePair = serde_json::from_str(&line)
            .map_err(|e| CorpusError::BadRecord { line: i + 1, message: e.to_string() })?;
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_jsonl(mut writer: impl Write, pairs: &[CodePair]) -> std::io::Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut writer, pair)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
