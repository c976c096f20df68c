//! AST construction and inter-word dependency extraction.
//!
//! Code text is parsed into an arena-backed syntax tree whose leaves line up
//! one-to-one with the lexical tokens. The dependency label of a token pair
//! is the node type of the nearest common parent of the two leaves; labels
//! over all pairs form a symmetric matrix used as ground truth for the
//! dependency head of the network.

mod grammar;
mod matrix;
mod tree;

pub use grammar::{lex_text, LeafKind, LexToken, MiniGrammar};
pub use matrix::{DependencyMatrix, NodeTypeIndex};
pub use tree::{AstNode, AstTree};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstDepError {
    /// The grammar rejected the text. Callers filter the pair.
    #[error("parse failure at offset {offset}: {message}")]
    ParseFailure { offset: usize, message: String },
    /// A node type is missing from a frozen index with no fallback slot.
    #[error("unknown node type {0:?} in frozen index")]
    UnknownNodeType(String),
}

/// Deterministic text-to-tree interface. Abstracts the concrete grammar so
/// the rest of the pipeline only sees trees and tokens.
pub trait GrammarProvider {
    fn name(&self) -> &str;
    /// Lexes text into tokens. Never fails: characters outside the grammar's
    /// alphabet become single-character tokens.
    fn lex(&self, text: &str) -> Vec<LexToken>;
    /// Parses text into an [`AstTree`] whose in-order leaves equal `lex`.
    fn parse(&self, text: &str) -> Result<AstTree, AstDepError>;
}

/// Parses `text` under `grammar`.
pub fn parse(text: &str, grammar: &dyn GrammarProvider) -> Result<AstTree, AstDepError> {
    grammar.parse(text)
}

/// Builds the m-by-m matrix of nearest-common-parent type ids over all leaf
/// pairs. The diagonal holds the leaf's immediate parent type.
pub fn build_dependency_matrix(
    tree: &AstTree,
    index: &NodeTypeIndex,
) -> Result<DependencyMatrix, AstDepError> {
    matrix::build(tree, index)
}
