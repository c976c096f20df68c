//! narkit: a desk-scale non-autoregressive program-repair pipeline.
//!
//! The crate covers the full loop: synthetic corpus generation and
//! tokenization ([`corpus`]), ground-truth repair scripts from token edit
//! distances ([`editscript`]), AST parsing and inter-word dependency
//! matrices ([`astdep`]), the encoder / action-predictor / dependency
//! extractor / two-stage decoder network with exact gradients ([`nnet`]),
//! joint training ([`trainer`]), and patch generation plus latency and
//! over-correction analyses ([`infer`]).

pub mod astdep;
pub mod corpus;
pub mod editscript;
pub mod infer;
pub mod nnet;
pub mod preprocess;
pub mod trainer;
