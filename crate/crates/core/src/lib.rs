//! Syntax-guided generation of code with embedded SQL.
//!
//! Concrete syntax trees ([`tree`], [`grammar`]) are flattened into
//! tag-annotated token sequences ([`sat`]) that serve as an auxiliary
//! training target for a dual-head encoder-decoder ([`model`]). Decoding
//! ([`decode`]) can re-rank beam candidates by compiler feedback
//! ([`checkers`]); [`metrics`] scores the results.

pub mod bridge;
pub mod checkers;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod grammar;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod sat;
pub mod tree;

pub use bridge::BridgeScorer;
pub use checkers::{
    check_external, check_parse, checker_from_spec, parallel_check_all, CheckOutcome, Checker, ExternalCheckerConfig,
};
pub use corpus::{Sample, SplitSpec};
pub use decode::{beam, greedy, sample, sf_beam, Candidate, DecodeOpts, Scorer, SpecialIds, Strategy};
pub use error::{Error, Result};
pub use grammar::Grammar;
pub use metrics::{EvalConfig, MetricName, MetricReport};
pub use model::{Model, ModelConfig, ToyScorer, Vocab};
pub use prompt::{build_prompt, PromptKind, PromptTemplate, TaskId};
pub use sat::{sat_decode, sat_encode, SatSequence, SatToken, TagLength, TagPolicy};
pub use tree::{ingest_tree, SourcePoint, Span, SyntaxNode};
