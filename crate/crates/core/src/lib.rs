//! Hierarchical intent-slot (TOP) semantic parsing toolkit.
//!
//! * [`treebank`]: trees, the bracketed format, constituents, corpora.
//! * [`transitions`]: the shift-reduce action system.
//! * [`parser`]: a log-linear transition parser with beam search.
//! * [`ensemble`]: combining the outputs of several parsers.
//! * [`rerank`]: O_/C_ serialization, n-gram LM and k-best re-ranking.
//! * [`error_analysis`]: the WT/WL/SS/MS/WS/WJ/BB error taxonomy.

pub mod ensemble;
pub mod error_analysis;
pub mod io;
pub mod parser;
pub mod rerank;
pub mod synth;
pub mod transitions;
pub mod treebank;

pub use transitions::{actions_to_tree, tree_to_actions, Action, ActionSequence, ParserState};
pub use treebank::{
    constituents, exact_match, parse_bracketed, render_bracketed, Constituent, ConstituentSet,
    Corpus, CorpusEntry, Label, LabelKind, Node, ParseTree,
};
