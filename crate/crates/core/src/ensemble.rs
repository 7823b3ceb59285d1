//! Combining the top parses of several parsers.
//!
//! Every strategy returns one of its input sequences, so the result is
//! always a well-formed parse. Ties go to the lowest parser index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transitions::{actions_to_tree, Action, ActionSequence, TransitionError};
use crate::treebank::{constituents, ConstituentSet, ParseTree};

/// Default number of ensembled parsers.
pub const DEFAULT_PARSERS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Majority,
    GreedyAction,
    ParserSwitch,
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Majority,
        Strategy::GreedyAction,
        Strategy::ParserSwitch,
        Strategy::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Majority => "majority",
            Strategy::GreedyAction => "greedy-action",
            Strategy::ParserSwitch => "parser-switch",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(
    "unknown ensemble strategy `{0}` (expected majority, greedy-action, parser-switch or oracle)"
)]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnsembleInput {
    pub id: String,
    pub tokens: Vec<String>,
    /// One top sequence per parser.
    pub sequences: Vec<ActionSequence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one parser")]
    NoParsers,
    #[error("parser {parser}: {source}")]
    InvalidSequence {
        parser: usize,
        #[source]
        source: TransitionError,
    },
}

impl EnsembleInput {
    /// Validates every sequence against the tokens.
    pub fn new(
        id: String,
        tokens: Vec<String>,
        sequences: Vec<ActionSequence>,
    ) -> Result<Self, EnsembleError> {
        if sequences.is_empty() {
            return Err(EnsembleError::NoParsers);
        }
        for (parser, s) in sequences.iter().enumerate() {
            actions_to_tree(s, &tokens)
                .map_err(|source| EnsembleError::InvalidSequence { parser, source })?;
        }
        Ok(EnsembleInput {
            id,
            tokens,
            sequences,
        })
    }

    pub fn parsers(&self) -> usize {
        self.sequences.len()
    }

    fn tree(&self, parser: usize) -> ParseTree {
        actions_to_tree(&self.sequences[parser], &self.tokens).expect("validated on construction")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provenance {
    /// Parser whose sequence was returned.
    pub chosen: usize,
    /// Parsers whose sequence equals the returned one.
    pub agreeing: Vec<usize>,
    /// Per-parser scores for parser switch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<usize>>,
    /// Oracle only: no parser matched gold.
    pub no_correct: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnsembleDecision {
    pub actions: ActionSequence,
    pub strategy: Strategy,
    pub provenance: Provenance,
}

fn decide(input: &EnsembleInput, strategy: Strategy, chosen: usize) -> EnsembleDecision {
    let actions = input.sequences[chosen].clone();
    let agreeing = input
        .sequences
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == actions)
        .map(|(i, _)| i)
        .collect();
    EnsembleDecision {
        actions,
        strategy,
        provenance: Provenance {
            chosen,
            agreeing,
            scores: None,
            no_correct: false,
        },
    }
}

/// The sequence predicted by the most parsers.
pub fn majority_vote(input: &EnsembleInput) -> EnsembleDecision {
    let seqs = &input.sequences;
    let mut best = 0;
    let mut best_count = 0;
    for (i, s) in seqs.iter().enumerate() {
        if seqs[..i].contains(s) {
            continue;
        }
        let count = seqs[i..].iter().filter(|t| *t == s).count();
        if count > best_count {
            best = i;
            best_count = count;
        }
    }
    decide(input, Strategy::Majority, best)
}

/// Left-to-right per-action voting. Sequences are padded with `PAD` to the
/// longest length; at each position the surviving parsers vote, and those
/// disagreeing with the winner are dropped.
pub fn greedy_action(input: &EnsembleInput) -> EnsembleDecision {
    let max_len = input
        .sequences
        .iter()
        .map(ActionSequence::len)
        .max()
        .unwrap_or(0);
    let padded: Vec<Vec<Action>> = input
        .sequences
        .iter()
        .map(|s| {
            let mut v = s.actions.clone();
            v.resize(max_len, Action::Pad);
            v
        })
        .collect();
    let mut survivors: Vec<usize> = (0..padded.len()).collect();
    #[allow(clippy::needless_range_loop)] // `pos` indexes every survivor's sequence
    for pos in 0..max_len {
        let mut winner = &padded[survivors[0]][pos];
        let mut winner_count = 0;
        for (j, &p) in survivors.iter().enumerate() {
            let action = &padded[p][pos];
            if survivors[..j].iter().any(|&q| padded[q][pos] == *action) {
                continue;
            }
            let count = survivors
                .iter()
                .filter(|&&q| padded[q][pos] == *action)
                .count();
            if count > winner_count {
                winner = action;
                winner_count = count;
            }
        }
        let winner = winner.clone();
        survivors.retain(|&p| padded[p][pos] == winner);
    }
    decide(input, Strategy::GreedyAction, survivors[0])
}

/// Options for [`parser_switch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwitchOptions {
    /// Include the `j = i` term, i.e. each parser's own set size.
    pub include_self: bool,
}

impl Default for SwitchOptions {
    fn default() -> Self {
        SwitchOptions { include_self: true }
    }
}

/// Chooses the parse whose constituent multiset overlaps most with all
/// parses: `score_i = Σ_j |S_i ∩ S_j|`.
pub fn parser_switch(input: &EnsembleInput, options: SwitchOptions) -> EnsembleDecision {
    let sets: Vec<ConstituentSet> = (0..input.parsers())
        .map(|i| constituents(&input.tree(i)))
        .collect();
    let scores: Vec<usize> = sets
        .iter()
        .enumerate()
        .map(|(i, si)| {
            sets.iter()
                .enumerate()
                .filter(|(j, _)| options.include_self || *j != i)
                .map(|(_, sj)| si.intersection_size(sj))
                .sum()
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let mut d = decide(input, Strategy::ParserSwitch, best);
    d.provenance.scores = Some(scores);
    d
}

/// Picks a parser that exactly matches gold when one exists, else parser 0.
pub fn oracle_ensemble(input: &EnsembleInput, gold: &ParseTree) -> EnsembleDecision {
    let found = (0..input.parsers()).find(|&i| input.tree(i) == *gold);
    let mut d = decide(input, Strategy::Oracle, found.unwrap_or(0));
    d.provenance.no_correct = found.is_none();
    d
}

/// Dispatches on `strategy`; `Oracle` requires `gold`.
pub fn combine(
    input: &EnsembleInput,
    strategy: Strategy,
    gold: Option<&ParseTree>,
    switch: SwitchOptions,
) -> Option<EnsembleDecision> {
    Some(match strategy {
        Strategy::Majority => majority_vote(input),
        Strategy::GreedyAction => greedy_action(input),
        Strategy::ParserSwitch => parser_switch(input, switch),
        Strategy::Oracle => oracle_ensemble(input, gold?),
    })
}
