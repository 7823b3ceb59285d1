//! Language-model re-ranking of k-best parses.
//!
//! Trees are serialized to token streams where `[IN:GET_EVENT` becomes
//! `O_IN_GET_EVENT` and its closing bracket `C_IN_GET_EVENT`. An n-gram LM
//! trained on serialized gold trees then scores candidates, either directly
//! ([`naive_rerank`]) or as a feature of a learned linear ranker
//! ([`rerank`]).

mod lm;
mod ranker;

use std::fmt;

use thiserror::Error;

pub use lm::{LmError, NGramLm, BOS, DEFAULT_ORDER, EOS, UNK};
pub use ranker::{rerank, train_ranker, RankError, RankModel, RankerConfig, FEATURE_NAMES};

use crate::parser::{BeamSet, AUX_LM_SCORE, AUX_VOTES};
use crate::treebank::{Corpus, Label, LabelKind, Node, ParseTree, TreeError};

/// Default number of leading hypotheses reordered by [`naive_rerank`].
pub const DEFAULT_NAIVE_TOP_K: usize = 2;

/// A tree rendered as LM tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SerializedParse(pub Vec<String>);

impl SerializedParse {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for SerializedParse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

fn bracket_name(label: &Label) -> String {
    format!("{}_{}", label.kind().prefix(), label.name())
}

fn serialize_node(node: &Node, tokens: &[String], out: &mut Vec<String>) {
    match node {
        Node::Leaf(i) => out.push(tokens[*i].clone()),
        Node::Labeled { label, children } => {
            let name = bracket_name(label);
            out.push(format!("O_{name}"));
            for c in children {
                serialize_node(c, tokens, out);
            }
            out.push(format!("C_{name}"));
        }
    }
}

pub fn serialize(tree: &ParseTree) -> SerializedParse {
    let mut out = Vec::with_capacity(tree.len() * 2);
    serialize_node(tree.root(), tree.tokens(), &mut out);
    SerializedParse(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeserializeError {
    #[error("token {pos}: close `{found}` does not match open `{expected}`")]
    Mismatch {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("token {pos}: close `{found}` without an open bracket")]
    UnmatchedClose { pos: usize, found: String },
    #[error("token {pos}: `{token}` outside the root bracket")]
    OutsideRoot { pos: usize, token: String },
    #[error("unclosed bracket at end of input")]
    Unclosed,
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Parses `O_IN_X` / `C_SL_Y` style bracket tokens.
fn bracket_token(token: &str) -> Option<(bool, Label)> {
    let (open, rest) = match token.strip_prefix("O_") {
        Some(r) => (true, r),
        None => (false, token.strip_prefix("C_")?),
    };
    let (kind, name) = match rest.strip_prefix("IN_") {
        Some(n) => (LabelKind::Intent, n),
        None => (LabelKind::Slot, rest.strip_prefix("SL_")?),
    };
    Label::new(kind, name).ok().map(|l| (open, l))
}

/// Inverse of [`serialize`]. Tokens that look like `O_IN_*`, `O_SL_*`,
/// `C_IN_*` or `C_SL_*` are always read as brackets.
pub fn deserialize<S: AsRef<str>>(tokens: &[S]) -> Result<ParseTree, DeserializeError> {
    if tokens.is_empty() {
        return Err(DeserializeError::Empty);
    }
    let mut words = Vec::new();
    let mut stack: Vec<(Label, Vec<Node>)> = Vec::new();
    let mut root = None;
    for (pos, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        if root.is_some() {
            return Err(DeserializeError::OutsideRoot {
                pos,
                token: tok.to_string(),
            });
        }
        match bracket_token(tok) {
            Some((true, label)) => stack.push((label, Vec::new())),
            Some((false, label)) => {
                let (open, children) =
                    stack
                        .pop()
                        .ok_or_else(|| DeserializeError::UnmatchedClose {
                            pos,
                            found: tok.to_string(),
                        })?;
                if open != label {
                    return Err(DeserializeError::Mismatch {
                        pos,
                        expected: format!("C_{}", bracket_name(&open)),
                        found: tok.to_string(),
                    });
                }
                let node = Node::labeled(open, children);
                match stack.last_mut() {
                    Some((_, siblings)) => siblings.push(node),
                    None => root = Some(node),
                }
            }
            None => {
                let (_, children) =
                    stack
                        .last_mut()
                        .ok_or_else(|| DeserializeError::OutsideRoot {
                            pos,
                            token: tok.to_string(),
                        })?;
                children.push(Node::Leaf(words.len()));
                words.push(tok.to_string());
            }
        }
    }
    let root = root.ok_or(DeserializeError::Unclosed)?;
    Ok(ParseTree::new(words, root)?)
}

/// Serializes every gold tree and trains an LM of the given order.
pub fn train_lm(corpus: &Corpus, order: usize) -> Result<NGramLm, LmError> {
    let seqs: Vec<Vec<String>> = corpus.trees().map(|t| serialize(t).0).collect();
    NGramLm::train(&seqs, order)
}

/// Natural-log probability of the serialized tree, including `</s>`.
pub fn lm_score(lm: &NGramLm, tree: &ParseTree) -> f64 {
    lm.log_prob(serialize(tree).tokens())
}

/// [`lm_score`] divided by the serialized length.
pub fn lm_score_normalized(lm: &NGramLm, tree: &ParseTree) -> f64 {
    let s = serialize(tree);
    lm.log_prob(s.tokens()) / s.len() as f64
}

/// Reorders the first `top_k` hypotheses by LM score, highest first, and
/// records each of their scores under `lm_score`. The rest keep their
/// positions. Ties keep beam order.
pub fn naive_rerank(beam: &BeamSet, lm: &NGramLm, top_k: usize) -> BeamSet {
    let mut out = beam.clone();
    let k = top_k.min(out.hypotheses.len());
    for h in &mut out.hypotheses[..k] {
        let tree = h.tree(&beam.tokens).expect("beam hypotheses are validated");
        h.aux.insert(AUX_LM_SCORE.to_string(), lm_score(lm, &tree));
    }
    out.hypotheses[..k].sort_by(|a, b| b.aux[AUX_LM_SCORE].total_cmp(&a.aux[AUX_LM_SCORE]));
    out
}

/// Whether any of the first `k` hypotheses matches `gold` exactly.
pub fn oracle_at_k(beam: &BeamSet, gold: &ParseTree, k: usize) -> bool {
    beam.hypotheses
        .iter()
        .take(k)
        .any(|h| h.tree(&beam.tokens).is_ok_and(|t| t == *gold))
}

/// Annotates every hypothesis with the number of beams (one per parser,
/// same utterance) that contain its action sequence.
pub fn add_votes(beams: &mut [BeamSet]) {
    let counts: Vec<Vec<f64>> = beams
        .iter()
        .map(|b| {
            b.hypotheses
                .iter()
                .map(|h| {
                    beams
                        .iter()
                        .filter(|other| other.hypotheses.iter().any(|o| o.actions == h.actions))
                        .count() as f64
                })
                .collect()
        })
        .collect();
    for (b, c) in beams.iter_mut().zip(counts) {
        for (h, v) in b.hypotheses.iter_mut().zip(c) {
            h.aux.insert(AUX_VOTES.to_string(), v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::Hypothesis;
    use crate::transitions::tree_to_actions;
    use crate::treebank::parse_bracketed;

    const KENDRICK: &str =
        "[IN:GET_EVENT [SL:CATEGORY_EVENT Concerts ] by [SL:NAME_EVENT Kendrick Lamar ] ]";

    #[test]
    fn serialize_examples() {
        let t = parse_bracketed(KENDRICK).unwrap();
        assert_eq!(
            serialize(&t).to_string(),
            "O_IN_GET_EVENT O_SL_CATEGORY_EVENT Concerts C_SL_CATEGORY_EVENT by O_SL_NAME_EVENT Kendrick Lamar C_SL_NAME_EVENT C_IN_GET_EVENT"
        );
        let t = parse_bracketed("[IN:X a ]").unwrap();
        assert_eq!(serialize(&t).to_string(), "O_IN_X a C_IN_X");
    }

    #[test]
    fn deserialize_inverts() {
        for text in [KENDRICK, "[IN:X a ]", "[IN:A [SL:B [IN:C x y ] ] z ]"] {
            let t = parse_bracketed(text).unwrap();
            assert_eq!(deserialize(serialize(&t).tokens()).unwrap(), t);
        }
    }

    #[test]
    fn deserialize_errors() {
        let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        assert!(matches!(
            deserialize(&toks("O_IN_X a C_SL_Y")),
            Err(DeserializeError::Mismatch { pos: 2, .. })
        ));
        assert!(matches!(
            deserialize(&toks("O_IN_X a")),
            Err(DeserializeError::Unclosed)
        ));
        assert!(matches!(
            deserialize(&toks("a O_IN_X b C_IN_X")),
            Err(DeserializeError::OutsideRoot { pos: 0, .. })
        ));
        assert!(matches!(
            deserialize(&toks("O_IN_X a C_IN_X b")),
            Err(DeserializeError::OutsideRoot { pos: 3, .. })
        ));
        assert!(matches!(
            deserialize(&toks("C_IN_X")),
            Err(DeserializeError::UnmatchedClose { pos: 0, .. })
        ));
        assert!(matches!(
            deserialize(&toks("O_IN_X O_IN_Y a C_IN_Y C_IN_X")),
            Err(DeserializeError::Tree(_))
        ));
        assert!(matches!(
            deserialize::<String>(&[]),
            Err(DeserializeError::Empty)
        ));
    }

    fn beam_of(trees: &[&str]) -> BeamSet {
        let parsed: Vec<ParseTree> = trees.iter().map(|t| parse_bracketed(t).unwrap()).collect();
        BeamSet {
            id: "u".into(),
            tokens: parsed[0].tokens().to_vec(),
            k: trees.len(),
            hypotheses: parsed
                .iter()
                .enumerate()
                .map(|(i, t)| Hypothesis::new(tree_to_actions(t), -(i as f64)))
                .collect(),
        }
    }

    fn gold_lm() -> NGramLm {
        let gold = parse_bracketed("[IN:X a [SL:Y b ] c ]").unwrap();
        NGramLm::train(&vec![serialize(&gold).0; 20], 3).unwrap()
    }

    const HYPS: [&str; 5] = [
        "[IN:X a b c ]",
        "[IN:X a [SL:Y b ] c ]",
        "[IN:X [SL:Y a ] b c ]",
        "[IN:Z a b c ]",
        "[IN:X a b [SL:Y c ] ]",
    ];

    #[test]
    fn naive_rerank_cases() {
        let lm = gold_lm();
        let beam = beam_of(&HYPS);
        let same = naive_rerank(&beam, &lm, 1);
        assert_eq!(same.hypotheses[0].actions, beam.hypotheses[0].actions);
        let swapped = naive_rerank(&beam, &lm, 2);
        assert_eq!(swapped.hypotheses[0].actions, beam.hypotheses[1].actions);
        assert_eq!(swapped.hypotheses[1].actions, beam.hypotheses[0].actions);
        assert_eq!(swapped.hypotheses[2..], beam.hypotheses[2..]);
        let full = naive_rerank(&beam, &lm, 5);
        assert_eq!(full.hypotheses[0].actions, beam.hypotheses[1].actions);
        assert_eq!(full.hypotheses.len(), 5);
    }

    #[test]
    fn lm_score_contrast() {
        let lm = gold_lm();
        let gold = parse_bracketed("[IN:X a [SL:Y b ] c ]").unwrap();
        let scrambled = parse_bracketed("[IN:Z a [SL:W b ] c ]").unwrap();
        assert!(lm_score(&lm, &gold) > lm_score(&lm, &scrambled));
        assert!(lm_score(&lm, &scrambled) <= 0.0);
        let n = serialize(&gold).len() as f64;
        assert!((lm_score_normalized(&lm, &gold) - lm_score(&lm, &gold) / n).abs() < 1e-12);
    }

    #[test]
    fn oracle_positions() {
        let beam = beam_of(&HYPS);
        let gold = parse_bracketed(HYPS[2]).unwrap();
        assert!(oracle_at_k(&beam, &gold, 5));
        assert!(oracle_at_k(&beam, &gold, 3));
        assert!(!oracle_at_k(&beam, &gold, 2));
        assert!(!oracle_at_k(&beam, &gold, 0));
    }

    #[test]
    fn votes_count_beams() {
        let mut beams = vec![
            beam_of(&HYPS[..2]),
            beam_of(&HYPS[1..3]),
            beam_of(&HYPS[1..2]),
        ];
        add_votes(&mut beams);
        let votes = |b: usize, h: usize| beams[b].hypotheses[h].aux[AUX_VOTES];
        assert_eq!(votes(0, 0), 1.0);
        assert_eq!(votes(0, 1), 3.0);
        assert_eq!(votes(1, 0), 3.0);
        assert_eq!(votes(1, 1), 1.0);
        assert_eq!(votes(2, 0), 3.0);
    }
}
