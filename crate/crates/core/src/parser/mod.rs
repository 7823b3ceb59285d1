//! Trainable transition parser.
//!
//! The scorer sits behind [`Scorer`]; the shipped implementation is a
//! log-linear model over hand-written state features ([`ScorerModel`]).
//! Hypothesis scores are sums of per-step log-probabilities.

mod decode;
pub mod features;
mod model;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::{decode_beam, decode_greedy};
pub use features::{extract_features, FeatureKey};
pub use model::{step_scores, ModelIoError, ModelMeta, Scorer, ScorerModel};
pub use train::{
    train, TokenVectors, TrainConfig, TrainError, DEFAULT_FEATURE_MASK, DEFAULT_INIT_JITTER,
};

use crate::io::{read_jsonl, JsonlError};
use crate::transitions::{actions_to_tree, ActionSequence, TransitionError};
use crate::treebank::ParseTree;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("state is terminal")]
    Terminal,
    #[error("no valid action at step {step}")]
    Stuck { step: usize },
    #[error("decoding exceeded {0} steps")]
    StepLimit(usize),
    #[error("model uses token vectors but none were supplied")]
    MissingVectors,
    #[error("token vectors must be {tokens} rows of {dims} values")]
    VectorShape { tokens: usize, dims: usize },
}

/// One utterance to decode.
#[derive(Clone, Copy, Debug)]
pub struct ParserInput<'a> {
    pub id: &'a str,
    pub tokens: &'a [String],
    pub vectors: Option<&'a [Vec<f64>]>,
}

impl<'a> ParserInput<'a> {
    pub fn new(tokens: &'a [String]) -> Self {
        ParserInput {
            id: "",
            tokens,
            vectors: None,
        }
    }

    pub fn with_id(mut self, id: &'a str) -> Self {
        self.id = id;
        self
    }

    pub fn with_vectors(mut self, vectors: &'a [Vec<f64>]) -> Self {
        self.vectors = Some(vectors);
        self
    }
}

/// Auxiliary score names used by re-ranking.
pub const AUX_LM_SCORE: &str = "lm_score";
pub const AUX_VOTES: &str = "votes";
pub const AUX_RANK_SCORE: &str = "rank_score";

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub actions: ActionSequence,
    /// Sum of per-step log-probabilities.
    pub model_score: f64,
    pub aux: BTreeMap<String, f64>,
}

impl Hypothesis {
    pub fn new(actions: ActionSequence, model_score: f64) -> Self {
        Hypothesis {
            actions,
            model_score,
            aux: BTreeMap::new(),
        }
    }

    pub fn tree(&self, tokens: &[String]) -> Result<ParseTree, TransitionError> {
        actions_to_tree(&self.actions, tokens)
    }
}

/// Candidate parses for one utterance, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamSet {
    pub id: String,
    pub tokens: Vec<String>,
    pub k: usize,
    pub hypotheses: Vec<Hypothesis>,
}

impl BeamSet {
    pub fn top(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }

    pub fn top_tree(&self) -> ParseTree {
        self.top()
            .tree(&self.tokens)
            .expect("beam hypotheses are validated")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HypRecord {
    actions: String,
    model_score: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    aux: BTreeMap<String, f64>,
}

/// One line of the hypothesis JSONL format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BeamRecord {
    id: String,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    hyps: Vec<HypRecord>,
}

#[derive(Debug, Error)]
pub enum HypothesisFileError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("line {line}: hypothesis {hyp}: {reason}")]
    Invalid {
        line: usize,
        hyp: usize,
        reason: String,
    },
    #[error("line {line}: no hypotheses")]
    Empty { line: usize },
    #[error("line {line}: duplicate hypothesis {hyp}")]
    Duplicate { line: usize, hyp: usize },
}

pub fn beam_to_json(beam: &BeamSet) -> String {
    let rec = BeamRecord {
        id: beam.id.clone(),
        tokens: beam.tokens.clone(),
        k: Some(beam.k),
        hyps: beam
            .hypotheses
            .iter()
            .map(|h| HypRecord {
                actions: h.actions.to_string(),
                model_score: h.model_score,
                aux: h.aux.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&rec).expect("beam serializes")
}

pub fn beams_to_jsonl(beams: &[BeamSet]) -> String {
    let mut out = String::new();
    for b in beams {
        out.push_str(&beam_to_json(b));
        out.push('\n');
    }
    out
}

fn record_to_beam(line: usize, rec: BeamRecord) -> Result<BeamSet, HypothesisFileError> {
    if rec.hyps.is_empty() {
        return Err(HypothesisFileError::Empty { line });
    }
    let n = rec.tokens.len();
    let mut hypotheses: Vec<Hypothesis> = Vec::with_capacity(rec.hyps.len());
    for (hyp, h) in rec.hyps.into_iter().enumerate() {
        let invalid = |reason: String| HypothesisFileError::Invalid { line, hyp, reason };
        let actions = ActionSequence::parse(&h.actions, n).map_err(|e| invalid(e.to_string()))?;
        actions_to_tree(&actions, &rec.tokens).map_err(|e| invalid(e.to_string()))?;
        if hypotheses.iter().any(|prev| prev.actions == actions) {
            return Err(HypothesisFileError::Duplicate { line, hyp });
        }
        hypotheses.push(Hypothesis {
            actions,
            model_score: h.model_score,
            aux: h.aux,
        });
    }
    Ok(BeamSet {
        id: rec.id,
        tokens: rec.tokens,
        k: rec.k.unwrap_or(hypotheses.len()),
        hypotheses,
    })
}

/// Reads a hypothesis JSONL file, validating every action sequence.
pub fn import_hypotheses(path: &Path) -> Result<Vec<BeamSet>, HypothesisFileError> {
    read_jsonl::<BeamRecord>(path)?
        .into_iter()
        .map(|(line, rec)| record_to_beam(line, rec))
        .collect()
}

pub fn parse_hypotheses(text: &str) -> Result<Vec<BeamSet>, HypothesisFileError> {
    crate::io::parse_jsonl::<BeamRecord, _>(text.as_bytes(), "<memory>")?
        .into_iter()
        .map(|(line, rec)| record_to_beam(line, rec))
        .collect()
}

#[derive(Deserialize)]
struct VectorRecord {
    id: String,
    vectors: Vec<Vec<f64>>,
}

/// Reads per-token vectors: `{"id": ..., "vectors": [[...], ...]}` per line.
pub fn read_token_vectors(path: &Path) -> Result<TokenVectors, JsonlError> {
    Ok(read_jsonl::<VectorRecord>(path)?
        .into_iter()
        .map(|(_, r)| (r.id, r.vectors))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::Label;

    #[test]
    fn single_hypothesis_file() {
        let text = r#"{"id":"a","tokens":["x"],"hyps":[{"actions":"OPEN(IN:X) SHIFT REDUCE","model_score":-0.5}]}"#;
        let beams = parse_hypotheses(text).unwrap();
        assert_eq!(beams.len(), 1);
        assert_eq!(beams[0].hypotheses.len(), 1);
        assert_eq!(beams[0].k, 1);
        assert_eq!(beams[0].top_tree().to_string(), "[IN:X x ]");
    }

    #[test]
    fn invalid_sequence_names_the_line() {
        let text = "{\"id\":\"a\",\"tokens\":[\"x\"],\"hyps\":[{\"actions\":\"OPEN(IN:X) SHIFT REDUCE\",\"model_score\":0}]}\n\
                    {\"id\":\"b\",\"tokens\":[\"x\"],\"hyps\":[{\"actions\":\"OPEN(IN:X) REDUCE\",\"model_score\":0}]}\n";
        let err = parse_hypotheses(text).unwrap_err();
        assert!(
            matches!(
                err,
                HypothesisFileError::Invalid {
                    line: 2,
                    hyp: 0,
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.to_string().contains("position 1"));
    }

    #[test]
    fn export_import_round_trip() {
        let model = ScorerModel::new(vec![Label::intent("X").unwrap(), Label::slot("Y").unwrap()]);
        let tokens: Vec<String> = vec!["a".into(), "b".into()];
        let mut beam = decode_beam(&model, &ParserInput::new(&tokens).with_id("u1"), 4).unwrap();
        beam.hypotheses[1].aux.insert(AUX_LM_SCORE.into(), -3.25);
        let text = beams_to_jsonl(std::slice::from_ref(&beam));
        let back = parse_hypotheses(&text).unwrap();
        assert_eq!(back, vec![beam]);
    }

    #[test]
    fn duplicates_rejected() {
        let text = r#"{"id":"a","tokens":["x"],"hyps":[{"actions":"OPEN(IN:X) SHIFT REDUCE","model_score":0},{"actions":"OPEN(IN:X) SHIFT REDUCE","model_score":-1}]}"#;
        assert!(matches!(
            parse_hypotheses(text),
            Err(HypothesisFileError::Duplicate { line: 1, hyp: 1 })
        ));
    }
}
