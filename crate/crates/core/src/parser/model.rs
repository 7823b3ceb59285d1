use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::{extract_into, BucketEdges, FeatureKey, PreparedInput};
use super::{DecodeError, ParserInput};
use crate::io::write_atomic;
use crate::transitions::{Action, ParserState, DEFAULT_MAX_DEPTH};
use crate::treebank::Label;

/// Scores the valid actions of a parser state.
///
/// Implementations return log-probabilities over exactly the valid
/// actions of `state`, in the transition system's action order.
pub trait Scorer: Sync {
    fn labels(&self) -> &[Label];

    fn max_depth(&self) -> usize;

    fn prepare<'a>(&self, input: &ParserInput<'a>) -> Result<PreparedInput<'a>, DecodeError>;

    fn score_valid(
        &self,
        state: &ParserState,
        input: &PreparedInput<'_>,
        prev_actions: &[Action],
    ) -> Vec<(Action, f64)>;
}

/// Log-linear scorer: a weight row over the action inventory per feature.
///
/// The inventory is `SHIFT, REDUCE, OPEN(l)` for each label `l` in sorted
/// order, so row index order equals the decoder's tie-break order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerModel {
    labels: Vec<Label>,
    max_depth: usize,
    bucket_edges: Option<BucketEdges>,
    weights: HashMap<FeatureKey, Vec<f64>>,
    pub meta: ModelMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs: usize,
    pub train_beam: usize,
}

impl ScorerModel {
    /// A zero-weight model over `labels`.
    pub fn new(mut labels: Vec<Label>) -> Self {
        labels.sort();
        labels.dedup();
        ScorerModel {
            labels,
            max_depth: DEFAULT_MAX_DEPTH,
            bucket_edges: None,
            weights: HashMap::new(),
            meta: ModelMeta::default(),
        }
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn with_bucket_edges(mut self, edges: Option<BucketEdges>) -> Self {
        self.bucket_edges = edges;
        self
    }

    pub fn bucket_edges(&self) -> Option<&BucketEdges> {
        self.bucket_edges.as_ref()
    }

    pub fn num_actions(&self) -> usize {
        self.labels.len() + 2
    }

    pub fn action_index(&self, action: &Action) -> Option<usize> {
        match action {
            Action::Shift => Some(0),
            Action::Reduce => Some(1),
            Action::Open(l) => self.labels.binary_search(l).ok().map(|i| i + 2),
            Action::Pad => None,
        }
    }

    pub fn action(&self, index: usize) -> Action {
        match index {
            0 => Action::Shift,
            1 => Action::Reduce,
            i => Action::Open(self.labels[i - 2].clone()),
        }
    }

    pub fn weight(&self, feature: FeatureKey, action: &Action) -> f64 {
        match (self.weights.get(&feature), self.action_index(action)) {
            (Some(row), Some(i)) => row[i],
            _ => 0.0,
        }
    }

    pub fn set_weight(&mut self, feature: FeatureKey, action: &Action, value: f64) {
        let i = self.action_index(action).expect("action in inventory");
        let n = self.num_actions();
        self.weights.entry(feature).or_insert_with(|| vec![0.0; n])[i] = value;
    }

    pub fn add_weight(&mut self, feature: FeatureKey, action_index: usize, delta: f64) {
        let n = self.num_actions();
        self.weights.entry(feature).or_insert_with(|| vec![0.0; n])[action_index] += delta;
    }

    pub(crate) fn rows_mut(&mut self) -> &mut HashMap<FeatureKey, Vec<f64>> {
        &mut self.weights
    }

    pub fn feature_count(&self) -> usize {
        self.weights.len()
    }

    /// Raw linear scores of the valid actions, indexed into the inventory.
    fn logits(&self, features: &[FeatureKey], valid: &[usize]) -> Vec<f64> {
        let mut logits = vec![0.0; valid.len()];
        for f in features {
            if let Some(row) = self.weights.get(f) {
                for (l, &a) in logits.iter_mut().zip(valid) {
                    *l += row[a];
                }
            }
        }
        logits
    }

    pub(crate) fn valid_indices(&self, state: &ParserState) -> Vec<usize> {
        let v = state.valid_actions();
        let mut out = Vec::with_capacity(self.num_actions());
        if v.shift {
            out.push(0);
        }
        if v.reduce {
            out.push(1);
        }
        if v.open_intent || v.open_slot {
            for (i, l) in self.labels.iter().enumerate() {
                if (l.is_intent() && v.open_intent) || (l.is_slot() && v.open_slot) {
                    out.push(i + 2);
                }
            }
        }
        out
    }
}

pub(crate) fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    for l in logits.iter_mut() {
        *l -= log_z;
    }
}

impl Scorer for ScorerModel {
    fn labels(&self) -> &[Label] {
        &self.labels
    }

    fn max_depth(&self) -> usize {
        self.max_depth
    }

    fn prepare<'a>(&self, input: &ParserInput<'a>) -> Result<PreparedInput<'a>, DecodeError> {
        let prepared = PreparedInput::new(input.tokens);
        match (&self.bucket_edges, input.vectors) {
            (None, _) => Ok(prepared),
            (Some(_), None) => Err(DecodeError::MissingVectors),
            (Some(edges), Some(vectors)) => {
                if vectors.len() != input.tokens.len()
                    || vectors.iter().any(|v| v.len() != edges.dims())
                {
                    return Err(DecodeError::VectorShape {
                        tokens: input.tokens.len(),
                        dims: edges.dims(),
                    });
                }
                Ok(prepared.with_buckets(edges, vectors))
            }
        }
    }

    fn score_valid(
        &self,
        state: &ParserState,
        input: &PreparedInput<'_>,
        prev_actions: &[Action],
    ) -> Vec<(Action, f64)> {
        let valid = self.valid_indices(state);
        if valid.is_empty() {
            return Vec::new();
        }
        let mut features = Vec::with_capacity(48);
        extract_into(state, input, prev_actions, &mut features);
        let mut scores = self.logits(&features, &valid);
        log_softmax(&mut scores);
        valid
            .into_iter()
            .zip(scores)
            .map(|(a, s)| (self.action(a), s))
            .collect()
    }
}

/// Log-probabilities of every valid action in `state`.
pub fn step_scores<S: Scorer + ?Sized>(
    scorer: &S,
    state: &ParserState,
    input: &ParserInput<'_>,
    prev_actions: &[Action],
) -> Result<BTreeMap<Action, f64>, DecodeError> {
    if state.valid_actions().is_empty() {
        return Err(DecodeError::Terminal);
    }
    let prepared = scorer.prepare(input)?;
    Ok(scorer
        .score_valid(state, &prepared, prev_actions)
        .into_iter()
        .collect())
}

pub const MODEL_FORMAT: &str = "topparse-scorer";
pub const MODEL_VERSION: u32 = 1;

/// On-disk JSON layout of a [`ScorerModel`]. Weight rows are keyed by the
/// 16-digit hex feature hash and listed in key order; each row has one
/// entry per inventory action as listed in `actions`.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    meta: ModelMeta,
    max_depth: usize,
    actions: Vec<String>,
    labels: Vec<Label>,
    bucket_edges: Option<BucketEdges>,
    weights: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported model format {format} v{version}")]
    Format { format: String, version: u32 },
    #[error("model file is inconsistent: {0}")]
    Inconsistent(String),
}

impl ScorerModel {
    pub fn to_json(&self) -> String {
        let weights = self
            .weights
            .iter()
            .filter(|(_, row)| row.iter().any(|w| *w != 0.0))
            .map(|(k, row)| (k.to_hex(), row.clone()))
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            meta: self.meta.clone(),
            max_depth: self.max_depth,
            actions: (0..self.num_actions())
                .map(|i| self.action(i).to_string())
                .collect(),
            labels: self.labels.clone(),
            bucket_edges: self.bucket_edges.clone(),
            weights,
        };
        let mut s = serde_json::to_string(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, ModelIoError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|source| ModelIoError::Json {
            path: path.to_string(),
            source,
        })?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ModelIoError::Format {
                format: file.format,
                version: file.version,
            });
        }
        let mut model = ScorerModel::new(file.labels)
            .with_max_depth(file.max_depth)
            .with_bucket_edges(file.bucket_edges);
        model.meta = file.meta;
        let expected: Vec<String> = (0..model.num_actions())
            .map(|i| model.action(i).to_string())
            .collect();
        if expected != file.actions {
            return Err(ModelIoError::Inconsistent(
                "action inventory does not match labels".into(),
            ));
        }
        for (hex, row) in file.weights {
            let key = FeatureKey::from_hex(&hex)
                .ok_or_else(|| ModelIoError::Inconsistent(format!("bad feature key {hex}")))?;
            if row.len() != model.num_actions() {
                return Err(ModelIoError::Inconsistent(format!(
                    "row {hex} has {} entries",
                    row.len()
                )));
            }
            model.weights.insert(key, row);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        write_atomic(path, self.to_json().as_bytes()).map_err(|source| ModelIoError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ScorerModel::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::features::extract_features;

    fn labels(names: &[&str]) -> Vec<Label> {
        names.iter().map(|n| n.parse().unwrap()).collect()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn state_after(n: usize, actions: &[&str]) -> (ParserState, Vec<Action>) {
        let mut s = ParserState::new(n);
        let acts: Vec<Action> = actions.iter().map(|a| a.parse().unwrap()).collect();
        for a in &acts {
            s.apply(a).unwrap();
        }
        (s, acts)
    }

    #[test]
    fn zero_weights_are_uniform() {
        let model = ScorerModel::new(labels(&["IN:A", "SL:B", "SL:C"]));
        let tokens = toks("x y");
        let (s, prev) = state_after(2, &["OPEN(IN:A)"]);
        let scores = step_scores(&model, &s, &ParserInput::new(&tokens), &prev).unwrap();
        assert_eq!(scores.len(), 3);
        for lp in scores.values() {
            assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_are_normalized() {
        let mut model = ScorerModel::new(labels(&["IN:A", "SL:B", "SL:C"]));
        let tokens = toks("x y");
        let (s, prev) = state_after(2, &["OPEN(IN:A)", "SHIFT"]);
        for (i, f) in extract_features(&s, &tokens, &prev).into_iter().enumerate() {
            model.set_weight(f, &Action::Reduce, 0.3 * i as f64);
            model.set_weight(f, &"OPEN(SL:C)".parse().unwrap(), -0.7);
        }
        let scores = step_scores(&model, &s, &ParserInput::new(&tokens), &prev).unwrap();
        let total: f64 = scores.values().map(|s| s.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(scores.values().all(|s| *s <= 0.0));
    }

    #[test]
    fn shifting_a_feature_row_leaves_probabilities_unchanged() {
        let mut model = ScorerModel::new(labels(&["IN:A", "SL:B"]));
        let tokens = toks("x y z");
        let (s, prev) = state_after(3, &["OPEN(IN:A)", "SHIFT"]);
        let feats = extract_features(&s, &tokens, &prev);
        for (i, f) in feats.iter().enumerate() {
            model.set_weight(*f, &Action::Shift, 0.1 * i as f64);
            model.set_weight(*f, &Action::Reduce, -0.05 * i as f64);
        }
        let input = ParserInput::new(&tokens);
        let before = step_scores(&model, &s, &input, &prev).unwrap();
        let target = feats[3];
        for i in 0..model.num_actions() {
            let a = model.action(i);
            let w = model.weight(target, &a);
            model.set_weight(target, &a, w + 2.5);
        }
        let after = step_scores(&model, &s, &input, &prev).unwrap();
        for (a, lp) in &before {
            assert!((lp - after[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_state_is_an_error() {
        let model = ScorerModel::new(labels(&["IN:A"]));
        let tokens = toks("x");
        let (s, prev) = state_after(1, &["OPEN(IN:A)", "SHIFT", "REDUCE"]);
        assert!(matches!(
            step_scores(&model, &s, &ParserInput::new(&tokens), &prev),
            Err(DecodeError::Terminal)
        ));
    }

    #[test]
    fn json_round_trip() {
        let mut model = ScorerModel::new(labels(&["SL:B", "IN:A"]));
        model.set_weight(FeatureKey::of("bias", ""), &Action::Shift, 1.25);
        model.set_weight(
            FeatureKey::of("s0", "IN:A"),
            &"OPEN(SL:B)".parse().unwrap(),
            -0.5,
        );
        model.meta.seed = 9;
        let text = model.to_json();
        let back = ScorerModel::from_json(&text, "mem").unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json(), text);
        let bad = text.replace("topparse-scorer", "other");
        assert!(matches!(
            ScorerModel::from_json(&bad, "mem"),
            Err(ModelIoError::Format { .. })
        ));
    }

    #[test]
    fn vectors_required_when_model_uses_them() {
        let edges = BucketEdges::fit(&[vec![0.0], vec![1.0]]).unwrap();
        let model = ScorerModel::new(labels(&["IN:A"])).with_bucket_edges(Some(edges));
        let tokens = toks("x");
        assert!(matches!(
            model.prepare(&ParserInput::new(&tokens)),
            Err(DecodeError::MissingVectors)
        ));
        let bad = vec![vec![0.0, 1.0]];
        assert!(matches!(
            model.prepare(&ParserInput::new(&tokens).with_vectors(&bad)),
            Err(DecodeError::VectorShape { .. })
        ));
        let good = vec![vec![0.5]];
        assert!(model
            .prepare(&ParserInput::new(&tokens).with_vectors(&good))
            .is_ok());
    }
}
