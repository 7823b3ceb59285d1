//! Pairwise linear ranker (ranking SVM objective) trained by Pegasos-style
//! subgradient descent on standardized features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{lm_score, NGramLm};
use crate::io::write_atomic;
use crate::parser::{BeamSet, Hypothesis, ModelIoError, AUX_RANK_SCORE, AUX_VOTES};
use crate::treebank::ParseTree;

/// Feature order used by [`RankModel`]; `votes` only when enabled.
pub const FEATURE_NAMES: [&str; 3] = ["model_score_norm", "lm_score_norm", "votes"];

const RANKER_FORMAT: &str = "topparse-ranker";
const RANKER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub use_votes: bool,
    pub seed: u64,
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            use_votes: false,
            seed: 0,
            lambda: 0.01,
            epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("{beams} beams but {golds} gold trees")]
    LengthMismatch { beams: usize, golds: usize },
    #[error("no beam contains a correct hypothesis")]
    NoCorrect,
    #[error("beam `{id}`, hypothesis {hyp}: missing `votes` annotation")]
    MissingVotes { id: String, hyp: usize },
}

/// Bias-free linear scorer over standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub use_votes: bool,
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub config: RankerConfig,
}

#[derive(Serialize, Deserialize)]
struct RankerFile {
    format: String,
    version: u32,
    features: Vec<String>,
    #[serde(flatten)]
    model: RankModel,
}

/// Model and LM log-scores divided by the utterance length, plus votes.
/// Within a beam this keeps the order of the raw scores.
fn raw_features(
    beam: &BeamSet,
    hyp: usize,
    h: &Hypothesis,
    lm: &NGramLm,
    use_votes: bool,
) -> Result<Vec<f64>, RankError> {
    let tree = h.tree(&beam.tokens).expect("beam hypotheses are validated");
    let n = beam.tokens.len() as f64;
    let mut f = vec![h.model_score / n, lm_score(lm, &tree) / n];
    if use_votes {
        let v = h
            .aux
            .get(AUX_VOTES)
            .ok_or_else(|| RankError::MissingVotes {
                id: beam.id.clone(),
                hyp,
            })?;
        f.push(*v);
    }
    Ok(f)
}

fn beam_features(
    beam: &BeamSet,
    lm: &NGramLm,
    use_votes: bool,
) -> Result<Vec<Vec<f64>>, RankError> {
    beam.hypotheses
        .iter()
        .enumerate()
        .map(|(i, h)| raw_features(beam, i, h, lm, use_votes))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl RankModel {
    pub fn feature_names(&self) -> &'static [&'static str] {
        &FEATURE_NAMES[..self.weights.len()]
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Score of raw (unstandardized) features.
    pub fn score(&self, raw: &[f64]) -> f64 {
        dot(&self.weights, &self.standardize(raw))
    }

    pub fn to_json(&self) -> String {
        let file = RankerFile {
            format: RANKER_FORMAT.to_string(),
            version: RANKER_VERSION,
            features: self.feature_names().iter().map(|s| s.to_string()).collect(),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("ranker serializes")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, ModelIoError> {
        let file: RankerFile = serde_json::from_str(text).map_err(|source| ModelIoError::Json {
            path: path.to_string(),
            source,
        })?;
        if file.format != RANKER_FORMAT || file.version != RANKER_VERSION {
            return Err(ModelIoError::Format {
                format: file.format,
                version: file.version,
            });
        }
        let m = file.model;
        let dims = 2 + usize::from(m.use_votes);
        if m.weights.len() != dims || m.mean.len() != dims || m.std.len() != dims {
            return Err(ModelIoError::Inconsistent(format!(
                "expected {dims} features"
            )));
        }
        if m.std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(ModelIoError::Inconsistent(
                "standard deviations must be positive".into(),
            ));
        }
        Ok(m)
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
        RankModel::from_json(&text, &path.display().to_string())
    }
}

/// Trains on beams paired with their gold trees. Each beam with a correct
/// hypothesis contributes one `(correct, incorrect)` pair per incorrect
/// hypothesis; beams without one are only used for standardization.
pub fn train_ranker(
    beams: &[BeamSet],
    golds: &[ParseTree],
    lm: &NGramLm,
    config: &RankerConfig,
) -> Result<RankModel, RankError> {
    if beams.len() != golds.len() {
        return Err(RankError::LengthMismatch {
            beams: beams.len(),
            golds: golds.len(),
        });
    }
    let dims = 2 + usize::from(config.use_votes);
    let mut feats = Vec::with_capacity(beams.len());
    let mut correct = Vec::with_capacity(beams.len());
    for (beam, gold) in beams.iter().zip(golds) {
        feats.push(beam_features(beam, lm, config.use_votes)?);
        correct.push(
            beam.hypotheses
                .iter()
                .position(|h| h.tree(&beam.tokens).is_ok_and(|t| t == *gold)),
        );
    }
    if correct.iter().all(Option::is_none) {
        return Err(RankError::NoCorrect);
    }

    let all: Vec<&Vec<f64>> = feats.iter().flatten().collect();
    let n = all.len() as f64;
    let mean: Vec<f64> = (0..dims)
        .map(|d| all.iter().map(|f| f[d]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..dims)
        .map(|d| {
            let var = all.iter().map(|f| (f[d] - mean[d]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut model = RankModel {
        use_votes: config.use_votes,
        weights: vec![0.0; dims],
        mean,
        std,
        config: config.clone(),
    };

    let mut pairs: Vec<Vec<f64>> = Vec::new();
    for (f, c) in feats.iter().zip(&correct) {
        let Some(c) = *c else { continue };
        let good = model.standardize(&f[c]);
        for (j, other) in f.iter().enumerate() {
            if j != c {
                let bad = model.standardize(other);
                pairs.push(good.iter().zip(&bad).map(|(g, b)| g - b).collect());
            }
        }
    }
    if pairs.is_empty() {
        return Ok(model);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut w = vec![0.0; dims];
    let mut avg = vec![0.0; dims];
    let mut t = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &p in &order {
            t += 1;
            let eta = 1.0 / (config.lambda * t as f64);
            let violated = dot(&w, &pairs[p]) < 1.0;
            for (wi, di) in w.iter_mut().zip(&pairs[p]) {
                *wi *= 1.0 - eta * config.lambda;
                if violated {
                    *wi += eta * di;
                }
            }
            for (a, wi) in avg.iter_mut().zip(&w) {
                *a += (wi - *a) / t as f64;
            }
        }
    }
    model.weights = avg;
    Ok(model)
}

/// Re-scores every hypothesis and sorts by descending ranker score. Ties
/// keep beam order.
pub fn rerank(beam: &BeamSet, model: &RankModel, lm: &NGramLm) -> Result<BeamSet, RankError> {
    let feats = beam_features(beam, lm, model.use_votes)?;
    let mut out = beam.clone();
    for (h, f) in out.hypotheses.iter_mut().zip(&feats) {
        h.aux.insert(AUX_RANK_SCORE.to_string(), model.score(f));
    }
    out.hypotheses
        .sort_by(|a, b| b.aux[AUX_RANK_SCORE].total_cmp(&a.aux[AUX_RANK_SCORE]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rerank::train_lm;
    use crate::synth::RankingSuite;

    fn top1(beams: &[BeamSet], golds: &[ParseTree], model: &RankModel, lm: &NGramLm) -> usize {
        beams
            .iter()
            .zip(golds)
            .filter(|(b, g)| rerank(b, model, lm).unwrap().top_tree() == **g)
            .count()
    }

    #[test]
    fn separable_lm_signal() {
        let train = RankingSuite::generate(1, 200, 5, false);
        let test = RankingSuite::generate(2, 100, 5, false);
        let lm = train_lm(&train.lm_corpus, 3).unwrap();
        let cfg = RankerConfig::default();
        let model = train_ranker(&train.beams, &train.golds, &lm, &cfg).unwrap();
        assert!(model.weights[1] > 0.0, "{:?}", model.weights);
        assert_eq!(top1(&train.beams, &train.golds, &model, &lm), 200);
        // the test golds are unseen by the LM but the noise labels are too
        assert_eq!(top1(&test.beams, &test.golds, &model, &lm), 100);
        assert_eq!(
            train_ranker(&train.beams, &train.golds, &lm, &cfg).unwrap(),
            model
        );
    }

    #[test]
    fn separable_vote_signal() {
        let train = RankingSuite::generate(3, 200, 5, true);
        let lm = train_lm(&train.lm_corpus, 3).unwrap();
        let cfg = RankerConfig {
            use_votes: true,
            ..Default::default()
        };
        let model = train_ranker(&train.beams, &train.golds, &lm, &cfg).unwrap();
        assert!(model.weights[2] > 0.0, "{:?}", model.weights);
        assert_eq!(top1(&train.beams, &train.golds, &model, &lm), 200);
    }

    #[test]
    fn trivial_models_keep_order() {
        let suite = RankingSuite::generate(4, 20, 4, false);
        let lm = train_lm(&suite.lm_corpus, 3).unwrap();
        let mut model = RankModel {
            use_votes: false,
            weights: vec![0.0, 0.0],
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
            config: RankerConfig::default(),
        };
        for b in &suite.beams {
            let r = rerank(b, &model, &lm).unwrap();
            let order: Vec<_> = r.hypotheses.iter().map(|h| &h.actions).collect();
            assert_eq!(
                order,
                b.hypotheses.iter().map(|h| &h.actions).collect::<Vec<_>>()
            );
        }
        // model score alone keeps the beam order
        model.weights = vec![1.0, 0.0];
        for b in &suite.beams {
            let r = rerank(b, &model, &lm).unwrap();
            let order: Vec<_> = r.hypotheses.iter().map(|h| &h.actions).collect();
            assert_eq!(
                order,
                b.hypotheses.iter().map(|h| &h.actions).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn errors_and_file_round_trip() {
        let suite = RankingSuite::generate(5, 10, 3, false);
        let lm = train_lm(&suite.lm_corpus, 2).unwrap();
        assert!(matches!(
            train_ranker(
                &suite.beams,
                &suite.golds[..3],
                &lm,
                &RankerConfig::default()
            ),
            Err(RankError::LengthMismatch { .. })
        ));
        let wrong: Vec<ParseTree> = suite
            .golds
            .iter()
            .map(|g| crate::parse_bracketed(&format!("[IN:ZZ {} ]", g.tokens().join(" "))).unwrap())
            .collect();
        assert_eq!(
            train_ranker(&suite.beams, &wrong, &lm, &RankerConfig::default()),
            Err(RankError::NoCorrect)
        );
        let mut stripped = suite.beams.clone();
        stripped[0].hypotheses[1].aux.clear();
        let cfg = RankerConfig {
            use_votes: true,
            ..Default::default()
        };
        assert!(matches!(
            train_ranker(&stripped, &suite.golds, &lm, &cfg),
            Err(RankError::MissingVotes { hyp: 1, .. })
        ));
        let model = train_ranker(&suite.beams, &suite.golds, &lm, &cfg).unwrap();
        let back = RankModel::from_json(&model.to_json(), "mem").unwrap();
        assert_eq!(back, model);
        assert!(model.to_json().contains("\"votes\""));
    }
}
