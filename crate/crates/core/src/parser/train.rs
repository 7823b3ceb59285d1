//! Averaged structured perceptron with early update under beam search.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::decode::{gold_search, GoldSearch};
use super::features::{extract_into, BucketEdges, FeatureKey, PreparedInput};
use super::model::{ModelMeta, Scorer, ScorerModel};
use super::{DecodeError, ParserInput};
use crate::transitions::{tree_to_actions, Action, ParserState, DEFAULT_MAX_DEPTH};
use crate::treebank::Corpus;

/// Per-token vectors keyed by utterance id.
pub type TokenVectors = BTreeMap<String, Vec<Vec<f64>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Beam width used for early-update search during training.
    pub beam: usize,
    pub seed: u64,
    pub max_depth: usize,
    /// Per-epoch probability that a feature receives no updates.
    pub feature_mask: f64,
    /// New weight rows start uniform in `[-init_jitter, init_jitter]`.
    pub init_jitter: f64,
}

pub const DEFAULT_FEATURE_MASK: f64 = 0.1;
pub const DEFAULT_INIT_JITTER: f64 = 0.01;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            beam: 5,
            seed: 0,
            max_depth: DEFAULT_MAX_DEPTH,
            feature_mask: DEFAULT_FEATURE_MASK,
            init_jitter: DEFAULT_INIT_JITTER,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("tree `{0}` violates intent/slot alternation")]
    Alternation(String),
    #[error("tree `{id}` has depth {depth}, above the limit {max_depth}")]
    TooDeep {
        id: String,
        depth: usize,
        max_depth: usize,
    },
    #[error("no token vectors for `{0}`")]
    MissingVectors(String),
    #[error("{name} must be in [0, 1), got {value}")]
    BadRate { name: &'static str, value: f64 },
    #[error("decoding `{id}` failed: {source}")]
    Decode {
        id: String,
        #[source]
        source: DecodeError,
    },
}

struct Averager {
    /// Running sum of `step * delta` per weight, for the averaging trick.
    acc: HashMap<FeatureKey, Vec<f64>>,
    step: f64,
    jitter: f64,
    jitter_rng: ChaCha8Rng,
    /// Features hashing below this threshold are frozen for the epoch.
    mask_threshold: u64,
    mask_salt: u64,
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Averager {
    fn masked(&self, f: FeatureKey) -> bool {
        mix(f.0 ^ self.mask_salt) < self.mask_threshold
    }

    fn update(
        &mut self,
        model: &mut ScorerModel,
        features: &[FeatureKey],
        action: usize,
        delta: f64,
    ) {
        let n = model.num_actions();
        for f in features {
            if self.masked(*f) {
                continue;
            }
            if !self.acc.contains_key(f) {
                let mut acc = vec![0.0; n];
                if self.jitter > 0.0 {
                    for (a, slot) in acc.iter_mut().enumerate() {
                        let j = self.jitter_rng.gen_range(-self.jitter..=self.jitter);
                        model.add_weight(*f, a, j);
                        *slot = self.step * j;
                    }
                }
                self.acc.insert(*f, acc);
            }
            model.add_weight(*f, action, delta);
            self.acc.get_mut(f).expect("inserted above")[action] += self.step * delta;
        }
    }

    fn finish(self, model: &mut ScorerModel) {
        let step = self.step;
        let rows = model.rows_mut();
        for (f, acc) in self.acc {
            let row = rows
                .get_mut(&f)
                .expect("every accumulated feature has a weight row");
            for (w, a) in row.iter_mut().zip(acc) {
                *w -= a / step;
            }
        }
        rows.retain(|_, row| row.iter().any(|w| *w != 0.0));
    }
}

fn update_path(
    model: &mut ScorerModel,
    avg: &mut Averager,
    input: &PreparedInput<'_>,
    actions: &[Action],
    from: usize,
    delta: f64,
) {
    let mut state = ParserState::with_max_depth(input.tokens.len(), model.max_depth());
    let mut features = Vec::new();
    for (i, action) in actions.iter().enumerate() {
        if i >= from {
            features.clear();
            extract_into(&state, input, &actions[..i], &mut features);
            let idx = model
                .action_index(action)
                .expect("training actions are in the inventory");
            avg.update(model, &features, idx, delta);
        }
        state.apply(action).expect("paths come from valid searches");
    }
}

fn common_prefix(a: &[Action], b: &[Action]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Trains a scorer on `corpus`. When `vectors` is given, every utterance
/// needs an entry and the model learns bucketized vector features.
pub fn train(
    corpus: &Corpus,
    vectors: Option<&TokenVectors>,
    config: &TrainConfig,
) -> Result<ScorerModel, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for (name, value) in [
        ("feature_mask", config.feature_mask),
        ("init_jitter", config.init_jitter),
    ] {
        if !(0.0..1.0).contains(&value) {
            return Err(TrainError::BadRate { name, value });
        }
    }
    for e in corpus {
        if !e.tree.respects_alternation() {
            return Err(TrainError::Alternation(e.id.clone()));
        }
        if e.tree.depth() > config.max_depth {
            return Err(TrainError::TooDeep {
                id: e.id.clone(),
                depth: e.tree.depth(),
                max_depth: config.max_depth,
            });
        }
    }
    let edges = match vectors {
        None => None,
        Some(v) => {
            let mut all = Vec::new();
            for e in corpus {
                all.extend(
                    v.get(&e.id)
                        .ok_or_else(|| TrainError::MissingVectors(e.id.clone()))?,
                );
            }
            BucketEdges::fit(all)
        }
    };
    let mut model = ScorerModel::new(corpus.label_inventory())
        .with_max_depth(config.max_depth)
        .with_bucket_edges(edges);
    model.meta = ModelMeta {
        seed: config.seed,
        epochs: config.epochs,
        train_beam: config.beam,
    };
    let golds: Vec<Vec<Action>> = corpus.trees().map(|t| tree_to_actions(t).actions).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut avg = Averager {
        acc: HashMap::new(),
        step: 1.0,
        jitter: config.init_jitter,
        jitter_rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        mask_threshold: (config.feature_mask * u64::MAX as f64) as u64,
        mask_salt: 0,
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        avg.mask_salt = rng.gen();
        for &i in &order {
            let entry = &corpus.entries()[i];
            let gold = &golds[i];
            let mut input = ParserInput::new(entry.tree.tokens()).with_id(&entry.id);
            if let Some(v) = vectors {
                input = input.with_vectors(&v[&entry.id]);
            }
            let decode_err = |source| TrainError::Decode {
                id: entry.id.clone(),
                source,
            };
            let prepared = model.prepare(&input).map_err(decode_err)?;
            let (gold_path, best) =
                match gold_search(&model, &input, config.beam, gold).map_err(decode_err)? {
                    GoldSearch::Violation { gold_len, best } => (&gold[..gold_len], best),
                    GoldSearch::Finished { best } => (&gold[..], best),
                };
            if best != gold_path {
                let from = common_prefix(gold_path, &best);
                update_path(&mut model, &mut avg, &prepared, gold_path, from, 1.0);
                update_path(&mut model, &mut avg, &prepared, &best, from, -1.0);
            }
            avg.step += 1.0;
        }
    }
    avg.finish(&mut model);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::decode::decode_greedy;
    use crate::treebank::{parse_bracketed, CorpusEntry};

    fn corpus(trees: &[&str]) -> Corpus {
        Corpus::new(
            trees
                .iter()
                .enumerate()
                .map(|(i, t)| CorpusEntry {
                    id: format!("u{i}"),
                    tree: parse_bracketed(t).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn overfits_a_single_tree() {
        let text = "[IN:GET_DISTANCE How far is [SL:DESTINATION [IN:GET_RESTAURANT_LOCATION the [SL:TYPE_FOOD coffee ] shop ] ] ]";
        let c = corpus(&[text]);
        let cfg = TrainConfig {
            epochs: 10,
            feature_mask: 0.0,
            ..Default::default()
        };
        let model = train(&c, None, &cfg).unwrap();
        let tree = &c.entries()[0].tree;
        let h = decode_greedy(&model, &ParserInput::new(tree.tokens())).unwrap();
        assert_eq!(h.actions, tree_to_actions(tree));
    }

    #[test]
    fn same_seed_same_weights() {
        let c = corpus(&[
            "[IN:A x [SL:B y ] ]",
            "[IN:C [SL:B y ] z ]",
            "[IN:A w [SL:D y z ] ]",
        ]);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let a = train(&c, None, &cfg).unwrap();
        let b = train(&c, None, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn seeds_diversify_weights() {
        let c = corpus(&[
            "[IN:A x [SL:B y ] ]",
            "[IN:C [SL:B y ] z ]",
            "[IN:A w [SL:D y z ] ]",
        ]);
        let a = train(
            &c,
            None,
            &TrainConfig {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let b = train(
            &c,
            None,
            &TrainConfig {
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.to_json(), b.to_json());
        let bad = TrainConfig {
            feature_mask: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            train(&c, None, &bad),
            Err(TrainError::BadRate {
                name: "feature_mask",
                ..
            })
        ));
    }

    #[test]
    fn rejects_bad_corpora() {
        assert!(matches!(
            train(&Corpus::default(), None, &TrainConfig::default()),
            Err(TrainError::EmptyCorpus)
        ));
        let tree = crate::treebank::parse_bracketed_with(
            "[IN:A [IN:B x ] ]",
            crate::treebank::Strictness::PERMISSIVE,
        )
        .unwrap();
        let c = Corpus::new(vec![CorpusEntry {
            id: "p".into(),
            tree,
        }])
        .unwrap();
        assert!(matches!(
            train(&c, None, &TrainConfig::default()),
            Err(TrainError::Alternation(_))
        ));
        let deep = corpus(&["[IN:A [SL:B [IN:C x ] ] ]"]);
        let cfg = TrainConfig {
            max_depth: 2,
            ..Default::default()
        };
        assert!(matches!(
            train(&deep, None, &cfg),
            Err(TrainError::TooDeep { depth: 3, .. })
        ));
    }

    #[test]
    fn vector_features_need_every_utterance() {
        let c = corpus(&["[IN:A x [SL:B y ] ]", "[IN:A y ]"]);
        let mut v = TokenVectors::new();
        v.insert("u0".into(), vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert!(matches!(
            train(&c, Some(&v), &TrainConfig::default()),
            Err(TrainError::MissingVectors(_))
        ));
        v.insert("u1".into(), vec![vec![0.5, 0.6]]);
        let model = train(&c, Some(&v), &TrainConfig::default()).unwrap();
        assert_eq!(model.bucket_edges().unwrap().dims(), 2);
        let tree = &c.entries()[0].tree;
        let input = ParserInput::new(tree.tokens()).with_vectors(&v["u0"]);
        assert_eq!(
            decode_greedy(&model, &input).unwrap().actions,
            tree_to_actions(tree)
        );
    }
}
