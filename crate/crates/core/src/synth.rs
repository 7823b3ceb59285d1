//! Generators for random valid trees and for a small compositional
//! navigation/event grammar used in tests, demos and smoke runs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::parser::{BeamSet, Hypothesis, AUX_VOTES};
use crate::transitions::tree_to_actions;
use crate::treebank::{parse_bracketed, Corpus, CorpusEntry, Label, Node, ParseTree};

/// Shape limits for [`random_tree`].
#[derive(Clone, Debug)]
pub struct RandomTreeConfig {
    pub max_tokens: usize,
    pub intents: Vec<Label>,
    pub slots: Vec<Label>,
    /// Maximum number of labeled nodes on any root-to-leaf path.
    pub max_depth: usize,
    /// Chance of opening a nested constituent at each child position.
    pub nest_prob: f64,
}

impl RandomTreeConfig {
    /// `intents` + `slots` labels named `I0..`, `S0..`.
    pub fn with_counts(max_tokens: usize, intents: usize, slots: usize, max_depth: usize) -> Self {
        RandomTreeConfig {
            max_tokens,
            intents: (0..intents)
                .map(|i| Label::intent(&format!("I{i}")).expect("valid name"))
                .collect(),
            slots: (0..slots)
                .map(|i| Label::slot(&format!("S{i}")).expect("valid name"))
                .collect(),
            max_depth,
            nest_prob: 0.35,
        }
    }
}

const VOCAB: &[&str] = &[
    "a", "b", "c", "d", "e", "f", "go", "to", "the", "in", "at", "now", "Boston", "X-1", "42",
];

/// Draws a uniformly shaped random tree honoring alternation and no-empty
/// constituents. Requires at least one intent label.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomTreeConfig) -> ParseTree {
    assert!(!cfg.intents.is_empty() && cfg.max_tokens >= 1 && cfg.max_depth >= 1);
    let n = rng.gen_range(1..=cfg.max_tokens);
    let tokens: Vec<String> = (0..n)
        .map(|_| VOCAB.choose(rng).expect("non-empty").to_string())
        .collect();
    let root = fill(rng, cfg, true, 0, n, cfg.max_depth);
    ParseTree::new(tokens, root).expect("generator builds valid trees")
}

fn fill<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RandomTreeConfig,
    intent: bool,
    start: usize,
    end: usize,
    depth_left: usize,
) -> Node {
    let (own, child_pool) = if intent {
        (&cfg.intents, &cfg.slots)
    } else {
        (&cfg.slots, &cfg.intents)
    };
    let label = own.choose(rng).expect("label pool non-empty").clone();
    let mut children = Vec::new();
    let mut i = start;
    while i < end {
        if depth_left > 1 && !child_pool.is_empty() && rng.gen_bool(cfg.nest_prob) {
            let len = rng.gen_range(1..=end - i);
            children.push(fill(rng, cfg, !intent, i, i + len, depth_left - 1));
            i += len;
        } else {
            children.push(Node::Leaf(i));
            i += 1;
        }
    }
    Node::labeled(label, children)
}

/// A TOP-style grammar over navigation and event queries with nested
/// location intents, optional modifiers and lexical ambiguity.
#[derive(Clone, Debug)]
pub struct SyntheticGrammar {
    /// Probability that a training tree gets one slot relabeled at random.
    pub label_noise: f64,
}

impl Default for SyntheticGrammar {
    fn default() -> Self {
        SyntheticGrammar { label_noise: 0.0 }
    }
}

const PLACES: &[&str] = &[
    "boston",
    "houston",
    "san antonio",
    "dayton",
    "the mall",
    "my house",
    "downtown",
    "the airport",
    "still water",
    "the park",
];
const CATEGORY_LOCATION: &[&str] = &[
    "coffee shop",
    "gas station",
    "park",
    "mall",
    "pharmacy",
    "beach",
    "stadium",
];
const DATE_TIME: &[&str] = &[
    "today",
    "tonight",
    "this weekend",
    "at 5 pm",
    "tomorrow morning",
    "this year",
    "right now",
    "for nye",
    "on friday",
];
const CATEGORY_EVENT: &[&str] = &[
    "concerts",
    "parties",
    "festivals",
    "games",
    "events",
    "shows",
];
const NAME_EVENT: &[&str] = &[
    "kendrick lamar",
    "christmas in the park",
    "the jazz fest",
    "the marathon",
    "coldplay",
];
const PATHS: &[&str] = &[
    "i - 26",
    "the interstate",
    "highway 101",
    "main street",
    "the bridge",
];
const METHOD_TRAVEL: &[&str] = &["car", "bus", "bike", "train"];

struct Pattern {
    intent: &'static str,
    text: &'static str,
}

const PATTERNS: &[Pattern] = &[
    Pattern {
        intent: "GET_DISTANCE",
        text: "how far is {DESTINATION}",
    },
    Pattern {
        intent: "GET_DISTANCE",
        text: "how far is it from {SOURCE} to {DESTINATION}",
    },
    Pattern {
        intent: "GET_DISTANCE",
        text: "how many miles to {DESTINATION}",
    },
    Pattern {
        intent: "GET_ESTIMATED_DURATION",
        text: "how long to drive to {DESTINATION} ?{DATE_TIME}",
    },
    Pattern {
        intent: "GET_ESTIMATED_DURATION",
        text: "how long will it take to get to {DESTINATION} by {METHOD_TRAVEL}",
    },
    Pattern {
        intent: "GET_INFO_TRAFFIC",
        text: "what is traffic like in {LOCATION} ?{DATE_TIME}",
    },
    Pattern {
        intent: "GET_INFO_TRAFFIC",
        text: "is there traffic on {PATH} ?{DATE_TIME}",
    },
    Pattern {
        intent: "GET_INFO_TRAFFIC",
        text: "should i avoid {PATH_AVOID} ?{DATE_TIME}",
    },
    Pattern {
        intent: "GET_EVENT",
        text: "{CATEGORY_EVENT} in {LOCATION} ?{DATE_TIME}",
    },
    Pattern {
        intent: "GET_EVENT",
        text: "any {CATEGORY_EVENT} ?{DATE_TIME}",
    },
    Pattern {
        intent: "GET_EVENT",
        text: "when is {NAME_EVENT}",
    },
    Pattern {
        intent: "GET_EVENT",
        text: "{CATEGORY_EVENT} by {NAME_EVENT} ?{DATE_TIME}",
    },
    Pattern {
        intent: "GET_EVENT",
        text: "what is happening in {LOCATION} {DATE_TIME}",
    },
    Pattern {
        intent: "GET_DIRECTIONS",
        text: "directions to {DESTINATION}",
    },
    Pattern {
        intent: "GET_DIRECTIONS",
        text: "take me to {DESTINATION} avoiding {PATH_AVOID}",
    },
    Pattern {
        intent: "GET_DIRECTIONS",
        text: "how do i get to {DESTINATION} by {METHOD_TRAVEL}",
    },
    Pattern {
        intent: "GET_LOCATION",
        text: "where is {CATEGORY_LOCATION_TOP}",
    },
];

const SLOT_NAMES: &[&str] = &[
    "DESTINATION",
    "SOURCE",
    "LOCATION",
    "DATE_TIME",
    "CATEGORY_EVENT",
    "NAME_EVENT",
    "PATH",
    "PATH_AVOID",
    "METHOD_TRAVEL",
    "CATEGORY_LOCATION",
];

impl SyntheticGrammar {
    /// One bracketed annotation.
    pub fn sample_annotation<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let pattern = PATTERNS.choose(rng).expect("non-empty");
        let mut out = format!("[IN:{}", pattern.intent);
        for piece in pattern.text.split(' ') {
            out.push(' ');
            if let Some(slot) = piece.strip_prefix("?{").and_then(|p| p.strip_suffix('}')) {
                if rng.gen_bool(0.5) {
                    out.push_str(&self.slot(rng, slot, 2));
                } else {
                    out.pop();
                }
            } else if let Some(slot) = piece.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
                out.push_str(&self.slot(rng, slot, 2));
            } else {
                out.push_str(piece);
            }
        }
        out.push_str(" ]");
        out
    }

    fn slot<R: Rng + ?Sized>(&self, rng: &mut R, name: &str, budget: usize) -> String {
        let words = |list: &[&str], rng: &mut R| list.choose(rng).expect("non-empty").to_string();
        match name {
            "DESTINATION" | "SOURCE" | "LOCATION" => {
                let body = if budget > 0 && rng.gen_bool(0.35) {
                    self.location_intent(rng, budget - 1)
                } else {
                    words(PLACES, rng)
                };
                format!("[SL:{name} {body} ]")
            }
            "CATEGORY_LOCATION_TOP" => {
                let det = if rng.gen_bool(0.5) {
                    "the nearest "
                } else {
                    "the "
                };
                format!(
                    "{det}[SL:CATEGORY_LOCATION {} ]",
                    words(CATEGORY_LOCATION, rng)
                )
            }
            "DATE_TIME" => format!("[SL:DATE_TIME {} ]", words(DATE_TIME, rng)),
            "CATEGORY_EVENT" => format!("[SL:CATEGORY_EVENT {} ]", words(CATEGORY_EVENT, rng)),
            "NAME_EVENT" => format!("[SL:NAME_EVENT {} ]", words(NAME_EVENT, rng)),
            "PATH" | "PATH_AVOID" => format!("[SL:{name} {} ]", words(PATHS, rng)),
            "METHOD_TRAVEL" => format!("[SL:METHOD_TRAVEL {} ]", words(METHOD_TRAVEL, rng)),
            other => panic!("unknown slot placeholder {other}"),
        }
    }

    fn location_intent<R: Rng + ?Sized>(&self, rng: &mut R, budget: usize) -> String {
        let cat = CATEGORY_LOCATION.choose(rng).expect("non-empty");
        if budget > 0 && rng.gen_bool(0.3) {
            format!(
                "[IN:GET_LOCATION the [SL:CATEGORY_LOCATION {cat} ] near {} ]",
                self.slot(rng, "LOCATION", budget - 1)
            )
        } else if rng.gen_bool(0.5) {
            format!("[IN:GET_LOCATION the [SL:CATEGORY_LOCATION {cat} ] ]")
        } else {
            format!("[IN:GET_LOCATION [SL:CATEGORY_LOCATION the {cat} ] ]")
        }
    }

    pub fn sample_tree<R: Rng + ?Sized>(&self, rng: &mut R) -> ParseTree {
        let tree =
            parse_bracketed(&self.sample_annotation(rng)).expect("grammar emits valid trees");
        if self.label_noise > 0.0 && rng.gen_bool(self.label_noise) {
            relabel_random_slot(rng, &tree)
        } else {
            tree
        }
    }

    /// `n` trees with ids `{prefix}-{i}`, drawn from a seeded stream.
    pub fn corpus(&self, seed: u64, n: usize, prefix: &str) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|i| CorpusEntry {
                id: format!("{prefix}-{i:05}"),
                tree: self.sample_tree(&mut rng),
            })
            .collect();
        Corpus::new(entries).expect("ids are unique")
    }
}

/// Beams with known correct answers for checking a learned ranker.
///
/// Each beam holds the gold tree plus `k - 1` copies whose root intent is
/// replaced by a label never seen in `lm_corpus`. Model scores are random,
/// so only the LM separates correct from incorrect. When `vote_signal` is
/// set, the correct position is random instead and only the `votes`
/// annotation (k for the correct one, fewer otherwise) identifies it.
pub struct RankingSuite {
    pub lm_corpus: Corpus,
    pub beams: Vec<BeamSet>,
    pub golds: Vec<ParseTree>,
}

impl RankingSuite {
    pub fn generate(seed: u64, n: usize, k: usize, vote_signal: bool) -> RankingSuite {
        assert!(k >= 2, "a ranking beam needs at least two hypotheses");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grammar = SyntheticGrammar::default();
        let mut entries = Vec::with_capacity(n);
        let mut beams = Vec::with_capacity(n);
        let mut golds = Vec::with_capacity(n);
        for i in 0..n {
            let gold = grammar.sample_tree(&mut rng);
            let mut trees: Vec<ParseTree> = (1..k)
                .map(|j| {
                    let label = Label::intent(&format!("NOISE_{j}")).expect("valid name");
                    let root = Node::labeled(label, gold.root().children().to_vec());
                    ParseTree::new(gold.tokens().to_vec(), root).expect("same shape as gold")
                })
                .collect();
            let correct = rng.gen_range(0..k);
            trees.insert(correct, gold.clone());
            let designated = if vote_signal {
                trees[rng.gen_range(0..k)].clone()
            } else {
                gold.clone()
            };
            let mut scores: Vec<f64> = (0..k).map(|_| -rng.gen_range(0.0..10.0)).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let hypotheses = trees
                .iter()
                .zip(scores)
                .map(|(t, s)| {
                    let mut h = Hypothesis::new(tree_to_actions(t), s);
                    let votes = if *t == designated {
                        k
                    } else {
                        rng.gen_range(1..k)
                    };
                    h.aux.insert(AUX_VOTES.to_string(), votes as f64);
                    h
                })
                .collect();
            let id = format!("rank-{i:05}");
            beams.push(BeamSet {
                id: id.clone(),
                tokens: gold.tokens().to_vec(),
                k,
                hypotheses,
            });
            entries.push(CorpusEntry { id, tree: gold });
            golds.push(designated);
        }
        RankingSuite {
            lm_corpus: Corpus::new(entries).expect("ids are unique"),
            beams,
            golds,
        }
    }
}

fn relabel_random_slot<R: Rng + ?Sized>(rng: &mut R, tree: &ParseTree) -> ParseTree {
    fn count_slots(node: &Node) -> usize {
        let own = usize::from(node.label().is_some_and(Label::is_slot));
        own + node.children().iter().map(count_slots).sum::<usize>()
    }
    fn relabel(node: &Node, target: &mut isize, replacement: &Label) -> Node {
        match node {
            Node::Leaf(i) => Node::Leaf(*i),
            Node::Labeled { label, children } => {
                let mut label = label.clone();
                if label.is_slot() {
                    if *target == 0 {
                        label = replacement.clone();
                    }
                    *target -= 1;
                }
                let children = children
                    .iter()
                    .map(|c| relabel(c, target, replacement))
                    .collect();
                Node::labeled(label, children)
            }
        }
    }
    let slots = count_slots(tree.root());
    if slots == 0 {
        return tree.clone();
    }
    let mut target = rng.gen_range(0..slots) as isize;
    let replacement = Label::slot(SLOT_NAMES.choose(rng).expect("non-empty")).expect("valid name");
    let root = relabel(tree.root(), &mut target, &replacement);
    ParseTree::new(tree.tokens().to_vec(), root).expect("relabeling keeps structure")
}
