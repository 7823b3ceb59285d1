//! State features for the log-linear scorer.
//!
//! Every feature is a `template=value` string hashed with 64-bit FNV-1a.
//! Atomic templates read the two innermost open labels, the next three
//! buffer tokens (raw, lowercased, shape), the previous two actions, the
//! innermost child count and the stack depth. A handful of conjunctions
//! of those atoms follow, then optional bucketized token-vector features.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::transitions::{Action, ParserState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey(pub u64);

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

impl FeatureKey {
    /// Key for `template` with `value`, hashed as `template=value`.
    pub fn of(template: &str, value: &str) -> Self {
        let mut s = String::with_capacity(template.len() + value.len() + 1);
        s.push_str(template);
        s.push('=');
        s.push_str(value);
        FeatureKey(fnv1a(s.as_bytes()))
    }

    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        u64::from_str_radix(s, 16).ok().map(FeatureKey)
    }
}

/// Number of quantile buckets per vector dimension.
pub const VECTOR_BUCKETS: usize = 16;

/// Word shape: runs of upper/lower/digit characters collapse to `X`/`x`/`d`.
pub fn word_shape(token: &str) -> String {
    let mut out = String::new();
    for ch in token.chars() {
        let class = if ch.is_uppercase() {
            'X'
        } else if ch.is_lowercase() {
            'x'
        } else if ch.is_numeric() {
            'd'
        } else {
            ch
        };
        if out.ends_with(class) && matches!(class, 'X' | 'x' | 'd') {
            continue;
        }
        out.push(class);
    }
    out
}

/// Per-dimension quantile cut points computed from training vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketEdges {
    pub edges: Vec<Vec<f64>>,
}

impl BucketEdges {
    pub fn fit<'a, I>(vectors: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Vec<f64>>,
    {
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for v in vectors {
            if columns.is_empty() {
                columns = vec![Vec::new(); v.len()];
            }
            for (col, x) in columns.iter_mut().zip(v) {
                col.push(*x);
            }
        }
        if columns.is_empty() || columns[0].is_empty() {
            return None;
        }
        let edges = columns
            .into_iter()
            .map(|mut col| {
                col.sort_by(f64::total_cmp);
                (1..VECTOR_BUCKETS)
                    .map(|j| col[(j * col.len() / VECTOR_BUCKETS).min(col.len() - 1)])
                    .collect()
            })
            .collect();
        Some(BucketEdges { edges })
    }

    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    pub fn bucketize(&self, vector: &[f64]) -> Vec<u8> {
        self.edges
            .iter()
            .zip(vector)
            .map(|(edges, x)| edges.partition_point(|e| e <= x) as u8)
            .collect()
    }
}

/// Token-level data computed once per utterance.
#[derive(Clone, Debug)]
pub struct PreparedInput<'a> {
    pub tokens: &'a [String],
    pub lower: Vec<String>,
    pub shape: Vec<String>,
    pub buckets: Option<Vec<Vec<u8>>>,
}

impl<'a> PreparedInput<'a> {
    pub fn new(tokens: &'a [String]) -> Self {
        PreparedInput {
            tokens,
            lower: tokens.iter().map(|t| t.to_lowercase()).collect(),
            shape: tokens.iter().map(|t| word_shape(t)).collect(),
            buckets: None,
        }
    }

    pub fn with_buckets(mut self, edges: &BucketEdges, vectors: &[Vec<f64>]) -> Self {
        self.buckets = Some(vectors.iter().map(|v| edges.bucketize(v)).collect());
        self
    }
}

const NONE: &str = "<none>";
const END: &str = "<end>";
const START: &str = "<start>";

struct Sink<'o> {
    buf: String,
    out: &'o mut Vec<FeatureKey>,
}

impl Sink<'_> {
    fn emit(&mut self, template: &str, parts: &[&str]) {
        self.buf.clear();
        self.buf.push_str(template);
        self.buf.push('=');
        for (i, p) in parts.iter().enumerate() {
            if i > 0 {
                self.buf.push('|');
            }
            self.buf.push_str(p);
        }
        self.out.push(FeatureKey(fnv1a(self.buf.as_bytes())));
    }
}

/// Appends the features of `state` to `out`.
pub fn extract_into(
    state: &ParserState,
    input: &PreparedInput<'_>,
    prev_actions: &[Action],
    out: &mut Vec<FeatureKey>,
) {
    let stack = state.stack();
    let s0 = stack.last().map(|f| f.label.to_string());
    let s1 = stack
        .len()
        .checked_sub(2)
        .map(|i| stack[i].label.to_string());
    let s0 = s0.as_deref().unwrap_or(NONE);
    let s1 = s1.as_deref().unwrap_or(NONE);

    let cursor = state.cursor();
    let at = |list: &'_ [String], off: usize| -> String {
        list.get(cursor + off)
            .cloned()
            .unwrap_or_else(|| END.to_string())
    };
    let (b0w, b1w, b2w) = (
        at(input.tokens, 0),
        at(input.tokens, 1),
        at(input.tokens, 2),
    );
    let (b0l, b1l, b2l) = (
        at(&input.lower, 0),
        at(&input.lower, 1),
        at(&input.lower, 2),
    );
    let (b0s, b1s, b2s) = (
        at(&input.shape, 0),
        at(&input.shape, 1),
        at(&input.shape, 2),
    );

    let render = |back: usize| -> String {
        prev_actions
            .len()
            .checked_sub(back)
            .map(|i| prev_actions[i].to_string())
            .unwrap_or_else(|| START.to_string())
    };
    let a1 = render(1);
    let a2 = render(2);
    let cc = stack
        .last()
        .map(|f| f.children.min(4).to_string())
        .unwrap_or_else(|| NONE.to_string());
    let depth = state.depth().to_string();

    let mut sink = Sink {
        buf: String::with_capacity(64),
        out,
    };
    sink.emit("bias", &[]);
    sink.emit("s0", &[s0]);
    sink.emit("s1", &[s1]);
    sink.emit("b0w", &[&b0w]);
    sink.emit("b1w", &[&b1w]);
    sink.emit("b2w", &[&b2w]);
    sink.emit("b0l", &[&b0l]);
    sink.emit("b1l", &[&b1l]);
    sink.emit("b2l", &[&b2l]);
    sink.emit("b0s", &[&b0s]);
    sink.emit("b1s", &[&b1s]);
    sink.emit("b2s", &[&b2s]);
    sink.emit("a1", &[&a1]);
    sink.emit("a2", &[&a2]);
    sink.emit("cc", &[&cc]);
    sink.emit("dep", &[&depth]);
    sink.emit("s0|b0l", &[s0, &b0l]);
    sink.emit("s0|b1l", &[s0, &b1l]);
    sink.emit("s0|b0l|b1l", &[s0, &b0l, &b1l]);
    sink.emit("s0|a1", &[s0, &a1]);
    sink.emit("a1|b0l", &[&a1, &b0l]);
    sink.emit("a1|a2", &[&a1, &a2]);
    sink.emit("s0|s1", &[s0, s1]);
    sink.emit("s0|cc", &[s0, &cc]);
    sink.emit("s0|s1|b0l", &[s0, s1, &b0l]);

    if let Some(buckets) = &input.buckets {
        let mut name = String::new();
        let mut value = String::new();
        for off in 0..2 {
            let Some(row) = buckets.get(cursor + off) else {
                continue;
            };
            for (d, b) in row.iter().enumerate() {
                name.clear();
                value.clear();
                write!(name, "v{off}d{d}").expect("string write");
                write!(value, "{b}").expect("string write");
                sink.emit(&name, &[&value]);
            }
        }
    }
}

/// Features of `state` for `tokens` without external vectors.
pub fn extract_features(
    state: &ParserState,
    tokens: &[String],
    prev_actions: &[Action],
) -> Vec<FeatureKey> {
    let input = PreparedInput::new(tokens);
    let mut out = Vec::new();
    extract_into(state, &input, prev_actions, &mut out);
    out
}
