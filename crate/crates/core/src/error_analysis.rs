//! Classification of parse errors into seven types.
//!
//! | tag | meaning |
//! |-----|---------|
//! | WT  | wrong top intent |
//! | WL  | wrong label on a correctly bracketed sub-intent or slot |
//! | MS  | missing span |
//! | SS  | spurious span |
//! | WS  | one gold constituent wrongly split |
//! | WJ  | several gold constituents wrongly joined |
//! | BB  | bad boundary |
//!
//! A constituent is *span-matched* when the other tree has a constituent
//! over the same token span. Each span-unmatched gold constituent gets
//! exactly one of MS, WS, WJ or BB; span-unmatched predicted constituents
//! that overlap no unmatched gold constituent are SS. Split and join tests
//! count distinct predicted spans, so a unary chain counts once. At a span
//! present in both trees, surplus predicted constituents (a unary chain
//! that is too long) count as SS and surplus gold constituents as MS.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{Constituent, Corpus, ParseTree, TreeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorTag {
    WT,
    WL,
    MS,
    SS,
    WS,
    WJ,
    BB,
}

impl ErrorTag {
    /// Report column order.
    pub const ALL: [ErrorTag; 7] = [
        ErrorTag::WT,
        ErrorTag::WL,
        ErrorTag::MS,
        ErrorTag::SS,
        ErrorTag::WS,
        ErrorTag::WJ,
        ErrorTag::BB,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorTag::WT => "WT",
            ErrorTag::WL => "WL",
            ErrorTag::MS => "MS",
            ErrorTag::SS => "SS",
            ErrorTag::WS => "WS",
            ErrorTag::WJ => "WJ",
            ErrorTag::BB => "BB",
        }
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown error tag `{s}`"))
    }
}

/// Tags for one (gold, predicted) pair with per-tag occurrence counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Classification {
    pub occurrences: BTreeMap<ErrorTag, usize>,
}

impl Classification {
    pub fn tags(&self) -> BTreeSet<ErrorTag> {
        self.occurrences.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    fn add(&mut self, tag: ErrorTag, n: usize) {
        if n > 0 {
            *self.occurrences.entry(tag).or_insert(0) += n;
        }
    }
}

type Span = (usize, usize);

fn overlaps(a: Span, b: Span) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// `outer` properly contains `inner`.
fn strictly_contains(outer: Span, inner: Span) -> bool {
    outer.0 <= inner.0 && inner.1 <= outer.1 && outer != inner
}

fn by_span(cs: &[Constituent]) -> BTreeMap<Span, Vec<&Constituent>> {
    let mut m: BTreeMap<Span, Vec<&Constituent>> = BTreeMap::new();
    for c in cs {
        m.entry(c.span()).or_default().push(c);
    }
    m
}

pub fn classify(gold: &ParseTree, pred: &ParseTree) -> Result<Classification, TreeError> {
    if gold.tokens() != pred.tokens() {
        return Err(TreeError::TokenMismatch {
            left: gold.tokens().to_vec(),
            right: pred.tokens().to_vec(),
        });
    }
    let mut out = Classification::default();
    if gold.root_label() != pred.root_label() {
        out.add(ErrorTag::WT, 1);
    }

    let g_list = gold.constituent_list();
    let p_list = pred.constituent_list();
    let g_spans = by_span(&g_list);
    let p_spans = by_span(&p_list);

    // A relabeling pairs a gold label missing at a span with a predicted
    // label not in gold there; a chain-length difference alone is MS or SS.
    // Root constituents are excluded, pre-order lists them first.
    let non_root = |cs: &[Constituent]| {
        by_span(&cs[1..])
            .into_iter()
            .map(|(s, v)| {
                (
                    s,
                    v.into_iter().map(|c| c.label.clone()).collect::<Vec<_>>(),
                )
            })
            .collect::<BTreeMap<_, _>>()
    };
    let g_inner = non_root(&g_list);
    let p_inner = non_root(&p_list);
    let mut wl = 0;
    for (span, gl) in &g_inner {
        if !p_spans.contains_key(span) {
            continue;
        }
        let pl = p_inner.get(span).map(Vec::as_slice).unwrap_or(&[]);
        let missing = gl.iter().filter(|l| !pl.contains(l)).count();
        let unused = pl.iter().filter(|l| !gl.contains(l)).count();
        wl += missing.min(unused);
    }
    out.add(ErrorTag::WL, wl);

    for (span, gs) in &g_spans {
        if let Some(ps) = p_spans.get(span) {
            out.add(ErrorTag::MS, gs.len().saturating_sub(ps.len()));
            out.add(ErrorTag::SS, ps.len().saturating_sub(gs.len()));
        }
    }

    let g_unmatched: Vec<Span> = g_spans
        .keys()
        .copied()
        .filter(|s| !p_spans.contains_key(s))
        .collect();
    let p_unmatched: Vec<Span> = p_spans
        .keys()
        .copied()
        .filter(|s| !g_spans.contains_key(s))
        .collect();

    let mut joiners: BTreeSet<Span> = BTreeSet::new();
    for g_span in &g_unmatched {
        let u: Vec<Span> = p_unmatched
            .iter()
            .copied()
            .filter(|p| overlaps(*p, *g_span))
            .collect();
        let tag = if u.is_empty() {
            ErrorTag::MS
        } else if u.iter().filter(|p| strictly_contains(*g_span, **p)).count() >= 2 {
            ErrorTag::WS
        } else if let Some(p) = u.iter().copied().find(|&p| {
            strictly_contains(p, *g_span)
                && g_unmatched
                    .iter()
                    .filter(|g2| strictly_contains(p, **g2))
                    .map(|g2| g_spans[g2].len())
                    .sum::<usize>()
                    >= 2
        }) {
            joiners.insert(p);
            continue;
        } else {
            ErrorTag::BB
        };
        out.add(tag, g_spans[g_span].len());
    }
    out.add(ErrorTag::WJ, joiners.len());

    let spurious = p_unmatched
        .iter()
        .filter(|p| !g_unmatched.iter().any(|g| overlaps(**p, *g)))
        .map(|p| p_spans[p].len())
        .sum();
    out.add(ErrorTag::SS, spurious);
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("predictions have no entry for `{0}`")]
    MissingPrediction(String),
    #[error("{gold} gold utterances but {pred} predictions")]
    CountMismatch { gold: usize, pred: usize },
    #[error("utterance `{id}`: {source}")]
    Tree {
        id: String,
        #[source]
        source: TreeError,
    },
    #[error("reports cover different utterances")]
    DifferentUtterances,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceErrors {
    pub id: String,
    pub tags: Vec<ErrorTag>,
}

/// Corpus-level error counts. `counts` are occurrence counts and always
/// hold all seven tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorReport {
    pub counts: BTreeMap<ErrorTag, usize>,
    pub utterances: Vec<UtteranceErrors>,
}

impl ErrorReport {
    pub fn count(&self, tag: ErrorTag) -> usize {
        self.counts.get(&tag).copied().unwrap_or(0)
    }

    /// `{"WT": n, ...}`.
    pub fn counts_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for t in ErrorTag::ALL {
            map.insert(t.to_string(), self.count(t).into());
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("counts serialize")
    }

    /// One `{"id": ..., "tags": [...]}` line per utterance.
    pub fn utterances_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u).expect("utterance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn table(&self) -> String {
        render_rows(&[(
            "count".to_string(),
            ErrorTag::ALL
                .iter()
                .map(|t| self.count(*t).to_string())
                .collect(),
        )])
    }
}

/// Classifies every gold utterance against the prediction with the same id.
pub fn report(gold: &Corpus, pred: &Corpus) -> Result<ErrorReport, ReportError> {
    if gold.len() != pred.len() {
        return Err(ReportError::CountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut counts: BTreeMap<ErrorTag, usize> = ErrorTag::ALL.iter().map(|t| (*t, 0)).collect();
    let mut utterances = Vec::with_capacity(gold.len());
    for e in gold {
        let p = pred
            .get(&e.id)
            .ok_or_else(|| ReportError::MissingPrediction(e.id.clone()))?;
        let c = classify(&e.tree, p).map_err(|source| ReportError::Tree {
            id: e.id.clone(),
            source,
        })?;
        for (t, n) in &c.occurrences {
            *counts.get_mut(t).expect("all tags present") += n;
        }
        utterances.push(UtteranceErrors {
            id: e.id.clone(),
            tags: c.tags().into_iter().collect(),
        });
    }
    Ok(ErrorReport { counts, utterances })
}

/// Relative change per tag, `None` where the base count is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub change: BTreeMap<ErrorTag, Option<f64>>,
}

impl Comparison {
    /// Signed whole percent such as `-20%` or `+2%`, or `n/a`.
    pub fn format(&self, tag: ErrorTag) -> String {
        match self.change.get(&tag).copied().flatten() {
            None => "n/a".to_string(),
            Some(c) => {
                let pct = (c * 100.0).round() as i64;
                if pct == 0 {
                    "0%".to_string()
                } else {
                    format!("{pct:+}%")
                }
            }
        }
    }
}

pub fn compare(base: &ErrorReport, new: &ErrorReport) -> Result<Comparison, ReportError> {
    let ids = |r: &ErrorReport| {
        r.utterances
            .iter()
            .map(|u| u.id.clone())
            .collect::<BTreeSet<_>>()
    };
    if ids(base) != ids(new) {
        return Err(ReportError::DifferentUtterances);
    }
    let change = ErrorTag::ALL
        .iter()
        .map(|&t| {
            let b = base.count(t) as f64;
            let n = new.count(t) as f64;
            (t, (b > 0.0).then(|| (n - b) / b))
        })
        .collect();
    Ok(Comparison { change })
}

/// A table with a `Base` row of counts and one row of relative changes per
/// method; negative numbers are reductions.
pub fn comparison_table(base: &ErrorReport, methods: &[(&str, &Comparison)]) -> String {
    let mut rows = vec![(
        "Base".to_string(),
        ErrorTag::ALL
            .iter()
            .map(|t| base.count(*t).to_string())
            .collect(),
    )];
    for (name, c) in methods {
        rows.push((
            name.to_string(),
            ErrorTag::ALL.iter().map(|t| c.format(*t)).collect(),
        ));
    }
    render_rows(&rows)
}

fn render_rows(rows: &[(String, Vec<String>)]) -> String {
    let first = rows
        .iter()
        .map(|r| r.0.len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(0);
    let mut widths: Vec<usize> = ErrorTag::ALL.iter().map(|t| t.as_str().len()).collect();
    for (_, cells) in rows {
        for (w, c) in widths.iter_mut().zip(cells) {
            *w = (*w).max(c.len());
        }
    }
    let line = |name: &str, cells: &[String]| {
        let mut s = format!("{name:<first$}");
        for (c, w) in cells.iter().zip(&widths) {
            s.push_str(&format!("  {c:>w$}"));
        }
        s.push('\n');
        s
    };
    let header: Vec<String> = ErrorTag::ALL.iter().map(|t| t.to_string()).collect();
    let mut out = line("Method", &header);
    for (name, cells) in rows {
        out.push_str(&line(name, cells));
    }
    out
}
