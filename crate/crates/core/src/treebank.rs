//! TOP parse trees: labels, nodes, the bracketed annotation format,
//! constituent extraction and corpus ingestion.
//!
//! A tree is rooted at an intent. Intents contain tokens and slots, slots
//! contain tokens and intents. Spans are end-exclusive token ranges.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::io::{read_jsonl, JsonlError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelKind {
    Intent,
    Slot,
}

impl LabelKind {
    pub fn prefix(self) -> &'static str {
        match self {
            LabelKind::Intent => "IN",
            LabelKind::Slot => "SL",
        }
    }
}

/// An intent or slot label, rendered as `IN:NAME` / `SL:NAME`.
///
/// Ordering follows the rendered form, so intents sort before slots.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    kind: LabelKind,
    name: Arc<str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("label `{0}` has no IN:/SL: prefix")]
    UnknownPrefix(String),
    #[error("label name `{0}` is empty or contains whitespace or brackets")]
    BadName(String),
}

impl Label {
    pub fn new(kind: LabelKind, name: &str) -> Result<Self, LabelError> {
        if name.is_empty()
            || name
                .chars()
                .any(|c| c.is_whitespace() || c == '[' || c == ']')
        {
            return Err(LabelError::BadName(name.to_string()));
        }
        Ok(Label {
            kind,
            name: Arc::from(name),
        })
    }

    pub fn intent(name: &str) -> Result<Self, LabelError> {
        Label::new(LabelKind::Intent, name)
    }

    pub fn slot(name: &str) -> Result<Self, LabelError> {
        Label::new(LabelKind::Slot, name)
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_intent(&self) -> bool {
        self.kind == LabelKind::Intent
    }

    pub fn is_slot(&self) -> bool {
        self.kind == LabelKind::Slot
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.prefix(), self.name)
    }
}

impl FromStr for Label {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = s.strip_prefix("IN:") {
            Label::intent(name)
        } else if let Some(name) = s.strip_prefix("SL:") {
            Label::slot(name)
        } else {
            Err(LabelError::UnknownPrefix(s.to_string()))
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    /// Index into the tree's token list.
    Leaf(usize),
    Labeled {
        label: Label,
        children: Vec<Node>,
    },
}

impl Node {
    pub fn labeled(label: Label, children: Vec<Node>) -> Self {
        Node::Labeled { label, children }
    }

    pub fn label(&self) -> Option<&Label> {
        match self {
            Node::Leaf(_) => None,
            Node::Labeled { label, .. } => Some(label),
        }
    }

    pub fn children(&self) -> &[Node] {
        match self {
            Node::Leaf(_) => &[],
            Node::Labeled { children, .. } => children,
        }
    }

    /// First and one-past-last token index covered by this node.
    pub fn span(&self) -> (usize, usize) {
        match self {
            Node::Leaf(i) => (*i, i + 1),
            Node::Labeled { children, .. } => {
                let start = children.first().map(|c| c.span().0).unwrap_or(0);
                let end = children.last().map(|c| c.span().1).unwrap_or(0);
                (start, end)
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Labeled { children, .. } => {
                1 + children.iter().map(Node::depth).max().unwrap_or(0)
            }
        }
    }
}

/// Structural problems found while validating a tree.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("root node must be labeled")]
    RootIsLeaf,
    #[error("root must be an intent, found {0}")]
    RootNotIntent(Label),
    #[error("constituent {0} has no children")]
    EmptyConstituent(Label),
    #[error("{child} cannot be nested directly under {parent}")]
    Alternation { parent: Label, child: Label },
    #[error("leaf {found} out of order, expected token {expected}")]
    LeafOrder { expected: usize, found: usize },
    #[error("tree covers {covered} of {total} tokens")]
    Coverage { covered: usize, total: usize },
    #[error("token lists differ: {left:?} vs {right:?}")]
    TokenMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },
}

/// Errors from the bracketed reader; `pos` is a character offset.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BracketError {
    #[error("empty annotation")]
    Empty,
    #[error("char {pos}: unbalanced brackets ({detail})")]
    Unbalanced { pos: usize, detail: &'static str },
    #[error("char {pos}: unknown label prefix in `{found}`")]
    UnknownPrefix { pos: usize, found: String },
    #[error("char {pos}: invalid label `{found}`")]
    BadLabel { pos: usize, found: String },
    #[error("char {pos}: {child} cannot be nested directly under {parent}")]
    Alternation {
        pos: usize,
        parent: Label,
        child: Label,
    },
    #[error("char {pos}: constituent {label} is empty")]
    EmptyConstituent { pos: usize, label: Label },
    #[error("char {pos}: root must be an intent, found {found}")]
    RootNotIntent { pos: usize, found: Label },
    #[error("char {pos}: token outside the root constituent")]
    OutsideRoot { pos: usize },
}

/// Controls whether intent/slot alternation is enforced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Strictness {
    pub permissive: bool,
}

impl Strictness {
    pub const STRICT: Strictness = Strictness { permissive: false };
    pub const PERMISSIVE: Strictness = Strictness { permissive: true };
}

fn alternation_ok(parent: &Label, child: &Label) -> bool {
    parent.kind() != child.kind()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParseTree {
    tokens: Vec<String>,
    root: Node,
}

impl ParseTree {
    /// Builds a tree, enforcing intent/slot alternation.
    pub fn new(tokens: Vec<String>, root: Node) -> Result<Self, TreeError> {
        ParseTree::with_strictness(tokens, root, Strictness::STRICT)
    }

    pub fn with_strictness(
        tokens: Vec<String>,
        root: Node,
        strictness: Strictness,
    ) -> Result<Self, TreeError> {
        match root.label() {
            None => return Err(TreeError::RootIsLeaf),
            Some(l) if !l.is_intent() => return Err(TreeError::RootNotIntent(l.clone())),
            _ => {}
        }
        let mut next = 0;
        validate_node(&root, strictness, &mut next)?;
        if next != tokens.len() {
            return Err(TreeError::Coverage {
                covered: next,
                total: tokens.len(),
            });
        }
        Ok(ParseTree { tokens, root })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn root_label(&self) -> &Label {
        self.root.label().expect("root is labeled")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of labeled nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// True when every labeled node alternates kind with its labeled parent.
    pub fn respects_alternation(&self) -> bool {
        fn walk(node: &Node) -> bool {
            match node {
                Node::Leaf(_) => true,
                Node::Labeled { label, children } => children.iter().all(|c| match c {
                    Node::Leaf(_) => true,
                    Node::Labeled { label: cl, .. } => alternation_ok(label, cl) && walk(c),
                }),
            }
        }
        walk(&self.root)
    }

    /// Labeled nodes in pre-order (root first) as constituents.
    pub fn constituent_list(&self) -> Vec<Constituent> {
        fn walk(node: &Node, out: &mut Vec<Constituent>) {
            if let Node::Labeled { label, children } = node {
                let (start, end) = node.span();
                out.push(Constituent {
                    label: label.clone(),
                    start,
                    end,
                });
                for c in children {
                    walk(c, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn labels(&self) -> Vec<Label> {
        self.constituent_list()
            .into_iter()
            .map(|c| c.label)
            .collect()
    }
}

fn validate_node(node: &Node, strictness: Strictness, next: &mut usize) -> Result<(), TreeError> {
    match node {
        Node::Leaf(i) => {
            if *i != *next {
                return Err(TreeError::LeafOrder {
                    expected: *next,
                    found: *i,
                });
            }
            *next += 1;
            Ok(())
        }
        Node::Labeled { label, children } => {
            if children.is_empty() {
                return Err(TreeError::EmptyConstituent(label.clone()));
            }
            for child in children {
                if let Node::Labeled { label: cl, .. } = child {
                    if !strictness.permissive && !alternation_ok(label, cl) {
                        return Err(TreeError::Alternation {
                            parent: label.clone(),
                            child: cl.clone(),
                        });
                    }
                }
                validate_node(child, strictness, next)?;
            }
            Ok(())
        }
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_bracketed(self))
    }
}

enum Item<'a> {
    Open(&'a str),
    Close,
    Word(&'a str),
}

/// Splits on whitespace, yielding each chunk with its character offset.
fn chunks(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (char_pos, (byte, ch)) in text.char_indices().enumerate() {
        if ch.is_whitespace() {
            if let Some((b, c)) = start.take() {
                out.push((c, &text[b..byte]));
            }
        } else if start.is_none() {
            start = Some((byte, char_pos));
        }
    }
    if let Some((b, c)) = start {
        out.push((c, &text[b..]));
    }
    out
}

fn classify_chunk(pos: usize, chunk: &str) -> Result<Item<'_>, BracketError> {
    if chunk == "]" {
        return Ok(Item::Close);
    }
    if let Some(label) = chunk.strip_prefix('[') {
        if label.is_empty() {
            return Err(BracketError::BadLabel {
                pos,
                found: chunk.to_string(),
            });
        }
        return Ok(Item::Open(label));
    }
    if chunk.contains('[') || chunk.contains(']') {
        return Err(BracketError::Unbalanced {
            pos,
            detail: "bracket inside a token",
        });
    }
    Ok(Item::Word(chunk))
}

/// Parses a bracketed annotation with alternation enforced.
pub fn parse_bracketed(text: &str) -> Result<ParseTree, BracketError> {
    parse_bracketed_with(text, Strictness::STRICT)
}

pub fn parse_bracketed_with(text: &str, strictness: Strictness) -> Result<ParseTree, BracketError> {
    struct Frame {
        pos: usize,
        label: Label,
        children: Vec<Node>,
    }

    let items = chunks(text);
    if items.is_empty() {
        return Err(BracketError::Empty);
    }
    let mut tokens = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();
    let mut root: Option<Node> = None;

    for (pos, chunk) in items {
        match classify_chunk(pos, chunk)? {
            Item::Open(raw) => {
                let label: Label = raw.parse().map_err(|e| match e {
                    LabelError::UnknownPrefix(_) => BracketError::UnknownPrefix {
                        pos,
                        found: raw.to_string(),
                    },
                    LabelError::BadName(_) => BracketError::BadLabel {
                        pos,
                        found: raw.to_string(),
                    },
                })?;
                if root.is_some() {
                    return Err(BracketError::Unbalanced {
                        pos,
                        detail: "content after the root closed",
                    });
                }
                match stack.last() {
                    None if !label.is_intent() => {
                        return Err(BracketError::RootNotIntent { pos, found: label })
                    }
                    Some(parent)
                        if !strictness.permissive && !alternation_ok(&parent.label, &label) =>
                    {
                        return Err(BracketError::Alternation {
                            pos,
                            parent: parent.label.clone(),
                            child: label,
                        })
                    }
                    _ => {}
                }
                stack.push(Frame {
                    pos,
                    label,
                    children: Vec::new(),
                });
            }
            Item::Close => {
                let frame = stack.pop().ok_or(BracketError::Unbalanced {
                    pos,
                    detail: "unmatched `]`",
                })?;
                if frame.children.is_empty() {
                    return Err(BracketError::EmptyConstituent {
                        pos: frame.pos,
                        label: frame.label,
                    });
                }
                let node = Node::labeled(frame.label, frame.children);
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            Item::Word(w) => {
                let parent = stack.last_mut().ok_or(BracketError::OutsideRoot { pos })?;
                parent.children.push(Node::Leaf(tokens.len()));
                tokens.push(w.to_string());
            }
        }
    }
    if let Some(frame) = stack.last() {
        return Err(BracketError::Unbalanced {
            pos: frame.pos,
            detail: "unclosed `[`",
        });
    }
    let root = root.expect("non-empty input with balanced brackets has a root");
    Ok(ParseTree { tokens, root })
}

/// Canonical single-space form with a space before every `]`.
pub fn render_bracketed(tree: &ParseTree) -> String {
    fn walk(node: &Node, tokens: &[String], out: &mut String) {
        match node {
            Node::Leaf(i) => out.push_str(&tokens[*i]),
            Node::Labeled { label, children } => {
                out.push('[');
                out.push_str(&label.to_string());
                for c in children {
                    out.push(' ');
                    walk(c, tokens, out);
                }
                out.push_str(" ]");
            }
        }
    }
    let mut out = String::new();
    walk(&tree.root, &tree.tokens, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Constituent {
    pub label: Label,
    pub start: usize,
    pub end: usize,
}

impl Constituent {
    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

impl fmt::Display for Constituent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.label, self.start, self.end)
    }
}

/// Multiset of constituents keyed by (label, start, end).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstituentSet {
    counts: BTreeMap<Constituent, usize>,
}

impl ConstituentSet {
    pub fn len(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, c: &Constituent) -> usize {
        self.counts.get(c).copied().unwrap_or(0)
    }

    pub fn contains(&self, c: &Constituent) -> bool {
        self.count(c) > 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Constituent, usize)> {
        self.counts.iter().map(|(c, n)| (c, *n))
    }

    /// |self ∩ other| with minimum multiplicities.
    pub fn intersection_size(&self, other: &ConstituentSet) -> usize {
        self.counts
            .iter()
            .map(|(c, n)| (*n).min(other.count(c)))
            .sum()
    }
}

impl FromIterator<Constituent> for ConstituentSet {
    fn from_iter<I: IntoIterator<Item = Constituent>>(iter: I) -> Self {
        let mut counts = BTreeMap::new();
        for c in iter {
            *counts.entry(c).or_insert(0) += 1;
        }
        ConstituentSet { counts }
    }
}

pub fn constituents(tree: &ParseTree) -> ConstituentSet {
    tree.constituent_list().into_iter().collect()
}

/// Whole-tree equality; trees over different token lists are an error.
pub fn exact_match(gold: &ParseTree, pred: &ParseTree) -> Result<bool, TreeError> {
    if gold.tokens != pred.tokens {
        return Err(TreeError::TokenMismatch {
            left: gold.tokens.clone(),
            right: pred.tokens.clone(),
        });
    }
    Ok(gold.root == pred.root)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub tree: ParseTree,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected 3 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: {source}")]
    Bracket {
        line: usize,
        #[source]
        source: BracketError,
    },
    #[error("line {line}: annotation tokens {annotation:?} disagree with tokenized column {tokenized:?}")]
    TokenMismatch {
        line: usize,
        annotation: Vec<String>,
        tokenized: Vec<String>,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

impl Corpus {
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: e.id.clone(),
                });
            }
        }
        Ok(Corpus { entries })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CorpusEntry> {
        self.entries.iter()
    }

    pub fn trees(&self) -> impl Iterator<Item = &ParseTree> {
        self.entries.iter().map(|e| &e.tree)
    }

    pub fn get(&self, id: &str) -> Option<&ParseTree> {
        self.entries.iter().find(|e| e.id == id).map(|e| &e.tree)
    }

    /// Every label occurring in the corpus, sorted and deduplicated.
    pub fn label_inventory(&self) -> Vec<Label> {
        let mut labels: Vec<Label> = self.trees().flat_map(|t| t.labels()).collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a CorpusEntry;
    type IntoIter = std::slice::Iter<'a, CorpusEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    pub filter_unsupported: bool,
    pub strictness: Strictness,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub kept: usize,
    pub dropped_unsupported: usize,
}

/// Name of the catch-all top intent removed by `filter_unsupported`.
pub const UNSUPPORTED_INTENT: &str = "UNSUPPORTED";

/// Reads the TOP TSV release format: raw utterance, tokenized utterance,
/// bracketed annotation. Entry ids are 1-based line numbers.
pub fn read_tsv<R: BufRead>(
    reader: R,
    options: IngestOptions,
) -> Result<(Corpus, IngestStats), CorpusError> {
    let mut entries = Vec::new();
    let mut stats = IngestStats::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::ColumnCount {
                line: line_no,
                found: cols.len(),
            });
        }
        let tree = parse_bracketed_with(cols[2], options.strictness).map_err(|source| {
            CorpusError::Bracket {
                line: line_no,
                source,
            }
        })?;
        let tokenized: Vec<String> = cols[1].split_whitespace().map(str::to_string).collect();
        if tokenized != tree.tokens {
            return Err(CorpusError::TokenMismatch {
                line: line_no,
                annotation: tree.tokens.clone(),
                tokenized,
            });
        }
        if options.filter_unsupported && tree.root_label().name() == UNSUPPORTED_INTENT {
            stats.dropped_unsupported += 1;
            continue;
        }
        entries.push(CorpusEntry {
            id: line_no.to_string(),
            tree,
        });
    }
    stats.kept = entries.len();
    Ok((Corpus::new(entries)?, stats))
}

pub fn ingest_corpus(
    path: impl AsRef<Path>,
    options: IngestOptions,
) -> Result<(Corpus, IngestStats), CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_tsv(BufReader::new(file), options)
}

/// One line of the JSONL corpus interchange format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub annotation: String,
}

impl CorpusRecord {
    pub fn from_entry(entry: &CorpusEntry) -> Self {
        CorpusRecord {
            id: entry.id.clone(),
            tokens: entry.tree.tokens.clone(),
            annotation: render_bracketed(&entry.tree),
        }
    }
}

pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for e in corpus {
        out.push_str(&serde_json::to_string(&CorpusRecord::from_entry(e)).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn records_to_corpus(
    records: Vec<(usize, CorpusRecord)>,
    strictness: Strictness,
) -> Result<Corpus, CorpusError> {
    let mut entries = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let tree = parse_bracketed_with(&rec.annotation, strictness)
            .map_err(|source| CorpusError::Bracket { line, source })?;
        if tree.tokens != rec.tokens {
            return Err(CorpusError::TokenMismatch {
                line,
                annotation: tree.tokens,
                tokenized: rec.tokens,
            });
        }
        entries.push(CorpusEntry { id: rec.id, tree });
    }
    Corpus::new(entries)
}

pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let records = read_jsonl::<CorpusRecord>(path.as_ref())?;
    records_to_corpus(records, Strictness::STRICT)
}
