//! The shift-reduce action system.
//!
//! A tree is built by `OPEN(label)` (push an empty constituent), `SHIFT`
//! (attach the next token to the innermost open constituent) and `REDUCE`
//! (close the innermost constituent). `PAD` only exists so that ensembling
//! can align sequences of different lengths.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::treebank::{Label, LabelKind, Node, ParseTree};

/// Default cap on open constituents during decoding.
pub const DEFAULT_MAX_DEPTH: usize = 10;

/// Ordering doubles as the decoder's tie-break order:
/// `SHIFT < REDUCE < OPEN(..)` with labels compared by rendered form.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Shift,
    Reduce,
    Open(Label),
    Pad,
}

impl Action {
    pub fn is_open(&self) -> bool {
        matches!(self, Action::Open(_))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Shift => f.write_str("SHIFT"),
            Action::Reduce => f.write_str("REDUCE"),
            Action::Open(l) => write!(f, "OPEN({l})"),
            Action::Pad => f.write_str("PAD"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse action `{0}`")]
pub struct ActionParseError(pub String);

impl FromStr for Action {
    type Err = ActionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SHIFT" => Ok(Action::Shift),
            "REDUCE" => Ok(Action::Reduce),
            "PAD" => Ok(Action::Pad),
            _ => s
                .strip_prefix("OPEN(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|l| l.parse().ok())
                .map(Action::Open)
                .ok_or_else(|| ActionParseError(s.to_string())),
        }
    }
}

/// Actions for an utterance of `n` tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActionSequence {
    pub actions: Vec<Action>,
    pub n: usize,
}

impl ActionSequence {
    pub fn new(actions: Vec<Action>, n: usize) -> Self {
        ActionSequence { actions, n }
    }

    /// Parses the space-separated text form.
    pub fn parse(text: &str, n: usize) -> Result<Self, ActionParseError> {
        let actions = text
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ActionSequence { actions, n })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.actions.iter()
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OpenFrame {
    pub label: Label,
    pub children: usize,
}

/// Which action kinds are allowed in a state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ValidActions {
    pub shift: bool,
    pub reduce: bool,
    pub open_intent: bool,
    pub open_slot: bool,
}

impl ValidActions {
    pub fn is_empty(&self) -> bool {
        !(self.shift || self.reduce || self.open_intent || self.open_slot)
    }

    pub fn allows(&self, action: &Action) -> bool {
        match action {
            Action::Shift => self.shift,
            Action::Reduce => self.reduce,
            Action::Open(l) => match l.kind() {
                LabelKind::Intent => self.open_intent,
                LabelKind::Slot => self.open_slot,
            },
            Action::Pad => false,
        }
    }

    /// Concrete valid actions given a label inventory, in tie-break order
    /// when `labels` is sorted.
    pub fn expand(&self, labels: &[Label]) -> Vec<Action> {
        let mut out = Vec::new();
        if self.shift {
            out.push(Action::Shift);
        }
        if self.reduce {
            out.push(Action::Reduce);
        }
        out.extend(
            labels
                .iter()
                .filter(|l| self.allows(&Action::Open((*l).clone())))
                .cloned()
                .map(Action::Open),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidAction {
    #[error("action after the root constituent closed")]
    AfterCompletion,
    #[error("PAD is not a parser action")]
    Pad,
    #[error("OPEN with an exhausted buffer")]
    OpenBufferExhausted,
    #[error("OPEN exceeds the nesting depth limit {0}")]
    OpenDepthLimit(usize),
    #[error("OPEN({child}) violates intent/slot alternation")]
    OpenAlternation { child: Label },
    #[error("SHIFT past the end of the buffer")]
    ShiftPastEnd,
    #[error("SHIFT with no open constituent")]
    ShiftNoOpen,
    #[error("REDUCE with no open constituent")]
    ReduceNoOpen,
    #[error("REDUCE of an empty constituent")]
    ReduceEmpty,
    #[error("root closed with tokens left over")]
    TokensLeftOver,
    #[error("sequence ended before the root closed")]
    Incomplete,
    #[error("sequence is for {expected} tokens, got {found}")]
    TokenCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid action at position {position}: {kind}")]
pub struct TransitionError {
    pub position: usize,
    pub kind: InvalidAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParserState {
    n: usize,
    cursor: usize,
    stack: Vec<OpenFrame>,
    complete: bool,
    max_depth: usize,
}

impl ParserState {
    /// Initial state with no depth limit.
    pub fn new(n: usize) -> Self {
        ParserState::with_max_depth(n, usize::MAX)
    }

    pub fn with_max_depth(n: usize, max_depth: usize) -> Self {
        ParserState {
            n,
            cursor: 0,
            stack: Vec::new(),
            complete: false,
            max_depth,
        }
    }

    pub fn token_count(&self) -> usize {
        self.n
    }

    /// Index of the next unconsumed token.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn stack(&self) -> &[OpenFrame] {
        &self.stack
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn innermost(&self) -> Option<&OpenFrame> {
        self.stack.last()
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn valid_actions(&self) -> ValidActions {
        if self.complete {
            return ValidActions::default();
        }
        let buffer_left = self.cursor < self.n;
        let can_nest = self.stack.len() < self.max_depth;
        match self.stack.last() {
            None => ValidActions {
                open_intent: buffer_left && can_nest,
                ..Default::default()
            },
            Some(top) => ValidActions {
                shift: buffer_left,
                reduce: top.children > 0 && (self.stack.len() > 1 || !buffer_left),
                open_intent: buffer_left && can_nest && top.label.is_slot(),
                open_slot: buffer_left && can_nest && top.label.is_intent(),
            },
        }
    }

    pub fn apply(&mut self, action: &Action) -> Result<(), InvalidAction> {
        if self.complete {
            return Err(InvalidAction::AfterCompletion);
        }
        match action {
            Action::Pad => Err(InvalidAction::Pad),
            Action::Shift => {
                let top = self.stack.last_mut().ok_or(InvalidAction::ShiftNoOpen)?;
                if self.cursor >= self.n {
                    return Err(InvalidAction::ShiftPastEnd);
                }
                top.children += 1;
                self.cursor += 1;
                Ok(())
            }
            Action::Reduce => {
                let depth = self.stack.len();
                let top = self.stack.last().ok_or(InvalidAction::ReduceNoOpen)?;
                if depth == 1 && self.cursor < self.n {
                    return Err(InvalidAction::TokensLeftOver);
                }
                if top.children == 0 {
                    return Err(InvalidAction::ReduceEmpty);
                }
                self.stack.pop();
                match self.stack.last_mut() {
                    Some(parent) => parent.children += 1,
                    None => self.complete = true,
                }
                Ok(())
            }
            Action::Open(label) => {
                if self.cursor >= self.n {
                    return Err(InvalidAction::OpenBufferExhausted);
                }
                let nests = match self.stack.last() {
                    None => label.is_intent(),
                    Some(top) => top.label.kind() != label.kind(),
                };
                if !nests {
                    return Err(InvalidAction::OpenAlternation {
                        child: label.clone(),
                    });
                }
                if self.stack.len() >= self.max_depth {
                    return Err(InvalidAction::OpenDepthLimit(self.max_depth));
                }
                self.stack.push(OpenFrame {
                    label: label.clone(),
                    children: 0,
                });
                Ok(())
            }
        }
    }
}

/// Depth-first, left-to-right linearization of a tree.
pub fn tree_to_actions(tree: &ParseTree) -> ActionSequence {
    fn walk(node: &Node, out: &mut Vec<Action>) {
        match node {
            Node::Leaf(_) => out.push(Action::Shift),
            Node::Labeled { label, children } => {
                out.push(Action::Open(label.clone()));
                for c in children {
                    walk(c, out);
                }
                out.push(Action::Reduce);
            }
        }
    }
    let mut out = Vec::new();
    walk(tree.root(), &mut out);
    ActionSequence::new(out, tree.len())
}

/// Replays `actions` over `tokens`, rejecting the first invalid step.
pub fn actions_to_tree(
    actions: &ActionSequence,
    tokens: &[String],
) -> Result<ParseTree, TransitionError> {
    if actions.n != tokens.len() {
        return Err(TransitionError {
            position: 0,
            kind: InvalidAction::TokenCount {
                expected: actions.n,
                found: tokens.len(),
            },
        });
    }
    build_tree(&actions.actions, tokens)
}

pub(crate) fn build_tree(
    actions: &[Action],
    tokens: &[String],
) -> Result<ParseTree, TransitionError> {
    let mut state = ParserState::new(tokens.len());
    let mut nodes: Vec<(Label, Vec<Node>)> = Vec::new();
    let mut root = None;
    for (position, action) in actions.iter().enumerate() {
        state
            .apply(action)
            .map_err(|kind| TransitionError { position, kind })?;
        match action {
            Action::Open(l) => nodes.push((l.clone(), Vec::new())),
            Action::Shift => {
                let leaf = Node::Leaf(state.cursor() - 1);
                nodes.last_mut().expect("validated").1.push(leaf);
            }
            Action::Reduce => {
                let (label, children) = nodes.pop().expect("validated");
                let node = Node::labeled(label, children);
                match nodes.last_mut() {
                    Some(parent) => parent.1.push(node),
                    None => root = Some(node),
                }
            }
            Action::Pad => unreachable!("rejected by apply"),
        }
    }
    let root = root.ok_or(TransitionError {
        position: actions.len(),
        kind: InvalidAction::Incomplete,
    })?;
    Ok(ParseTree::new(tokens.to_vec(), root).expect("transition system only builds valid trees"))
}
