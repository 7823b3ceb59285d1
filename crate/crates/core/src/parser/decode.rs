use std::cmp::Ordering;

use super::model::Scorer;
use super::{BeamSet, DecodeError, Hypothesis, ParserInput};
use crate::transitions::{Action, ActionSequence, ParserState};

#[derive(Clone, Debug)]
struct Item {
    state: ParserState,
    actions: Vec<Action>,
    score: f64,
    on_gold: bool,
}

struct Candidate {
    score: f64,
    parent: usize,
    /// `None` carries a finished hypothesis over unchanged.
    action: Option<Action>,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| match (&a.action, &b.action) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => x.cmp(y),
        })
        .then_with(|| a.parent.cmp(&b.parent))
}

fn step_limit(n: usize, max_depth: usize) -> usize {
    // every constituent covers >= 1 token and each token has <= max_depth ancestors
    let opens = n.saturating_mul(max_depth);
    n.saturating_add(opens.saturating_mul(2))
}

/// Result of a gold-tracking beam search used by early-update training.
pub(crate) enum GoldSearch {
    /// Gold fell off the beam; `gold_len` actions of gold vs the beam's best.
    Violation { gold_len: usize, best: Vec<Action> },
    /// Search completed with gold still in the beam.
    Finished { best: Vec<Action> },
}

enum Outcome {
    Done(Vec<Item>),
    Violation { gold_len: usize, best: Vec<Action> },
}

fn search<S: Scorer + ?Sized>(
    scorer: &S,
    input: &ParserInput<'_>,
    k: usize,
    gold: Option<&[Action]>,
) -> Result<Outcome, DecodeError> {
    assert!(k >= 1, "beam width must be positive");
    let prepared = scorer.prepare(input)?;
    let n = input.tokens.len();
    let mut beam = vec![Item {
        state: ParserState::with_max_depth(n, scorer.max_depth()),
        actions: Vec::new(),
        score: 0.0,
        on_gold: gold.is_some(),
    }];
    let limit = step_limit(n, scorer.max_depth());
    for step in 0.. {
        if beam.iter().all(|h| h.state.is_complete()) {
            break;
        }
        if step > limit {
            return Err(DecodeError::StepLimit(limit));
        }
        let mut candidates = Vec::new();
        for (parent, item) in beam.iter().enumerate() {
            if item.state.is_complete() {
                candidates.push(Candidate {
                    score: item.score,
                    parent,
                    action: None,
                });
                continue;
            }
            let scored = scorer.score_valid(&item.state, &prepared, &item.actions);
            if scored.is_empty() {
                return Err(DecodeError::Stuck { step });
            }
            candidates.extend(scored.into_iter().map(|(a, lp)| Candidate {
                score: item.score + lp,
                parent,
                action: Some(a),
            }));
        }
        candidates.sort_by(candidate_order);
        candidates.truncate(k);
        let next: Vec<Item> = candidates
            .into_iter()
            .map(|c| {
                let parent = &beam[c.parent];
                match c.action {
                    None => parent.clone(),
                    Some(action) => {
                        let mut state = parent.state.clone();
                        state
                            .apply(&action)
                            .expect("scorer only proposes valid actions");
                        let on_gold = parent.on_gold
                            && gold.is_some_and(|g| g.get(parent.actions.len()) == Some(&action));
                        let mut actions = parent.actions.clone();
                        actions.push(action);
                        Item {
                            state,
                            actions,
                            score: c.score,
                            on_gold,
                        }
                    }
                }
            })
            .collect();
        beam = next;
        if let Some(g) = gold {
            if !beam.iter().any(|h| h.on_gold) {
                return Ok(Outcome::Violation {
                    gold_len: (step + 1).min(g.len()),
                    best: beam[0].actions.clone(),
                });
            }
        }
    }
    Ok(Outcome::Done(beam))
}

/// k-best decoding. Finished hypotheses stay in the beam at their final
/// score until every survivor has finished.
pub fn decode_beam<S: Scorer + ?Sized>(
    scorer: &S,
    input: &ParserInput<'_>,
    k: usize,
) -> Result<BeamSet, DecodeError> {
    let Outcome::Done(items) = search(scorer, input, k, None)? else {
        unreachable!("no gold sequence supplied");
    };
    let n = input.tokens.len();
    let hypotheses = items
        .into_iter()
        .map(|item| Hypothesis::new(ActionSequence::new(item.actions, n), item.score))
        .collect();
    Ok(BeamSet {
        id: input.id.to_string(),
        tokens: input.tokens.to_vec(),
        k,
        hypotheses,
    })
}

/// Repeatedly takes the highest-scoring valid action; ties go to the
/// earliest action in `SHIFT < REDUCE < OPEN(label)` order.
pub fn decode_greedy<S: Scorer + ?Sized>(
    scorer: &S,
    input: &ParserInput<'_>,
) -> Result<Hypothesis, DecodeError> {
    let prepared = scorer.prepare(input)?;
    let n = input.tokens.len();
    let mut state = ParserState::with_max_depth(n, scorer.max_depth());
    let mut actions = Vec::new();
    let mut score = 0.0;
    let limit = step_limit(n, scorer.max_depth());
    while !state.is_complete() {
        if actions.len() > limit {
            return Err(DecodeError::StepLimit(limit));
        }
        let scored = scorer.score_valid(&state, &prepared, &actions);
        let mut best: Option<(Action, f64)> = None;
        for (a, lp) in scored {
            if best.as_ref().is_none_or(|(_, b)| lp > *b) {
                best = Some((a, lp));
            }
        }
        let (action, lp) = best.ok_or(DecodeError::Stuck {
            step: actions.len(),
        })?;
        state
            .apply(&action)
            .expect("scorer only proposes valid actions");
        score += lp;
        actions.push(action);
    }
    Ok(Hypothesis::new(ActionSequence::new(actions, n), score))
}

pub(crate) fn gold_search<S: Scorer + ?Sized>(
    scorer: &S,
    input: &ParserInput<'_>,
    k: usize,
    gold: &[Action],
) -> Result<GoldSearch, DecodeError> {
    Ok(match search(scorer, input, k, Some(gold))? {
        Outcome::Done(items) => GoldSearch::Finished {
            best: items.into_iter().next().expect("beam is non-empty").actions,
        },
        Outcome::Violation { gold_len, best } => GoldSearch::Violation { gold_len, best },
    })
}
