//! Exact-match and oracle accuracy.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use serde::Serialize;
use topparse::parser::BeamSet;
use topparse::rerank::oracle_at_k;
use topparse::Corpus;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: String,
    pub total: usize,
    pub correct: usize,
    /// `(k, utterances with gold in the top k)` for k = 2..=beam width.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub oracle: Vec<(usize, usize)>,
}

pub fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

impl EvalRow {
    pub fn accuracy(&self) -> f64 {
        percent(self.correct, self.total)
    }

    pub fn oracle_accuracy(&self, k: usize) -> Option<f64> {
        if k == 1 {
            return Some(self.accuracy());
        }
        self.oracle
            .iter()
            .find(|(j, _)| *j == k)
            .map(|(_, c)| percent(*c, self.total))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
}

impl EvalSummary {
    pub fn row(&self, method: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Aligned table with accuracies as percentages to two decimals.
    pub fn table(&self) -> String {
        let max_k = self
            .rows
            .iter()
            .flat_map(|r| r.oracle.iter().map(|(k, _)| *k))
            .max()
            .unwrap_or(1);
        let mut header = vec!["method".to_string(), "exact".to_string()];
        header.extend((2..=max_k).map(|k| format!("oracle@{k}")));
        let mut lines = vec![header];
        for r in &self.rows {
            let mut cells = vec![r.method.clone(), format!("{:.2}", r.accuracy())];
            for k in 2..=max_k {
                cells.push(
                    r.oracle_accuracy(k)
                        .map(|a| format!("{a:.2}"))
                        .unwrap_or_else(|| "-".into()),
                );
            }
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let mut s = format!("{:<w$}", l[0], w = widths[0]);
            for (c, w) in l.iter().zip(&widths).skip(1) {
                s.push_str(&format!("  {c:>w$}"));
            }
            out.push_str(s.trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut rows = Vec::new();
        for r in &self.rows {
            let mut obj = serde_json::Map::new();
            obj.insert("method".into(), r.method.clone().into());
            obj.insert("total".into(), r.total.into());
            obj.insert("correct".into(), r.correct.into());
            obj.insert("accuracy".into(), format!("{:.2}", r.accuracy()).into());
            let oracle: serde_json::Map<String, serde_json::Value> = r
                .oracle
                .iter()
                .map(|(k, _)| {
                    (
                        k.to_string(),
                        format!("{:.2}", r.oracle_accuracy(*k).unwrap()).into(),
                    )
                })
                .collect();
            if !oracle.is_empty() {
                obj.insert("oracle".into(), oracle.into());
            }
            rows.push(serde_json::Value::Object(obj));
        }
        serde_json::to_string_pretty(&rows).expect("summary serializes")
    }
}

fn check_ids<'a>(gold: &Corpus, ids: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ids {
        if gold.get(id).is_none() {
            bail!("{what} contain `{id}`, which is not in the gold corpus");
        }
        *seen.entry(id).or_insert(0) += 1;
        if seen[id] > 1 {
            bail!("{what} contain `{id}` twice");
        }
    }
    if seen.len() != gold.len() {
        let missing = gold
            .iter()
            .find(|e| !seen.contains_key(e.id.as_str()))
            .expect("some id missing");
        bail!("{what} have no entry for `{}`", missing.id);
    }
    Ok(())
}

pub fn evaluate_predictions(method: &str, gold: &Corpus, pred: &Corpus) -> Result<EvalRow> {
    check_ids(gold, pred.iter().map(|e| e.id.as_str()), "predictions")?;
    let mut correct = 0;
    for e in pred {
        let g = gold.get(&e.id).expect("ids checked");
        if g.tokens() != e.tree.tokens() {
            bail!("utterance `{}`: predicted tokens differ from gold", e.id);
        }
        correct += usize::from(*g == e.tree);
    }
    Ok(EvalRow {
        method: method.to_string(),
        total: gold.len(),
        correct,
        oracle: Vec::new(),
    })
}

/// Top-1 accuracy plus oracle@k for every k up to the widest beam.
pub fn evaluate_beams(method: &str, gold: &Corpus, beams: &[BeamSet]) -> Result<EvalRow> {
    check_ids(gold, beams.iter().map(|b| b.id.as_str()), "beams")?;
    let max_k = beams.iter().map(|b| b.hypotheses.len()).max().unwrap_or(1);
    let mut hits = vec![0usize; max_k + 1];
    for b in beams {
        let g = gold.get(&b.id).expect("ids checked");
        if g.tokens() != b.tokens.as_slice() {
            bail!("beam `{}`: tokens differ from gold", b.id);
        }
        for (k, h) in hits.iter_mut().enumerate().skip(1) {
            *h += usize::from(oracle_at_k(b, g, k));
        }
    }
    Ok(EvalRow {
        method: method.to_string(),
        total: gold.len(),
        correct: hits[1],
        oracle: (2..=max_k).map(|k| (k, hits[k])).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use topparse::{parse_bracketed, CorpusEntry};

    fn corpus(items: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            items
                .iter()
                .map(|(id, t)| CorpusEntry {
                    id: id.to_string(),
                    tree: parse_bracketed(t).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn accuracy_cases() {
        let gold = corpus(&[
            ("a", "[IN:X a ]"),
            ("b", "[IN:X b ]"),
            ("c", "[IN:X c ]"),
            ("d", "[IN:X d ]"),
        ]);
        let all = evaluate_predictions("m", &gold, &gold).unwrap();
        assert_eq!(format!("{:.2}", all.accuracy()), "100.00");
        let half = corpus(&[
            ("a", "[IN:X a ]"),
            ("b", "[IN:Y b ]"),
            ("c", "[IN:X c ]"),
            ("d", "[IN:Y d ]"),
        ]);
        let r = evaluate_predictions("m", &gold, &half).unwrap();
        assert_eq!(format!("{:.2}", r.accuracy()), "50.00");
        let short = corpus(&[("a", "[IN:X a ]")]);
        assert!(evaluate_predictions("m", &gold, &short).is_err());
        let wrong = corpus(&[
            ("a", "[IN:X a ]"),
            ("b", "[IN:X b ]"),
            ("c", "[IN:X c ]"),
            ("e", "[IN:X d ]"),
        ]);
        assert!(evaluate_predictions("m", &gold, &wrong).is_err());
    }

    #[test]
    fn table_layout() {
        let s = EvalSummary {
            rows: vec![
                EvalRow {
                    method: "parser-0".into(),
                    total: 3,
                    correct: 1,
                    oracle: vec![(2, 2), (3, 3)],
                },
                EvalRow {
                    method: "ensemble".into(),
                    total: 3,
                    correct: 2,
                    oracle: vec![],
                },
            ],
        };
        let t = s.table();
        assert!(t.starts_with("method"));
        assert!(t.contains("33.33") && t.contains("66.67") && t.contains("100.00"));
        assert!(s.to_json().contains("\"accuracy\": \"66.67\""));
    }
}
