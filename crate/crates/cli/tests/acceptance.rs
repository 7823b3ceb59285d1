//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use topparse::ensemble::{combine, EnsembleInput, Strategy, SwitchOptions};
use topparse::error_analysis::{classify, ErrorTag};
use topparse::parser::{
    decode_beam, extract_features, step_scores, ParserInput, Scorer, ScorerModel,
};
use topparse::rerank::{
    deserialize, rerank, serialize, train_ranker, NGramLm, RankerConfig, BOS, EOS,
};
use topparse::synth::{random_tree, RandomTreeConfig, RankingSuite, SyntheticGrammar};
use topparse::transitions::ParserState;
use topparse::{
    actions_to_tree, parse_bracketed, tree_to_actions, Action, ActionSequence, Label, ParseTree,
};
use topparse_cli::{run_pipeline, PipelineConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    if ok {
        Ok(detail.into())
    } else {
        Err(detail.into())
    }
}

fn coffee_shop() -> Outcome {
    const TREE: &str = "[IN:GET_DISTANCE How far is [SL:DESTINATION [IN:GET_RESTAURANT_LOCATION the [SL:TYPE_FOOD coffee ] shop ] ] ]";
    const TABLE: [&str; 14] = [
        "OPEN(IN:GET_DISTANCE)",
        "SHIFT",
        "SHIFT",
        "SHIFT",
        "OPEN(SL:DESTINATION)",
        "OPEN(IN:GET_RESTAURANT_LOCATION)",
        "SHIFT",
        "OPEN(SL:TYPE_FOOD)",
        "SHIFT",
        "REDUCE",
        "SHIFT",
        "REDUCE",
        "REDUCE",
        "REDUCE",
    ];
    let tree = parse_bracketed(TREE).map_err(|e| e.to_string())?;
    let seq = tree_to_actions(&tree);
    let got: Vec<String> = seq.actions.iter().map(ToString::to_string).collect();
    if got != TABLE {
        return Err(format!("got {}", seq));
    }
    let back = actions_to_tree(&seq, tree.tokens()).map_err(|e| e.to_string())?;
    check(back == tree, "14-step table reproduced and inverted")
}

fn round_trips() -> Outcome {
    let cfg = RandomTreeConfig::with_counts(12, 3, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    let mut max_labels = 0;
    for _ in 0..10_000 {
        let t = random_tree(&mut rng, &cfg);
        max_labels = max_labels.max(t.labels().into_iter().collect::<BTreeSet<_>>().len());
        let bracket_ok = parse_bracketed(&t.to_string()).is_ok_and(|b| b == t);
        let seq = tree_to_actions(&t);
        let action_ok = ActionSequence::parse(&seq.to_string(), t.len())
            .ok()
            .and_then(|s| actions_to_tree(&s, t.tokens()).ok())
            .is_some_and(|b| b == t);
        let ser_ok = deserialize(serialize(&t).tokens()).is_ok_and(|b| b == t);
        let shape_ok = t.len() <= 12 && t.depth() <= 5;
        failures += usize::from(!(bracket_ok && action_ok && ser_ok && shape_ok));
    }
    check(
        failures == 0 && max_labels <= 6,
        format!("10000 trees, {failures} failures, at most {max_labels} distinct labels"),
    )
}

fn kendrick() -> Outcome {
    let t = parse_bracketed(
        "[IN:GET_EVENT [SL:CATEGORY_EVENT Concerts ] by [SL:NAME_EVENT Kendrick Lamar ] ]",
    )
    .map_err(|e| e.to_string())?;
    let want = "O_IN_GET_EVENT O_SL_CATEGORY_EVENT Concerts C_SL_CATEGORY_EVENT by O_SL_NAME_EVENT Kendrick Lamar C_SL_NAME_EVENT C_IN_GET_EVENT";
    let got = serialize(&t).to_string();
    check(got == want, format!("serialized to `{got}`"))
}

fn taxonomy() -> Outcome {
    use ErrorTag::*;
    // (gold, predicted, tags that must appear, whether the set must be exactly those)
    let fixtures: [(&str, &str, &[ErrorTag], bool); 7] = [
        (
            "[IN:GET_INFO_TRAFFIC how many miles is [SL:LOCATION [IN:GET_LOCATION [SL:CATEGORY_LOCATION the interstate ] ] ] backed up ]",
            "[IN:GET_DISTANCE how many [SL:UNIT_DISTANCE miles ] is [SL:DESTINATION [IN:GET_LOCATION [SL:CATEGORY_LOCATION the interstate ] ] ] backed up ]",
            &[WT],
            false,
        ),
        (
            "[IN:GET_INFO_TRAFFIC should i avoid [SL:PATH_AVOID i - 26 ] [SL:DATE_TIME today ] ]",
            "[IN:GET_INFO_TRAFFIC should i avoid [SL:LOCATION i - 26 ] [SL:DATE_TIME today ] ]",
            &[WL],
            true,
        ),
        (
            "[IN:GET_ESTIMATED_DEPARTURE do i need to leave earlier [SL:DATE_TIME_DEPARTURE today ] due to traffic ]",
            "[IN:GET_ESTIMATED_DEPARTURE do i need to leave [SL:SOURCE earlier ] [SL:DATE_TIME_DEPARTURE today ] due to traffic ]",
            &[SS],
            false,
        ),
        (
            "[IN:GET_INFO_TRAFFIC what is traffic like in [SL:LOCATION still water ] [SL:DATE_TIME at the moment ] ]",
            "[IN:GET_INFO_TRAFFIC what is traffic like in still water [SL:DATE_TIME at the moment ] ]",
            &[MS],
            true,
        ),
        (
            "[IN:GET_EVENT when is [SL:CATEGORY_EVENT christmas in the park ] [SL:DATE_TIME this year ] in [SL:LOCATION san antonio tx ] ]",
            "[IN:GET_EVENT when is [SL:DATE_TIME christmas ] in [SL:LOCATION [IN:GET_LOCATION [SL:CATEGORY_LOCATION the park ] ] ] [SL:DATE_TIME this year ] in [SL:LOCATION san antonio tx ] ]",
            &[WS],
            false,
        ),
        (
            "[IN:GET_EVENT [SL:LOCATION dayton ] [SL:CATEGORY_EVENT parties ] [SL:DATE_TIME for nye ] ]",
            "[IN:GET_EVENT [SL:CATEGORY_EVENT dayton parties ] [SL:DATE_TIME for nye ] ]",
            &[WJ],
            true,
        ),
        (
            "[IN:GET_EVENT whats [SL:DATE_TIME tomorrows ] events for [SL:LOCATION houston ] ]",
            "[IN:GET_EVENT whats [SL:CATEGORY_EVENT tomorrows events ] for [SL:LOCATION houston ] ]",
            &[BB],
            false,
        ),
    ];
    let mut found = Vec::new();
    for (i, (g, p, want, exact)) in fixtures.iter().enumerate() {
        let g = parse_bracketed(g).map_err(|e| format!("item {}: {e}", i + 1))?;
        let p = parse_bracketed(p).map_err(|e| format!("item {}: {e}", i + 1))?;
        let tags = classify(&g, &p).map_err(|e| e.to_string())?.tags();
        let want: BTreeSet<ErrorTag> = want.iter().copied().collect();
        let ok = if *exact {
            tags == want
        } else {
            want.is_subset(&tags)
        };
        let names: Vec<&str> = tags.iter().map(|t| t.as_str()).collect();
        if !ok {
            return Err(format!("item {} tagged {{{}}}", i + 1, names.join(",")));
        }
        found.push(format!("{}:{{{}}}", i + 1, names.join(",")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let generated = SyntheticGrammar::default().corpus(4, 2000, "g");
    let random: Vec<ParseTree> = (0..2000)
        .map(|_| random_tree(&mut rng, &RandomTreeConfig::with_counts(12, 3, 3, 5)))
        .collect();
    for t in generated.trees().chain(&random) {
        if !classify(t, t).map_err(|e| e.to_string())?.is_empty() {
            return Err(format!("classify(t, t) not empty for {t}"));
        }
    }
    check(
        true,
        format!("{}; 4000 self-comparisons empty", found.join(" ")),
    )
}

fn same_length_tree(rng: &mut ChaCha8Rng, cfg: &RandomTreeConfig, tokens: &[String]) -> ParseTree {
    loop {
        let t = random_tree(rng, cfg);
        if t.len() == tokens.len() {
            return ParseTree::new(tokens.to_vec(), t.root().clone()).expect("same length");
        }
    }
}

fn ensemble_laws() -> Outcome {
    let cfg = RandomTreeConfig::with_counts(6, 2, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let strategies: Vec<(String, Strategy, SwitchOptions)> = vec![
        (
            "majority".into(),
            Strategy::Majority,
            SwitchOptions::default(),
        ),
        (
            "greedy-action".into(),
            Strategy::GreedyAction,
            SwitchOptions::default(),
        ),
        (
            "parser-switch".into(),
            Strategy::ParserSwitch,
            SwitchOptions { include_self: true },
        ),
        (
            "parser-switch/no-self".into(),
            Strategy::ParserSwitch,
            SwitchOptions {
                include_self: false,
            },
        ),
        ("oracle".into(), Strategy::Oracle, SwitchOptions::default()),
    ];
    let mut correct = vec![0usize; strategies.len()];
    let mut parser_correct = [0usize; 7];
    let mut violations = Vec::new();
    let mut unanimous = 0;
    for f in 0..1000 {
        let gold = random_tree(&mut rng, &cfg);
        let pool: Vec<ParseTree> = (0..3)
            .map(|_| same_length_tree(&mut rng, &cfg, gold.tokens()))
            .collect();
        let all_same = rng.gen_bool(0.1);
        let p_gold = rng.gen_range(0.0..1.0);
        let trees: Vec<ParseTree> = (0..7)
            .map(|_| {
                if rng.gen_bool(p_gold) {
                    gold.clone()
                } else {
                    pool.choose(&mut rng).unwrap().clone()
                }
            })
            .collect();
        let trees = if all_same {
            vec![trees[0].clone(); 7]
        } else {
            trees
        };
        let seqs: Vec<ActionSequence> = trees.iter().map(tree_to_actions).collect();
        let input = EnsembleInput::new(format!("f{f}"), gold.tokens().to_vec(), seqs.clone())
            .map_err(|e| e.to_string())?;
        let is_unanimous = seqs.iter().all(|s| *s == seqs[0]);
        unanimous += usize::from(is_unanimous);
        for (p, t) in trees.iter().enumerate() {
            parser_correct[p] += usize::from(*t == gold);
        }
        let any_correct = trees.contains(&gold);
        for (i, (name, strategy, switch)) in strategies.iter().enumerate() {
            let d = combine(&input, *strategy, Some(&gold), *switch).expect("gold supplied");
            if !seqs.contains(&d.actions) {
                violations.push(format!("fixture {f}: {name} output not an input"));
            }
            if is_unanimous && d.actions != seqs[0] {
                violations.push(format!("fixture {f}: {name} broke unanimity"));
            }
            let hit = d.actions == tree_to_actions(&gold);
            if *strategy == Strategy::Oracle && hit != any_correct {
                violations.push(format!("fixture {f}: oracle missed a correct parser"));
            }
            correct[i] += usize::from(hit);
        }
    }
    let oracle = correct[strategies.len() - 1];
    for (i, (name, _, _)) in strategies.iter().enumerate() {
        if correct[i] > oracle {
            violations.push(format!("{name} beats the oracle"));
        }
    }
    if parser_correct.iter().any(|c| *c > oracle) {
        violations.push("a single parser beats the oracle".into());
    }
    let summary: Vec<String> = strategies
        .iter()
        .zip(&correct)
        .map(|((n, _, _), c)| format!("{n}={c}"))
        .collect();
    check(
        violations.is_empty(),
        format!(
            "1000 fixtures ({unanimous} unanimous), correct: {}, best parser={}; {} violations{}",
            summary.join(" "),
            parser_correct.iter().max().unwrap(),
            violations.len(),
            violations
                .first()
                .map(|v| format!(", first: {v}"))
                .unwrap_or_default()
        ),
    )
}

/// Every complete action sequence with its summed step score.
fn enumerate(
    model: &ScorerModel,
    tokens: &[String],
    max_depth: usize,
) -> Vec<(ActionSequence, f64)> {
    let input = ParserInput::new(tokens);
    let mut out = Vec::new();
    let mut stack = vec![(
        ParserState::with_max_depth(tokens.len(), max_depth),
        Vec::<Action>::new(),
        0.0,
    )];
    while let Some((state, prev, score)) = stack.pop() {
        if state.is_complete() {
            out.push((
                ActionSequence {
                    actions: prev,
                    n: tokens.len(),
                },
                score,
            ));
            continue;
        }
        for (a, s) in step_scores(model, &state, &input, &prev).expect("non-terminal") {
            let mut next = state.clone();
            next.apply(&a).expect("scored actions are valid");
            let mut p = prev.clone();
            p.push(a);
            stack.push((next, p, score + s));
        }
    }
    out
}

fn random_model(
    rng: &mut ChaCha8Rng,
    labels: Vec<Label>,
    tokens: &[String],
    max_depth: usize,
) -> ScorerModel {
    let mut model = ScorerModel::new(labels).with_max_depth(max_depth);
    let mut stack = vec![(
        ParserState::with_max_depth(tokens.len(), max_depth),
        Vec::<Action>::new(),
    )];
    while let Some((state, prev)) = stack.pop() {
        if state.is_complete() {
            continue;
        }
        let actions = state.valid_actions().expand(model.labels());
        for f in extract_features(&state, tokens, &prev) {
            for a in &actions {
                if model.weight(f, a) == 0.0 {
                    model.set_weight(f, a, rng.gen_range(-3.0..3.0));
                }
            }
        }
        for a in actions {
            let mut next = state.clone();
            next.apply(&a).expect("valid");
            let mut p = prev.clone();
            p.push(a);
            stack.push((next, p));
        }
    }
    model
}

fn decoding_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let extra: Vec<Label> = ["IN:B", "SL:C", "SL:D"]
        .iter()
        .map(|l| l.parse().unwrap())
        .collect();
    let words = ["play", "the", "song"];
    let mut total_trees = 0;
    for setting in 0..100 {
        let n = rng.gen_range(1..=3);
        let tokens: Vec<String> = words[..n].iter().map(|w| w.to_string()).collect();
        let mut labels = vec!["IN:A".parse::<Label>().unwrap()];
        let count = rng.gen_range(0..=2);
        labels.extend(extra.choose_multiple(&mut rng, count).cloned());
        let max_depth = rng.gen_range(1..=3);
        let model = random_model(&mut rng, labels, &tokens, max_depth);
        let mut expected = enumerate(&model, &tokens, max_depth);
        expected.sort_by(|a, b| b.1.total_cmp(&a.1));
        total_trees += expected.len();
        let beam = decode_beam(&model, &ParserInput::new(&tokens), expected.len())
            .map_err(|e| e.to_string())?;
        let got: Vec<&ActionSequence> = beam.hypotheses.iter().map(|h| &h.actions).collect();
        let want: Vec<&ActionSequence> = expected.iter().map(|(s, _)| s).collect();
        let scores_ok = beam
            .hypotheses
            .iter()
            .zip(&expected)
            .all(|(h, (_, s))| (h.model_score - s).abs() < 1e-9);
        if got != want || !scores_ok {
            return Err(format!(
                "setting {setting}: {} tokens, depth {max_depth}: beam order differs from enumeration ({} trees)",
                n,
                expected.len()
            ));
        }
    }
    check(
        true,
        format!("100 weight settings, {total_trees} trees, orderings identical"),
    )
}

fn ranking_suite(vote_signal: bool) -> Result<f64, String> {
    let suite = RankingSuite::generate(if vote_signal { 12 } else { 11 }, 300, 5, vote_signal);
    let lm = topparse::rerank::train_lm(&suite.lm_corpus, 3).map_err(|e| e.to_string())?;
    let cfg = RankerConfig {
        use_votes: vote_signal,
        ..RankerConfig::default()
    };
    let model = train_ranker(&suite.beams[..200], &suite.golds[..200], &lm, &cfg)
        .map_err(|e| e.to_string())?;
    let mut hits = 0;
    for (b, g) in suite.beams[200..].iter().zip(&suite.golds[200..]) {
        let r = rerank(b, &model, &lm).map_err(|e| e.to_string())?;
        hits += usize::from(r.top_tree() == *g);
    }
    Ok(100.0 * hits as f64 / 100.0)
}

fn pipeline_config(run_dir: &Path) -> PipelineConfig {
    PipelineConfig {
        run_dir: Some(run_dir.to_path_buf()),
        synth_train: 2000,
        synth_test: 500,
        m: 7,
        epochs: 5,
        ..PipelineConfig::default()
    }
}

fn end_to_end(run_dir: &Path) -> Outcome {
    let start = Instant::now();
    let outcome = run_pipeline(&pipeline_config(run_dir)).map_err(|e| format!("{e:#}"))?;
    let elapsed = start.elapsed();
    let s = &outcome.summary;
    let mut problems = Vec::new();
    let parsers: Vec<_> = (0..7)
        .map(|i| s.row(&format!("parser-{i}")).expect("parser row"))
        .collect();
    for p in &parsers {
        let (top1, o2, o5) = (
            p.accuracy(),
            p.oracle_accuracy(2).unwrap_or(0.0),
            p.oracle_accuracy(5).unwrap_or(0.0),
        );
        if !(o5 >= o2 && o2 >= top1) {
            problems.push(format!(
                "{}: oracle@5 {o5:.2}, oracle@2 {o2:.2}, top-1 {top1:.2}",
                p.method
            ));
        }
    }
    let mean = parsers.iter().map(|p| p.accuracy()).sum::<f64>() / parsers.len() as f64;
    let ens = s.row("ensemble").expect("ensemble row").accuracy();
    let ext = s.row("rerank-extended").expect("extended row").accuracy();
    if ens < mean {
        problems.push(format!(
            "majority ensemble {ens:.2} below mean parser {mean:.2}"
        ));
    }
    if ext < ens - 0.5 {
        problems.push(format!(
            "extended re-ranked ensemble {ext:.2} below ensemble {ens:.2} - 0.5"
        ));
    }
    let lm_suite = ranking_suite(false)?;
    let vote_suite = ranking_suite(true)?;
    if lm_suite < 100.0 || vote_suite < 100.0 {
        problems.push(format!("ranking suites {lm_suite:.2} / {vote_suite:.2}"));
    }
    if elapsed > Duration::from_secs(600) {
        problems.push(format!("pipeline took {:.0}s", elapsed.as_secs_f64()));
    }
    let detail =
        format!(
        "mean parser {mean:.2}, majority ensemble {ens:.2}, extended re-ranked ensemble {ext:.2}, \
         ranking suites {lm_suite:.2}/{vote_suite:.2}, pipeline {:.1}s{}",
        elapsed.as_secs_f64(),
        if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
    );
    check(problems.is_empty(), detail)
}

fn lm_fixture() -> Outcome {
    let seqs = |xs: &[&str]| -> Vec<Vec<String>> {
        xs.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    };
    let lm = NGramLm::train(&seqs(&["a b", "a c", "b"]), 2).map_err(|e| e.to_string())?;
    // Unigram over {a, b, c, </s>, <unk>}: counts 2, 2, 1, 3, 0 of 8 tokens, 4 types,
    // interpolated with uniform 1/5: (c + 4/5) / 12.
    let p1 = |c: f64| (c + 0.8) / 12.0;
    let cases: [(&str, &str, f64); 9] = [
        ("a", BOS, (2.0 + 2.0 * p1(2.0)) / 5.0),
        ("b", BOS, (1.0 + 2.0 * p1(2.0)) / 5.0),
        ("c", BOS, (2.0 * p1(1.0)) / 5.0),
        ("b", "a", (1.0 + 2.0 * p1(2.0)) / 4.0),
        ("c", "a", (1.0 + 2.0 * p1(1.0)) / 4.0),
        (EOS, "a", (2.0 * p1(3.0)) / 4.0),
        (EOS, "b", (2.0 + p1(3.0)) / 3.0),
        ("a", "b", p1(2.0) / 3.0),
        (EOS, "c", (1.0 + p1(3.0)) / 2.0),
    ];
    let mut worst: f64 = 0.0;
    for (w, h, want) in cases {
        worst = worst.max((lm.prob(w, &[h]) - want).abs());
    }
    let mut worst_sum: f64 = 0.0;
    let corpora = [
        seqs(&["a b", "a c", "b"]),
        seqs(&["a b c a", "b b a", "c a b c d", "a"]),
    ];
    for data in &corpora {
        for order in 1..=4 {
            let lm = NGramLm::train(data, order).map_err(|e| e.to_string())?;
            let vocab: Vec<&str> = lm.vocab().collect();
            let mut contexts = lm.observed_contexts();
            contexts.push(vec!["unseen", "context"]);
            for ctx in contexts {
                let sum: f64 = vocab.iter().map(|w| lm.prob(w, &ctx)).sum();
                worst_sum = worst_sum.max((sum - 1.0).abs());
            }
        }
    }
    check(
        worst < 1e-9 && worst_sum < 1e-9,
        format!("max bigram error {worst:.1e}, max |sum - 1| {worst_sum:.1e}"),
    )
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable run dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(
                    path.strip_prefix(root)
                        .unwrap()
                        .to_string_lossy()
                        .into_owned(),
                );
            }
        }
    }
    out.sort();
    out
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    if !first.join("reports/eval.txt").exists() {
        return Err("first pipeline run did not complete".into());
    }
    run_pipeline(&pipeline_config(second)).map_err(|e| format!("{e:#}"))?;
    let a = files_under(first);
    let b = files_under(second);
    if a != b {
        return Err("runs produced different file sets".into());
    }
    let mut compared = 0;
    for rel in a.iter().filter(|r| r.as_str() != "config.json") {
        let (x, y) = (
            std::fs::read(first.join(rel)).unwrap(),
            std::fs::read(second.join(rel)).unwrap(),
        );
        if x != y {
            return Err(format!("{rel} differs between runs"));
        }
        compared += 1;
    }
    let kinds = ["models/", "beams/", "predictions/", "reports/"];
    let covered = kinds.iter().all(|k| a.iter().any(|r| r.starts_with(k)));
    check(
        covered,
        format!("{compared} artifacts byte-identical across two runs"),
    )
}

fn main() {
    let tmp = tempfile::TempDir::new().expect("temp dir");
    let (run_a, run_b) = (tmp.path().join("run-a"), tmp.path().join("run-b"));
    type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("coffee shop action table", Box::new(coffee_shop)),
        ("round trips on 10000 random trees", Box::new(round_trips)),
        ("serialization fixture", Box::new(kendrick)),
        ("error taxonomy fixtures", Box::new(taxonomy)),
        ("ensemble laws", Box::new(ensemble_laws)),
        ("small-instance decoding oracle", Box::new(decoding_oracle)),
        (
            "synthetic end-to-end gains",
            Box::new(|| end_to_end(&run_a)),
        ),
        ("Witten-Bell LM", Box::new(lm_fixture)),
        (
            "pipeline determinism",
            Box::new(|| determinism(&run_a, &run_b)),
        ),
    ];
    let limits = [
        Some(1.0),
        Some(30.0),
        None,
        None,
        None,
        None,
        Some(600.0),
        None,
        None,
    ];
    let mut failed = 0;
    for ((i, (name, f)), limit) in criteria.into_iter().enumerate().zip(limits) {
        let start = Instant::now();
        let mut result = f();
        let secs = start.elapsed().as_secs_f64();
        if let (Ok(detail), Some(limit)) = (&result, limit) {
            if secs >= limit {
                result = Err(format!("{detail}; took {secs:.2}s, limit {limit}s"));
            }
        }
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(result.is_err());
        println!("criterion {}: {tag} {name} ({secs:.2}s): {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
