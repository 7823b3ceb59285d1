//! Subcommand implementations and the stage helpers shared with the pipeline.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use topparse::ensemble::{combine, EnsembleInput, Provenance, Strategy, SwitchOptions};
use topparse::error_analysis::{compare, comparison_table, report};
use topparse::io::write_atomic;
use topparse::parser::{
    beams_to_jsonl, decode_beam, import_hypotheses, read_token_vectors, train, BeamSet,
    ParserInput, ScorerModel, TokenVectors, TrainConfig,
};
use topparse::rerank::{
    add_votes, naive_rerank, rerank as rank_beam, train_ranker as fit_ranker, NGramLm, RankModel,
    RankerConfig,
};
use topparse::synth::SyntheticGrammar;
use topparse::treebank::{
    corpus_to_jsonl, ingest_corpus, read_corpus_jsonl, IngestOptions, Strictness,
};
use topparse::{Corpus, CorpusEntry, ParseTree};

use crate::config::{component_seed, echo, require};
use crate::eval::{evaluate_beams, evaluate_predictions, EvalSummary};
use crate::{
    AnalyzeArgs, EnsembleArgs, EvaluateArgs, GenerateArgs, IngestArgs, ParseArgs, RerankArgs,
    RerankMode, TrainLmArgs, TrainParserArgs, TrainRankerArgs,
};

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    read_corpus_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn read_beams(path: &Path) -> Result<Vec<BeamSet>> {
    import_hypotheses(path).with_context(|| format!("reading hypotheses {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Checks that every parser's beams cover the same utterances in the same
/// order with the same tokens.
pub fn check_aligned(per_parser: &[Vec<BeamSet>]) -> Result<()> {
    let Some(first) = per_parser.first() else {
        bail!("no hypothesis files given");
    };
    for (p, beams) in per_parser.iter().enumerate().skip(1) {
        ensure!(
            beams.len() == first.len(),
            "hypothesis file {p} has {} utterances, file 0 has {}",
            beams.len(),
            first.len()
        );
        for (a, b) in first.iter().zip(beams) {
            ensure!(
                a.id == b.id,
                "hypothesis file {p}: utterance `{}` where file 0 has `{}`",
                b.id,
                a.id
            );
            ensure!(
                a.tokens == b.tokens,
                "hypothesis file {p}: tokens of `{}` differ from file 0",
                a.id
            );
        }
    }
    Ok(())
}

/// Decodes every utterance; utterances run in parallel, output keeps corpus order.
pub fn decode_corpus(
    model: &ScorerModel,
    corpus: &Corpus,
    k: usize,
    vectors: Option<&TokenVectors>,
) -> Result<Vec<BeamSet>> {
    ensure!(k >= 1, "beam width k must be at least 1");
    corpus
        .entries()
        .par_iter()
        .map(|e| {
            let mut input = ParserInput::new(e.tree.tokens()).with_id(&e.id);
            if let Some(v) = vectors {
                let vecs = v
                    .get(&e.id)
                    .with_context(|| format!("no token vectors for `{}`", e.id))?;
                input = input.with_vectors(vecs);
            }
            let mut beam =
                decode_beam(model, &input, k).with_context(|| format!("decoding `{}`", e.id))?;
            beam.id = e.id.clone();
            Ok(beam)
        })
        .collect()
}

/// Per-parser seeds: explicit ones (rejecting duplicates) or `m` derived from the run seed.
pub fn parser_seeds(explicit: &[u64], m: usize, run_seed: u64) -> Result<Vec<u64>> {
    if explicit.is_empty() {
        ensure!(m >= 1, "m must be at least 1");
        return Ok((0..m as u64)
            .map(|i| component_seed(run_seed, "parser", i))
            .collect());
    }
    let mut seen = BTreeSet::new();
    for s in explicit {
        ensure!(seen.insert(*s), "duplicate parser seed {s}");
    }
    Ok(explicit.to_vec())
}

/// Trains one parser per seed. Parsers train concurrently; each training
/// run is single-threaded, so models depend only on corpus and config.
pub fn train_parsers(
    corpus: &Corpus,
    vectors: Option<&TokenVectors>,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<ScorerModel>> {
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let cfg = TrainConfig {
                seed: *seed,
                ..base.clone()
            };
            train(corpus, vectors, &cfg)
                .with_context(|| format!("training parser {i} (seed {seed})"))
        })
        .collect()
}

pub fn top1_corpus(beams: &[BeamSet]) -> Result<Corpus> {
    let entries = beams
        .iter()
        .map(|b| CorpusEntry {
            id: b.id.clone(),
            tree: b.top_tree(),
        })
        .collect();
    Ok(Corpus::new(entries)?)
}

#[derive(Serialize)]
pub struct ProvenanceRecord {
    pub id: String,
    pub strategy: Strategy,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Applies `strategy` to the top hypothesis of each parser, per utterance.
pub fn ensemble_beams(
    per_parser: &[Vec<BeamSet>],
    strategy: Strategy,
    gold: Option<&Corpus>,
    switch: SwitchOptions,
) -> Result<(Corpus, Vec<ProvenanceRecord>)> {
    check_aligned(per_parser)?;
    if strategy == Strategy::Oracle && gold.is_none() {
        bail!("the oracle strategy needs a gold corpus (--gold)");
    }
    let mut entries = Vec::with_capacity(per_parser[0].len());
    let mut records = Vec::with_capacity(per_parser[0].len());
    for (u, first) in per_parser[0].iter().enumerate() {
        let sequences = per_parser
            .iter()
            .map(|beams| beams[u].top().actions.clone())
            .collect();
        let input = EnsembleInput::new(first.id.clone(), first.tokens.clone(), sequences)
            .with_context(|| format!("utterance `{}`", first.id))?;
        let gold_tree = match gold {
            Some(g) => Some(
                g.get(&first.id)
                    .with_context(|| format!("gold corpus has no `{}`", first.id))?,
            ),
            None => None,
        };
        let decision = combine(&input, strategy, gold_tree, switch).expect("gold checked above");
        let tree = topparse::actions_to_tree(&decision.actions, &first.tokens)?;
        entries.push(CorpusEntry {
            id: first.id.clone(),
            tree,
        });
        records.push(ProvenanceRecord {
            id: first.id.clone(),
            strategy,
            provenance: decision.provenance,
        });
    }
    Ok((Corpus::new(entries)?, records))
}

pub fn provenance_jsonl(records: &[ProvenanceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("provenance serializes") + "\n")
        .collect()
}

/// Adds cross-parser vote counts to every hypothesis.
pub fn annotate_votes(per_parser: &mut [Vec<BeamSet>]) -> Result<()> {
    check_aligned(per_parser)?;
    for u in 0..per_parser[0].len() {
        let mut group: Vec<BeamSet> = per_parser.iter().map(|b| b[u].clone()).collect();
        add_votes(&mut group);
        for (beams, b) in per_parser.iter_mut().zip(group) {
            beams[u] = b;
        }
    }
    Ok(())
}

/// Re-ranks each parser's beams. `Extended` annotates votes first, which
/// needs at least two parsers.
pub fn rerank_beams(
    mode: RerankMode,
    per_parser: &[Vec<BeamSet>],
    lm: &NGramLm,
    ranker: Option<&RankModel>,
    top_k: usize,
) -> Result<Vec<Vec<BeamSet>>> {
    check_aligned(per_parser)?;
    match mode {
        RerankMode::None => Ok(per_parser.to_vec()),
        RerankMode::Naive => Ok(per_parser
            .iter()
            .map(|beams| {
                beams
                    .par_iter()
                    .map(|b| naive_rerank(b, lm, top_k))
                    .collect()
            })
            .collect()),
        RerankMode::Svm | RerankMode::Extended => {
            let model = ranker
                .with_context(|| format!("{} re-ranking needs a ranker model", mode.as_str()))?;
            let mut beams = per_parser.to_vec();
            if mode == RerankMode::Extended {
                ensure!(
                    per_parser.len() >= 2,
                    "extended re-ranking needs hypothesis files from two or more parsers"
                );
                ensure!(
                    model.use_votes,
                    "extended re-ranking needs a ranker trained with votes"
                );
                annotate_votes(&mut beams)?;
            } else {
                ensure!(
                    !model.use_votes,
                    "svm re-ranking needs a ranker trained without votes"
                );
            }
            beams
                .iter()
                .map(|bs| {
                    bs.par_iter()
                        .map(|b| rank_beam(b, model, lm).map_err(anyhow::Error::from))
                        .collect()
                })
                .collect()
        }
    }
}

/// Pools beams from every parser with their gold trees and fits a ranker.
pub fn fit_ranker_on(
    per_parser: &[Vec<BeamSet>],
    gold: &Corpus,
    lm: &NGramLm,
    cfg: &RankerConfig,
) -> Result<RankModel> {
    let mut beams = per_parser.to_vec();
    if cfg.use_votes {
        ensure!(
            per_parser.len() >= 2,
            "a vote-feature ranker needs hypothesis files from two or more parsers"
        );
        annotate_votes(&mut beams)?;
    }
    let mut pooled = Vec::new();
    let mut golds: Vec<ParseTree> = Vec::new();
    for bs in beams {
        for b in bs {
            golds.push(
                gold.get(&b.id)
                    .with_context(|| format!("gold corpus has no `{}`", b.id))?
                    .clone(),
            );
            pooled.push(b);
        }
    }
    Ok(fit_ranker(&pooled, &golds, lm, cfg)?)
}

pub fn load_lm(path: &Path) -> Result<NGramLm> {
    NGramLm::load(path).with_context(|| format!("loading LM {}", path.display()))
}

fn read_all_beams(paths: &[PathBuf]) -> Result<Vec<Vec<BeamSet>>> {
    ensure!(!paths.is_empty(), "no hypothesis files given (--beams)");
    paths.iter().map(|p| read_beams(p)).collect()
}

pub fn ingest(args: &IngestArgs) -> Result<String> {
    eprintln!("{}", echo("ingest", args));
    let input = require(&args.input, "input")?;
    let output = require(&args.output, "output")?;
    let options = IngestOptions {
        filter_unsupported: args.filter_unsupported,
        strictness: if args.permissive {
            Strictness::PERMISSIVE
        } else {
            Strictness::STRICT
        },
    };
    let (corpus, stats) =
        ingest_corpus(input, options).with_context(|| format!("ingesting {}", input.display()))?;
    write_file(output, &corpus_to_jsonl(&corpus))?;
    Ok(format!(
        "kept {}, dropped {}\n",
        stats.kept, stats.dropped_unsupported
    ))
}

pub fn generate(args: &GenerateArgs) -> Result<String> {
    eprintln!("{}", echo("generate", args));
    let output = require(&args.output, "output")?;
    ensure!(
        (0.0..=1.0).contains(&args.label_noise),
        "label_noise must be in [0, 1]"
    );
    let grammar = SyntheticGrammar {
        label_noise: args.label_noise,
    };
    let corpus = grammar.corpus(args.seed, args.n, &args.prefix);
    write_file(output, &corpus_to_jsonl(&corpus))?;
    Ok(format!(
        "wrote {} trees to {}\n",
        corpus.len(),
        output.display()
    ))
}

fn read_vectors(path: Option<&Path>) -> Result<Option<TokenVectors>> {
    path.map(|p| read_token_vectors(p).with_context(|| format!("reading vectors {}", p.display())))
        .transpose()
}

pub fn train_parser(args: &TrainParserArgs) -> Result<String> {
    eprintln!("{}", echo("train-parser", args));
    let corpus = read_corpus(require(&args.train, "train")?)?;
    let out_dir = require(&args.out_dir, "out_dir")?;
    let seeds = parser_seeds(&args.seeds, args.m, args.seed)?;
    let vectors = read_vectors(args.vectors.as_deref())?;
    let base = TrainConfig {
        epochs: args.epochs,
        beam: args.beam,
        seed: 0,
        max_depth: args.max_depth,
        feature_mask: args.feature_mask,
        init_jitter: args.init_jitter,
    };
    let models = train_parsers(&corpus, vectors.as_ref(), &base, &seeds)?;
    let mut out = String::new();
    for (i, (model, seed)) in models.iter().zip(&seeds).enumerate() {
        let path = out_dir.join(format!("parser-{i}.json"));
        write_file(&path, &model.to_json())?;
        out.push_str(&format!(
            "parser {i}: seed {seed}, {} features -> {}\n",
            model.feature_count(),
            path.display()
        ));
    }
    Ok(out)
}

pub fn parse(args: &ParseArgs) -> Result<String> {
    eprintln!("{}", echo("parse", args));
    ensure!(!args.models.is_empty(), "no model files given (--model)");
    let corpus = read_corpus(require(&args.corpus, "corpus")?)?;
    let out_dir = require(&args.out_dir, "out_dir")?;
    let vectors = read_vectors(args.vectors.as_deref())?;
    let mut out = String::new();
    for path in &args.models {
        let model =
            ScorerModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
        ensure!(
            model.bucket_edges().is_some() == vectors.is_some(),
            "model {} {} token vectors, but --vectors was {}",
            path.display(),
            if model.bucket_edges().is_some() {
                "uses"
            } else {
                "does not use"
            },
            if vectors.is_some() {
                "given"
            } else {
                "not given"
            }
        );
        let beams = decode_corpus(&model, &corpus, args.k, vectors.as_ref())
            .with_context(|| format!("model {}", path.display()))?;
        let target = out_dir.join(format!("{}.jsonl", stem(path)));
        write_file(&target, &beams_to_jsonl(&beams))?;
        out.push_str(&format!(
            "{}: {} utterances -> {}\n",
            stem(path),
            beams.len(),
            target.display()
        ));
    }
    Ok(out)
}

pub fn train_lm(args: &TrainLmArgs) -> Result<String> {
    eprintln!("{}", echo("train-lm", args));
    let corpus = read_corpus(require(&args.train, "train")?)?;
    let out = require(&args.out, "out")?;
    let lm = topparse::rerank::train_lm(&corpus, args.order)?;
    write_file(out, &lm.to_json())?;
    Ok(format!(
        "order {} LM, {} word types -> {}\n",
        lm.order(),
        lm.vocab_size(),
        out.display()
    ))
}

pub fn train_ranker(args: &TrainRankerArgs) -> Result<String> {
    eprintln!("{}", echo("train-ranker", args));
    let per_parser = read_all_beams(&args.beams)?;
    let gold = read_corpus(require(&args.gold, "gold")?)?;
    let lm = load_lm(require(&args.lm, "lm")?)?;
    let out = require(&args.out, "out")?;
    let cfg = RankerConfig {
        use_votes: args.use_votes,
        seed: args.seed,
        lambda: args.lambda,
        epochs: args.epochs,
    };
    let model = fit_ranker_on(&per_parser, &gold, &lm, &cfg)?;
    write_file(out, &model.to_json())?;
    let weights: Vec<String> = model
        .feature_names()
        .iter()
        .zip(&model.weights)
        .map(|(n, w)| format!("{n}={w:.4}"))
        .collect();
    Ok(format!(
        "ranker weights: {} -> {}\n",
        weights.join(" "),
        out.display()
    ))
}

pub fn ensemble(args: &EnsembleArgs) -> Result<String> {
    eprintln!("{}", echo("ensemble", args));
    let per_parser = read_all_beams(&args.beams)?;
    let out = require(&args.out, "out")?;
    let gold = args.gold.as_deref().map(read_corpus).transpose()?;
    let switch = SwitchOptions {
        include_self: !args.exclude_self,
    };
    let (pred, records) = ensemble_beams(&per_parser, args.strategy, gold.as_ref(), switch)?;
    write_file(out, &corpus_to_jsonl(&pred))?;
    if let Some(p) = &args.provenance {
        write_file(p, &provenance_jsonl(&records))?;
    }
    Ok(format!(
        "{} over {} parsers: {} predictions -> {}\n",
        args.strategy,
        per_parser.len(),
        pred.len(),
        out.display()
    ))
}

pub fn rerank(args: &RerankArgs) -> Result<String> {
    eprintln!("{}", echo("rerank", args));
    ensure!(
        args.mode != RerankMode::None,
        "choose a re-ranking mode: naive, svm or extended"
    );
    ensure!(
        args.strategy != Strategy::Oracle,
        "the oracle strategy is not available when re-ranking"
    );
    let per_parser = read_all_beams(&args.beams)?;
    if args.mode == RerankMode::Extended {
        ensure!(
            per_parser.len() >= 2,
            "extended re-ranking needs hypothesis files from two or more parsers"
        );
    }
    let lm = load_lm(require(&args.lm, "lm")?)?;
    let out = require(&args.out, "out")?;
    let ranker = args
        .ranker
        .as_deref()
        .map(|p| RankModel::load(p).with_context(|| format!("loading ranker {}", p.display())))
        .transpose()?;
    let reranked = rerank_beams(args.mode, &per_parser, &lm, ranker.as_ref(), args.top_k)?;
    if let Some(dir) = &args.beams_out {
        for (path, beams) in args.beams.iter().zip(&reranked) {
            write_file(
                &dir.join(format!("{}.jsonl", stem(path))),
                &beams_to_jsonl(beams),
            )?;
        }
    }
    let pred = if reranked.len() == 1 {
        top1_corpus(&reranked[0])?
    } else {
        ensemble_beams(&reranked, args.strategy, None, SwitchOptions::default())?.0
    };
    write_file(out, &corpus_to_jsonl(&pred))?;
    Ok(format!(
        "{} re-ranking: {} predictions -> {}\n",
        args.mode.as_str(),
        pred.len(),
        out.display()
    ))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<String> {
    eprintln!("{}", echo("evaluate", args));
    let gold = read_corpus(require(&args.gold, "gold")?)?;
    ensure!(
        !args.predictions.is_empty() || !args.beams.is_empty(),
        "give prediction files (--predictions) or hypothesis files (--beams)"
    );
    let mut summary = EvalSummary::default();
    for p in &args.predictions {
        let pred = read_corpus(p)?;
        summary.rows.push(
            evaluate_predictions(&stem(p), &gold, &pred)
                .with_context(|| p.display().to_string())?,
        );
    }
    for p in &args.beams {
        let beams = read_beams(p)?;
        summary.rows.push(
            evaluate_beams(&stem(p), &gold, &beams).with_context(|| p.display().to_string())?,
        );
    }
    if let Some(j) = &args.json {
        write_file(j, &summary.to_json())?;
    }
    Ok(summary.table())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<String> {
    eprintln!("{}", echo("analyze", args));
    let gold = read_corpus(require(&args.gold, "gold")?)?;
    let pred_path = require(&args.predictions, "predictions")?;
    let base = report(&gold, &read_corpus(pred_path)?)?;
    let mut reports = vec![(stem(pred_path), base.clone())];
    let mut out = base.table();
    if let Some(b) = &args.compare {
        let other = report(&gold, &read_corpus(b)?)?;
        let cmp = compare(&base, &other)?;
        out = comparison_table(&base, &[(&stem(b), &cmp)]);
        reports.push((stem(b), other));
    }
    if let Some(dir) = &args.out_dir {
        for (name, r) in &reports {
            write_file(&dir.join(format!("errors-{name}.json")), &r.counts_json())?;
            write_file(
                &dir.join(format!("errors-{name}.jsonl")),
                &r.utterances_jsonl(),
            )?;
        }
        write_file(&dir.join("errors.txt"), &out)?;
    }
    Ok(out)
}
