//! End-to-end runs: train m parsers, decode, re-rank, ensemble, evaluate
//! and analyze, writing every artifact under one run directory:
//!
//! ```text
//! config.json
//! data/{train,dev,test}.jsonl
//! models/parser-<i>.json, lm.json, ranker-<mode>.json
//! beams/{dev,test}/parser-<i>.jsonl, beams/test-<mode>/parser-<i>.jsonl
//! predictions/parser-<i>.jsonl, ensemble.jsonl, rerank-<mode>.jsonl, oracle.jsonl
//! reports/eval.txt, eval.json, errors.txt, errors-<method>.{json,jsonl}
//! ```

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use topparse::ensemble::{Strategy, SwitchOptions};
use topparse::error_analysis::{compare, comparison_table, report, ErrorReport};
use topparse::parser::{
    beams_to_jsonl, BeamSet, TrainConfig, DEFAULT_FEATURE_MASK, DEFAULT_INIT_JITTER,
};
use topparse::rerank::{train_lm, RankerConfig};
use topparse::synth::SyntheticGrammar;
use topparse::treebank::corpus_to_jsonl;
use topparse::Corpus;

use crate::commands::{
    decode_corpus, ensemble_beams, fit_ranker_on, parser_seeds, provenance_jsonl, read_corpus,
    rerank_beams, top1_corpus, train_parsers, write_file,
};
use crate::config::{component_seed, require};
use crate::eval::{evaluate_beams, evaluate_predictions, EvalSummary};
use crate::{
    RerankMode, DEFAULT_EPOCHS, DEFAULT_K, DEFAULT_M, DEFAULT_MAX_DEPTH, DEFAULT_ORDER,
    DEFAULT_RANKER_EPOCHS, DEFAULT_RANKER_LAMBDA, DEFAULT_TOP_K, DEFAULT_TRAIN_BEAM,
};

pub const DEFAULT_SYNTH_TRAIN: usize = 2000;
pub const DEFAULT_SYNTH_DEV: usize = 500;
pub const DEFAULT_SYNTH_TEST: usize = 500;

fn default_modes() -> Vec<RerankMode> {
    vec![RerankMode::Naive, RerankMode::Svm, RerankMode::Extended]
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Training corpus; without it, train/dev/test come from the synthetic grammar.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development corpus for ranker training.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SYNTH_TRAIN)]
    pub synth_train: usize,
    #[arg(long, default_value_t = DEFAULT_SYNTH_DEV)]
    pub synth_dev: usize,
    #[arg(long, default_value_t = DEFAULT_SYNTH_TEST)]
    pub synth_test: usize,
    /// Slot relabeling noise in the synthetic training split.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = DEFAULT_M)]
    pub m: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_BEAM)]
    pub beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    #[arg(long, default_value_t = DEFAULT_FEATURE_MASK)]
    pub feature_mask: f64,
    #[arg(long, default_value_t = DEFAULT_INIT_JITTER)]
    pub init_jitter: f64,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Re-ranking modes to run, comma separated; `none` disables re-ranking.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = default_modes())]
    pub rerank: Vec<RerankMode>,
    #[arg(long, default_value = "majority")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RANKER_LAMBDA)]
    pub ranker_lambda: f64,
    #[arg(long, default_value_t = DEFAULT_RANKER_EPOCHS)]
    pub ranker_epochs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            config: None,
            run_dir: None,
            train: None,
            dev: None,
            test: None,
            synth_train: DEFAULT_SYNTH_TRAIN,
            synth_dev: DEFAULT_SYNTH_DEV,
            synth_test: DEFAULT_SYNTH_TEST,
            label_noise: 0.0,
            m: DEFAULT_M,
            k: DEFAULT_K,
            epochs: DEFAULT_EPOCHS,
            beam: DEFAULT_TRAIN_BEAM,
            max_depth: DEFAULT_MAX_DEPTH,
            feature_mask: DEFAULT_FEATURE_MASK,
            init_jitter: DEFAULT_INIT_JITTER,
            order: DEFAULT_ORDER,
            top_k: DEFAULT_TOP_K,
            rerank: default_modes(),
            strategy: Strategy::Majority,
            seed: 0,
            ranker_lambda: DEFAULT_RANKER_LAMBDA,
            ranker_epochs: DEFAULT_RANKER_EPOCHS,
        }
    }
}

impl PipelineConfig {
    /// Requested modes without `none` and duplicates, in request order.
    pub fn modes(&self) -> Vec<RerankMode> {
        let mut out = Vec::new();
        for m in &self.rerank {
            if *m != RerankMode::None && !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }
}

pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub summary: EvalSummary,
    pub errors: Vec<(String, ErrorReport)>,
    /// Evaluation and error tables, as printed.
    pub report: String,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("pipeline stage `{name}` failed"))
}

struct Splits {
    train: Corpus,
    dev: Option<Corpus>,
    test: Corpus,
}

fn load_splits(cfg: &PipelineConfig, need_dev: bool) -> Result<Splits> {
    if let Some(train) = &cfg.train {
        let test = require(&cfg.test, "test").context("a corpus run needs a test corpus")?;
        let dev = cfg.dev.as_deref().map(read_corpus).transpose()?;
        ensure!(
            !need_dev || dev.is_some(),
            "svm and extended re-ranking need a dev corpus (--dev)"
        );
        return Ok(Splits {
            train: read_corpus(train)?,
            dev,
            test: read_corpus(test)?,
        });
    }
    ensure!(
        cfg.dev.is_none() && cfg.test.is_none(),
        "dev and test corpora need a training corpus (--train)"
    );
    ensure!(
        (0.0..=1.0).contains(&cfg.label_noise),
        "label_noise must be in [0, 1]"
    );
    let noisy = SyntheticGrammar {
        label_noise: cfg.label_noise,
    };
    let clean = SyntheticGrammar::default();
    Ok(Splits {
        train: noisy.corpus(
            component_seed(cfg.seed, "data-train", 0),
            cfg.synth_train,
            "train",
        ),
        dev: need_dev.then(|| {
            clean.corpus(
                component_seed(cfg.seed, "data-dev", 0),
                cfg.synth_dev,
                "dev",
            )
        }),
        test: clean.corpus(
            component_seed(cfg.seed, "data-test", 0),
            cfg.synth_test,
            "test",
        ),
    })
}

fn write_beams(dir: &Path, per_parser: &[Vec<BeamSet>]) -> Result<()> {
    for (i, beams) in per_parser.iter().enumerate() {
        write_file(
            &dir.join(format!("parser-{i}.jsonl")),
            &beams_to_jsonl(beams),
        )?;
    }
    Ok(())
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let run_dir = require(&cfg.run_dir, "run_dir")?.to_path_buf();
    let modes = cfg.modes();
    let learned = modes
        .iter()
        .any(|m| matches!(m, RerankMode::Svm | RerankMode::Extended));
    ensure!(
        cfg.m >= 2 || !modes.contains(&RerankMode::Extended),
        "extended re-ranking needs two or more parsers; use --m 2 or more, or drop `extended` from --rerank"
    );
    let mut resolved = cfg.clone();
    resolved.config = None;
    write_file(
        &run_dir.join("config.json"),
        &(serde_json::to_string_pretty(&resolved)? + "\n"),
    )?;

    let splits = stage("data", || {
        let s = load_splits(cfg, learned)?;
        write_file(
            &run_dir.join("data/train.jsonl"),
            &corpus_to_jsonl(&s.train),
        )?;
        if let Some(dev) = &s.dev {
            write_file(&run_dir.join("data/dev.jsonl"), &corpus_to_jsonl(dev))?;
        }
        write_file(&run_dir.join("data/test.jsonl"), &corpus_to_jsonl(&s.test))?;
        Ok(s)
    })?;

    let models = stage("train-parsers", || {
        let seeds = parser_seeds(&[], cfg.m, cfg.seed)?;
        let base = TrainConfig {
            epochs: cfg.epochs,
            beam: cfg.beam,
            seed: 0,
            max_depth: cfg.max_depth,
            feature_mask: cfg.feature_mask,
            init_jitter: cfg.init_jitter,
        };
        let models = train_parsers(&splits.train, None, &base, &seeds)?;
        for (i, m) in models.iter().enumerate() {
            write_file(
                &run_dir.join(format!("models/parser-{i}.json")),
                &m.to_json(),
            )?;
        }
        Ok(models)
    })?;

    let (test_beams, dev_beams) = stage("parse", || {
        let decode = |corpus: &Corpus| -> Result<Vec<Vec<BeamSet>>> {
            models
                .iter()
                .map(|m| decode_corpus(m, corpus, cfg.k, None))
                .collect()
        };
        let test = decode(&splits.test)?;
        write_beams(&run_dir.join("beams/test"), &test)?;
        let dev = match (&splits.dev, learned) {
            (Some(d), true) => {
                let dev = decode(d)?;
                write_beams(&run_dir.join("beams/dev"), &dev)?;
                Some(dev)
            }
            _ => None,
        };
        Ok((test, dev))
    })?;

    let lm = if modes.is_empty() {
        None
    } else {
        Some(stage("train-lm", || {
            let lm = train_lm(&splits.train, cfg.order)?;
            write_file(&run_dir.join("models/lm.json"), &lm.to_json())?;
            Ok(lm)
        })?)
    };

    let mut reranked: Vec<(RerankMode, Vec<Vec<BeamSet>>)> = Vec::new();
    for mode in &modes {
        let lm = lm.as_ref().expect("trained when a mode is set");
        let ranker = match mode {
            RerankMode::Svm | RerankMode::Extended => Some(stage("train-ranker", || {
                let rc = RankerConfig {
                    use_votes: *mode == RerankMode::Extended,
                    seed: component_seed(cfg.seed, &format!("ranker-{}", mode.as_str()), 0),
                    lambda: cfg.ranker_lambda,
                    epochs: cfg.ranker_epochs,
                };
                let dev = splits.dev.as_ref().expect("loaded for learned modes");
                let model = fit_ranker_on(
                    dev_beams.as_ref().expect("decoded for learned modes"),
                    dev,
                    lm,
                    &rc,
                )?;
                write_file(
                    &run_dir.join(format!("models/ranker-{}.json", mode.as_str())),
                    &model.to_json(),
                )?;
                Ok(model)
            })?),
            _ => None,
        };
        let beams = stage("rerank", || {
            let beams = rerank_beams(*mode, &test_beams, lm, ranker.as_ref(), cfg.top_k)?;
            write_beams(
                &run_dir.join(format!("beams/test-{}", mode.as_str())),
                &beams,
            )?;
            Ok(beams)
        })?;
        reranked.push((*mode, beams));
    }

    let predictions: Vec<(String, Corpus)> = stage("ensemble", || {
        let switch = SwitchOptions::default();
        let mut preds = Vec::new();
        for (i, beams) in test_beams.iter().enumerate() {
            preds.push((format!("parser-{i}"), top1_corpus(beams)?));
        }
        let (ens, prov) = ensemble_beams(&test_beams, cfg.strategy, Some(&splits.test), switch)?;
        write_file(
            &run_dir.join("predictions/ensemble.provenance.jsonl"),
            &provenance_jsonl(&prov),
        )?;
        preds.push(("ensemble".to_string(), ens));
        for (mode, beams) in &reranked {
            let strategy = if cfg.strategy == Strategy::Oracle {
                Strategy::Majority
            } else {
                cfg.strategy
            };
            let (pred, _) = ensemble_beams(beams, strategy, None, switch)?;
            preds.push((format!("rerank-{}", mode.as_str()), pred));
        }
        let (oracle, _) =
            ensemble_beams(&test_beams, Strategy::Oracle, Some(&splits.test), switch)?;
        preds.push(("oracle".to_string(), oracle));
        for (name, corpus) in &preds {
            write_file(
                &run_dir.join(format!("predictions/{name}.jsonl")),
                &corpus_to_jsonl(corpus),
            )?;
        }
        Ok(preds)
    })?;

    let summary = stage("evaluate", || {
        let mut summary = EvalSummary::default();
        for (i, beams) in test_beams.iter().enumerate() {
            summary
                .rows
                .push(evaluate_beams(&format!("parser-{i}"), &splits.test, beams)?);
        }
        for (name, pred) in predictions.iter().skip(test_beams.len()) {
            summary
                .rows
                .push(evaluate_predictions(name, &splits.test, pred)?);
        }
        write_file(&run_dir.join("reports/eval.txt"), &summary.table())?;
        write_file(
            &run_dir.join("reports/eval.json"),
            &(summary.to_json() + "\n"),
        )?;
        Ok(summary)
    })?;

    let (errors, error_table) = stage("analyze", || {
        let mut errors = Vec::new();
        for (name, pred) in &predictions {
            let r = report(&splits.test, pred)?;
            write_file(
                &run_dir.join(format!("reports/errors-{name}.json")),
                &(r.counts_json() + "\n"),
            )?;
            write_file(
                &run_dir.join(format!("reports/errors-{name}.jsonl")),
                &r.utterances_jsonl(),
            )?;
            errors.push((name.clone(), r));
        }
        let base = &errors[0].1;
        let mut comparisons = Vec::new();
        for (name, r) in errors.iter().skip(test_beams.len()) {
            comparisons.push((name.as_str(), compare(base, r)?));
        }
        let rows: Vec<(&str, &_)> = comparisons.iter().map(|(n, c)| (*n, c)).collect();
        let table = comparison_table(base, &rows);
        write_file(&run_dir.join("reports/errors.txt"), &table)?;
        Ok((errors, table))
    })?;

    let report = format!(
        "{}\nerror counts for parser-0 and relative change per method:\n{}",
        summary.table(),
        error_table
    );
    Ok(PipelineOutcome {
        run_dir,
        summary,
        errors,
        report,
    })
}
