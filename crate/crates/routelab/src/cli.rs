//! Command-line surface: one binary, subcommand style.
//!
//! Exit codes: 0 on success, 1 on validation/usage errors, 2 on runtime
//! failures (I/O, backends). Every command validates its inputs before
//! writing anything, reads and writes only paths given by flags, and is
//! deterministic for fixed seeds: rerunning with identical inputs produces
//! byte-identical output files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{
    builtin_vocab, default_pricing, defense_eval, gen_workload, run_experiment, DifficultyModel,
    EvalReport, ExperimentConfig, ExperimentInputs, Split, Workload,
};
use crate::confound::{
    baseline_gadget, confound, gen_gadget, AttackMode, AttackOptions, BaselineKind, FreqTable,
    Gadget, InstructionSet, Objective, Placement, PplTarget, Position, Sampling,
};
use crate::error::{Error, Result};
use crate::gateway::{
    calibrate_scores, serve, ModelBackend, PricingTable, RouterConfig, ServeOptions,
};
use crate::scorers::{
    external_score, fit_scorer, score_query, EmbedConfig, FitHyper, ScorerKind, ScorerParams,
};
use crate::shield::{roc, write_roc_csv};
use crate::textcore::{read_corpus_lines, train_lm, NgramLM, TokenSeq, Vocab};

#[derive(Parser)]
#[command(
    name = "routelab",
    version,
    about = "Routing control-plane lab: routers, rerouting attacks, defenses"
)]
pub struct Cli {
    /// Seed for all randomness in the invoked command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on worker threads (current commands run serially).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build a vocabulary from text or JSONL corpora.
    BuildVocab {
        /// Corpus files (.txt lines or .jsonl with a "text" field).
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the interpolated n-gram language model used for perplexity.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Bigram interpolation weight; 0 trains a pure unigram model.
        #[arg(long, default_value_t = 0.7)]
        lambda: f64,
        /// Add-k smoothing constant.
        #[arg(long, default_value_t = 0.5)]
        k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled synthetic workload with train/calibration/eval splits.
    GenWorkload {
        #[arg(long)]
        size: usize,
        /// Vocabulary file; defaults to the built-in pools when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        hard_weight: f64,
        #[arg(long, default_value_t = 0.2)]
        len_weight: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the vocabulary used (handy with the built-in default).
        #[arg(long)]
        vocab_out: Option<PathBuf>,
    },
    /// Fit a scorer on a workload's train split.
    TrainScorer {
        /// One of: sw, mf, cls, llmproxy.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        /// Similarity sharpness for the sw scorer.
        #[arg(long, default_value_t = 5.0)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate a routing threshold to a target strong fraction.
    Calibrate {
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Calibration queries (.jsonl workload or plain text lines).
        #[arg(long)]
        queries: PathBuf,
        /// Restrict a workload file to one split.
        #[arg(long)]
        split: Option<SplitArg>,
        #[arg(long)]
        epsilon: f64,
        /// When set, also write a ready-to-serve router config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "strong-model")]
        strong_id: String,
        #[arg(long, default_value = "weak-model")]
        weak_id: String,
    },
    /// Optimize a confounder gadget against a scorer, or emit a baseline.
    GenGadget {
        /// Scorer file; required unless --baseline is given.
        #[arg(long)]
        scorer: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        /// Gadget length in tokens.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Max optimization iterations.
        #[arg(long = "T", default_value_t = 100)]
        iters: usize,
        /// Candidate tokens per iteration.
        #[arg(long = "B", default_value_t = 32)]
        batch: usize,
        /// Iterations without improvement before early abort.
        #[arg(long, default_value_t = 25)]
        patience: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Independent)]
        mode: ModeArg,
        /// Target query text for --mode specific.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Maximize)]
        objective: ObjectiveArg,
        #[arg(long, value_enum, default_value_t = SamplingArg::Uniform)]
        sampling: SamplingArg,
        /// token<TAB>weight table for --sampling natural.
        #[arg(long)]
        freq_table: Option<PathBuf>,
        /// Language model for the perplexity constraint.
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Perplexity penalty weight; requires --rho and --lm.
        #[arg(long)]
        alpha: Option<f64>,
        /// Perplexity target; requires --alpha and --lm.
        #[arg(long)]
        rho: Option<f64>,
        /// Skip optimization: init-repeat | random | instruction:<id>.
        #[arg(long)]
        baseline: Option<String>,
        /// Instruction texts for instruction baselines (default built-ins).
        #[arg(long)]
        instructions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a gadget to a query and print the confounded text.
    Confound {
        #[arg(long)]
        query: String,
        #[arg(long)]
        gadget: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum, default_value_t = PositionArg::Prefix)]
        position: PositionArg,
        /// Canned instruction id to prepend.
        #[arg(long)]
        instruction_id: Option<String>,
        /// Literal instruction text to prepend (overrides --instruction-id).
        #[arg(long)]
        instruction_text: Option<String>,
        #[arg(long)]
        instructions: Option<PathBuf>,
    },
    /// Run a full attack evaluation from an experiment config.
    AttackEval {
        /// TOML or JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate the perplexity filter against gadgets.
    DefendEval {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Clean queries for threshold fitting.
        #[arg(long)]
        clean: PathBuf,
        /// Queries measured clean vs confounded.
        #[arg(long)]
        eval: PathBuf,
        /// Restrict a workload-format --clean file to one split.
        #[arg(long)]
        clean_split: Option<SplitArg>,
        /// Restrict a workload-format --eval file to one split.
        #[arg(long)]
        eval_split: Option<SplitArg>,
        #[arg(long, required = true, num_args = 1..)]
        gadget: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        fpr: f64,
        #[arg(long, value_enum, default_value_t = PositionArg::Prefix)]
        position: PositionArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve the gateway over HTTP (POST /route, GET /stats).
    Serve {
        #[arg(long)]
        router: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Bind address; port 0 picks a free port (printed on start).
        #[arg(long, default_value = "127.0.0.1:0")]
        addr: String,
        /// JSONL transcript log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Stub response template for the strong model ({input} expands).
        #[arg(long, default_value = "STRONG:{input}")]
        strong_stub: String,
        #[arg(long, default_value = "WEAK:{input}")]
        weak_stub: String,
        /// Forward strong-model calls to an HTTP endpoint instead.
        #[arg(long, conflicts_with = "strong_stub")]
        strong_http: Option<String>,
        #[arg(long, conflicts_with = "weak_stub")]
        weak_http: Option<String>,
    },
    /// Print a human-readable summary of an attack-eval report.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// Also (re)write the per-gadget CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Independent,
    Specific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Uniform,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PositionArg {
    Prefix,
    Suffix,
}

impl From<PositionArg> for Position {
    fn from(p: PositionArg) -> Position {
        match p {
            PositionArg::Prefix => Position::Prefix,
            PositionArg::Suffix => Position::Suffix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Calibration,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Calibration => Split::Calibration,
            SplitArg::Eval => Split::Eval,
        }
    }
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 1 for validation/configuration problems, 2 for runtime failures.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Backend { .. }
        | Error::ExternalScorer { .. }
        | Error::TrainingDiverged { .. } => 2,
        _ => 1,
    }
}

/// Load query texts from a workload JSONL file (optionally one split) or
/// from plain text lines.
fn load_texts(path: &Path, split: Option<SplitArg>) -> Result<Vec<String>> {
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        let workload = Workload::load(path)?;
        Ok(workload
            .queries
            .iter()
            .filter(|q| split.map_or(true, |s| q.split == Split::from(s)))
            .map(|q| q.text.clone())
            .collect())
    } else {
        read_corpus_lines(path)
    }
}

fn score_fn_for<'a>(
    params: &'a ScorerParams,
    vocab: &'a Vocab,
) -> impl Fn(&TokenSeq) -> Result<f64> + 'a {
    move |seq: &TokenSeq| match params {
        ScorerParams::External { endpoint } => external_score(endpoint, &seq.text(vocab)),
        _ => score_query(params, vocab, seq),
    }
}

fn parse_baseline(s: &str) -> Result<BaselineKind> {
    match s {
        "init-repeat" => Ok(BaselineKind::InitRepeat),
        "random" => Ok(BaselineKind::Random),
        _ => match s.strip_prefix("instruction:") {
            Some(id) if !id.is_empty() => Ok(BaselineKind::Instruction(id.to_string())),
            _ => Err(Error::Config(format!(
                "bad --baseline {s:?}: expected init-repeat, random, or instruction:<id>"
            ))),
        },
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::BuildVocab { corpus, out } => {
            let mut lines = Vec::new();
            for path in &corpus {
                lines.extend(read_corpus_lines(path)?);
            }
            let vocab = Vocab::from_corpus(&lines);
            if vocab.len() < 2 {
                return Err(Error::VocabTooSmall(vocab.len()));
            }
            vocab.save(&out)?;
            println!("vocab {} tokens", vocab.len());
        }
        Command::TrainLm {
            corpus,
            vocab,
            lambda,
            k,
            out,
        } => {
            if !(0.0..=1.0).contains(&lambda) || k < 0.0 {
                return Err(Error::Config(
                    "lambda must be in [0,1] and k nonnegative".into(),
                ));
            }
            let vocab = Vocab::load(&vocab)?;
            let seqs: Vec<TokenSeq> = read_corpus_lines(&corpus)?
                .iter()
                .map(|line| vocab.tokenize(line))
                .collect();
            let lm = train_lm(&seqs, vocab.len(), lambda, k)?;
            lm.save(&out)?;
            println!("lm order {} over {} tokens", lm.order, vocab.len());
        }
        Command::GenWorkload {
            size,
            vocab,
            hard_weight,
            len_weight,
            noise,
            out,
            vocab_out,
        } => {
            let vocab = match &vocab {
                Some(path) => Vocab::load(path)?,
                None => builtin_vocab(),
            };
            let model = DifficultyModel {
                hard_weight,
                len_weight,
                noise,
            };
            let workload = gen_workload(size, &vocab, seed, &model)?;
            workload.save(&out)?;
            if let Some(path) = vocab_out {
                vocab.save(&path)?;
            }
            println!("workload {} queries", workload.queries.len());
        }
        Command::TrainScorer {
            kind,
            workload,
            vocab,
            dim,
            embed_seed,
            learning_rate,
            epochs,
            gamma,
            out,
        } => {
            let kind = ScorerKind::parse(&kind)
                .ok_or_else(|| Error::Config(format!("unknown scorer kind {kind:?}")))?;
            let vocab = Vocab::load(&vocab)?;
            let workload = Workload::load(&workload)?;
            let examples = workload.train_examples(&vocab)?;
            let outcome = fit_scorer(
                kind,
                &examples,
                EmbedConfig {
                    dim,
                    seed: embed_seed,
                },
                &vocab,
                &FitHyper {
                    learning_rate,
                    epochs,
                    seed,
                    gamma,
                },
            )?;
            outcome.params.save(&out)?;
            println!("fingerprint {}", outcome.params.fingerprint());
            if let Some(last) = outcome.loss_by_epoch.last() {
                println!("final loss {last}");
            }
        }
        Command::Calibrate {
            scorer,
            vocab,
            queries,
            split,
            epsilon,
            out,
            strong_id,
            weak_id,
        } => {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config("epsilon must be in [0,1]".into()));
            }
            let vocab = Vocab::load(&vocab)?;
            let params = ScorerParams::load(&scorer)?;
            let texts = load_texts(&queries, split)?;
            let scores = texts
                .iter()
                .map(|t| score_query(&params, &vocab, &vocab.tokenize(t)))
                .collect::<Result<Vec<_>>>()?;
            let tau = calibrate_scores(&scores, epsilon)?;
            let achieved =
                scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64;
            println!("tau {tau}");
            println!("fraction_strong {achieved}");
            if let Some(path) = out {
                RouterConfig {
                    scorer: params,
                    tau,
                    strong_id,
                    weak_id,
                }
                .save(&path)?;
            }
        }
        Command::GenGadget {
            scorer,
            vocab,
            n,
            iters,
            batch,
            patience,
            mode,
            target,
            objective,
            sampling,
            freq_table,
            lm,
            alpha,
            rho,
            baseline,
            instructions,
            out,
        } => {
            let vocab = Vocab::load(&vocab)?;
            let instruction_set = match &instructions {
                Some(path) => InstructionSet::load(path)?,
                None => InstructionSet::default(),
            };
            if let Some(kind) = baseline {
                let kind = parse_baseline(&kind)?;
                let gadget = baseline_gadget(&kind, n, &vocab, seed, &instruction_set)?;
                gadget.save(&out)?;
                println!("baseline gadget: {}", gadget.tokens.text(&vocab));
                return Ok(());
            }
            let scorer = scorer
                .ok_or_else(|| Error::Config("--scorer is required without --baseline".into()))?;
            let params = ScorerParams::load(&scorer)?;
            let mode = match mode {
                ModeArg::Independent => AttackMode::QueryIndependent,
                ModeArg::Specific => {
                    let text = target.ok_or_else(|| {
                        Error::Config("--mode specific requires --target".into())
                    })?;
                    AttackMode::QuerySpecific(vocab.tokenize(&text))
                }
            };
            let sampling = match sampling {
                SamplingArg::Uniform => Sampling::Uniform,
                SamplingArg::Natural => {
                    let path = freq_table.ok_or_else(|| {
                        Error::Config("--sampling natural requires --freq-table".into())
                    })?;
                    let data = std::fs::read_to_string(&path)
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                    Sampling::Natural {
                        table: FreqTable::from_tsv(&data, &vocab)?,
                    }
                }
            };
            let ppl = match (alpha, rho) {
                (Some(alpha), Some(rho)) => Some(PplTarget { alpha, rho }),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "--alpha and --rho must be given together".into(),
                    ))
                }
            };
            let lm = match (&ppl, lm) {
                (Some(_), Some(path)) => Some(NgramLM::load(&path)?),
                (Some(_), None) => return Err(Error::MissingLanguageModel),
                (None, _) => None,
            };
            let opts = AttackOptions {
                n,
                max_iters: iters,
                batch,
                patience,
                objective: match objective {
                    ObjectiveArg::Maximize => Objective::Maximize,
                    ObjectiveArg::Minimize => Objective::Minimize,
                },
                mode,
                sampling,
                seed,
                ppl,
            };
            let mut gadget = gen_gadget(score_fn_for(&params, &vocab), &vocab, lm.as_ref(), &opts)?;
            gadget.scorer_fingerprint = Some(params.fingerprint());
            gadget.save(&out)?;
            println!("objective {}", gadget.objective);
            println!("gadget: {}", gadget.tokens.text(&vocab));
        }
        Command::Confound {
            query,
            gadget,
            vocab,
            position,
            instruction_id,
            instruction_text,
            instructions,
        } => {
            let vocab = Vocab::load(&vocab)?;
            let gadget = Gadget::load(&gadget)?;
            let instruction = match (instruction_text, instruction_id) {
                (Some(text), _) => Some(text),
                (None, Some(id)) => {
                    let set = match &instructions {
                        Some(path) => InstructionSet::load(path)?,
                        None => InstructionSet::default(),
                    };
                    Some(
                        set.instructions
                            .get(&id)
                            .ok_or(Error::UnknownInstruction(id))?
                            .clone(),
                    )
                }
                (None, None) => None,
            };
            let placement = Placement {
                position: position.into(),
                instruction,
            };
            let confounded = confound(&vocab.tokenize(&query), &gadget.tokens, &placement, &vocab);
            println!("{}", confounded.text(&vocab));
        }
        Command::AttackEval { config, out_dir } => {
            let config = ExperimentConfig::load(&config)?;
            let report = run_experiment_from_config(&config)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
            report.save_json(&out_dir.join("report.json"))?;
            let file = std::fs::File::create(out_dir.join("tables.csv"))
                .map_err(|e| Error::io("tables.csv", e))?;
            report.write_csv(file)?;
            println!("report: {} cells", report.cells.len());
        }
        Command::DefendEval {
            lm,
            vocab,
            clean,
            eval,
            clean_split,
            eval_split,
            gadget,
            fpr,
            position,
            out_dir,
        } => {
            if !(0.0 < fpr && fpr < 1.0) {
                return Err(Error::Config("fpr must be in (0,1)".into()));
            }
            let vocab = Vocab::load(&vocab)?;
            let lm = NgramLM::load(&lm)?;
            let clean: Vec<TokenSeq> = load_texts(&clean, clean_split)?
                .iter()
                .map(|t| vocab.tokenize(t))
                .collect();
            let eval: Vec<TokenSeq> = load_texts(&eval, eval_split)?
                .iter()
                .map(|t| vocab.tokenize(t))
                .collect();
            let gadgets: Vec<Gadget> = gadget
                .iter()
                .map(|p| Gadget::load(p))
                .collect::<Result<_>>()?;
            let refs: Vec<&Gadget> = gadgets.iter().collect();
            let placement = Placement {
                position: position.into(),
                instruction: None,
            };
            let report = defense_eval(&lm, &vocab, &clean, &eval, &refs, &placement, fpr)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
            report.save_json(&out_dir.join("defense.json"))?;
            let file = std::fs::File::create(out_dir.join("ppl.csv"))
                .map_err(|e| Error::io("ppl.csv", e))?;
            report.write_ppl_csv(file)?;
            for per in &report.per_gadget {
                let curve = roc(&report.clean_ppls, &per.attack_ppls);
                let path = out_dir.join(format!("roc-{}.csv", per.gadget));
                let file = std::fs::File::create(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                write_roc_csv(&curve, file)?;
            }
            println!("mean_auc {}", report.mean_auc);
            println!("threshold {}", report.threshold);
        }
        Command::Serve {
            router,
            vocab,
            addr,
            log,
            strong_stub,
            weak_stub,
            strong_http,
            weak_http,
        } => {
            let config = RouterConfig::load(&router)?;
            let vocab = Vocab::load(&vocab)?;
            let http_backend = |url: String| ModelBackend::Http {
                endpoint: crate::scorers::EndpointDescriptor {
                    url,
                    bearer_token_env: None,
                    timeout_ms: 5000,
                },
            };
            let mut backends = BTreeMap::new();
            backends.insert(
                config.strong_id.clone(),
                match strong_http {
                    Some(url) => http_backend(url),
                    None => ModelBackend::Stub {
                        template: strong_stub,
                    },
                },
            );
            backends.insert(
                config.weak_id.clone(),
                match weak_http {
                    Some(url) => http_backend(url),
                    None => ModelBackend::Stub {
                        template: weak_stub,
                    },
                },
            );
            let handle = serve(
                config,
                vocab,
                backends,
                ServeOptions {
                    addr,
                    transcript_log: log,
                },
            )?;
            println!("listening on {}", handle.addr);
            loop {
                std::thread::park();
            }
        }
        Command::Report { report, csv } => {
            let report = EvalReport::load_json(&report)?;
            println!("workload: {}", report.workload);
            if let Some(epsilon) = report.epsilon {
                println!("epsilon: {epsilon}");
            }
            for cell in &report.cells {
                let kind = if cell.white_box { "white-box" } else { "transfer" };
                let fmt = |m: Option<f64>, se: Option<f64>| match (m, se) {
                    (Some(m), Some(se)) => format!("{m:.1} +/- {se:.1}"),
                    _ => "n/a".to_string(),
                };
                println!(
                    "{} -> {} ({kind}, tau {:.4}): upgrade {} %, downgrade {} %, \
                     cost {:.6} -> {:.6}",
                    cell.surrogate,
                    cell.target,
                    cell.tau,
                    fmt(cell.summary.mean_upgrade, cell.summary.se_upgrade),
                    fmt(cell.summary.mean_downgrade, cell.summary.se_downgrade),
                    cell.summary.mean_cost_before,
                    cell.summary.mean_cost_after,
                );
            }
            if let Some(path) = csv {
                let file = std::fs::File::create(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                report.write_csv(file)?;
            }
        }
    }
    Ok(())
}

/// Load everything an experiment config names and run it.
fn run_experiment_from_config(config: &ExperimentConfig) -> Result<EvalReport> {
    let vocab = Vocab::load(&config.vocab)?;
    let workload = Workload::load(&config.workload)?;
    let mut scorers_owned = BTreeMap::new();
    for (name, path) in &config.scorers {
        scorers_owned.insert(name.clone(), ScorerParams::load(path)?);
    }
    let mut gadget_sets_owned = Vec::new();
    for set in &config.gadget_sets {
        let gadgets = set
            .gadgets
            .iter()
            .map(|p| Gadget::load(p))
            .collect::<Result<Vec<_>>>()?;
        gadget_sets_owned.push((set.surrogate.clone(), gadgets));
    }
    let pricing = match &config.pricing {
        Some(path) => PricingTable::load(path)?,
        None => default_pricing(&config.strong_id, &config.weak_id),
    };
    let scorers: BTreeMap<String, &ScorerParams> = scorers_owned
        .iter()
        .map(|(k, v)| (k.clone(), v))
        .collect();
    let gadget_sets: Vec<(String, Vec<&Gadget>)> = gadget_sets_owned
        .iter()
        .map(|(name, gs)| (name.clone(), gs.iter().collect()))
        .collect();
    run_experiment(&ExperimentInputs {
        workload: &workload,
        vocab: &vocab,
        scorers,
        epsilon: config.epsilon,
        tau: config.tau.clone(),
        gadget_sets,
        placement: config.placement.clone(),
        pricing: &pricing,
        strong_id: config.strong_id.clone(),
        weak_id: config.weak_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["routelab", "--help"]), 0);
        assert_eq!(run(["routelab", "gen-gadget", "--help"]), 0);
        assert_eq!(run(["routelab", "--version"]), 0);
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(run(["routelab", "--no-such-flag"]), 1);
        assert_eq!(run(["routelab", "build-vocab", "--bogus", "x"]), 1);
    }

    #[test]
    fn missing_input_file_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("v.json");
        assert_eq!(
            run([
                "routelab",
                "build-vocab",
                "--corpus",
                "/definitely/not/here.txt",
                "--out",
                out.to_str().unwrap(),
            ]),
            2
        );
        assert!(!out.exists(), "no output on failure");
    }

    #[test]
    fn bad_epsilon_exits_one() {
        assert_eq!(
            run([
                "routelab",
                "calibrate",
                "--scorer",
                "s.json",
                "--vocab",
                "v.json",
                "--queries",
                "q.jsonl",
                "--epsilon",
                "1.5",
            ]),
            1
        );
    }

    #[test]
    fn baseline_parse_rules() {
        assert_eq!(parse_baseline("init-repeat").unwrap(), BaselineKind::InitRepeat);
        assert_eq!(parse_baseline("random").unwrap(), BaselineKind::Random);
        assert_eq!(
            parse_baseline("instruction:gpt").unwrap(),
            BaselineKind::Instruction("gpt".into())
        );
        assert!(parse_baseline("instruction:").is_err());
        assert!(parse_baseline("other").is_err());
    }
}
