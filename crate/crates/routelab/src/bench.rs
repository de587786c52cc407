//! Experiment harness: synthetic workload generation, attack/defense
//! metric computation with standard errors over gadget sets, and report
//! emission.
//!
//! The synthetic generator is the default workload source so experiments
//! need no downloads; real benchmark files can be ingested through the
//! same JSONL format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confound::{confound, Gadget, Placement};
use crate::error::{Error, Result};
use crate::gateway::{
    calibrate, cost, route, Decision, ModelPrice, PricingTable, RouterConfig, Transcript,
    TranscriptEntry,
};
use crate::scorers::{Label, PreferenceExample, ScorerParams};
use crate::shield::{fit_ppl_threshold, mann_whitney_auc};
use crate::textcore::{perplexity, NgramLM, TokenSeq, Vocab};

/// Everyday words for easy queries. Includes the init token and common
/// punctuation so the attack vocabulary is self-contained.
pub const COMMON_WORDS: &[&str] = &[
    "!", "?", ".", ",", "the", "a", "an", "of", "to", "in", "is", "are", "was", "what",
    "which", "who", "when", "where", "how", "why", "do", "does", "did", "can", "could",
    "please", "tell", "me", "about", "explain", "describe", "list", "name", "give",
    "show", "write", "make", "best", "good", "easy", "simple", "short", "long", "first",
    "last", "next", "many", "much", "more", "some", "any", "all", "and", "or", "not",
    "yes", "no", "day", "week", "year", "time", "place", "city", "country", "world",
    "people", "person", "water", "food", "book", "story", "word", "letter", "number",
    "color", "animal", "dog", "cat", "house", "car", "road", "school", "game", "song",
    "movie", "friend", "family", "work", "play", "run", "walk", "help", "find", "get",
    "use", "need", "want", "like", "love", "big", "small", "new", "old", "fast", "slow",
];

/// Technical words that mark hard queries; a small slice of the
/// vocabulary so random gadgets rarely concentrate them.
pub const HARD_WORDS: &[&str] = &[
    "eigenvalue", "manifold", "holomorphic", "quaternion", "entropy", "stochastic",
    "asymptotic", "tensor", "cohomology", "isomorphism", "variational", "lagrangian",
    "hamiltonian", "renormalization", "diffeomorphism", "homotopy", "spectral",
    "perturbation", "convolution", "martingale", "ergodic", "topology", "functor",
    "gradient", "hessian", "jacobian", "eigenvector", "orthogonal", "hyperbolic",
    "polynomial", "derivative", "integral", "theorem", "lemma", "conjecture", "proof",
    "axiom", "recursion", "complexity", "cryptographic",
];

/// Question skeletons for the synthetic generator. Keeping queries
/// template-shaped gives the workload a natural bigram structure, so a
/// perplexity filter has something to key on.
const STARTERS: &[&[&str]] = &[
    &["what", "is"],
    &["what", "are"],
    &["how", "does"],
    &["tell", "me", "about"],
    &["explain"],
    &["describe"],
    &["why", "is"],
    &["where", "is"],
    &["please", "list"],
    &["give", "me"],
];

/// Joiners between content terms.
const CONNECTORS: &[&str] = &["of", "in", "and", "or", "to"];

/// Everyday content nouns filling easy slots (all in [`COMMON_WORDS`]).
const EASY_TERMS: &[&str] = &[
    "day", "week", "year", "time", "place", "city", "country", "world", "people",
    "person", "water", "food", "book", "story", "word", "letter", "number", "color",
    "animal", "dog", "cat", "house", "car", "road", "school", "game", "song", "movie",
    "friend", "family", "work", "play", "run", "walk", "help",
];

/// Vocabulary covering the synthetic generator's word pools.
pub fn builtin_vocab() -> Vocab {
    Vocab::from_tokens(COMMON_WORDS.iter().chain(HARD_WORDS.iter()))
}

/// Workload split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calibration,
    Eval,
}

/// One workload query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadQuery {
    pub id: String,
    pub text: String,
    /// Preference label as 0, 0.5, or 1; absent for unlabeled ingested data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    pub split: Split,
}

/// A named set of queries with disjoint train/calibration/eval splits.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub queries: Vec<WorkloadQuery>,
}

impl Workload {
    pub fn split_texts(&self, split: Split) -> Vec<&str> {
        self.queries
            .iter()
            .filter(|q| q.split == split)
            .map(|q| q.text.as_str())
            .collect()
    }

    pub fn split_seqs(&self, split: Split, vocab: &Vocab) -> Vec<TokenSeq> {
        self.queries
            .iter()
            .filter(|q| q.split == split)
            .map(|q| vocab.tokenize(&q.text))
            .collect()
    }

    /// Labeled training examples for scorer fitting.
    pub fn train_examples(&self, vocab: &Vocab) -> Result<Vec<PreferenceExample>> {
        self.queries
            .iter()
            .filter(|q| q.split == Split::Train)
            .map(|q| {
                let value = q.label.ok_or_else(|| {
                    Error::Workload(format!("train query {} has no label", q.id))
                })?;
                let label = Label::from_value(value).ok_or_else(|| {
                    Error::Workload(format!("query {} label {value} not in {{0, 0.5, 1}}", q.id))
                })?;
                Ok(PreferenceExample {
                    query: vocab.tokenize(&q.text),
                    label,
                })
            })
            .collect()
    }

    /// Write as JSONL, one query per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = Vec::new();
        for q in &self.queries {
            serde_json::to_writer(&mut out, q)?;
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&out)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut queries = Vec::new();
        for line in data.lines() {
            if line.trim().is_empty() {
                continue;
            }
            queries.push(serde_json::from_str(line)?);
        }
        let workload = Workload {
            name: path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("workload")
                .to_string(),
            queries,
        };
        workload.validate()?;
        Ok(workload)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for q in &self.queries {
            if !seen.insert(&q.id) {
                return Err(Error::Workload(format!("duplicate query id {}", q.id)));
            }
        }
        Ok(())
    }
}

/// Latent-difficulty model for the synthetic generator: difficulty is a
/// weighted sum of the hard-token fraction and normalized length, plus
/// seeded noise; labels are the empirical terciles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DifficultyModel {
    pub hard_weight: f64,
    pub len_weight: f64,
    pub noise: f64,
}

impl Default for DifficultyModel {
    fn default() -> Self {
        DifficultyModel {
            hard_weight: 0.7,
            len_weight: 0.2,
            noise: 0.05,
        }
    }
}

/// Generate a deterministic synthetic workload of `size` template-shaped
/// queries (question skeleton, then content terms joined by connectors),
/// split 60/20/20 into train/calibration/eval.
pub fn gen_workload(
    size: usize,
    vocab: &Vocab,
    seed: u64,
    model: &DifficultyModel,
) -> Result<Workload> {
    if size < 10 {
        return Err(Error::Workload(format!("size must be >= 10, got {size}")));
    }
    let easy: Vec<&str> = EASY_TERMS
        .iter()
        .copied()
        .filter(|w| vocab.contains(w))
        .collect();
    let hard: Vec<&str> = HARD_WORDS
        .iter()
        .copied()
        .filter(|w| vocab.contains(w))
        .collect();
    let starters: Vec<&[&str]> = STARTERS
        .iter()
        .copied()
        .filter(|s| s.iter().all(|w| vocab.contains(w)))
        .collect();
    let connectors: Vec<&str> = CONNECTORS
        .iter()
        .copied()
        .filter(|w| vocab.contains(w))
        .collect();
    if easy.is_empty() || hard.is_empty() || starters.is_empty() || connectors.is_empty() {
        return Err(Error::Workload(
            "vocabulary does not cover the query template pools".into(),
        ));
    }
    let the = vocab.contains("the");
    let qmark = vocab.contains("?");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drafts = Vec::with_capacity(size);
    for i in 0..size {
        let latent: f64 = rng.random();
        let n_terms = 1 + (latent * 3.0) as usize + rng.random_range(0..2);
        let hard_target = (0.9 * latent + (rng.random::<f64>() - 0.5) * 0.1).clamp(0.0, 1.0);
        let mut words: Vec<&str> = starters[rng.random_range(0..starters.len())].to_vec();
        let mut hard_count = 0usize;
        for t in 0..n_terms {
            if t > 0 {
                words.push(connectors[rng.random_range(0..connectors.len())]);
            }
            if the && rng.random::<f64>() < 0.7 {
                words.push("the");
            }
            if rng.random::<f64>() < hard_target {
                words.push(hard[rng.random_range(0..hard.len())]);
                hard_count += 1;
            } else {
                words.push(easy[rng.random_range(0..easy.len())]);
            }
        }
        if qmark && rng.random::<f64>() < 0.8 {
            words.push("?");
        }
        let hard_frac = hard_count as f64 / n_terms as f64;
        let len_norm = (n_terms as f64 - 1.0) / 4.0;
        let difficulty = model.hard_weight * hard_frac
            + model.len_weight * len_norm
            + model.noise * (rng.random::<f64>() - 0.5) * 2.0;
        let split = match i % 5 {
            0 | 1 | 2 => Split::Train,
            3 => Split::Calibration,
            _ => Split::Eval,
        };
        drafts.push((words.join(" "), difficulty, split));
    }
    // empirical terciles of difficulty -> labels 0 / 0.5 / 1
    let mut sorted: Vec<f64> = drafts.iter().map(|d| d.1).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = sorted[sorted.len() / 3];
    let hi = sorted[2 * sorted.len() / 3];
    let queries = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (text, difficulty, split))| WorkloadQuery {
            id: format!("q{i:06}"),
            text,
            label: Some(if difficulty < lo {
                0.0
            } else if difficulty < hi {
                0.5
            } else {
                1.0
            }),
            split,
        })
        .collect();
    Ok(Workload {
        name: format!("synthetic-{seed}"),
        queries,
    })
}

/// Rerouting rates of one gadget over an eval set, in percent.
/// Absent denominators (no originally-weak or originally-strong queries)
/// are reported as `None`, never zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateReport {
    pub upgrade: Option<f64>,
    pub downgrade: Option<f64>,
    pub strong_before: f64,
    pub strong_after: f64,
}

/// Route every eval query before and after confounding and count
/// weak-to-strong (upgrade) and strong-to-weak (downgrade) flips.
pub fn upgrade_rate(
    config: &RouterConfig,
    vocab: &Vocab,
    eval: &[TokenSeq],
    gadget: &Gadget,
    placement: &Placement,
) -> Result<RateReport> {
    assert!(!eval.is_empty(), "eval set must be nonempty");
    let mut weak_before = 0usize;
    let mut strong_before = 0usize;
    let mut upgraded = 0usize;
    let mut downgraded = 0usize;
    let mut strong_after = 0usize;
    for query in eval {
        let before = route(config, vocab, query)?.decision;
        let modified = confound(query, &gadget.tokens, placement, vocab);
        let after = route(config, vocab, &modified)?.decision;
        match before {
            Decision::Weak => {
                weak_before += 1;
                if after == Decision::Strong {
                    upgraded += 1;
                }
            }
            Decision::Strong => {
                strong_before += 1;
                if after == Decision::Weak {
                    downgraded += 1;
                }
            }
        }
        if after == Decision::Strong {
            strong_after += 1;
        }
    }
    // counting identity: upgrades + retained-weak = originally-weak
    debug_assert_eq!(upgraded + (weak_before - upgraded), weak_before);
    let n = eval.len() as f64;
    let pct = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(100.0 * num as f64 / den as f64)
        }
    };
    Ok(RateReport {
        upgrade: pct(upgraded, weak_before),
        downgrade: pct(downgraded, strong_before),
        strong_before: 100.0 * strong_before as f64 / n,
        strong_after: 100.0 * strong_after as f64 / n,
    })
}

/// Mean and standard error (sample standard deviation over sqrt(n)).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

/// Default pricing for the synthetic strong/weak pair.
pub fn default_pricing(strong_id: &str, weak_id: &str) -> PricingTable {
    let mut models = BTreeMap::new();
    models.insert(
        strong_id.to_string(),
        ModelPrice {
            input_per_mtok: 2.5,
            output_per_mtok: 10.0,
        },
    );
    models.insert(
        weak_id.to_string(),
        ModelPrice {
            input_per_mtok: 0.15,
            output_per_mtok: 0.6,
        },
    );
    PricingTable { models }
}

/// Fixed response length assumed for cost accounting in experiments;
/// dollar values are illustrative, ratios are the contract.
const RESPONSE_TOKENS: u64 = 50;

fn decision_cost(
    config: &RouterConfig,
    vocab: &Vocab,
    queries: &[TokenSeq],
    pricing: &PricingTable,
) -> Result<f64> {
    let transcripts: Vec<Transcript> = queries
        .iter()
        .map(|q| {
            let outcome = route(config, vocab, q)?;
            let model_id = match outcome.decision {
                Decision::Strong => config.strong_id.clone(),
                Decision::Weak => config.weak_id.clone(),
            };
            Ok(Transcript {
                entries: vec![TranscriptEntry {
                    model_id,
                    input: String::new(),
                    tokens_in: q.len() as u64,
                    tokens_out: RESPONSE_TOKENS,
                }],
                decision: outcome.decision,
                score: outcome.score,
                user: None,
            })
        })
        .collect::<Result<_>>()?;
    cost(&transcripts, pricing)
}

/// Experiment configuration, deserialized from TOML or JSON. Paths are
/// resolved relative to the config file location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: PathBuf,
    pub vocab: PathBuf,
    /// Target scorers by name.
    pub scorers: BTreeMap<String, PathBuf>,
    /// Calibration target fraction; mutually exclusive with `tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Explicit thresholds per scorer name, when already calibrated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<BTreeMap<String, f64>>,
    pub gadget_sets: Vec<GadgetSetConfig>,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pricing: Option<PathBuf>,
    #[serde(default = "default_strong_id")]
    pub strong_id: String,
    #[serde(default = "default_weak_id")]
    pub weak_id: String,
}

fn default_strong_id() -> String {
    "strong-model".to_string()
}

fn default_weak_id() -> String {
    "weak-model".to_string()
}

/// A set of gadget files optimized against one surrogate scorer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GadgetSetConfig {
    pub surrogate: String,
    pub gadgets: Vec<PathBuf>,
}

impl ExperimentConfig {
    /// Load from TOML or JSON (by extension), resolving relative paths
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg: ExperimentConfig =
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                serde_json::from_str(&data)?
            } else {
                toml::from_str(&data).map_err(|e| Error::Toml(e.to_string()))?
            };
        if let Some(dir) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            };
            rebase(&mut cfg.workload);
            rebase(&mut cfg.vocab);
            for p in cfg.scorers.values_mut() {
                rebase(p);
            }
            for set in &mut cfg.gadget_sets {
                for p in &mut set.gadgets {
                    rebase(p);
                }
            }
            if let Some(p) = &mut cfg.pricing {
                rebase(p);
            }
        }
        if cfg.epsilon.is_none() && cfg.tau.is_none() {
            return Err(Error::Config("either epsilon or tau must be given".into()));
        }
        Ok(cfg)
    }
}

/// Metrics of one gadget against one target router.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GadgetEval {
    pub gadget: String,
    #[serde(flatten)]
    pub rates: RateReport,
    pub cost_before: f64,
    pub cost_after: f64,
}

/// Aggregates over a gadget set: mean plus standard error (sample
/// standard deviation / sqrt(#gadgets)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean_upgrade: Option<f64>,
    pub se_upgrade: Option<f64>,
    pub mean_downgrade: Option<f64>,
    pub se_downgrade: Option<f64>,
    pub strong_before: f64,
    pub mean_strong_after: f64,
    pub mean_cost_before: f64,
    pub mean_cost_after: f64,
}

/// One (surrogate, target) cell of the transfer matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixCell {
    pub surrogate: String,
    pub target: String,
    /// True on the diagonal: the gadgets were optimized on the target.
    pub white_box: bool,
    pub tau: f64,
    pub per_gadget: Vec<GadgetEval>,
    pub summary: CellSummary,
}

/// Full experiment output: the (surrogate x target) matrix with per-gadget
/// breakdowns and aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub workload: String,
    pub epsilon: Option<f64>,
    pub placement: Placement,
    pub cells: Vec<MatrixCell>,
    /// Scorer fingerprints by name, so reports can be traced to the
    /// exact parameters that produced them.
    pub fingerprints: BTreeMap<String, String>,
    pub se_convention: String,
}

fn summarize(per_gadget: &[GadgetEval]) -> CellSummary {
    let collect = |f: &dyn Fn(&GadgetEval) -> Option<f64>| -> Vec<f64> {
        per_gadget.iter().filter_map(f).collect()
    };
    let upgrades = collect(&|g| g.rates.upgrade);
    let downgrades = collect(&|g| g.rates.downgrade);
    let (mean_up, se_up) = if upgrades.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_se(&upgrades);
        (Some(m), Some(s))
    };
    let (mean_down, se_down) = if downgrades.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_se(&downgrades);
        (Some(m), Some(s))
    };
    let mean_of = |f: &dyn Fn(&GadgetEval) -> f64| {
        per_gadget.iter().map(f).sum::<f64>() / per_gadget.len() as f64
    };
    CellSummary {
        mean_upgrade: mean_up,
        se_upgrade: se_up,
        mean_downgrade: mean_down,
        se_downgrade: se_down,
        strong_before: per_gadget
            .first()
            .map(|g| g.rates.strong_before)
            .unwrap_or(0.0),
        mean_strong_after: mean_of(&|g| g.rates.strong_after),
        mean_cost_before: mean_of(&|g| g.cost_before),
        mean_cost_after: mean_of(&|g| g.cost_after),
    }
}

/// In-memory experiment inputs, for callers that do not go through files.
pub struct ExperimentInputs<'a> {
    pub workload: &'a Workload,
    pub vocab: &'a Vocab,
    /// Target scorers by name.
    pub scorers: BTreeMap<String, &'a ScorerParams>,
    pub epsilon: Option<f64>,
    pub tau: Option<BTreeMap<String, f64>>,
    /// `(surrogate name, gadgets)` sets. Gadget fingerprints, when set,
    /// must match the surrogate scorer's fingerprint.
    pub gadget_sets: Vec<(String, Vec<&'a Gadget>)>,
    pub placement: Placement,
    pub pricing: &'a PricingTable,
    pub strong_id: String,
    pub weak_id: String,
}

/// Evaluate every gadget set against every target scorer.
pub fn run_experiment(inputs: &ExperimentInputs) -> Result<EvalReport> {
    let calibration = inputs
        .workload
        .split_seqs(Split::Calibration, inputs.vocab);
    let eval = inputs.workload.split_seqs(Split::Eval, inputs.vocab);
    if eval.is_empty() {
        return Err(Error::Workload("workload has no eval split".into()));
    }

    let mut fingerprints = BTreeMap::new();
    for (name, scorer) in &inputs.scorers {
        fingerprints.insert(name.clone(), scorer.fingerprint());
    }
    // reject mislabeled gadget sets before any evaluation
    for (surrogate, gadgets) in &inputs.gadget_sets {
        let declared = fingerprints.get(surrogate).cloned().unwrap_or_default();
        for gadget in gadgets {
            if let Some(fp) = &gadget.scorer_fingerprint {
                if inputs.scorers.contains_key(surrogate) && *fp != declared {
                    return Err(Error::FingerprintMismatch {
                        gadget: fp.clone(),
                        declared,
                    });
                }
            }
        }
    }

    let mut cells = Vec::new();
    for (target_name, scorer) in &inputs.scorers {
        let tau = match (&inputs.tau, inputs.epsilon) {
            (Some(taus), _) if taus.contains_key(target_name) => taus[target_name],
            (_, Some(epsilon)) => calibrate(scorer, inputs.vocab, &calibration, epsilon)?,
            _ => {
                return Err(Error::Config(format!(
                    "no tau or epsilon for scorer {target_name}"
                )))
            }
        };
        let config = RouterConfig {
            scorer: (*scorer).clone(),
            tau,
            strong_id: inputs.strong_id.clone(),
            weak_id: inputs.weak_id.clone(),
        };
        let cost_before = decision_cost(&config, inputs.vocab, &eval, inputs.pricing)?;
        for (surrogate, gadgets) in &inputs.gadget_sets {
            let mut per_gadget = Vec::with_capacity(gadgets.len());
            for (i, gadget) in gadgets.iter().enumerate() {
                let rates =
                    upgrade_rate(&config, inputs.vocab, &eval, gadget, &inputs.placement)?;
                let confounded: Vec<TokenSeq> = eval
                    .iter()
                    .map(|q| confound(q, &gadget.tokens, &inputs.placement, inputs.vocab))
                    .collect();
                let cost_after =
                    decision_cost(&config, inputs.vocab, &confounded, inputs.pricing)?;
                per_gadget.push(GadgetEval {
                    gadget: format!("{surrogate}-g{i:02}"),
                    rates,
                    cost_before,
                    cost_after,
                });
            }
            let summary = summarize(&per_gadget);
            cells.push(MatrixCell {
                surrogate: surrogate.clone(),
                target: target_name.clone(),
                white_box: surrogate == target_name,
                tau,
                per_gadget,
                summary,
            });
        }
    }
    Ok(EvalReport {
        workload: inputs.workload.name.clone(),
        epsilon: inputs.epsilon,
        placement: inputs.placement.clone(),
        cells,
        fingerprints,
        se_convention: "sample standard deviation / sqrt(n_gadgets)".to_string(),
    })
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::textcore::write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        crate::textcore::read_json(path)
    }

    /// Per-gadget rows as CSV.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "surrogate",
            "target",
            "white_box",
            "gadget",
            "upgrade_pct",
            "downgrade_pct",
            "strong_before_pct",
            "strong_after_pct",
            "cost_before",
            "cost_after",
        ])
        .map_err(|e| Error::Config(e.to_string()))?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for cell in &self.cells {
            for g in &cell.per_gadget {
                w.write_record([
                    cell.surrogate.clone(),
                    cell.target.clone(),
                    cell.white_box.to_string(),
                    g.gadget.clone(),
                    fmt(g.rates.upgrade),
                    fmt(g.rates.downgrade),
                    format!("{:.4}", g.rates.strong_before),
                    format!("{:.4}", g.rates.strong_after),
                    format!("{:.6}", g.cost_before),
                    format!("{:.6}", g.cost_after),
                ])
                .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::io("report csv", e))?;
        Ok(())
    }
}

/// Defense evaluation of the perplexity filter against a gadget set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseReport {
    pub threshold: f64,
    pub fpr_target: f64,
    pub per_gadget: Vec<GadgetDefenseEval>,
    pub mean_auc: f64,
    pub se_auc: f64,
    pub clean_ppls: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GadgetDefenseEval {
    pub gadget: String,
    pub auc: f64,
    /// True-positive rate of the fitted threshold on this gadget's
    /// confounded queries.
    pub tpr_at_threshold: f64,
    pub attack_ppls: Vec<f64>,
}

/// Fit the filter on clean calibration queries, then measure clean vs
/// confounded separability on the eval split, per gadget.
pub fn defense_eval(
    lm: &NgramLM,
    vocab: &Vocab,
    clean_fit: &[TokenSeq],
    eval: &[TokenSeq],
    gadgets: &[&Gadget],
    placement: &Placement,
    fpr_target: f64,
) -> Result<DefenseReport> {
    let filter = fit_ppl_threshold(clean_fit, lm, fpr_target)?;
    let clean_ppls: Vec<f64> = eval
        .iter()
        .map(|q| perplexity(lm, q))
        .collect::<Result<_>>()?;
    let mut per_gadget = Vec::with_capacity(gadgets.len());
    for (i, gadget) in gadgets.iter().enumerate() {
        let attack_ppls: Vec<f64> = eval
            .iter()
            .map(|q| perplexity(lm, &confound(q, &gadget.tokens, placement, vocab)))
            .collect::<Result<_>>()?;
        let auc = mann_whitney_auc(&clean_ppls, &attack_ppls);
        let tpr = attack_ppls
            .iter()
            .filter(|&&p| p > filter.threshold)
            .count() as f64
            / attack_ppls.len() as f64;
        per_gadget.push(GadgetDefenseEval {
            gadget: format!("g{i:02}"),
            auc,
            tpr_at_threshold: tpr,
            attack_ppls,
        });
    }
    let aucs: Vec<f64> = per_gadget.iter().map(|g| g.auc).collect();
    let (mean_auc, se_auc) = mean_se(&aucs);
    Ok(DefenseReport {
        threshold: filter.threshold,
        fpr_target,
        per_gadget,
        mean_auc,
        se_auc,
        clean_ppls,
    })
}

impl DefenseReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::textcore::write_json(path, self)
    }

    /// Histogram-ready perplexity values: `kind,gadget,ppl` rows.
    pub fn write_ppl_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "gadget", "ppl"])
            .map_err(|e| Error::Config(e.to_string()))?;
        for &p in &self.clean_ppls {
            w.write_record(["clean", "", &format!("{p:.6}")])
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        for g in &self.per_gadget {
            for &p in &g.attack_ppls {
                w.write_record(["confounded", &g.gadget, &format!("{p:.6}")])
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::io("ppl csv", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confound::{AttackOptions, BaselineKind, InstructionSet};
    use crate::scorers::{fit_scorer, EmbedConfig, FitHyper, ScorerKind};

    #[test]
    fn workload_deterministic_per_seed() {
        let vocab = builtin_vocab();
        let dm = DifficultyModel::default();
        let a = gen_workload(100, &vocab, 5, &dm).unwrap();
        let b = gen_workload(100, &vocab, 5, &dm).unwrap();
        let c = gen_workload(100, &vocab, 6, &dm).unwrap();
        let texts = |w: &Workload| w.queries.iter().map(|q| q.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&a), texts(&b));
        assert_ne!(texts(&a), texts(&c));
    }

    #[test]
    fn workload_label_distribution_near_thirds() {
        let vocab = builtin_vocab();
        let w = gen_workload(1000, &vocab, 1, &DifficultyModel::default()).unwrap();
        for target in [0.0, 0.5, 1.0] {
            let frac = w
                .queries
                .iter()
                .filter(|q| q.label == Some(target))
                .count() as f64
                / 1000.0;
            assert!((frac - 1.0 / 3.0).abs() <= 0.10, "label {target}: {frac}");
        }
    }

    #[test]
    fn hard_queries_longer_than_easy() {
        let vocab = builtin_vocab();
        let w = gen_workload(1000, &vocab, 2, &DifficultyModel::default()).unwrap();
        let mean_len = |label: f64| {
            let lens: Vec<f64> = w
                .queries
                .iter()
                .filter(|q| q.label == Some(label))
                .map(|q| vocab.tokenize(&q.text).len() as f64)
                .collect();
            lens.iter().sum::<f64>() / lens.len() as f64
        };
        assert!(mean_len(1.0) > mean_len(0.0));
    }

    #[test]
    fn workload_splits_disjoint_and_jsonl_roundtrip() {
        let vocab = builtin_vocab();
        let w = gen_workload(50, &vocab, 3, &DifficultyModel::default()).unwrap();
        let total = w.split_texts(Split::Train).len()
            + w.split_texts(Split::Calibration).len()
            + w.split_texts(Split::Eval).len();
        assert_eq!(total, 50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        w.save(&path).unwrap();
        let loaded = Workload::load(&path).unwrap();
        assert_eq!(loaded.queries.len(), 50);
        assert_eq!(loaded.queries[7].text, w.queries[7].text);
    }

    #[test]
    fn scorer_reaches_ordering_accuracy_on_synthetic_workload() {
        let vocab = builtin_vocab();
        let w = gen_workload(600, &vocab, 4, &DifficultyModel::default()).unwrap();
        let examples = w.train_examples(&vocab).unwrap();
        let out = fit_scorer(
            ScorerKind::Cls,
            &examples,
            EmbedConfig { dim: 64, seed: 0 },
            &vocab,
            &FitHyper::default(),
        )
        .unwrap();
        // ordering accuracy over eval-split strong/weak pairs
        let eval: Vec<(TokenSeq, f64)> = w
            .queries
            .iter()
            .filter(|q| q.split == Split::Eval)
            .map(|q| (vocab.tokenize(&q.text), q.label.unwrap()))
            .collect();
        let strong: Vec<f64> = eval
            .iter()
            .filter(|(_, l)| *l == 1.0)
            .map(|(q, _)| crate::scorers::score_query(&out.params, &vocab, q).unwrap())
            .collect();
        let weak: Vec<f64> = eval
            .iter()
            .filter(|(_, l)| *l == 0.0)
            .map(|(q, _)| crate::scorers::score_query(&out.params, &vocab, q).unwrap())
            .collect();
        let acc = mann_whitney_auc(&weak, &strong);
        assert!(acc >= 0.8, "ordering accuracy {acc}");
    }

    fn tiny_router(vocab: &Vocab) -> RouterConfig {
        let w = gen_workload(200, vocab, 7, &DifficultyModel::default()).unwrap();
        let examples = w.train_examples(vocab).unwrap();
        let out = fit_scorer(
            ScorerKind::Cls,
            &examples,
            EmbedConfig { dim: 32, seed: 0 },
            vocab,
            &FitHyper::default(),
        )
        .unwrap();
        let cal = w.split_seqs(Split::Calibration, vocab);
        let tau = calibrate(&out.params, vocab, &cal, 0.5).unwrap();
        RouterConfig {
            scorer: out.params,
            tau,
            strong_id: "strong-model".into(),
            weak_id: "weak-model".into(),
        }
    }

    #[test]
    fn empty_gadget_is_noop_for_rates() {
        let vocab = builtin_vocab();
        let config = tiny_router(&vocab);
        let eval: Vec<TokenSeq> = ["what is the best dog ?", "explain the entropy theorem"]
            .iter()
            .map(|t| vocab.tokenize(t))
            .collect();
        let empty = Gadget {
            tokens: TokenSeq::empty(),
            objective: 0.0,
            trace: vec![],
            options: AttackOptions::default(),
            scorer_fingerprint: None,
        };
        let r = upgrade_rate(&config, &vocab, &eval, &empty, &Placement::default()).unwrap();
        assert_eq!(r.upgrade.unwrap_or(0.0), 0.0);
        assert_eq!(r.downgrade.unwrap_or(0.0), 0.0);
        assert_eq!(r.strong_before, r.strong_after);
    }

    #[test]
    fn all_strong_eval_reports_absent_upgrade() {
        let vocab = builtin_vocab();
        let mut config = tiny_router(&vocab);
        config.tau = crate::gateway::TAU_ALL_STRONG;
        let eval = vec![vocab.tokenize("what is a dog ?")];
        let g = crate::confound::baseline_gadget(
            &BaselineKind::InitRepeat,
            3,
            &vocab,
            0,
            &InstructionSet::default(),
        )
        .unwrap();
        let r = upgrade_rate(&config, &vocab, &eval, &g, &Placement::default()).unwrap();
        assert!(r.upgrade.is_none());
        assert!(r.downgrade.is_some());
    }

    #[test]
    fn mean_se_hand_case() {
        let (m, se) = mean_se(&[90.0, 100.0]);
        assert_eq!(m, 95.0);
        assert!((se - 5.0).abs() < 1e-12);
        let (m, se) = mean_se(&[100.0; 10]);
        assert_eq!(m, 100.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn transfer_matrix_structure_and_fingerprint_check() {
        let vocab = builtin_vocab();
        let w = gen_workload(200, &vocab, 9, &DifficultyModel::default()).unwrap();
        let examples = w.train_examples(&vocab).unwrap();
        let cfg = EmbedConfig { dim: 32, seed: 0 };
        let hyper = FitHyper::default();
        let mf = fit_scorer(ScorerKind::Mf, &examples, cfg, &vocab, &hyper).unwrap().params;
        let cls = fit_scorer(ScorerKind::Cls, &examples, cfg, &vocab, &hyper)
            .unwrap()
            .params;
        let set = InstructionSet::default();
        let mut g_mf =
            crate::confound::baseline_gadget(&BaselineKind::Random, 4, &vocab, 1, &set)
                .unwrap();
        g_mf.scorer_fingerprint = Some(mf.fingerprint());
        let mut g_cls =
            crate::confound::baseline_gadget(&BaselineKind::Random, 4, &vocab, 2, &set)
                .unwrap();
        g_cls.scorer_fingerprint = Some(cls.fingerprint());

        let pricing = default_pricing("strong-model", "weak-model");
        let mut scorers = BTreeMap::new();
        scorers.insert("mf".to_string(), &mf);
        scorers.insert("cls".to_string(), &cls);
        let inputs = ExperimentInputs {
            workload: &w,
            vocab: &vocab,
            scorers: scorers.clone(),
            epsilon: Some(0.5),
            tau: None,
            gadget_sets: vec![
                ("mf".to_string(), vec![&g_mf]),
                ("cls".to_string(), vec![&g_cls]),
            ],
            placement: Placement::default(),
            pricing: &pricing,
            strong_id: "strong-model".into(),
            weak_id: "weak-model".into(),
        };
        let report = run_experiment(&inputs).unwrap();
        assert_eq!(report.cells.len(), 4);
        let white: Vec<bool> = report.cells.iter().map(|c| c.white_box).collect();
        assert_eq!(white.iter().filter(|&&b| b).count(), 2);
        for cell in &report.cells {
            assert_eq!(cell.white_box, cell.surrogate == cell.target);
        }

        // mislabeled surrogate must be rejected
        let bad = ExperimentInputs {
            gadget_sets: vec![("cls".to_string(), vec![&g_mf])],
            scorers,
            workload: &w,
            vocab: &vocab,
            epsilon: Some(0.5),
            tau: None,
            placement: Placement::default(),
            pricing: &pricing,
            strong_id: "strong-model".into(),
            weak_id: "weak-model".into(),
        };
        assert!(matches!(
            run_experiment(&bad),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn report_csv_has_per_gadget_rows() {
        let vocab = builtin_vocab();
        let w = gen_workload(100, &vocab, 11, &DifficultyModel::default()).unwrap();
        let examples = w.train_examples(&vocab).unwrap();
        let cfg = EmbedConfig { dim: 32, seed: 0 };
        let sw = fit_scorer(ScorerKind::Sw, &examples, cfg, &vocab, &FitHyper::default())
            .unwrap()
            .params;
        let set = InstructionSet::default();
        let g = crate::confound::baseline_gadget(&BaselineKind::Random, 4, &vocab, 1, &set)
            .unwrap();
        let pricing = default_pricing("strong-model", "weak-model");
        let mut scorers = BTreeMap::new();
        scorers.insert("sw".to_string(), &sw);
        let report = run_experiment(&ExperimentInputs {
            workload: &w,
            vocab: &vocab,
            scorers,
            epsilon: Some(0.5),
            tau: None,
            gadget_sets: vec![("sw".to_string(), vec![&g, &g])],
            placement: Placement::default(),
            pricing: &pricing,
            strong_id: "strong-model".into(),
            weak_id: "weak-model".into(),
        })
        .unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3); // header + 2 gadget rows
    }
}
