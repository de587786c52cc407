//! The control plane proper: routing decision, threshold calibration, the
//! policy predicate, transcripts, cost accounting, model backends, and a
//! serve mode.

mod serve;

pub use serve::{serve, ServeHandle, ServeOptions};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorers::{score_query, ScorerParams};
use crate::textcore::{TokenSeq, Vocab};

/// `tau` sentinel for the degenerate calibration `epsilon = 1`: every
/// query routes strong.
pub const TAU_ALL_STRONG: f64 = f64::NEG_INFINITY;

/// Offset added above the maximum observed score when `epsilon * N < 1`,
/// so nothing routes strong.
pub const TAU_DELTA: f64 = 1e-9;

/// Routing decision of a binary prescriptive router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Weak,
    Strong,
}

/// `omega = (S, theta, tau)` plus the model-pair identifiers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouterConfig {
    pub scorer: ScorerParams,
    pub tau: f64,
    pub strong_id: String,
    pub weak_id: String,
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strong_id == self.weak_id {
            return Err(Error::Config("strong and weak model ids must differ".into()));
        }
        if self.tau.is_nan() {
            return Err(Error::Config("tau must not be NaN".into()));
        }
        self.scorer.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::textcore::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RouterConfig = crate::textcore::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A routing decision together with the score that produced it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub decision: Decision,
    pub score: f64,
}

/// Route a query: strong iff `score >= tau` (equality routes strong).
pub fn route(config: &RouterConfig, vocab: &Vocab, query: &TokenSeq) -> Result<RouteOutcome> {
    let score = score_query(&config.scorer, vocab, query)?;
    let decision = if score >= config.tau {
        Decision::Strong
    } else {
        Decision::Weak
    };
    Ok(RouteOutcome { decision, score })
}

/// Calibrate `tau` on a raw score multiset: the smallest observed score
/// such that the fraction of scores `>= tau` is at most `epsilon`.
///
/// Degenerate cases: `epsilon = 1` returns the all-strong sentinel;
/// when even a single strong routing would exceed `epsilon` (or no
/// observed score satisfies the bound), returns `max + delta` so nothing
/// routes strong.
pub fn calibrate_scores(scores: &[f64], epsilon: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    assert!((0.0..=1.0).contains(&epsilon), "epsilon must be in [0,1]");
    if epsilon == 1.0 {
        return Ok(TAU_ALL_STRONG);
    }
    let n = scores.len() as f64;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if epsilon * n < 1.0 {
        return Ok(max + TAU_DELTA);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    // ascending distinct scores; pick the smallest whose >= count obeys the bound
    for &tau in &sorted {
        let frac = scores.iter().filter(|&&s| s >= tau).count() as f64 / n;
        if frac <= epsilon {
            return Ok(tau);
        }
    }
    Ok(max + TAU_DELTA)
}

/// Score the calibration queries and calibrate `tau` so that at most an
/// `epsilon` fraction of them routes to the strong model.
pub fn calibrate(
    scorer: &ScorerParams,
    vocab: &Vocab,
    queries: &[TokenSeq],
    epsilon: f64,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let scores = queries
        .iter()
        .map(|q| score_query(scorer, vocab, q))
        .collect::<Result<Vec<_>>>()?;
    calibrate_scores(&scores, epsilon)
}

/// The policy predicate: true iff the strong-model fraction over the
/// decisions is bounded by `epsilon`.
pub fn policy_check(decisions: &[Decision], epsilon: f64) -> bool {
    assert!(!decisions.is_empty(), "policy predicate needs decisions");
    let strong = decisions.iter().filter(|d| **d == Decision::Strong).count();
    strong as f64 / decisions.len() as f64 <= epsilon
}

/// One model invocation inside a transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub model_id: String,
    pub input: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Ordered record of one inference flow. Binary routers produce exactly
/// one entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    pub decision: Decision,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
}

/// Per-model input/output prices per 1M tokens.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
}

/// Pricing for every model id that may appear in transcripts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PricingTable {
    pub models: BTreeMap<String, ModelPrice>,
}

impl PricingTable {
    /// Load from TOML or JSON, selected by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let table: PricingTable = if path.extension().and_then(|e| e.to_str()) == Some("toml")
        {
            toml::from_str(&data).map_err(|e| Error::Toml(e.to_string()))?
        } else {
            serde_json::from_str(&data)?
        };
        for (id, price) in &table.models {
            if price.input_per_mtok < 0.0 || price.output_per_mtok < 0.0 {
                return Err(Error::Config(format!("negative price for model {id}")));
            }
        }
        Ok(table)
    }
}

/// Total cost of the transcripts in currency units.
///
/// Prices are converted to integer micro-units so sums are exact and
/// additive; the result is rounded only by the final conversion to f64.
pub fn cost(transcripts: &[Transcript], pricing: &PricingTable) -> Result<f64> {
    let mut total_micro_mtok: u128 = 0;
    for t in transcripts {
        for entry in &t.entries {
            let price = pricing
                .models
                .get(&entry.model_id)
                .ok_or_else(|| Error::UnknownModel(entry.model_id.clone()))?;
            let p_in = (price.input_per_mtok * 1e6).round() as u128;
            let p_out = (price.output_per_mtok * 1e6).round() as u128;
            total_micro_mtok +=
                entry.tokens_in as u128 * p_in + entry.tokens_out as u128 * p_out;
        }
    }
    // micro-price units per token, over 1M tokens: divide by 1e6 * 1e6
    Ok(total_micro_mtok as f64 / 1e12)
}

/// A model stand-in: deterministic stub template or an HTTP endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelBackend {
    /// `{input}` in the template is replaced with the model input.
    Stub { template: String },
    Http {
        endpoint: crate::scorers::EndpointDescriptor,
    },
}

impl ModelBackend {
    pub fn invoke(&self, model_id: &str, input: &str) -> Result<String> {
        match self {
            ModelBackend::Stub { template } => Ok(template.replace("{input}", input)),
            ModelBackend::Http { endpoint } => {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(std::time::Duration::from_millis(
                        endpoint.timeout_ms,
                    )))
                    .build()
                    .into();
                let mut response =
                    agent.post(&endpoint.url).send(input).map_err(|e| Error::Backend {
                        model: model_id.to_string(),
                        message: e.to_string(),
                    })?;
                response.body_mut().read_to_string().map_err(|e| Error::Backend {
                    model: model_id.to_string(),
                    message: e.to_string(),
                })
            }
        }
    }
}

/// Route the query and invoke exactly one backend, recording a transcript
/// with token counts. On backend failure the error still carries the
/// transcript of the attempted decision.
pub fn execute(
    config: &RouterConfig,
    backends: &BTreeMap<String, ModelBackend>,
    vocab: &Vocab,
    query: &TokenSeq,
    user: Option<&str>,
) -> Result<(Transcript, String)> {
    for id in [&config.strong_id, &config.weak_id] {
        if !backends.contains_key(id) {
            return Err(Error::UnknownBackend(id.clone()));
        }
    }
    let outcome = route(config, vocab, query)?;
    let model_id = match outcome.decision {
        Decision::Strong => config.strong_id.clone(),
        Decision::Weak => config.weak_id.clone(),
    };
    let input = query.text(vocab);
    let tokens_in = query.len() as u64;
    let mut transcript = Transcript {
        entries: vec![TranscriptEntry {
            model_id: model_id.clone(),
            input: input.clone(),
            tokens_in,
            tokens_out: 0,
        }],
        decision: outcome.decision,
        score: outcome.score,
        user: user.map(str::to_string),
    };
    let backend = &backends[&model_id];
    let response = backend.invoke(&model_id, &input)?;
    transcript.entries[0].tokens_out = vocab.tokenize(&response).len() as u64;
    Ok((transcript, response))
}

/// Append transcripts to a JSONL log, one transcript per line.
pub fn append_transcripts(path: &Path, transcripts: &[Transcript]) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for t in transcripts {
        serde_json::to_writer(&mut file, t)?;
        file.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::{EmbedConfig, StoredExample};
    use crate::textcore::{embed, Vocab};

    fn const_scorer(vocab: &Vocab, label: f64) -> ScorerParams {
        // SW with a single stored example returns that label everywhere
        let cfg = EmbedConfig { dim: 8, seed: 0 };
        ScorerParams::Sw {
            embed: cfg,
            gamma: 1.0,
            examples: vec![StoredExample {
                vector: embed(vocab, &vocab.tokenize("anchor"), cfg.dim, cfg.seed),
                label,
            }],
        }
    }

    fn config(vocab: &Vocab, score: f64, tau: f64) -> RouterConfig {
        RouterConfig {
            scorer: const_scorer(vocab, score),
            tau,
            strong_id: "strong".into(),
            weak_id: "weak".into(),
        }
    }

    #[test]
    fn below_threshold_routes_weak() {
        let v = Vocab::from_corpus(["anchor q"]);
        let out = route(&config(&v, 0.2, 0.3), &v, &v.tokenize("q")).unwrap();
        assert_eq!(out.decision, Decision::Weak);
        assert_eq!(out.score, 0.2);
    }

    #[test]
    fn at_threshold_routes_strong() {
        let v = Vocab::from_corpus(["anchor q"]);
        let out = route(&config(&v, 0.3, 0.3), &v, &v.tokenize("q")).unwrap();
        assert_eq!(out.decision, Decision::Strong);
    }

    #[test]
    fn all_strong_sentinel() {
        let v = Vocab::from_corpus(["anchor q"]);
        let out = route(&config(&v, 0.0, TAU_ALL_STRONG), &v, &v.tokenize("q")).unwrap();
        assert_eq!(out.decision, Decision::Strong);
    }

    #[test]
    fn calibrate_half_of_four() {
        let tau = calibrate_scores(&[0.1, 0.2, 0.3, 0.4], 0.5).unwrap();
        assert_eq!(tau, 0.3);
        let strong = [0.1, 0.2, 0.3, 0.4].iter().filter(|&&s| s >= tau).count();
        assert_eq!(strong, 2);
    }

    #[test]
    fn calibrate_epsilon_zero_blocks_everything() {
        let tau = calibrate_scores(&[0.1, 0.2, 0.3, 0.4], 0.0).unwrap();
        assert_eq!(tau, 0.4 + TAU_DELTA);
        assert_eq!([0.1, 0.2, 0.3, 0.4].iter().filter(|&&s| s >= tau).count(), 0);
    }

    #[test]
    fn calibrate_epsilon_one_is_sentinel() {
        assert_eq!(
            calibrate_scores(&[0.5, 0.9], 1.0).unwrap(),
            TAU_ALL_STRONG
        );
    }

    #[test]
    fn calibrate_empty_errors() {
        assert!(matches!(
            calibrate_scores(&[], 0.5),
            Err(Error::EmptyCalibrationSet)
        ));
    }

    #[test]
    fn policy_predicate() {
        let d = |n_strong: usize, n: usize| -> Vec<Decision> {
            (0..n)
                .map(|i| if i < n_strong { Decision::Strong } else { Decision::Weak })
                .collect()
        };
        assert!(policy_check(&d(3, 10), 0.5));
        assert!(!policy_check(&d(6, 10), 0.5));
        assert!(policy_check(&d(0, 10), 0.0));
    }

    #[test]
    fn cost_paper_price_example() {
        let mut pricing = PricingTable::default();
        pricing.models.insert(
            "strong".into(),
            ModelPrice {
                input_per_mtok: 2.5,
                output_per_mtok: 10.0,
            },
        );
        let t = Transcript {
            entries: vec![TranscriptEntry {
                model_id: "strong".into(),
                input: String::new(),
                tokens_in: 1000,
                tokens_out: 100,
            }],
            decision: Decision::Strong,
            score: 1.0,
            user: None,
        };
        assert_eq!(cost(&[t.clone()], &pricing).unwrap(), 0.0035);
        assert_eq!(cost(&[], &pricing).unwrap(), 0.0);
        let double = cost(&[t.clone(), t.clone()], &pricing).unwrap();
        assert_eq!(double, 2.0 * cost(&[t], &pricing).unwrap());
    }

    #[test]
    fn cost_unknown_model_errors() {
        let t = Transcript {
            entries: vec![TranscriptEntry {
                model_id: "mystery".into(),
                input: String::new(),
                tokens_in: 1,
                tokens_out: 1,
            }],
            decision: Decision::Weak,
            score: 0.0,
            user: None,
        };
        assert!(matches!(
            cost(&[t], &PricingTable::default()),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn execute_uses_stub_and_counts_tokens() {
        let v = Vocab::from_corpus(["anchor what is two plus two ? weak : strong"]);
        let mut backends = BTreeMap::new();
        backends.insert(
            "weak".to_string(),
            ModelBackend::Stub {
                template: "WEAK:{input}".into(),
            },
        );
        backends.insert(
            "strong".to_string(),
            ModelBackend::Stub {
                template: "STRONG:{input}".into(),
            },
        );
        let cfg = config(&v, 0.2, 0.5);
        let q = v.tokenize("what is two plus two ?");
        let (transcript, response) = execute(&cfg, &backends, &v, &q, Some("u1")).unwrap();
        assert!(response.starts_with("WEAK:"));
        assert_eq!(transcript.entries.len(), 1);
        assert_eq!(transcript.entries[0].tokens_in, 6);
        assert!(transcript.entries[0].tokens_out > 0);
        assert_eq!(transcript.user.as_deref(), Some("u1"));
    }

    #[test]
    fn execute_http_backend_down_names_model() {
        let v = Vocab::from_corpus(["anchor q"]);
        let mut backends = BTreeMap::new();
        backends.insert(
            "weak".to_string(),
            ModelBackend::Http {
                endpoint: crate::scorers::EndpointDescriptor {
                    url: "http://127.0.0.1:1/model".into(),
                    bearer_token_env: None,
                    timeout_ms: 300,
                },
            },
        );
        backends.insert(
            "strong".to_string(),
            ModelBackend::Stub {
                template: "S".into(),
            },
        );
        let cfg = config(&v, 0.1, 0.5);
        match execute(&cfg, &backends, &v, &v.tokenize("q"), None) {
            Err(Error::Backend { model, .. }) => assert_eq!(model, "weak"),
            other => panic!("expected backend error, got {other:?}"),
        }
    }

    #[test]
    fn lowering_tau_never_downgrades() {
        let v = Vocab::from_corpus(["anchor a b c"]);
        let queries = ["a", "b c", "anchor"];
        let hi = config(&v, 0.4, 0.6);
        let lo = config(&v, 0.4, 0.2);
        for q in queries {
            let seq = v.tokenize(q);
            let d_hi = route(&hi, &v, &seq).unwrap().decision;
            let d_lo = route(&lo, &v, &seq).unwrap().decision;
            if d_hi == Decision::Strong {
                assert_eq!(d_lo, Decision::Strong);
            }
        }
    }
}
