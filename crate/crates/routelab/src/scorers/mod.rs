//! Scoring functions `S : query -> [0,1]` for all four router families,
//! their training procedures, and an adapter for external scorers.
//!
//! * `SW` — similarity-weighted preference scoring: stores the training
//!   embeddings and labels and returns the similarity-weighted mean label.
//! * `MF` — matrix factorization: bilinear per-model scores, routed by
//!   `sigma(score_strong - score_weak)`.
//! * `CLS` — 3-class linear classifier (weak-better / tie / strong-better).
//! * `LLMPROXY` — cumulative-logit ordinal regression producing a 1-5
//!   grade, returned normalized to [0,1].
//!
//! Every score is deterministic and in [0,1], so one threshold convention
//! serves all routers.

mod external;
mod fit;

pub use external::{external_score, EndpointDescriptor};
pub use fit::{fit_scorer, FitHyper, FitOutcome, ScorerKind};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::{cosine_sim, embed, fnv1a64, TokenSeq, Vocab};

/// Schema tag for persisted scorer parameters (and the perplexity filter,
/// which shares the envelope).
pub const SCHEMA: &str = "scorers/v1";

/// Preference label for a training query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    /// The weak model sufficed (y = 0).
    Weak,
    /// Tie (y = 0.5).
    Tie,
    /// The strong model was required (y = 1).
    Strong,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Weak => 0.0,
            Label::Tie => 0.5,
            Label::Strong => 1.0,
        }
    }

    /// Class index for the 3-class classifier.
    pub fn class(self) -> usize {
        match self {
            Label::Weak => 0,
            Label::Tie => 1,
            Label::Strong => 2,
        }
    }

    /// Ordinal grade on the 1-5 scale.
    pub fn grade(self) -> usize {
        match self {
            Label::Weak => 1,
            Label::Tie => 3,
            Label::Strong => 5,
        }
    }

    pub fn from_value(v: f64) -> Option<Label> {
        if v == 0.0 {
            Some(Label::Weak)
        } else if v == 0.5 {
            Some(Label::Tie)
        } else if v == 1.0 {
            Some(Label::Strong)
        } else {
            None
        }
    }
}

/// A labeled training query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub query: TokenSeq,
    pub label: Label,
}

/// Embedder configuration shared by fit and score time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { dim: 256, seed: 0 }
    }
}

/// A stored (embedding, label) pair for the SW scorer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredExample {
    pub vector: Vec<f64>,
    pub label: f64,
}

/// Trained parameters of a scoring function, one variant per router family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ScorerParams {
    #[serde(rename = "SW")]
    Sw {
        embed: EmbedConfig,
        gamma: f64,
        examples: Vec<StoredExample>,
    },
    #[serde(rename = "MF")]
    Mf {
        embed: EmbedConfig,
        /// Bilinear matrix, row-major `dim x dim`.
        w: Vec<f64>,
        v_strong: Vec<f64>,
        v_weak: Vec<f64>,
        b_strong: f64,
        b_weak: f64,
    },
    #[serde(rename = "CLS")]
    Cls {
        embed: EmbedConfig,
        /// Row-major `3 x dim`, class order weak-better / tie / strong-better.
        weights: Vec<f64>,
        biases: [f64; 3],
    },
    #[serde(rename = "LLMPROXY")]
    LlmProxy {
        embed: EmbedConfig,
        w: Vec<f64>,
        /// Four strictly increasing cut points of the cumulative-logit model.
        thresholds: [f64; 4],
    },
    #[serde(rename = "EXTERNAL")]
    External { endpoint: EndpointDescriptor },
}

impl ScorerParams {
    /// Embedder configuration, if this scorer embeds locally.
    pub fn embed_config(&self) -> Option<EmbedConfig> {
        match self {
            ScorerParams::Sw { embed, .. }
            | ScorerParams::Mf { embed, .. }
            | ScorerParams::Cls { embed, .. }
            | ScorerParams::LlmProxy { embed, .. } => Some(*embed),
            ScorerParams::External { .. } => None,
        }
    }

    /// Stable hex fingerprint of the serialized parameters. Used to tie
    /// gadgets to the scorer they were optimized against.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scorer params serialize");
        format!("{:016x}", fnv1a64(&bytes))
    }

    /// Check internal dimension consistency; useful after deserializing.
    pub fn validate(&self) -> Result<()> {
        let check = |expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, got })
            }
        };
        match self {
            ScorerParams::Sw { embed, examples, .. } => {
                if examples.is_empty() {
                    return Err(Error::Config("SW scorer has no stored examples".into()));
                }
                for ex in examples {
                    check(embed.dim, ex.vector.len())?;
                }
            }
            ScorerParams::Mf {
                embed,
                w,
                v_strong,
                v_weak,
                ..
            } => {
                check(embed.dim * embed.dim, w.len())?;
                check(embed.dim, v_strong.len())?;
                check(embed.dim, v_weak.len())?;
            }
            ScorerParams::Cls { embed, weights, .. } => {
                check(3 * embed.dim, weights.len())?;
            }
            ScorerParams::LlmProxy {
                embed,
                w,
                thresholds,
            } => {
                check(embed.dim, w.len())?;
                if !(thresholds[0] < thresholds[1]
                    && thresholds[1] < thresholds[2]
                    && thresholds[2] < thresholds[3])
                {
                    return Err(Error::Config(
                        "LLMPROXY thresholds must be strictly increasing".into(),
                    ));
                }
            }
            ScorerParams::External { .. } => {}
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct ScorerFile<'a> {
            schema: &'a str,
            #[serde(flatten)]
            params: &'a ScorerParams,
        }
        crate::textcore::write_json(
            path,
            &ScorerFile {
                schema: SCHEMA,
                params: self,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct ScorerFile {
            schema: String,
            #[serde(flatten)]
            params: ScorerParams,
        }
        let file: ScorerFile = crate::textcore::read_json(path)?;
        if file.schema != SCHEMA {
            return Err(Error::Schema {
                expected: SCHEMA.to_string(),
                got: file.schema,
            });
        }
        file.params.validate()?;
        Ok(file.params)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn mat_vec(w: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    out
}

/// Expected grade in [1,5] of the cumulative-logit model at utility `u`.
pub(crate) fn ordinal_expected_grade(thresholds: &[f64; 4], u: f64) -> f64 {
    // P(g <= k) = sigma(theta_k - u); p_k = cdf_k - cdf_{k-1}
    let mut expected = 0.0;
    let mut prev_cdf = 0.0;
    for (i, &th) in thresholds.iter().enumerate() {
        let cdf = sigmoid(th - u);
        expected += (i + 1) as f64 * (cdf - prev_cdf);
        prev_cdf = cdf;
    }
    expected += 5.0 * (1.0 - prev_cdf);
    expected
}

/// Score a query with trained parameters. Pure and deterministic: the same
/// params and query yield the same score bit-for-bit.
pub fn score_query(params: &ScorerParams, vocab: &Vocab, query: &TokenSeq) -> Result<f64> {
    match params {
        ScorerParams::Sw {
            embed: cfg,
            gamma,
            examples,
        } => {
            let e = embed(vocab, query, cfg.dim, cfg.seed);
            let mut wsum = 0.0;
            let mut wy = 0.0;
            for ex in examples {
                let w = (gamma * cosine_sim(&e, &ex.vector)).exp();
                wsum += w;
                wy += w * ex.label;
            }
            Ok(wy / wsum)
        }
        ScorerParams::Mf {
            embed: cfg,
            w,
            v_strong,
            v_weak,
            b_strong,
            b_weak,
        } => {
            let e = embed(vocab, query, cfg.dim, cfg.seed);
            let we = mat_vec(w, &e, cfg.dim, cfg.dim);
            let s_strong: f64 =
                v_strong.iter().zip(&we).map(|(a, b)| a * b).sum::<f64>() + b_strong;
            let s_weak: f64 =
                v_weak.iter().zip(&we).map(|(a, b)| a * b).sum::<f64>() + b_weak;
            Ok(sigmoid(s_strong - s_weak))
        }
        ScorerParams::Cls {
            embed: cfg,
            weights,
            biases,
        } => {
            let e = embed(vocab, query, cfg.dim, cfg.seed);
            let mut logits = mat_vec(weights, &e, 3, cfg.dim);
            for (z, b) in logits.iter_mut().zip(biases) {
                *z += b;
            }
            let p = softmax(&logits);
            Ok(1.0 - p[Label::Weak.class()])
        }
        ScorerParams::LlmProxy {
            embed: cfg,
            w,
            thresholds,
        } => {
            let e = embed(vocab, query, cfg.dim, cfg.seed);
            let u: f64 = w.iter().zip(&e).map(|(a, b)| a * b).sum();
            Ok((ordinal_expected_grade(thresholds, u) - 1.0) / 4.0)
        }
        ScorerParams::External { .. } => Err(Error::ExternalScorerLocal),
    }
}
