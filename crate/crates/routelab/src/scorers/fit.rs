//! Training procedures: full-batch gradient descent with a fixed learning
//! rate, fixed epoch count, and seed-controlled initialization.
//! Reproducibility over speed: the same seed and data give identical
//! parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mat_vec, EmbedConfig, PreferenceExample, ScorerParams, StoredExample};
use crate::error::{Error, Result};
use crate::textcore::{embed, Vocab};

/// Trainable scorer families (`EXTERNAL` has nothing to fit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerKind {
    Sw,
    Mf,
    Cls,
    LlmProxy,
}

impl ScorerKind {
    pub fn parse(s: &str) -> Option<ScorerKind> {
        match s.to_ascii_lowercase().as_str() {
            "sw" => Some(ScorerKind::Sw),
            "mf" => Some(ScorerKind::Mf),
            "cls" => Some(ScorerKind::Cls),
            "llmproxy" => Some(ScorerKind::LlmProxy),
            _ => None,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// SW sharpness.
    pub gamma: f64,
}

impl Default for FitHyper {
    fn default() -> Self {
        FitHyper {
            learning_rate: 0.5,
            epochs: 200,
            seed: 0,
            gamma: 5.0,
        }
    }
}

/// Fitted parameters plus the recorded per-epoch training loss.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ScorerParams,
    pub loss_by_epoch: Vec<f64>,
}

/// Maximum allowed loss increase over any 10-epoch window.
const DIVERGENCE_TOLERANCE: f64 = 1e-3;

fn check_loss_trace(loss: &[f64]) -> Result<()> {
    for i in 10..loss.len() {
        if loss[i] > loss[i - 10] + DIVERGENCE_TOLERANCE {
            return Err(Error::TrainingDiverged { epoch: i });
        }
    }
    Ok(())
}

fn small_init(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random::<f64>() * 0.2 - 0.1).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const P_EPS: f64 = 1e-12;

/// Fit a scorer of the given kind on labeled examples.
pub fn fit_scorer(
    kind: ScorerKind,
    examples: &[PreferenceExample],
    embed_cfg: EmbedConfig,
    vocab: &Vocab,
    hyper: &FitHyper,
) -> Result<FitOutcome> {
    let distinct = {
        let mut labels: Vec<_> = examples.iter().map(|e| e.label).collect();
        labels.sort_by(|a, b| a.value().partial_cmp(&b.value()).unwrap());
        labels.dedup();
        labels.len()
    };
    if examples.len() < 2 || distinct < 2 {
        return Err(Error::LabelsNotSeparable);
    }

    let vectors: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| embed(vocab, &e.query, embed_cfg.dim, embed_cfg.seed))
        .collect();

    match kind {
        ScorerKind::Sw => {
            let stored = vectors
                .iter()
                .zip(examples)
                .map(|(v, e)| StoredExample {
                    vector: v.clone(),
                    label: e.label.value(),
                })
                .collect();
            Ok(FitOutcome {
                params: ScorerParams::Sw {
                    embed: embed_cfg,
                    gamma: hyper.gamma,
                    examples: stored,
                },
                loss_by_epoch: Vec::new(),
            })
        }
        ScorerKind::Mf => fit_mf(examples, &vectors, embed_cfg, hyper),
        ScorerKind::Cls => fit_cls(examples, &vectors, embed_cfg, hyper),
        ScorerKind::LlmProxy => fit_llmproxy(examples, &vectors, embed_cfg, hyper),
    }
}

/// Cross-entropy of `sigma(score_strong - score_weak)` against the label
/// (ties target 0.5), minimized over the bilinear matrix, model vectors,
/// and biases.
fn fit_mf(
    examples: &[PreferenceExample],
    vectors: &[Vec<f64>],
    cfg: EmbedConfig,
    hyper: &FitHyper,
) -> Result<FitOutcome> {
    let d = cfg.dim;
    let n = examples.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut w = small_init(&mut rng, d * d);
    let mut v_strong = small_init(&mut rng, d);
    let mut v_weak = small_init(&mut rng, d);
    let mut b_strong = 0.0;
    let mut b_weak = 0.0;

    let mut loss_by_epoch = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let mut grad_w = vec![0.0; d * d];
        let mut grad_vs = vec![0.0; d];
        let mut grad_vw = vec![0.0; d];
        let mut grad_bs = 0.0;
        let mut grad_bw = 0.0;
        let mut loss = 0.0;
        for (ex, e) in examples.iter().zip(vectors) {
            let y = ex.label.value();
            let we = mat_vec(&w, e, d, d);
            let diff: f64 = v_strong
                .iter()
                .zip(&v_weak)
                .zip(&we)
                .map(|((s, wk), u)| (s - wk) * u)
                .sum::<f64>()
                + b_strong
                - b_weak;
            let p = sigmoid(diff).clamp(P_EPS, 1.0 - P_EPS);
            loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            let g = p - y;
            for i in 0..d {
                grad_vs[i] += g * we[i];
                grad_vw[i] -= g * we[i];
                let vd = v_strong[i] - v_weak[i];
                let row = &mut grad_w[i * d..(i + 1) * d];
                for (rj, ej) in row.iter_mut().zip(e) {
                    *rj += g * vd * ej;
                }
            }
            grad_bs += g;
            grad_bw -= g;
        }
        let lr = hyper.learning_rate / n;
        for (p, g) in w.iter_mut().zip(&grad_w) {
            *p -= lr * g;
        }
        for (p, g) in v_strong.iter_mut().zip(&grad_vs) {
            *p -= lr * g;
        }
        for (p, g) in v_weak.iter_mut().zip(&grad_vw) {
            *p -= lr * g;
        }
        b_strong -= lr * grad_bs;
        b_weak -= lr * grad_bw;
        loss_by_epoch.push(loss / n);
    }
    check_loss_trace(&loss_by_epoch)?;
    Ok(FitOutcome {
        params: ScorerParams::Mf {
            embed: cfg,
            w,
            v_strong,
            v_weak,
            b_strong,
            b_weak,
        },
        loss_by_epoch,
    })
}

/// 3-class cross-entropy over a linear softmax classifier.
fn fit_cls(
    examples: &[PreferenceExample],
    vectors: &[Vec<f64>],
    cfg: EmbedConfig,
    hyper: &FitHyper,
) -> Result<FitOutcome> {
    let d = cfg.dim;
    let n = examples.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut weights = small_init(&mut rng, 3 * d);
    let mut biases = [0.0f64; 3];

    let mut loss_by_epoch = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let mut grad_w = vec![0.0; 3 * d];
        let mut grad_b = [0.0f64; 3];
        let mut loss = 0.0;
        for (ex, e) in examples.iter().zip(vectors) {
            let y = ex.label.class();
            let mut logits = mat_vec(&weights, e, 3, d);
            for (z, b) in logits.iter_mut().zip(&biases) {
                *z += b;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|x| x / sum).collect();
            loss += -probs[y].max(P_EPS).ln();
            for c in 0..3 {
                let g = probs[c] - if c == y { 1.0 } else { 0.0 };
                grad_b[c] += g;
                let row = &mut grad_w[c * d..(c + 1) * d];
                for (rj, ej) in row.iter_mut().zip(e) {
                    *rj += g * ej;
                }
            }
        }
        let lr = hyper.learning_rate / n;
        for (p, g) in weights.iter_mut().zip(&grad_w) {
            *p -= lr * g;
        }
        for (p, g) in biases.iter_mut().zip(&grad_b) {
            *p -= lr * g;
        }
        loss_by_epoch.push(loss / n);
    }
    check_loss_trace(&loss_by_epoch)?;
    Ok(FitOutcome {
        params: ScorerParams::Cls {
            embed: cfg,
            weights,
            biases,
        },
        loss_by_epoch,
    })
}

/// Cumulative-logit ordinal regression against labels mapped to grades
/// {1, 3, 5}. Threshold ordering is re-enforced after every epoch.
fn fit_llmproxy(
    examples: &[PreferenceExample],
    vectors: &[Vec<f64>],
    cfg: EmbedConfig,
    hyper: &FitHyper,
) -> Result<FitOutcome> {
    let d = cfg.dim;
    let n = examples.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut w = small_init(&mut rng, d);
    let mut thresholds = [-2.0f64, -0.7, 0.7, 2.0];

    let mut loss_by_epoch = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let mut grad_w = vec![0.0; d];
        let mut grad_t = [0.0f64; 4];
        let mut loss = 0.0;
        for (ex, e) in examples.iter().zip(vectors) {
            let k = ex.label.grade(); // 1..=5
            let u: f64 = w.iter().zip(e).map(|(a, b)| a * b).sum();
            // cdf_j = sigma(theta_j - u), with cdf_0 = 0, cdf_5 = 1
            let cdf = |j: usize| -> f64 {
                match j {
                    0 => 0.0,
                    5 => 1.0,
                    _ => sigmoid(thresholds[j - 1] - u),
                }
            };
            let p_k = (cdf(k) - cdf(k - 1)).max(P_EPS);
            loss += -p_k.ln();
            let dens = |j: usize| -> f64 {
                match j {
                    0 | 5 => 0.0,
                    _ => {
                        let s = sigmoid(thresholds[j - 1] - u);
                        s * (1.0 - s)
                    }
                }
            };
            // d(-ln p)/du and d(-ln p)/d(theta)
            let du = (dens(k) - dens(k - 1)) / p_k;
            for (g, ej) in grad_w.iter_mut().zip(e) {
                *g += du * ej;
            }
            if k < 5 {
                grad_t[k - 1] += -dens(k) / p_k;
            }
            if k > 1 {
                grad_t[k - 2] += dens(k - 1) / p_k;
            }
        }
        let lr = hyper.learning_rate / n;
        for (p, g) in w.iter_mut().zip(&grad_w) {
            *p -= lr * g;
        }
        for (p, g) in thresholds.iter_mut().zip(&grad_t) {
            *p -= lr * g;
        }
        // keep cut points strictly ordered
        for j in 1..4 {
            if thresholds[j] <= thresholds[j - 1] {
                thresholds[j] = thresholds[j - 1] + 1e-3;
            }
        }
        loss_by_epoch.push(loss / n);
    }
    check_loss_trace(&loss_by_epoch)?;
    Ok(FitOutcome {
        params: ScorerParams::LlmProxy {
            embed: cfg,
            w,
            thresholds,
        },
        loss_by_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::{score_query, Label};
    use crate::textcore::Vocab;

    fn vocab() -> Vocab {
        Vocab::from_corpus(["easy simple short question hard complex integral manifold"])
    }

    fn two_examples(v: &Vocab) -> Vec<PreferenceExample> {
        vec![
            PreferenceExample {
                query: v.tokenize("hard complex integral manifold"),
                label: Label::Strong,
            },
            PreferenceExample {
                query: v.tokenize("easy simple short question"),
                label: Label::Weak,
            },
        ]
    }

    fn cfg() -> EmbedConfig {
        EmbedConfig { dim: 32, seed: 1 }
    }

    #[test]
    fn single_label_data_not_separable() {
        let v = vocab();
        let examples = vec![
            PreferenceExample {
                query: v.tokenize("easy"),
                label: Label::Weak,
            },
            PreferenceExample {
                query: v.tokenize("simple"),
                label: Label::Weak,
            },
        ];
        let err = fit_scorer(ScorerKind::Cls, &examples, cfg(), &v, &FitHyper::default());
        assert!(matches!(err, Err(Error::LabelsNotSeparable)));
    }

    #[test]
    fn cls_orders_separable_examples() {
        let v = vocab();
        let examples = two_examples(&v);
        let hyper = FitHyper {
            epochs: 200,
            ..Default::default()
        };
        let out = fit_scorer(ScorerKind::Cls, &examples, cfg(), &v, &hyper).unwrap();
        let s_strong = score_query(&out.params, &v, &examples[0].query).unwrap();
        let s_weak = score_query(&out.params, &v, &examples[1].query).unwrap();
        assert!(s_strong > s_weak, "{s_strong} <= {s_weak}");
    }

    #[test]
    fn mf_learns_preference_direction() {
        let v = vocab();
        let examples = two_examples(&v);
        let out =
            fit_scorer(ScorerKind::Mf, &examples, cfg(), &v, &FitHyper::default()).unwrap();
        let s = score_query(&out.params, &v, &examples[0].query).unwrap();
        assert!(s > 0.5, "sigma(score_s - score_w) = {s} on the y=1 example");
    }

    #[test]
    fn llmproxy_orders_separable_examples() {
        let v = vocab();
        let examples = two_examples(&v);
        let out = fit_scorer(ScorerKind::LlmProxy, &examples, cfg(), &v, &FitHyper::default())
            .unwrap();
        let s_strong = score_query(&out.params, &v, &examples[0].query).unwrap();
        let s_weak = score_query(&out.params, &v, &examples[1].query).unwrap();
        assert!(s_strong > s_weak);
        out.params.validate().unwrap();
    }

    #[test]
    fn training_is_reproducible() {
        let v = vocab();
        let examples = two_examples(&v);
        let a = fit_scorer(ScorerKind::Mf, &examples, cfg(), &v, &FitHyper::default()).unwrap();
        let b = fit_scorer(ScorerKind::Mf, &examples, cfg(), &v, &FitHyper::default()).unwrap();
        assert_eq!(a.params.fingerprint(), b.params.fingerprint());
    }

    #[test]
    fn loss_traces_recorded_and_non_increasing() {
        let v = vocab();
        let examples = two_examples(&v);
        for kind in [ScorerKind::Mf, ScorerKind::Cls, ScorerKind::LlmProxy] {
            let out = fit_scorer(kind, &examples, cfg(), &v, &FitHyper::default()).unwrap();
            assert_eq!(out.loss_by_epoch.len(), FitHyper::default().epochs);
            for i in 10..out.loss_by_epoch.len() {
                assert!(out.loss_by_epoch[i] <= out.loss_by_epoch[i - 10] + 1e-3);
            }
        }
    }

    #[test]
    fn sw_fit_is_storage() {
        let v = vocab();
        let examples = two_examples(&v);
        let out =
            fit_scorer(ScorerKind::Sw, &examples, cfg(), &v, &FitHyper::default()).unwrap();
        match &out.params {
            ScorerParams::Sw { examples: stored, gamma, .. } => {
                assert_eq!(stored.len(), 2);
                assert_eq!(*gamma, 5.0);
                assert_eq!(stored[0].label, 1.0);
                assert_eq!(stored[1].label, 0.0);
            }
            _ => panic!("expected SW params"),
        }
        // score is a convex combination of stored labels
        for text in ["question", "manifold integral", "easy hard"] {
            let s = score_query(&out.params, &v, &v.tokenize(text)).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
    }
}
