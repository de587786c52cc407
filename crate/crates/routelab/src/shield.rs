//! Defenses: perplexity-threshold filtering with ROC/AUC evaluation, and
//! per-user anomalous-workload monitoring.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Decision;
use crate::textcore::{perplexity, NgramLM, TokenSeq};

/// Action taken on a flagged query. Defaults to forcing the weak model;
/// rejecting is the stricter alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagAction {
    #[default]
    ForceWeak,
    Reject,
}

/// Perplexity filter: flags queries whose perplexity exceeds a threshold
/// fit from clean data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PplFilter {
    pub lm: NgramLM,
    pub threshold: f64,
    pub fpr_target: f64,
    #[serde(default)]
    pub action: FlagAction,
}

impl PplFilter {
    /// True iff the query's perplexity is strictly above the threshold.
    pub fn flag(&self, query: &TokenSeq) -> Result<bool> {
        Ok(perplexity(&self.lm, query)? > self.threshold)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct FilterFile<'a> {
            schema: &'a str,
            kind: &'a str,
            #[serde(flatten)]
            filter: &'a PplFilter,
        }
        crate::textcore::write_json(
            path,
            &FilterFile {
                schema: crate::scorers::SCHEMA,
                kind: "PPL_FILTER",
                filter: self,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct FilterFile {
            schema: String,
            #[serde(flatten)]
            filter: PplFilter,
        }
        let file: FilterFile = crate::textcore::read_json(path)?;
        if file.schema != crate::scorers::SCHEMA {
            return Err(Error::Schema {
                expected: crate::scorers::SCHEMA.to_string(),
                got: file.schema,
            });
        }
        Ok(file.filter)
    }
}

/// Fit the threshold as the smallest observed clean perplexity such that
/// the fraction of clean values strictly above it is at most `fpr_target`.
/// The achieved false-positive rate on the fit set never exceeds the
/// target.
pub fn fit_ppl_threshold(
    clean: &[TokenSeq],
    lm: &NgramLM,
    fpr_target: f64,
) -> Result<PplFilter> {
    if clean.len() < 10 {
        return Err(Error::TooFewCleanQueries {
            need: 10,
            got: clean.len(),
        });
    }
    assert!(
        fpr_target > 0.0 && fpr_target < 1.0,
        "fpr_target must be in (0,1)"
    );
    let ppls = clean
        .iter()
        .map(|q| perplexity(lm, q))
        .collect::<Result<Vec<_>>>()?;
    let threshold = threshold_for_fpr(&ppls, fpr_target);
    Ok(PplFilter {
        lm: lm.clone(),
        threshold,
        fpr_target,
        action: FlagAction::default(),
    })
}

/// Smallest observed value whose strictly-above fraction is `<= fpr`.
fn threshold_for_fpr(values: &[f64], fpr: f64) -> f64 {
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    for &v in &sorted {
        let above = values.iter().filter(|&&x| x > v).count() as f64;
        if above / n <= fpr {
            return v;
        }
    }
    *sorted.last().unwrap()
}

/// ROC curve over a clean/attack score split, with its trapezoid AUC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` points, monotone from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Build the ROC curve sweeping all distinct thresholds, treating attack
/// samples as positives flagged when their score exceeds the threshold.
///
/// The AUC is the trapezoid integral of the points and is cross-checked
/// against the Mann-Whitney pair-counting statistic; the two agree to
/// 1e-9 by construction.
pub fn roc(clean: &[f64], attack: &[f64]) -> RocCurve {
    assert!(
        !clean.is_empty() && !attack.is_empty(),
        "roc needs nonempty clean and attack scores"
    );
    // sort descending; sweep thresholds downward so flagged = score > t
    let mut all: Vec<(f64, bool)> = clean
        .iter()
        .map(|&s| (s, false))
        .chain(attack.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let n_attack = attack.len() as f64;
    let n_clean = clean.len() as f64;
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < all.len() {
        // consume all samples tied at this score before emitting a point
        let score = all[i].0;
        while i < all.len() && all[i].0 == score {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / n_clean, tp / n_attack));
    }
    let auc: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    let curve = RocCurve { points, auc };
    debug_assert!(
        (curve.auc - mann_whitney_auc(clean, attack)).abs() < 1e-9,
        "trapezoid and Mann-Whitney AUC disagree"
    );
    curve
}

/// AUC by pair counting: fraction of (clean, attack) pairs where the
/// attack score is higher, ties counted half.
pub fn mann_whitney_auc(clean: &[f64], attack: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in attack {
        for &c in clean {
            if a > c {
                wins += 1.0;
            } else if a == c {
                wins += 0.5;
            }
        }
    }
    wins / (clean.len() as f64 * attack.len() as f64)
}

/// Write ROC points as `fpr,tpr` CSV rows.
pub fn write_roc_csv<W: std::io::Write>(curve: &RocCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fpr", "tpr"])
        .map_err(|e| Error::Config(e.to_string()))?;
    for &(fpr, tpr) in &curve.points {
        w.write_record([fpr.to_string(), tpr.to_string()])
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("roc csv", e))?;
    Ok(())
}

/// A raised workload anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorFlag {
    pub user: String,
    pub strong_fraction: f64,
}

/// Sliding-window monitor for per-user strong-routing frequency.
///
/// A user is flagged once their window is full and the strong fraction
/// exceeds `epsilon + delta`. Mutable per-user state; cross-user updates
/// are independent.
#[derive(Debug, Clone)]
pub struct UserMonitor {
    pub window: usize,
    pub epsilon: f64,
    pub delta: f64,
    buffers: BTreeMap<String, VecDeque<Decision>>,
}

impl UserMonitor {
    pub fn new(window: usize, epsilon: f64, delta: f64) -> Self {
        assert!(window >= 1 && delta >= 0.0);
        UserMonitor {
            window,
            epsilon,
            delta,
            buffers: BTreeMap::new(),
        }
    }

    /// Record a decision; returns a flag iff the user's full window now
    /// exceeds the allowed strong fraction.
    pub fn update(&mut self, user: &str, decision: Decision) -> Option<MonitorFlag> {
        let buf = self.buffers.entry(user.to_string()).or_default();
        buf.push_back(decision);
        if buf.len() > self.window {
            buf.pop_front();
        }
        if buf.len() < self.window {
            return None;
        }
        let strong = buf.iter().filter(|d| **d == Decision::Strong).count();
        let fraction = strong as f64 / self.window as f64;
        if fraction > self.epsilon + self.delta {
            Some(MonitorFlag {
                user: user.to_string(),
                strong_fraction: fraction,
            })
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::{train_lm, Vocab};

    #[test]
    fn threshold_quantile_rule() {
        let ppls: Vec<f64> = (1..=10).map(|i| (i * 10) as f64).collect();
        assert_eq!(threshold_for_fpr(&ppls, 0.1), 90.0);
        assert_eq!(threshold_for_fpr(&ppls, 0.5), 50.0);
        let flagged = ppls.iter().filter(|&&p| p > 90.0).count();
        assert_eq!(flagged, 1);
        let flagged = ppls.iter().filter(|&&p| p > 50.0).count();
        assert_eq!(flagged, 5);
    }

    #[test]
    fn fit_requires_ten_queries() {
        let vocab = Vocab::from_corpus(["a b c"]);
        let corpus = vec![vocab.tokenize("a b c a b")];
        let lm = train_lm(&corpus, vocab.len(), 0.7, 0.5).unwrap();
        let few = vec![vocab.tokenize("a b"); 5];
        assert!(matches!(
            fit_ppl_threshold(&few, &lm, 0.1),
            Err(Error::TooFewCleanQueries { .. })
        ));
    }

    #[test]
    fn achieved_fpr_at_most_target() {
        let vocab = Vocab::from_corpus(["a b c d e f g h i j k"]);
        let corpus = vec![vocab.tokenize("a b c d e f g h i j k a b c a b")];
        let lm = train_lm(&corpus, vocab.len(), 0.7, 0.5).unwrap();
        let clean: Vec<_> = ["a b", "b c d", "e f", "g h i", "j k", "a b c", "d e",
                            "f g", "h i j", "k a", "b c", "c d e"]
            .iter()
            .map(|t| vocab.tokenize(t))
            .collect();
        for fpr in [0.05, 0.1, 0.25, 0.5] {
            let filter = fit_ppl_threshold(&clean, &lm, fpr).unwrap();
            let flagged = clean
                .iter()
                .filter(|q| filter.flag(q).unwrap())
                .count() as f64;
            assert!(flagged / clean.len() as f64 <= fpr);
        }
    }

    #[test]
    fn roc_perfect_separation() {
        assert_eq!(roc(&[1.0, 2.0], &[3.0, 4.0]).auc, 1.0);
    }

    #[test]
    fn roc_pair_counting_hand_case() {
        // 3 of 4 pairs correctly ordered, plus none tied
        let curve = roc(&[1.0, 3.0], &[2.0, 4.0]);
        assert!((curve.auc - 0.75).abs() < 1e-12);
        assert_eq!(mann_whitney_auc(&[1.0, 3.0], &[2.0, 4.0]), 0.75);
    }

    #[test]
    fn roc_identical_lists_half() {
        let xs = [0.3, 0.5, 0.9];
        assert!((roc(&xs, &xs).auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_endpoints_and_monotone() {
        let curve = roc(&[0.1, 0.2, 0.2, 0.7], &[0.2, 0.5, 0.9]);
        assert_eq!(*curve.points.first().unwrap(), (0.0, 0.0));
        assert_eq!(*curve.points.last().unwrap(), (1.0, 1.0));
        for pair in curve.points.windows(2) {
            assert!(pair[1].0 >= pair[0].0);
            assert!(pair[1].1 >= pair[0].1);
        }
    }

    #[test]
    fn monitor_flags_only_full_window_excess() {
        let mut mon = UserMonitor::new(10, 0.5, 0.2);
        // 9 strong then 1 weak: flagged at 0.9 > 0.7
        let mut flag = None;
        for _ in 0..9 {
            flag = mon.update("u1", Decision::Strong);
        }
        assert!(flag.is_none(), "buffer not yet full");
        let flag = mon.update("u1", Decision::Weak);
        assert_eq!(flag.unwrap().strong_fraction, 0.9);

        // 6 strong of 10: not flagged
        let mut mon = UserMonitor::new(10, 0.5, 0.2);
        let mut last = None;
        for i in 0..10 {
            let d = if i < 6 { Decision::Strong } else { Decision::Weak };
            last = mon.update("u2", d);
        }
        assert!(last.is_none());
    }

    #[test]
    fn monitor_ignores_cross_user_state() {
        let mut mon = UserMonitor::new(2, 0.0, 0.1);
        assert!(mon.update("a", Decision::Strong).is_none());
        assert!(mon.update("b", Decision::Strong).is_none());
        assert!(mon.update("a", Decision::Strong).is_some());
    }

    #[test]
    fn roc_csv_export() {
        let curve = roc(&[1.0, 2.0], &[3.0]);
        let mut buf = Vec::new();
        write_roc_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fpr,tpr\n"));
        assert!(text.trim_end().ends_with("1,1"));
    }
}
