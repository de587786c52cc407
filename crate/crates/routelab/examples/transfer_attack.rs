//! Transfer attack: gadgets optimized on a surrogate scorer evaluated
//! against a different target, as a full (surrogate x target) matrix.
//!
//! Run with: cargo run --release --example transfer_attack

use std::collections::BTreeMap;

use routelab::bench::{
    builtin_vocab, default_pricing, gen_workload, run_experiment, DifficultyModel,
    ExperimentInputs,
};
use routelab::confound::{gen_gadget, AttackOptions, Gadget, Placement};
use routelab::scorers::{fit_scorer, score_query, EmbedConfig, FitHyper, ScorerKind, ScorerParams};

fn main() -> routelab::Result<()> {
    let vocab = builtin_vocab();
    let workload = gen_workload(600, &vocab, 7, &DifficultyModel::default())?;
    let examples = workload.train_examples(&vocab)?;
    let embed = EmbedConfig { dim: 64, seed: 0 };

    let mut scorers: BTreeMap<String, ScorerParams> = BTreeMap::new();
    for (name, kind) in [("mf", ScorerKind::Mf), ("cls", ScorerKind::Cls)] {
        let params = fit_scorer(kind, &examples, embed, &vocab, &FitHyper::default())?.params;
        scorers.insert(name.to_string(), params);
    }

    // five gadgets per surrogate, optimized only against that surrogate
    let mut gadget_sets: Vec<(String, Vec<Gadget>)> = Vec::new();
    for (name, params) in &scorers {
        let set: Vec<Gadget> = (0..5)
            .map(|seed| {
                let mut g = gen_gadget(
                    |c| score_query(params, &vocab, c),
                    &vocab,
                    None,
                    &AttackOptions {
                        seed,
                        ..AttackOptions::default()
                    },
                )
                .expect("gadget");
                g.scorer_fingerprint = Some(params.fingerprint());
                g
            })
            .collect();
        gadget_sets.push((name.clone(), set));
    }

    let pricing = default_pricing("strong-model", "weak-model");
    let report = run_experiment(&ExperimentInputs {
        workload: &workload,
        vocab: &vocab,
        scorers: scorers.iter().map(|(k, v)| (k.clone(), v)).collect(),
        epsilon: Some(0.5),
        tau: None,
        gadget_sets: gadget_sets
            .iter()
            .map(|(n, gs)| (n.clone(), gs.iter().collect()))
            .collect(),
        placement: Placement::default(),
        pricing: &pricing,
        strong_id: "strong-model".into(),
        weak_id: "weak-model".into(),
    })?;

    for cell in &report.cells {
        println!(
            "{:>3} -> {:<3} {}  upgrade {:5.1} +/- {:.1} %   cost ${:.4} -> ${:.4}",
            cell.surrogate,
            cell.target,
            if cell.white_box { "(white-box)" } else { "(transfer) " },
            cell.summary.mean_upgrade.unwrap_or(f64::NAN),
            cell.summary.se_upgrade.unwrap_or(f64::NAN),
            cell.summary.mean_cost_before,
            cell.summary.mean_cost_after,
        );
    }
    Ok(())
}
