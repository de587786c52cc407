//! Perplexity filtering: fit a threshold on clean traffic and measure how
//! separable confounded queries are (ROC/AUC), plus the per-user monitor.
//!
//! Run with: cargo run --release --example perplexity_defense

use routelab::bench::{builtin_vocab, defense_eval, gen_workload, DifficultyModel, Split};
use routelab::confound::{gen_gadget, AttackOptions, Placement};
use routelab::gateway::Decision;
use routelab::scorers::{fit_scorer, score_query, EmbedConfig, FitHyper, ScorerKind};
use routelab::shield::UserMonitor;
use routelab::textcore::train_lm;

fn main() -> routelab::Result<()> {
    let vocab = builtin_vocab();
    let workload = gen_workload(600, &vocab, 7, &DifficultyModel::default())?;
    let train = workload.split_seqs(Split::Train, &vocab);
    let lm = train_lm(&train, vocab.len(), 0.9, 0.1)?;

    let examples = workload.train_examples(&vocab)?;
    let scorer = fit_scorer(
        ScorerKind::Cls,
        &examples,
        EmbedConfig { dim: 64, seed: 0 },
        &vocab,
        &FitHyper::default(),
    )?
    .params;
    let gadgets: Vec<_> = (0..3)
        .map(|seed| {
            gen_gadget(
                |c| score_query(&scorer, &vocab, c),
                &vocab,
                None,
                &AttackOptions {
                    seed,
                    ..AttackOptions::default()
                },
            )
            .expect("gadget")
        })
        .collect();

    let calibration = workload.split_seqs(Split::Calibration, &vocab);
    let eval = workload.split_seqs(Split::Eval, &vocab);
    let report = defense_eval(
        &lm,
        &vocab,
        &calibration,
        &eval,
        &gadgets.iter().collect::<Vec<_>>(),
        &Placement::default(),
        0.05,
    )?;
    println!(
        "threshold {:.2} at target FPR {:.2}",
        report.threshold, report.fpr_target
    );
    for g in &report.per_gadget {
        println!(
            "  {}: AUC {:.3}, TPR at threshold {:.2}",
            g.gadget, g.auc, g.tpr_at_threshold
        );
    }
    println!("mean AUC {:.3} +/- {:.3}", report.mean_auc, report.se_auc);

    // the monitor flags users whose strong fraction exceeds the budget
    let mut monitor = UserMonitor::new(10, 0.5, 0.2);
    let mut flag = None;
    for i in 0..10 {
        let d = if i % 10 < 9 { Decision::Strong } else { Decision::Weak };
        flag = monitor.update("mallory", d);
    }
    println!("monitor flag after a 90% strong window: {flag:?}");
    Ok(())
}
