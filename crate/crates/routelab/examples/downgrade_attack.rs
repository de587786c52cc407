//! Downgrade (sabotage) variant: minimize the router score so queries
//! that deserve the strong model get the weak one.
//!
//! Run with: cargo run --release --example downgrade_attack

use routelab::bench::{builtin_vocab, gen_workload, upgrade_rate, DifficultyModel, Split};
use routelab::confound::{gen_gadget, AttackOptions, Objective, Placement, Position};
use routelab::gateway::{calibrate, RouterConfig};
use routelab::scorers::{fit_scorer, score_query, EmbedConfig, FitHyper, ScorerKind};

fn main() -> routelab::Result<()> {
    let vocab = builtin_vocab();
    let workload = gen_workload(600, &vocab, 7, &DifficultyModel::default())?;
    let examples = workload.train_examples(&vocab)?;
    let scorer = fit_scorer(
        ScorerKind::Mf,
        &examples,
        EmbedConfig { dim: 64, seed: 0 },
        &vocab,
        &FitHyper::default(),
    )?
    .params;
    let calibration = workload.split_seqs(Split::Calibration, &vocab);
    let config = RouterConfig {
        scorer: scorer.clone(),
        tau: calibrate(&scorer, &vocab, &calibration, 0.5)?,
        strong_id: "strong-model".into(),
        weak_id: "weak-model".into(),
    };
    let eval = workload.split_seqs(Split::Eval, &vocab);

    for position in [Position::Prefix, Position::Suffix] {
        let gadget = gen_gadget(
            |c| score_query(&scorer, &vocab, c),
            &vocab,
            None,
            &AttackOptions {
                objective: Objective::Minimize,
                seed: 2,
                ..AttackOptions::default()
            },
        )?;
        let placement = Placement {
            position,
            instruction: None,
        };
        let rates = upgrade_rate(&config, &vocab, &eval, &gadget, &placement)?;
        println!(
            "{position:?}: downgrade {:5.1}%  upgrade {:5.1}%  strong {:.1}% -> {:.1}%",
            rates.downgrade.unwrap_or(f64::NAN),
            rates.upgrade.unwrap_or(f64::NAN),
            rates.strong_before,
            rates.strong_after,
        );
    }
    Ok(())
}
