//! Filter evasion: add a perplexity term to the attack objective so the
//! gadget's perplexity lands near the clean mean, then compare filter AUC
//! and upgrade rate with the unconstrained attack.
//!
//! Run with: cargo run --release --example defense_evasion

use routelab::bench::{
    builtin_vocab, gen_workload, upgrade_rate, DifficultyModel, Split,
};
use routelab::confound::{confound, gen_gadget, AttackOptions, Placement, PplTarget};
use routelab::gateway::{calibrate, RouterConfig};
use routelab::scorers::{fit_scorer, score_query, EmbedConfig, FitHyper, ScorerKind};
use routelab::shield::mann_whitney_auc;
use routelab::textcore::{perplexity, train_lm};

fn main() -> routelab::Result<()> {
    let vocab = builtin_vocab();
    let workload = gen_workload(600, &vocab, 7, &DifficultyModel::default())?;
    let train = workload.split_seqs(Split::Train, &vocab);
    let calibration = workload.split_seqs(Split::Calibration, &vocab);
    let eval = workload.split_seqs(Split::Eval, &vocab);
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
    let config = RouterConfig {
        scorer: scorer.clone(),
        tau: calibrate(&scorer, &vocab, &calibration, 0.5)?,
        strong_id: "strong-model".into(),
        weak_id: "weak-model".into(),
    };

    // perplexity target: mean over 100 clean calibration queries
    let rho = calibration[..100]
        .iter()
        .map(|q| perplexity(&lm, q))
        .sum::<routelab::Result<f64>>()?  // fails fast on empty queries
        / 100.0;
    println!("rho (mean clean PPL) = {rho:.1}");

    let clean_ppls: Vec<f64> = eval
        .iter()
        .map(|q| perplexity(&lm, q))
        .collect::<routelab::Result<_>>()?;

    for (label, ppl) in [
        ("unconstrained", None),
        ("constrained", Some(PplTarget { alpha: 0.01, rho })),
    ] {
        let gadget = gen_gadget(
            |c| score_query(&scorer, &vocab, c),
            &vocab,
            Some(&lm),
            &AttackOptions {
                seed: 1,
                ppl,
                ..AttackOptions::default()
            },
        )?;
        let attack_ppls: Vec<f64> = eval
            .iter()
            .map(|q| perplexity(&lm, &confound(q, &gadget.tokens, &Placement::default(), &vocab)))
            .collect::<routelab::Result<_>>()?;
        let auc = mann_whitney_auc(&clean_ppls, &attack_ppls);
        let rates = upgrade_rate(&config, &vocab, &eval, &gadget, &Placement::default())?;
        println!(
            "{label:13}: filter AUC {auc:.3}  upgrade {:5.1}%  gadget PPL {:.1}  [{}]",
            rates.upgrade.unwrap_or(f64::NAN),
            perplexity(&lm, &gadget.tokens)?,
            gadget.tokens.text(&vocab)
        );
    }
    Ok(())
}
