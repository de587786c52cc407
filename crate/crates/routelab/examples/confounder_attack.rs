//! White-box confounder attack: optimize gadgets against a calibrated
//! router and compare their rerouting rates with optimization-free
//! baselines.
//!
//! Run with: cargo run --release --example confounder_attack

use routelab::bench::{
    builtin_vocab, gen_workload, mean_se, upgrade_rate, DifficultyModel, Split,
};
use routelab::confound::{
    baseline_gadget, gen_gadget, AttackOptions, BaselineKind, InstructionSet, Placement,
};
use routelab::gateway::{calibrate, RouterConfig};
use routelab::scorers::{fit_scorer, score_query, EmbedConfig, FitHyper, ScorerKind};

fn main() -> routelab::Result<()> {
    let vocab = builtin_vocab();
    let workload = gen_workload(600, &vocab, 7, &DifficultyModel::default())?;
    let examples = workload.train_examples(&vocab)?;
    let scorer = fit_scorer(
        ScorerKind::Sw,
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

    // five optimized gadgets (score callback only: black-box interface)
    let mut upgrades = Vec::new();
    for seed in 0..5 {
        let gadget = gen_gadget(
            |c| score_query(&scorer, &vocab, c),
            &vocab,
            None,
            &AttackOptions {
                seed,
                ..AttackOptions::default()
            },
        )?;
        let rates = upgrade_rate(&config, &vocab, &eval, &gadget, &Placement::default())?;
        println!(
            "seed {seed}: objective {:.3}  upgrade {:5.1}%  gadget: {}",
            gadget.objective,
            rates.upgrade.unwrap_or(f64::NAN),
            gadget.tokens.text(&vocab)
        );
        upgrades.push(rates.upgrade.unwrap_or(0.0));
    }
    let (mean, se) = mean_se(&upgrades);
    println!("optimized mean upgrade: {mean:.1} +/- {se:.1} %");

    let instructions = InstructionSet::default();
    for kind in [
        BaselineKind::InitRepeat,
        BaselineKind::Random,
        BaselineKind::Instruction("ours-1".into()),
    ] {
        let baseline = baseline_gadget(&kind, 10, &vocab, 0, &instructions)?;
        let rates = upgrade_rate(&config, &vocab, &eval, &baseline, &Placement::default())?;
        println!(
            "baseline {kind:?}: upgrade {:5.1}%",
            rates.upgrade.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
