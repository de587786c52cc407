//! End-to-end routing: synthesize a workload, train a scorer, calibrate a
//! threshold, route queries through stub backends, and total the cost.
//!
//! Run with: cargo run --example end_to_end_routing

use std::collections::BTreeMap;

use routelab::bench::{builtin_vocab, default_pricing, gen_workload, DifficultyModel, Split};
use routelab::gateway::{append_transcripts, calibrate, cost, execute, ModelBackend, RouterConfig};
use routelab::scorers::{fit_scorer, EmbedConfig, FitHyper, ScorerKind};

fn main() -> routelab::Result<()> {
    let vocab = builtin_vocab();
    let workload = gen_workload(400, &vocab, 7, &DifficultyModel::default())?;
    let examples = workload.train_examples(&vocab)?;

    let scorer = fit_scorer(
        ScorerKind::Cls,
        &examples,
        EmbedConfig { dim: 64, seed: 0 },
        &vocab,
        &FitHyper::default(),
    )?
    .params;

    // at most half of the calibration queries may route strong
    let calibration = workload.split_seqs(Split::Calibration, &vocab);
    let tau = calibrate(&scorer, &vocab, &calibration, 0.5)?;
    println!("calibrated tau = {tau:.4}");

    let config = RouterConfig {
        scorer,
        tau,
        strong_id: "strong-model".into(),
        weak_id: "weak-model".into(),
    };
    let mut backends = BTreeMap::new();
    backends.insert(
        config.strong_id.clone(),
        ModelBackend::Stub {
            template: "[strong] {input}".into(),
        },
    );
    backends.insert(
        config.weak_id.clone(),
        ModelBackend::Stub {
            template: "[weak] {input}".into(),
        },
    );

    let mut transcripts = Vec::new();
    for text in ["what is the best dog ?", "explain the entropy of the manifold"] {
        let query = vocab.tokenize(text);
        let (transcript, response) = execute(&config, &backends, &vocab, &query, Some("alice"))?;
        println!("{text:45} -> {:?}  {response}", transcript.decision);
        transcripts.push(transcript);
    }

    let pricing = default_pricing(&config.strong_id, &config.weak_id);
    println!("total cost: ${:.6}", cost(&transcripts, &pricing)?);

    let log = std::env::temp_dir().join("routelab-example-transcripts.jsonl");
    append_transcripts(&log, &transcripts)?;
    println!("transcripts appended to {}", log.display());
    Ok(())
}
