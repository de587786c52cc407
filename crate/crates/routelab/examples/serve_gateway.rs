//! Serve the gateway over HTTP and exercise it with a raw client:
//! POST /route routes and executes, GET /stats reports per-user strong
//! fractions.
//!
//! Run with: cargo run --example serve_gateway

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpStream;

use routelab::bench::{builtin_vocab, gen_workload, DifficultyModel, Split};
use routelab::gateway::{calibrate, serve, ModelBackend, RouterConfig, ServeOptions};
use routelab::scorers::{fit_scorer, EmbedConfig, FitHyper, ScorerKind};

fn request(addr: std::net::SocketAddr, raw: &str) -> String {
    let mut stream = TcpStream::connect(addr).expect("connect");
    stream.write_all(raw.as_bytes()).expect("send");
    let mut response = String::new();
    stream.read_to_string(&mut response).expect("recv");
    response
}

fn main() -> routelab::Result<()> {
    let vocab = builtin_vocab();
    let workload = gen_workload(300, &vocab, 7, &DifficultyModel::default())?;
    let scorer = fit_scorer(
        ScorerKind::Cls,
        &workload.train_examples(&vocab)?,
        EmbedConfig { dim: 32, seed: 0 },
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
    let mut backends = BTreeMap::new();
    for (id, template) in [
        (config.strong_id.clone(), "[strong] {input}"),
        (config.weak_id.clone(), "[weak] {input}"),
    ] {
        backends.insert(id, ModelBackend::Stub { template: template.into() });
    }

    let handle = serve(
        config,
        vocab,
        backends,
        ServeOptions {
            addr: "127.0.0.1:0".into(),
            transcript_log: None,
        },
    )?;
    println!("listening on {}", handle.addr);

    for text in ["what is the best dog ?", "explain the spectral theorem of the hamiltonian"] {
        let body = format!("{{\"text\": {:?}, \"user\": \"alice\"}}", text);
        let response = request(
            handle.addr,
            &format!(
                "POST /route HTTP/1.1\r\nhost: localhost\r\ncontent-length: {}\r\n\r\n{body}",
                body.len()
            ),
        );
        println!("{text}\n  -> {}", response.lines().last().unwrap_or(""));
    }
    let stats = request(handle.addr, "GET /stats HTTP/1.1\r\nhost: localhost\r\n\r\n");
    println!("stats -> {}", stats.lines().last().unwrap_or(""));

    handle.shutdown();
    Ok(())
}
