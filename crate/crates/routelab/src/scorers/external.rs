//! Adapter for black-box scorers reachable over HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Descriptor of an external scoring endpoint. The bearer token, if any,
/// is named by environment variable so secrets never land in config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    5000
}

/// POST the query text to the endpoint and parse a numeric score, clamped
/// to [0,1]. Failures surface with the endpoint identity; there is no
/// silent default.
pub fn external_score(endpoint: &EndpointDescriptor, query_text: &str) -> Result<f64> {
    let err = |message: String| Error::ExternalScorer {
        endpoint: endpoint.url.clone(),
        message,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
        .build()
        .into();
    let mut request = agent.post(&endpoint.url);
    if let Some(var) = &endpoint.bearer_token_env {
        let token = std::env::var(var)
            .map_err(|_| err(format!("bearer token env var {var} not set")))?;
        request = request.header("authorization", &format!("Bearer {token}"));
    }
    let mut response = request
        .send(query_text)
        .map_err(|e| err(format!("transport failure: {e}")))?;
    let body = response
        .body_mut()
        .read_to_string()
        .map_err(|e| err(format!("failed reading response body: {e}")))?;
    let score: f64 = body
        .trim()
        .parse()
        .map_err(|_| err(format!("non-numeric reply: {body:?}")))?;
    Ok(score.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP stub that replies with a fixed body.
    fn stub_endpoint(reply: &'static str) -> EndpointDescriptor {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let body = reply.as_bytes();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-length: {}\r\n\r\n",
                    body.len()
                );
                let _ = stream.write_all(body);
            }
        });
        EndpointDescriptor {
            url: format!("http://{addr}/score"),
            bearer_token_env: None,
            timeout_ms: 2000,
        }
    }

    #[test]
    fn parses_numeric_reply() {
        let ep = stub_endpoint("0.75");
        assert_eq!(external_score(&ep, "some query").unwrap(), 0.75);
    }

    #[test]
    fn clamps_out_of_range_reply() {
        let ep = stub_endpoint("1.7");
        assert_eq!(external_score(&ep, "q").unwrap(), 1.0);
    }

    #[test]
    fn non_numeric_reply_errors_with_endpoint() {
        let ep = stub_endpoint("not-a-number");
        match external_score(&ep, "q") {
            Err(Error::ExternalScorer { endpoint, .. }) => {
                assert!(endpoint.contains("/score"));
            }
            other => panic!("expected external scorer error, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_surfaces_transport_error() {
        let ep = EndpointDescriptor {
            url: "http://127.0.0.1:1/score".into(),
            bearer_token_env: None,
            timeout_ms: 500,
        };
        assert!(matches!(
            external_score(&ep, "q"),
            Err(Error::ExternalScorer { .. })
        ));
    }
}
