//! Minimal JSON-over-HTTP client used by the optional remote services
//! (token selector, answer judge, embedding endpoint). Everything here is
//! blocking; callers own retry policy.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Where a remote service lives and how long we wait for it.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct Endpoint {
    pub url: String,
    /// Sent as a bearer token when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "Endpoint::default_timeout_ms")]
    pub timeout_ms: u64,
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Endpoint {
        Endpoint { url: url.into(), api_key: None, timeout_ms: Self::default_timeout_ms() }
    }

    fn default_timeout_ms() -> u64 {
        10_000
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// POST `body` as JSON and decode the JSON response.
///
/// Non-2xx statuses, transport failures, and undecodable bodies all map to
/// [`Error::Endpoint`] so callers can treat "the service misbehaved" as one
/// case.
pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(
    endpoint: &Endpoint,
    body: &Req,
) -> Result<Resp> {
    let agent = ureq::AgentBuilder::new()
        .timeout_connect(endpoint.timeout())
        .timeout(endpoint.timeout())
        .build();
    let mut request = agent.post(&endpoint.url).set("content-type", "application/json");
    if let Some(key) = &endpoint.api_key {
        request = request.set("authorization", &format!("Bearer {key}"));
    }
    let response = request
        .send_json(serde_json::to_value(body)?)
        .map_err(|e| match e {
            ureq::Error::Status(code, _) => {
                Error::Endpoint(format!("{}: HTTP status {code}", endpoint.url))
            }
            ureq::Error::Transport(t) => {
                Error::Endpoint(format!("{}: transport error: {t}", endpoint.url))
            }
        })?;
    response
        .into_json::<Resp>()
        .map_err(|e| Error::Endpoint(format!("{}: invalid JSON response: {e}", endpoint.url)))
}


#[cfg(test)]
mod tests {
    use super::testing::{MockServer, Script};
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize)]
    struct Ping {
        value: u32,
    }

    #[derive(Deserialize, Debug, PartialEq)]
    struct Pong {
        doubled: u32,
    }

    #[test]
    fn round_trips_json() {
        let server = MockServer::start(vec![Script::Json(r#"{"doubled": 42}"#.into())]);
        let endpoint = Endpoint::new(server.url.clone());
        let pong: Pong = post_json(&endpoint, &Ping { value: 21 }).unwrap();
        assert_eq!(pong, Pong { doubled: 42 });
        let bodies = server.finish();
        assert_eq!(bodies, vec![r#"{"value":21}"#.to_string()]);
    }

    #[test]
    fn http_error_status_reported() {
        let server = MockServer::start(vec![Script::Status(503)]);
        let endpoint = Endpoint::new(server.url.clone());
        let err = post_json::<_, Pong>(&endpoint, &Ping { value: 1 }).unwrap_err();
        assert!(err.to_string().contains("503"), "{err}");
        server.finish();
    }

    #[test]
    fn malformed_body_reported() {
        let server = MockServer::start(vec![Script::Json("not json".into())]);
        let endpoint = Endpoint::new(server.url.clone());
        let err = post_json::<_, Pong>(&endpoint, &Ping { value: 1 }).unwrap_err();
        assert!(err.to_string().contains("invalid JSON"), "{err}");
        server.finish();
    }

    #[test]
    fn connection_refused_reported() {
        // Bind then drop to find a port that refuses connections.
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let endpoint = Endpoint::new(format!("http://127.0.0.1:{port}/"));
        let err = post_json::<_, Pong>(&endpoint, &Ping { value: 1 }).unwrap_err();
        assert!(matches!(err, Error::Endpoint(_)), "{err}");
    }
}
