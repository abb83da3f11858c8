//! Blocking HTTP client for a remote classifier speaking the [`wire`](super::wire) protocol.

use std::time::Duration;

use super::wire::{self, ClassifyResponse, ErrorBody, StatsBody, WireMode};
use super::{ClassifierOutput, Oracle, OracleError};
use crate::tensor::Image;

#[derive(Debug, Clone)]
pub struct HttpOracle {
    agent: ureq::Agent,
    base: String,
    mode: WireMode,
    k: Option<usize>,
}

impl HttpOracle {
    /// `endpoint` is the service base URL (`http://host:port`); a trailing
    /// `/classify` is accepted too.
    pub fn new(endpoint: &str, mode: WireMode) -> Self {
        let base = endpoint
            .trim_end_matches('/')
            .trim_end_matches("/classify")
            .to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            agent,
            base,
            mode,
            k: None,
        }
    }

    /// Records the truncation level the service is known to use, so decoded
    /// top-k outputs carry it.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    pub fn stats(&self) -> Result<StatsBody, OracleError> {
        let mut resp = self
            .agent
            .get(format!("{}/stats", self.base))
            .call()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(decode_error(status, &text));
        }
        serde_json::from_str(&text).map_err(|e| OracleError::Malformed(e.to_string()))
    }
}

fn decode_error(status: u16, text: &str) -> OracleError {
    let Ok(body) = serde_json::from_str::<ErrorBody>(text) else {
        return OracleError::Malformed(format!("status {status} with unparseable body"));
    };
    match (status, body.error.kind.as_str()) {
        (429, wire::KIND_BUDGET) => OracleError::BudgetExhausted {
            count: body.queries.unwrap_or(0),
        },
        (429, _) => OracleError::RateLimited {
            retry_after_ms: body.retry_after_ms.unwrap_or(0),
        },
        _ => OracleError::Status {
            status,
            kind: body.error.kind,
            detail: body.error.detail,
        },
    }
}

impl Oracle for HttpOracle {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError> {
        let body = wire::encode_request(x, self.mode).map_err(|e| OracleError::InvalidInput(e.to_string()))?;
        let mut resp = self
            .agent
            .post(format!("{}/classify", self.base))
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(decode_error(status, &text));
        }
        let decoded: ClassifyResponse =
            serde_json::from_str(&text).map_err(|e| OracleError::Malformed(e.to_string()))?;
        Ok(decoded.into_output(self.k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_are_distinct() {
        let budget = wire::encode_error(wire::KIND_BUDGET, "spent", Some(0));
        assert!(matches!(decode_error(429, &budget), OracleError::BudgetExhausted { .. }));
        let rate = wire::encode_error(wire::KIND_RATE, "slow", Some(40));
        assert_eq!(decode_error(429, &rate), OracleError::RateLimited { retry_after_ms: 40 });
        let bad = wire::encode_error(wire::KIND_SHAPE, "no", None);
        assert!(matches!(decode_error(400, &bad), OracleError::Status { status: 400, .. }));
        assert!(matches!(decode_error(500, "<html>"), OracleError::Malformed(_)));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let o = HttpOracle::new("http://127.0.0.1:1/", WireMode::Full);
        let x = Image::zeros(crate::tensor::Shape::new(1, 1, 1));
        assert!(matches!(o.classify(&x), Err(OracleError::Transport(_))));
    }
}
