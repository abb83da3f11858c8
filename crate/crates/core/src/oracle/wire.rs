//! JSON protocol shared by [`HttpOracle`](super::HttpOracle) and the victim service.
//!
//! ```text
//! POST /classify   {"image": {"shape": [h, w, c], "data": [...]}, "mode": "full" | "topk"}
//!   200            {"full": [p_0, ..., p_{C-1}]}
//!                  {"topk": [{"label": 3, "score": 0.41}, ...]}
//!   4xx/5xx        {"error": {"kind": "...", "detail": "..."}}
//!   429            {"error": {...}, "retry_after_ms": 250}
//!                  (budget exhaustion also carries "queries": <count>)
//! GET /stats       {"queries": 12, "budget": 100 | null}
//! ```
//!
//! Every float is written with 17 significant digits (`{:.16e}`), which
//! round-trips an `f64` exactly.

use serde::ser::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{ClassifierOutput, LabelScore};
use crate::tensor::{Image, Shape};

pub const KIND_BUDGET: &str = "budget_exhausted";
pub const KIND_RATE: &str = "rate_limited";
pub const KIND_BAD_REQUEST: &str = "bad_request";
pub const KIND_SHAPE: &str = "shape_mismatch";
pub const KIND_MODE: &str = "mode_unavailable";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireMode {
    #[default]
    Full,
    Topk,
}

/// An `f64` serialized with 17 significant digits.
#[derive(Debug, Clone, Copy)]
struct Sig17(f64);

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!("non-finite value {}", self.0)));
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

#[derive(Serialize)]
struct OutImage {
    shape: [usize; 3],
    data: Vec<Sig17>,
}

#[derive(Serialize)]
struct OutRequest {
    image: OutImage,
    mode: WireMode,
}

#[derive(Serialize)]
struct OutEntry {
    label: usize,
    score: Sig17,
}

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum OutResponse {
    Full(Vec<Sig17>),
    Topk(Vec<OutEntry>),
}

#[derive(Debug, Deserialize)]
pub struct WireImage {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl WireImage {
    pub fn into_image(self) -> Result<Image, String> {
        let [h, w, c] = self.shape;
        let img = Image::new(Shape::new(h, w, c), self.data).map_err(|e| e.to_string())?;
        if !img.is_finite() {
            return Err("image contains non-finite values".into());
        }
        Ok(img)
    }
}

#[derive(Debug, Deserialize)]
pub struct ClassifyRequest {
    pub image: WireImage,
    pub mode: WireMode,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifyResponse {
    Full(Vec<f64>),
    Topk(Vec<LabelScore>),
}

impl ClassifyResponse {
    /// `k` is the caller's view of the truncation level; the wire does not carry it.
    pub fn into_output(self, k: Option<usize>) -> ClassifierOutput {
        match self {
            ClassifyResponse::Full(p) => ClassifierOutput::Full(p),
            ClassifyResponse::Topk(entries) => {
                let k = k.unwrap_or(entries.len());
                ClassifierOutput::TopK { entries, k }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_ms: Option<u64>,
    /// Queries served so far; present on budget exhaustion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsBody {
    pub queries: u64,
    pub budget: Option<u64>,
}

pub fn encode_request(x: &Image, mode: WireMode) -> Result<String, serde_json::Error> {
    serde_json::to_string(&OutRequest {
        image: OutImage {
            shape: x.shape().as_array(),
            data: x.data().iter().copied().map(Sig17).collect(),
        },
        mode,
    })
}

pub fn encode_output(out: &ClassifierOutput) -> Result<String, serde_json::Error> {
    let body = match out {
        ClassifierOutput::Full(p) => OutResponse::Full(p.iter().copied().map(Sig17).collect()),
        ClassifierOutput::TopK { entries, .. } => OutResponse::Topk(
            entries
                .iter()
                .map(|e| OutEntry {
                    label: e.label,
                    score: Sig17(e.score),
                })
                .collect(),
        ),
    };
    serde_json::to_string(&body)
}

pub fn encode_error(kind: &str, detail: impl Into<String>, retry_after_ms: Option<u64>) -> String {
    encode_error_body(&ErrorBody {
        error: ErrorDetail {
            kind: kind.to_string(),
            detail: detail.into(),
        },
        retry_after_ms,
        queries: None,
    })
}

pub fn encode_error_body(body: &ErrorBody) -> String {
    serde_json::to_string(body).expect("error body serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::truncate_topk;
    use proptest::prelude::*;

    #[test]
    fn seventeen_digits_on_the_wire() {
        let out = ClassifierOutput::Full(vec![0.1, 1.0 / 3.0]);
        let text = encode_output(&out).unwrap();
        assert_eq!(text, r#"{"full":[1.0000000000000001e-1,3.3333333333333331e-1]}"#);
        let back: ClassifyResponse = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_output(None), out);
    }

    #[test]
    fn topk_body_shape() {
        let out = truncate_topk(&[0.1, 0.7, 0.2], 2);
        let text = encode_output(&out).unwrap();
        assert!(text.starts_with(r#"{"topk":[{"label":1,"score":6.9999999999999996e-1}"#), "{text}");
        let back: ClassifyResponse = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_output(Some(2)), out);
    }

    #[test]
    fn request_round_trip() {
        let x = Image::new(Shape::new(1, 3, 1), vec![0.0, 0.123456789012345678, 1.0]).unwrap();
        let text = encode_request(&x, WireMode::Topk).unwrap();
        let req: ClassifyRequest = serde_json::from_str(&text).unwrap();
        assert_eq!(req.mode, WireMode::Topk);
        assert_eq!(req.image.into_image().unwrap(), x);
        let bad = Image::new(Shape::new(1, 1, 1), vec![f64::NAN]).unwrap();
        assert!(encode_request(&bad, WireMode::Full).is_err());
    }

    #[test]
    fn error_body() {
        let text = encode_error(KIND_RATE, "slow down", Some(250));
        let body: ErrorBody = serde_json::from_str(&text).unwrap();
        assert_eq!(body.error.kind, "rate_limited");
        assert_eq!(body.retry_after_ms, Some(250));
    }

    proptest! {
        #[test]
        fn floats_round_trip_bitwise(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
            let out = ClassifierOutput::Full(vec![v]);
            let back: ClassifyResponse = serde_json::from_str(&encode_output(&out).unwrap()).unwrap();
            match back {
                ClassifyResponse::Full(p) => prop_assert_eq!(p[0].to_bits(), v.to_bits()),
                _ => prop_assert!(false),
            }
        }
    }
}
