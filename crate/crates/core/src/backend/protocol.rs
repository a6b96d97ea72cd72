//! Newline-delimited JSON wire protocol between the harness and an external
//! forecaster process. One JSON object per line over the child's stdin/stdout;
//! stderr is left for logs.
//!
//! ```text
//! child  -> parent  {"proto":1,"name":..,"supports_temperature":..,"supports_top_p":..,
//!                    "supports_reconstruction":..,"max_context":..,"d_out":..}
//! parent -> child   {"id":..,"op":"forecast"|"reconstruct","context":[[..]],"horizon":..,
//!                    "num_samples":..,"temperature":..,"top_p":..,"seed":..}
//! child  -> parent  {"id":..,"samples":[[[..]]]}   or   {"id":..,"error":{"code":..,"message":..}}
//! parent -> child   {"op":"shutdown"}
//! ```

use serde::{Deserialize, Serialize};

use super::BackendDescriptor;

pub const PROTOCOL_VERSION: u32 = 1;

pub const CODE_CAPABILITY: &str = "capability";
pub const CODE_BAD_REQUEST: &str = "bad_request";
pub const CODE_INTERNAL: &str = "internal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub proto: u32,
    pub name: String,
    pub supports_temperature: bool,
    pub supports_top_p: bool,
    pub supports_reconstruction: bool,
    pub max_context: usize,
    pub d_out: usize,
    /// Extension: whether a fixed seed yields identical samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<bool>,
}

impl Hello {
    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: self.name.clone(),
            supports_temperature: self.supports_temperature,
            supports_top_p: self.supports_top_p,
            supports_reconstruction: self.supports_reconstruction,
            max_context: self.max_context,
            d_out: self.d_out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Forecast,
    Reconstruct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    pub context: Vec<Vec<f64>>,
    pub horizon: usize,
    pub num_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// A line sent back for a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Samples { id: u64, samples: Vec<Vec<Vec<f64>>> },
    Error { id: u64, error: ErrorBody },
}

impl Reply {
    pub fn id(&self) -> u64 {
        match self {
            Reply::Samples { id, .. } | Reply::Error { id, .. } => *id,
        }
    }

    pub fn error(id: u64, code: &str, message: impl Into<String>) -> Self {
        Reply::Error {
            id,
            error: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Control {
    Shutdown,
}

/// Serializes one protocol object as a single line (no trailing newline).
pub fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("protocol objects serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wire_shapes() {
        let hello = Hello {
            proto: 1,
            name: "m".into(),
            supports_temperature: true,
            supports_top_p: false,
            supports_reconstruction: true,
            max_context: 512,
            d_out: 1,
            deterministic: None,
        };
        assert_eq!(
            to_line(&hello),
            r#"{"proto":1,"name":"m","supports_temperature":true,"supports_top_p":false,"supports_reconstruction":true,"max_context":512,"d_out":1}"#
        );
        assert_eq!(to_line(&Control::Shutdown), r#"{"op":"shutdown"}"#);
        assert_eq!(
            to_line(&Reply::error(3, CODE_CAPABILITY, "no")),
            r#"{"id":3,"error":{"code":"capability","message":"no"}}"#
        );
        let r: Reply = serde_json::from_str(r#"{"id":2,"samples":[[[1.5]]]}"#).unwrap();
        assert_eq!(
            r,
            Reply::Samples {
                id: 2,
                samples: vec![vec![vec![1.5]]]
            }
        );
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exact(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..20)) {
            let req = Request {
                id: 1,
                op: Op::Forecast,
                context: v.iter().map(|x| vec![*x]).collect(),
                horizon: 1,
                num_samples: 1,
                temperature: 0.7,
                top_p: 1.0,
                seed: u64::MAX,
            };
            let back: Request = serde_json::from_str(&to_line(&req)).unwrap();
            for (a, b) in back.context.iter().zip(&req.context) {
                prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            }
            prop_assert_eq!(back.seed, u64::MAX);
        }
    }
}
