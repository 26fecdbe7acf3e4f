use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// One serialized check: the unit appended to `report.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub inputs_hash: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, pass: bool) -> Self {
        CheckReport {
            name: name.into(),
            inputs_hash: String::new(),
            lhs,
            rhs,
            ratio: safe_ratio(lhs, rhs),
            pass,
            seed: None,
            extra: Map::new(),
        }
    }

    pub fn with_hash(mut self, hash: impl Into<String>) -> Self {
        self.inputs_hash = hash.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }
}

/// `lhs/rhs`, with `0/0 = 0` and `x/0 = +∞` for `x > 0`.
pub fn safe_ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Short sha256 digest of any serializable input.
pub fn hash_of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(&Sha256::digest(&bytes)[..8])
}
