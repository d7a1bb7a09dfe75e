//! `report.json` contents. Non-finite floats are written as the strings
//! `"NaN"`, `"Infinity"` and `"-Infinity"` so diverged runs round-trip.

use dem_core::training::{StopReason, TrainReport};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub(crate) mod lenient_f64 {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(crate) enum Raw {
        Number(f64),
        Text(String),
    }

    pub(crate) fn encode(v: f64) -> serde_json::Value {
        if v.is_finite() {
            serde_json::json!(v)
        } else if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "Infinity".into()
        } else {
            "-Infinity".into()
        }
    }

    pub(crate) fn decode<E: serde::de::Error>(raw: Raw) -> Result<f64, E> {
        match raw {
            Raw::Number(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "NaN" => Ok(f64::NAN),
                "Infinity" => Ok(f64::INFINITY),
                "-Infinity" => Ok(f64::NEG_INFINITY),
                _ => Err(E::custom(format!("expected a number, got \"{t}\""))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Raw::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| encode(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Raw>::deserialize(d)?.into_iter().map(decode).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdSummary {
    #[serde(with = "lenient_f64")]
    pub mean: f64,
    #[serde(with = "lenient_f64::vec")]
    pub component_means: Vec<f64>,
    pub absolute: [bool; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    #[serde(with = "lenient_f64")]
    pub energy: f64,
    #[serde(with = "lenient_f64")]
    pub residual_norm: f64,
    pub iterations: usize,
    #[serde(with = "lenient_f64::vec")]
    pub load_step_energies: Vec<f64>,
    pub rd: RdSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub mode: String,
    pub dims: [usize; 3],
    pub seed: u64,
    pub n_params: usize,
    #[serde(with = "lenient_f64")]
    pub final_loss: f64,
    #[serde(with = "lenient_f64::vec")]
    pub loss_history: Vec<f64>,
    #[serde(with = "lenient_f64")]
    pub wall_time: f64,
    pub stop_reason: StopReason,
    pub diverged: bool,
    pub localization_flag: bool,
    #[serde(with = "lenient_f64")]
    pub localization_metric: f64,
    pub epochs: usize,
    pub updates: usize,
    pub non_finite_op: Option<String>,
    pub warnings: Vec<String>,
    pub oracle: Option<OracleSummary>,
}

impl RunReport {
    pub fn from_train(method: &str, mode: &str, dims: [usize; 3], seed: u64, n_params: usize, r: &TrainReport) -> Self {
        Self {
            method: method.into(),
            mode: mode.into(),
            dims,
            seed,
            n_params,
            final_loss: r.final_loss,
            loss_history: r.loss_history.clone(),
            wall_time: r.wall_time,
            stop_reason: r.stop_reason,
            diverged: r.diverged,
            localization_flag: r.localization_flag,
            localization_metric: r.localization_metric,
            epochs: r.epochs,
            updates: r.updates,
            non_finite_op: r.non_finite_op.map(String::from),
            warnings: Vec::new(),
            oracle: None,
        }
    }

    pub fn mean_rd(&self) -> Option<f64> {
        self.oracle.as_ref().map(|o| o.rd.mean)
    }

    /// One-line summary printed by `run`; rebuilt identically from a reread report.
    pub fn summary(&self) -> String {
        let rd = self.mean_rd().map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "{}-{} dims={}x{}x{} seed={} final_loss={:.6e} stop={} diverged={} localization={:.4} mean_rd%={} updates={}",
            self.method,
            self.mode,
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.seed,
            self.final_loss,
            serde_json::to_value(self.stop_reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.diverged,
            self.localization_metric,
            rd,
            self.updates,
        )
    }
}
