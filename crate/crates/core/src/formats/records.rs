use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ensure, Result};

pub const METRIC_REGISTRY_VERSION: u32 = 1;

/// Every metric name a record may carry.
pub const METRIC_REGISTRY: &[&str] = &[
    "ce",
    "cw",
    "attn",
    "total",
    "lambda1",
    "lambda2",
    "final_ce",
    "cone_top10",
    "cone_top50",
    "isoscore",
    "spectral_entropy",
    "grain_count",
    "c_a",
    "c_b",
    "pca_probe_efficiency",
    "restoration",
    "stability_rate",
    "kl_mean",
    "cos_mean",
];

pub fn validate_metric(name: &str) -> Result<()> {
    ensure!(METRIC_REGISTRY.contains(&name), Input, "unknown metric name {name:?}");
    Ok(())
}

/// One line of a metrics JSONL stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<Value>,
}

impl MetricsRecord {
    pub fn new(run_id: &str, seed: u64, step: u64, metric: &str, value: f64, extra: Option<Value>) -> Result<Self> {
        let r = Self {
            run_id: run_id.to_string(),
            seed,
            step,
            metric: metric.to_string(),
            value,
            extra,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        validate_metric(&self.metric)?;
        ensure!(self.value.is_finite(), NonFinite, "metric {} has value {}", self.metric, self.value);
        if let Some(e) = &self.extra {
            ensure!(e.is_object(), Input, "extra must be a JSON object");
        }
        Ok(())
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a JSONL stream, validating each record.
    pub fn parse_lines(text: &str) -> Result<Vec<Self>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let r: Self = serde_json::from_str(l)?;
                r.validate()?;
                Ok(r)
            })
            .collect()
    }
}
