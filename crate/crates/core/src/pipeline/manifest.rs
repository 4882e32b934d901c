use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::VERSION;
use crate::corpus::CompositionPlan;
use crate::eval::Track;
use crate::fusion::ModelWeight;

/// Record of one run. Everything except `timings_ms` is a function of the
/// config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub track: Track,
    pub plan: CompositionPlan,
    /// Artifact key to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock milliseconds per stage, summed over views.
    pub timings_ms: BTreeMap<String, u64>,
    /// Views whose stage-1 candidates were reused from disk.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resumed: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<ModelWeight>,
}

impl RunManifest {
    pub fn new(config_hash: String, track: Track, plan: CompositionPlan) -> Self {
        Self {
            version: VERSION.to_owned(),
            config_hash,
            track,
            plan,
            artifacts: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            resumed: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub(crate) fn add_time(&mut self, stage: &str, since: Instant) {
        *self.timings_ms.entry(stage.to_owned()).or_default() += since.elapsed().as_millis() as u64;
    }
}
