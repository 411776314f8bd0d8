use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use hybrec::cf::{Aggregation, AlsParams};
use hybrec::eval::{MinSupport, SegmentationConfig};
use hybrec::hybrid::HybridConfig;
use hybrec::ingest::{BehaviorType, SyntheticConfig};
use hybrec::seqdb::WindowConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub log: Option<PathBuf>,
    pub sequences: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub recommendations: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Everything a run can be configured with. Loaded from JSON, then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub window: WindowConfig,
    pub min_support: MinSupport,
    pub als: AlsParams,
    pub aggregation: Aggregation,
    pub hybrid: HybridConfig,
    pub segmentation: SegmentationConfig,
    /// Training uses events strictly before this day; predictions are made
    /// at its first hour.
    pub target_day: Option<NaiveDate>,
    pub roster: Vec<String>,
    pub bm_n: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            synthetic: SyntheticConfig::new(1000, 200, 10, 28, 42)
                .with_pattern_per_category(
                    &[
                        BehaviorType::Click,
                        BehaviorType::Cart,
                        BehaviorType::Payment,
                    ],
                    0.4,
                )
                .with_noise(2.0),
            window: WindowConfig::default(),
            min_support: MinSupport::default(),
            als: AlsParams::default(),
            aggregation: Aggregation::default(),
            hybrid: HybridConfig::default(),
            segmentation: SegmentationConfig::default(),
            target_day: None,
            roster: vec!["bm".into(), "hm".into()],
            bm_n: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{}", path.display()))
    }
}

/// Parses a lowercase enum name through its serde representation.
pub fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}
