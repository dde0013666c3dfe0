//! The experiment configuration file: one versioned JSON document whose
//! sections mirror the library parameter structs. Unknown keys are
//! rejected; CLI flags override individual values after loading.

use binpick::forest::ForestParams;
use binpick::pipeline::{GraspGenParams, PipelineConfig};
use binpick::scene::SceneConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    pub forest: ForestParams,
    pub grasp_gen: GraspGenParams,
    pub seeds: Seeds,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub scene: u64,
    pub collect: u64,
    pub train: u64,
    pub capture: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            scene: 1,
            collect: 1000,
            train: 7,
            capture: 0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            scene: SceneConfig::default(),
            pipeline: PipelineConfig::default(),
            forest: ForestParams::default(),
            grasp_gen: GraspGenParams::default(),
            seeds: Seeds::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        if config.version != CONFIG_VERSION {
            return Err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            ));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.pipeline
            .sensor
            .validate()
            .map_err(|e| e.to_string())?;
        self.pipeline
            .gripper
            .validate()
            .map_err(|e| e.to_string())?;
        if self.pipeline.quality_subsets == 0 {
            return Err("pipeline.quality_subsets must be at least 1".into());
        }
        if self.pipeline.max_views == 0 {
            return Err("pipeline.max_views must be at least 1".into());
        }
        Ok(())
    }
}

/// Caps a requested worker count by the `BINPICK_THREADS` variable.
pub fn effective_threads(requested: usize) -> usize {
    let cap = std::env::var("BINPICK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(usize::MAX);
    requested.clamp(1, cap)
}
