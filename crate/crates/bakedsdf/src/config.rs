//! Pipeline configuration: a TOML file plus `key=value` overrides.
//!
//! Relative `scene` and `output` paths are resolved against the directory
//! of the configuration file and stored as absolute paths. The top-level `seed` is authoritative: it
//! replaces the per-stage seeds, and each stage draws from named
//! sub-streams of it.

use std::path::{Path, PathBuf};

use bakedsdf_core::appearance::AppearanceConfig;
use bakedsdf_core::bake::BakeConfig;
use bakedsdf_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{read, PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub synth: bool,
    pub train: bool,
    pub bake: bool,
    pub fit: bool,
    pub export: bool,
    pub render: bool,
    pub metrics: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            synth: true,
            train: true,
            bake: true,
            fit: true,
            export: true,
            render: true,
            metrics: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Also volume-render the stage-1 model at the held-out cameras.
    pub stage1: bool,
    pub stage1_samples: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            stage1: true,
            stage1_samples: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bake: BakeConfig,
    #[serde(default)]
    pub appearance: AppearanceConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

/// Parses a command-line override value as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets a dotted `key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Usage(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Usage(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Usage(format!("override key `{key}`: `{p}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses `text`, applies overrides, resolves paths against `base` and
    /// propagates the seed.
    pub fn parse(text: &str, path: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| PipelineError::format(path, e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| PipelineError::format(path, e.to_string()))?;
        let base = std::path::absolute(path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))).map_err(crate::error::io_at(path))?;
        config.scene = base.join(&config.scene);
        config.output = base.join(&config.output);
        config.resolve();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = String::from_utf8(read(path)?).map_err(|e| PipelineError::format(path, e.to_string()))?;
        Self::parse(&text, path, overrides)
    }

    pub fn resolve(&mut self) {
        self.train.seed = self.seed;
        self.bake.hull.seed = self.seed;
        self.appearance.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.appearance.validate()?;
        if self.bake.resolution < 2 || self.bake.samples_per_ray == 0 {
            return Err(PipelineError::Usage("bake.resolution must be at least 2 and bake.samples_per_ray positive".into()));
        }
        if self.render.stage1 && self.render.stage1_samples < 2 {
            return Err(PipelineError::Usage("render.stage1_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// The effective configuration as TOML, with absolute paths.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
scene = "scenes/desk.toml"
output = "out"
seed = 3

[train]
iterations = 10
"#;

    #[test]
    fn parses_with_defaults_and_propagates_seed() {
        let c = PipelineConfig::parse(TEXT, Path::new("/base/run.toml"), &[]).unwrap();
        assert_eq!(c.scene, Path::new("/base/scenes/desk.toml"));
        assert_eq!(c.output, Path::new("/base/out"));
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.train.batch_rays, TrainConfig::default().batch_rays);
        assert_eq!((c.train.seed, c.bake.hull.seed, c.appearance.seed), (3, 3, 3));
        assert!(c.stages.fit);
    }

    #[test]
    fn overrides_apply_typed_values() {
        let sets = ["train.iterations=7", "appearance.loss=l2", "stages.render=false", "seed=11", "appearance.lr.lr_init=0.5"]
            .map(String::from);
        let c = PipelineConfig::parse(TEXT, Path::new("run.toml"), &sets).unwrap();
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.appearance.loss, bakedsdf_core::appearance::LossKind::L2);
        assert!(!c.stages.render);
        assert_eq!(c.train.seed, 11);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = |sets: &[&str]| {
            let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
            PipelineConfig::parse(TEXT, Path::new("run.toml"), &sets).is_err()
        };
        assert!(bad(&["train.iterations"]));
        assert!(bad(&["train.nonsense=1"]));
        assert!(bad(&["seed.x=1"]));
        assert!(bad(&["train.batch_rays=0"]));
        assert!(PipelineConfig::parse("scene = 1", Path::new("x.toml"), &[]).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let c = PipelineConfig::parse(TEXT, Path::new("/base/run.toml"), &[]).unwrap();
        let again = PipelineConfig::parse(&c.to_toml(), Path::new("/elsewhere/x.toml"), &[]).unwrap();
        assert_eq!(c, again);
    }
}
