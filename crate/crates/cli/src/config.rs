use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use swrn::training::TrainConfig;
use swrn::ModelConfig;

/// `swrn train` / `swrn ablate` configuration. Omitted fields take the
/// defaults of [`ModelConfig`] and [`TrainConfig`]; relative paths resolve
/// against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataPaths,
    pub output: OutputPaths,
    /// Overrides `train.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ablation: AblationSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train_manifest: PathBuf,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    /// Timed inference steps per variant; 0 disables latency measurement.
    pub bench_runs: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings { bench_runs: 10 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.data.train_manifest = resolve(&cfg.data.train_manifest);
        cfg.data.test_manifest = cfg.data.test_manifest.as_deref().map(resolve);
        cfg.output.dir = resolve(&cfg.output.dir);
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn test_manifest(&self) -> Result<&Path> {
        match &self.data.test_manifest {
            Some(p) => Ok(p),
            None => bail!("data.test_manifest is required for this command"),
        }
    }
}
