use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunError;
use crate::dataset::ManifestKind;
use crate::gateway::{ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ContrastiveZeroShot,
    GenerativeZeroShot,
    GenerativeFewShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinogroundScoring {
    /// Mean "yes" token score per probe, compared like similarities.
    YesLogit,
    /// 1 if the reply says yes, else 0.
    BinaryYesNo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub manifest: PathBuf,
    /// Detected from the manifest when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ManifestKind>,
}

/// Grid for `sweep`: shot counts (0 = zero-shot) crossed with banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default)]
    pub banks: Vec<PathBuf>,
}

fn default_shots() -> Vec<usize> {
    vec![0, 1, 5]
}

fn default_seed() -> u64 {
    0
}

fn default_target() -> String {
    "yes".into()
}

fn default_floor() -> f64 {
    -20.0
}

fn default_concurrency() -> usize {
    4
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_scoring() -> WinogroundScoring {
    WinogroundScoring::YesLogit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub benchmarks: Vec<BenchmarkSpec>,
    pub models: Vec<ModelSpec>,
    pub mode: Mode,
    /// 1 or 5; few-shot only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    /// Bank directory; few-shot only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<PathBuf>,
    /// Which demonstration a 1-shot prompt uses.
    #[serde(default)]
    pub one_shot_index: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_scoring")]
    pub winoground_scoring: WinogroundScoring,
    #[serde(default = "default_target")]
    pub target_token: String,
    /// Score used where the target token is missing from a position.
    #[serde(default = "default_floor")]
    pub logit_floor: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Items evaluated in parallel per model.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

impl RunConfig {
    pub fn new(mode: Mode, models: Vec<ModelSpec>, benchmarks: Vec<BenchmarkSpec>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            benchmarks,
            models,
            mode,
            shots: None,
            bank: None,
            one_shot_index: 0,
            seed: default_seed(),
            winoground_scoring: default_scoring(),
            target_token: default_target(),
            logit_floor: default_floor(),
            output_dir: output_dir.into(),
            cache_dir: None,
            concurrency: default_concurrency(),
            sweep: None,
        }
    }

    /// Parses a TOML config; relative paths are taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.benchmarks.iter_mut().for_each(|b| fix(&mut b.manifest));
        self.bank.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        self.cache_dir.iter_mut().for_each(fix);
        if let Some(grid) = &mut self.sweep {
            grid.banks.iter_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let err = |m: String| Err(RunError::Config(m));
        if self.models.is_empty() {
            return err("no models configured".into());
        }
        if self.benchmarks.is_empty() {
            return err("no benchmarks configured".into());
        }
        let few_shot = self.mode == Mode::GenerativeFewShot;
        if few_shot != self.shots.is_some() || few_shot != self.bank.is_some() {
            return err("`shots` and `bank` must be set exactly when mode is generative_few_shot".into());
        }
        if let Some(shots) = self.shots {
            if shots != 1 && shots != 5 {
                return err(format!("shots must be 1 or 5, got {shots}"));
            }
        }
        let wanted = if self.mode == Mode::ContrastiveZeroShot { ModelKind::Embedding } else { ModelKind::Generative };
        if let Some(m) = self.models.iter().find(|m| m.kind != wanted) {
            return err(format!("model `{}` is {:?} but mode {:?} needs {:?} models", m.name, m.kind, self.mode, wanted));
        }
        let remote = |e: &str| e.starts_with("http://") || e.starts_with("https://");
        if let Some(m) = self.models.iter().find(|m| m.mock_name().is_none() && !remote(&m.endpoint)) {
            return err(format!("model `{}`: endpoint `{}` is neither mock:<name> nor an http(s) URL", m.name, m.endpoint));
        }
        if few_shot {
            if let Some(m) = self.models.iter().find(|m| !m.capabilities.accepts_multi_image) {
                return err(format!("few-shot prompting needs multi-image input, `{}` lacks it", m.name));
            }
        }
        if !self.logit_floor.is_finite() {
            return err("logit_floor must be finite".into());
        }
        Ok(())
    }

    /// Hash of everything that affects scores; output location, cache and
    /// parallelism are left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.cache_dir = None;
        canonical.concurrency = 0;
        canonical.sweep = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
