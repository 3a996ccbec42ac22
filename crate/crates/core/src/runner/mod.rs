//! End-to-end evaluation: benchmark loading, per-item scoring over a bounded
//! worker pool, aggregation into [`BenchmarkReport`]s, export and sweeps.

mod config;
mod eval;
mod report;
mod sweep;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::dataset::{self, DatasetError, ManifestKind, PairItem, WinogroundItem};
use crate::forge::ForgeError;
use crate::gateway::{mock, Backend, GatewayError, ModelKind, ResponseCache};
use crate::prompt::PromptError;
use crate::scoring::ScoringError;

pub use config::{BenchmarkSpec, Mode, RunConfig, SweepGrid, WinogroundScoring};
pub use eval::{evaluate, run_contrastive_eval, run_generative_eval, RunOutcome};
pub use report::{
    export_report, load_report, load_report_csv, load_report_json, markdown_table, report_from_csv, report_to_csv,
    table_values, BenchmarkReport, ReportFormat, RunMetadata, SubsetScore, TableLayout, WinogroundSummary,
    TABLE_COLUMNS,
};
pub use sweep::{run_sweep, CellStatus, SweepCell, SweepOutcome};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("io: {0}")]
    Io(String),
    /// An item failed; `partial` aggregates the items that completed.
    #[error("item `{item_id}`: {source}")]
    Item {
        item_id: String,
        #[source]
        source: Box<RunError>,
        partial: Box<BenchmarkReport>,
    },
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Benchmark items for one run, in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Benchmarks {
    pub pairs: Vec<PairItem>,
    pub winoground: Vec<WinogroundItem>,
}

impl Benchmarks {
    pub fn load(specs: &[BenchmarkSpec]) -> Result<Self, RunError> {
        let mut out = Benchmarks::default();
        for spec in specs {
            let kind = match spec.kind {
                Some(k) => k,
                None => dataset::detect_kind(&spec.manifest)?,
            };
            match kind {
                ManifestKind::Pairwise => out.pairs.extend(dataset::load_pairwise_benchmark(&spec.manifest)?),
                ManifestKind::Winoground => out.winoground.extend(dataset::load_winoground(&spec.manifest)?),
            }
        }
        Ok(out)
    }
}

/// Resolves `mock:<name>` endpoints: registered backends first, then the
/// built-in mocks built over the loaded benchmark.
#[derive(Clone, Default)]
pub struct MockRegistry {
    extra: HashMap<String, Backend>,
}

impl MockRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(mut self, name: impl Into<String>, backend: Backend) -> Self {
        self.extra.insert(name.into(), backend);
        self
    }

    pub fn lookup(&self, name: &str, kind: ModelKind, data: &Benchmarks) -> Option<Backend> {
        match self.extra.get(name) {
            Some(b) => Some(b.clone()),
            None => mock::builtin(name, kind, &data.pairs, &data.winoground),
        }
    }
}

pub(crate) fn open_cache(dir: Option<&Path>) -> Result<Option<Arc<ResponseCache>>, RunError> {
    dir.map(|d| ResponseCache::open(d).map(Arc::new)).transpose().map_err(RunError::from)
}

/// File-system-safe form of a model or cell name.
pub(crate) fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

pub(crate) fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
