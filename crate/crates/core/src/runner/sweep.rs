use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::eval::{demo_source_label, run_cell};
use super::report::{markdown_table, BenchmarkReport, TableLayout};
use super::{open_cache, slug, write_json, Benchmarks, MockRegistry, Mode, RunConfig, RunError, SweepGrid};
use crate::forge::{load_bank, DemoBank, DemoSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Completed { report: Box<BenchmarkReport> },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub model: String,
    pub method: String,
    pub sample_type: Option<DemoSource>,
    pub bank: Option<PathBuf>,
    #[serde(flatten)]
    pub status: CellStatus,
}

impl SweepCell {
    pub fn report(&self) -> Option<&BenchmarkReport> {
        match &self.status {
            CellStatus::Completed { report } => Some(report),
            CellStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    /// Calls that reached a backend rather than the cache, over all cells.
    pub backend_calls: u64,
}

impl SweepOutcome {
    pub fn all_completed(&self) -> bool {
        self.cells.iter().all(|c| c.report().is_some())
    }

    /// Completed cells as a table, followed by a list of failed cells.
    pub fn table(&self) -> String {
        let reports: Vec<&BenchmarkReport> = self.cells.iter().filter_map(SweepCell::report).collect();
        let mut out = markdown_table(&reports, TableLayout::Sweep);
        let failed: Vec<&SweepCell> = self.cells.iter().filter(|c| c.report().is_none()).collect();
        if !failed.is_empty() {
            out.push_str("\nFailed cells:\n");
            for c in failed {
                if let CellStatus::Failed { error } = &c.status {
                    let kind = c.sample_type.map_or("-", demo_source_label);
                    let _ = writeln!(out, "- {} {} {}: {}", c.model, c.method, kind, error);
                }
            }
        }
        out
    }
}

struct PlannedCell {
    config: RunConfig,
    method: String,
    bank: Option<(PathBuf, Result<DemoBank, String>)>,
}

fn bank_order(b: &(PathBuf, Result<DemoBank, String>)) -> u8 {
    match b.1.as_ref().ok().and_then(DemoBank::source) {
        Some(DemoSource::Synthetic) => 0,
        Some(DemoSource::Real) => 1,
        None => 2,
    }
}

fn plan(config: &RunConfig) -> Vec<PlannedCell> {
    let grid = config.sweep.clone().unwrap_or_else(|| SweepGrid {
        shots: vec![0, 1, 5],
        banks: config.bank.iter().cloned().collect(),
    });
    let mut banks: Vec<(PathBuf, Result<DemoBank, String>)> = grid
        .banks
        .iter()
        .map(|dir| {
            let bank = load_bank(dir).and_then(|b| b.check().map(|()| b)).map_err(|e| e.to_string());
            (dir.clone(), bank)
        })
        .collect();
    banks.sort_by_key(bank_order);
    let mut shots = grid.shots.clone();
    shots.sort_unstable();
    shots.dedup();

    let contrastive = config.mode == Mode::ContrastiveZeroShot;
    let mut cells = Vec::new();
    for &n in &shots {
        if n == 0 {
            let mut c = config.clone();
            c.mode = if contrastive { Mode::ContrastiveZeroShot } else { Mode::GenerativeZeroShot };
            (c.shots, c.bank) = (None, None);
            cells.push(PlannedCell { config: c, method: "Zero-Shot".into(), bank: None });
            continue;
        }
        if contrastive {
            continue;
        }
        for bank in &banks {
            let mut c = config.clone();
            c.mode = Mode::GenerativeFewShot;
            (c.shots, c.bank) = (Some(n), Some(bank.0.clone()));
            cells.push(PlannedCell { config: c, method: format!("{n}-Shot"), bank: Some(bank.clone()) });
        }
    }
    cells
}

/// Runs every cell of the shots × bank grid for every model, sharing one
/// cache. A failing cell is recorded and the rest still run. Writes each
/// cell report under `cells/`, plus `sweep.json` and `sweep.md`.
pub fn run_sweep(config: &RunConfig, mocks: &MockRegistry) -> Result<SweepOutcome, RunError> {
    let data = Benchmarks::load(&config.benchmarks)?;
    let cache = open_cache(config.cache_dir.as_deref())?;
    std::fs::create_dir_all(&config.output_dir)?;
    let planned = plan(config);
    let mut outcome = SweepOutcome { cells: vec![], backend_calls: 0 };
    for spec in &config.models {
        for cell in &planned {
            let mut cfg = cell.config.clone();
            cfg.models = vec![spec.clone()];
            let sample_type = cell.bank.as_ref().and_then(|b| b.1.as_ref().ok()).and_then(DemoBank::source);
            let status = match (cfg.validate(), &cell.bank) {
                (Err(e), _) => CellStatus::Failed { error: e.to_string() },
                (Ok(()), Some((_, Err(e)))) => CellStatus::Failed { error: e.clone() },
                (Ok(()), bank) => {
                    let bank = bank.as_ref().and_then(|b| b.1.as_ref().ok());
                    let (result, calls) = run_cell(spec, &cfg, &data, bank, cache.clone(), mocks);
                    outcome.backend_calls += calls;
                    match result {
                        Ok(report) => CellStatus::Completed { report: Box::new(report) },
                        Err(e) => {
                            log::error!("cell {} {} failed: {e}", spec.name, cell.method);
                            CellStatus::Failed { error: e.to_string() }
                        }
                    }
                }
            };
            outcome.cells.push(SweepCell {
                model: spec.name.clone(),
                method: cell.method.clone(),
                sample_type,
                bank: cell.bank.as_ref().map(|b| b.0.clone()),
                status,
            });
        }
    }
    for (k, cell) in outcome.cells.iter().enumerate() {
        if let Some(report) = cell.report() {
            let kind = cell.sample_type.map_or("zero", demo_source_label);
            let name = format!("{k:02}-{}-{}-{}.json", slug(&cell.model), slug(&cell.method), slug(kind));
            write_json(&config.output_dir.join("cells").join(name), report)?;
        }
    }
    write_json(&config.output_dir.join("sweep.json"), &outcome.cells)?;
    std::fs::write(config.output_dir.join("sweep.md"), outcome.table())?;
    Ok(outcome)
}
