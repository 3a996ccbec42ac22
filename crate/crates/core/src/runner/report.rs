use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Mode, RunError, WinogroundScoring};
use crate::dataset::Subset;
use crate::forge::DemoSource;
use crate::gateway::ScoreKind;

/// Column codes in table order: Winoground, SugarCrepe, ARO.
pub const TABLE_COLUMNS: [&str; 14] = ["T", "I", "G", "AO", "AA", "RA", "RO", "RR", "SA", "SO", "C", "F", "VG-A", "VG-R"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: Subset,
    pub code: String,
    pub correct: usize,
    pub incorrect: usize,
    /// Replies with no recognizable choice; counted as incorrect too.
    pub unparseable: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl SubsetScore {
    pub fn new(subset: Subset, correct: usize, incorrect: usize, unparseable: usize) -> Self {
        let total = correct + incorrect + unparseable;
        Self {
            subset,
            code: subset.code().to_string(),
            correct,
            incorrect,
            unparseable,
            total,
            accuracy: rate(correct, total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinogroundSummary {
    pub items: usize,
    pub text_correct: usize,
    pub image_correct: usize,
    pub group_correct: usize,
    pub text: f64,
    pub image: f64,
    pub group: f64,
    /// Caption-image probes sent; zero for embedding models.
    pub probes: usize,
    pub unparseable_probes: usize,
    pub scoring: Option<WinogroundScoring>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model: String,
    pub mode: Mode,
    /// Row label: `Zero-Shot`, `1-Shot` or `5-Shot`.
    pub method: String,
    pub shots: Option<usize>,
    pub one_shot_index: Option<usize>,
    pub bank_id: Option<String>,
    pub sample_type: Option<DemoSource>,
    /// Seeds both query and demonstration label maps.
    pub seed: u64,
    pub config_hash: String,
    pub score_kind: Option<ScoreKind>,
    pub target_token: Option<String>,
    pub logit_floor: Option<f64>,
    pub average: String,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: RunMetadata,
    /// Subsets present in the run, in table order.
    pub subsets: Vec<SubsetScore>,
    pub winoground: Option<WinogroundSummary>,
    /// Set when the run aborted and only completed items are counted.
    pub partial: bool,
}

pub(crate) fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 { 0.0 } else { hits as f64 / total as f64 }
}

impl BenchmarkReport {
    pub fn subset(&self, subset: Subset) -> Option<&SubsetScore> {
        self.subsets.iter().find(|s| s.subset == subset)
    }

    /// Checks rate bounds, counting identities and group ≤ min(text, image).
    pub fn check(&self) -> Result<(), String> {
        for s in &self.subsets {
            if s.correct + s.incorrect + s.unparseable != s.total {
                return Err(format!("{}: counts do not add up", s.code));
            }
            if !(0.0..=1.0).contains(&s.accuracy) {
                return Err(format!("{}: accuracy {} out of range", s.code, s.accuracy));
            }
        }
        if let Some(w) = &self.winoground {
            for r in [w.text, w.image, w.group] {
                if !(0.0..=1.0).contains(&r) {
                    return Err(format!("winoground rate {r} out of range"));
                }
            }
            if w.group_correct > w.text_correct.min(w.image_correct) {
                return Err("winoground group exceeds text or image".into());
            }
        }
        Ok(())
    }
}

/// Rates in [`TABLE_COLUMNS`] order; `None` where the run has no data.
pub fn table_values(report: &BenchmarkReport) -> [Option<f64>; 14] {
    let mut out = [None; 14];
    if let Some(w) = &report.winoground {
        out[0] = Some(w.text);
        out[1] = Some(w.image);
        out[2] = Some(w.group);
    }
    for (i, subset) in Subset::ALL.iter().enumerate() {
        out[3 + i] = report.subset(*subset).map(|s| s.accuracy);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableLayout {
    /// One row per model.
    Models,
    /// Model, method and demonstration type per row.
    Sweep,
}

fn sample_type_label(s: Option<DemoSource>) -> &'static str {
    match s {
        Some(DemoSource::Synthetic) => "Synthetic",
        Some(DemoSource::Real) => "Real",
        None => "-",
    }
}

/// Percent table with one decimal. Avg. is the unweighted mean of the
/// columns present in that row.
pub fn markdown_table(reports: &[&BenchmarkReport], layout: TableLayout) -> String {
    let mut head: Vec<&str> = match layout {
        TableLayout::Models => vec!["Model"],
        TableLayout::Sweep => vec!["Model", "Method", "Type"],
    };
    head.extend(TABLE_COLUMNS);
    head.push("Avg.");
    let mut out = format!("| {} |\n|{}\n", head.join(" | "), "---|".repeat(head.len()));
    for report in reports {
        let m = &report.metadata;
        let mut cells = vec![m.model.clone()];
        if layout == TableLayout::Sweep {
            cells.push(m.method.clone());
            cells.push(sample_type_label(m.sample_type).to_string());
        }
        let values = table_values(report);
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        cells.extend(values.iter().map(|v| v.map_or("-".to_string(), pct)));
        cells.push(if present.is_empty() {
            "-".into()
        } else {
            pct(present.iter().sum::<f64>() / present.len() as f64)
        });
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    MarkdownTable,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::MarkdownTable),
            other => Err(format!("unknown report format `{other}` (json, csv, md)")),
        }
    }
}

pub fn export_report(report: &BenchmarkReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), RunError> {
    let text = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| RunError::Io(e.to_string()))?;
            s.push('\n');
            s
        }
        ReportFormat::Csv => report_to_csv(report)?,
        ReportFormat::MarkdownTable => markdown_table(&[report], TableLayout::Models),
    };
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

fn unescape(token: &str) -> String {
    token.replace("~1", "/").replace("~0", "~")
}

fn flatten(value: &Value, path: &str, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                flatten(v, &format!("{path}/{}", escape(k)), out);
            }
        }
        Value::Array(items) if !items.is_empty() => {
            for (i, v) in items.iter().enumerate() {
                flatten(v, &format!("{path}/{i}"), out);
            }
        }
        leaf => out.push((path.to_string(), leaf.to_string())),
    }
}

/// Long-format CSV: one `path,value` row per JSON leaf, where `path` is a
/// JSON pointer and `value` the leaf's JSON text.
pub fn report_to_csv(report: &BenchmarkReport) -> Result<String, RunError> {
    let value = serde_json::to_value(report).map_err(|e| RunError::Io(e.to_string()))?;
    let mut rows = Vec::new();
    flatten(&value, "", &mut rows);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunError::Io(e.to_string());
    writer.write_record(["path", "value"]).map_err(csv_err)?;
    for (path, value) in rows {
        writer.write_record([path, value]).map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| RunError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| RunError::Io(e.to_string()))
}

fn insert(root: &mut Value, tokens: &[String], leaf: Value) {
    let (first, rest) = tokens.split_first().expect("non-empty pointer");
    let Value::Object(map) = root else { unreachable!("intermediate nodes are objects") };
    if rest.is_empty() {
        map.insert(first.clone(), leaf);
    } else {
        insert(map.entry(first.clone()).or_insert_with(|| Value::Object(Map::new())), rest, leaf);
    }
}

/// Objects keyed exactly `0..n` were arrays before flattening.
fn restore_arrays(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let n = map.len();
            let is_array = n > 0 && (0..n).all(|i| map.contains_key(&i.to_string()));
            if is_array {
                let mut map = map;
                Value::Array((0..n).map(|i| restore_arrays(map.remove(&i.to_string()).unwrap())).collect())
            } else {
                Value::Object(map.into_iter().map(|(k, v)| (k, restore_arrays(v))).collect())
            }
        }
        other => other,
    }
}

pub fn report_from_csv(text: &str) -> Result<BenchmarkReport, RunError> {
    let malformed = |m: String| RunError::Io(format!("report csv: {m}"));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut root = Value::Object(Map::new());
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let (Some(path), Some(value)) = (record.get(0), record.get(1)) else {
            return Err(malformed("expected two columns".into()));
        };
        let tokens: Vec<String> = path.strip_prefix('/').unwrap_or(path).split('/').map(unescape).collect();
        let leaf: Value = serde_json::from_str(value).map_err(|e| malformed(format!("{path}: {e}")))?;
        insert(&mut root, &tokens, leaf);
    }
    serde_json::from_value(restore_arrays(root)).map_err(|e| malformed(e.to_string()))
}

pub fn load_report_json(path: impl AsRef<Path>) -> Result<BenchmarkReport, RunError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| RunError::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_report_csv(path: impl AsRef<Path>) -> Result<BenchmarkReport, RunError> {
    report_from_csv(&std::fs::read_to_string(path.as_ref())?)
}

/// Loads a report by extension (`.csv`, otherwise JSON).
pub fn load_report(path: impl AsRef<Path>) -> Result<BenchmarkReport, RunError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_report_csv(path),
        _ => load_report_json(path),
    }
}
