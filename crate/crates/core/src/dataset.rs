//! Benchmark manifests.
//!
//! Every benchmark is a JSONL file, one record per line. Pairwise benchmarks
//! (ARO, SugarCrepe) use the fields `item_id`, `image`, `caption_pos`,
//! `caption_neg`, `benchmark`, `subset`. Winoground uses `item_id`,
//! `image_0`, `image_1`, `caption_0`, `caption_1`.
//!
//! An image field is either a locator string or an object
//! `{"locator": ..., "media_type": ...}`. Relative paths are resolved against
//! the manifest's directory, and every image must resolve before loading
//! succeeds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::image_ref::ImageRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("{path}: file not found")]
    FileNotFound { path: PathBuf },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: field `{field}` is empty")]
    EmptyField { line: usize, field: String },
    #[error("line {line}: unknown benchmark `{name}`")]
    UnknownBenchmark { line: usize, name: String },
    #[error("line {line}: unknown subset `{name}`")]
    UnknownSubset { line: usize, name: String },
    #[error("line {line}: item `{item_id}` has identical captions")]
    IdenticalCaptions { line: usize, item_id: String },
    #[error("line {line}: duplicate item id `{item_id}`")]
    DuplicateId { line: usize, item_id: String },
    #[error("item `{item_id}`: image `{locator}` does not resolve")]
    ImageUnresolvable { item_id: String, locator: String },
}

impl DatasetError {
    pub fn line(&self) -> Option<usize> {
        match self {
            DatasetError::Malformed { line, .. }
            | DatasetError::MissingField { line, .. }
            | DatasetError::EmptyField { line, .. }
            | DatasetError::UnknownBenchmark { line, .. }
            | DatasetError::UnknownSubset { line, .. }
            | DatasetError::IdenticalCaptions { line, .. }
            | DatasetError::DuplicateId { line, .. } => Some(*line),
            _ => None,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::FileNotFound { .. } => "FileNotFound",
            DatasetError::Io { .. } => "Io",
            DatasetError::Malformed { .. } => "Malformed",
            DatasetError::MissingField { .. } => "MissingField",
            DatasetError::EmptyField { .. } => "EmptyField",
            DatasetError::UnknownBenchmark { .. } => "UnknownBenchmark",
            DatasetError::UnknownSubset { .. } => "UnknownSubset",
            DatasetError::IdenticalCaptions { .. } => "IdenticalCaptions",
            DatasetError::DuplicateId { .. } => "DuplicateId",
            DatasetError::ImageUnresolvable { .. } => "ImageUnresolvable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "ARO")]
    Aro,
    SugarCrepe,
    Winoground,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Aro => "ARO",
            Benchmark::SugarCrepe => "SugarCrepe",
            Benchmark::Winoground => "Winoground",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "ARO" => Ok(Benchmark::Aro),
            "SugarCrepe" => Ok(Benchmark::SugarCrepe),
            "Winoground" => Ok(Benchmark::Winoground),
            _ => Err(()),
        }
    }
}

/// Pairwise benchmark subsets, declared in report-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Subset {
    AddObj,
    AddAtt,
    ReplaceAtt,
    ReplaceObj,
    ReplaceRel,
    SwapAtt,
    SwapObj,
    CocoOrder,
    Flickr30kOrder,
    VgAttribution,
    VgRelation,
}

impl Subset {
    pub const ALL: [Subset; 11] = [
        Subset::AddObj,
        Subset::AddAtt,
        Subset::ReplaceAtt,
        Subset::ReplaceObj,
        Subset::ReplaceRel,
        Subset::SwapAtt,
        Subset::SwapObj,
        Subset::CocoOrder,
        Subset::Flickr30kOrder,
        Subset::VgAttribution,
        Subset::VgRelation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subset::AddObj => "add_obj",
            Subset::AddAtt => "add_att",
            Subset::ReplaceAtt => "replace_att",
            Subset::ReplaceObj => "replace_obj",
            Subset::ReplaceRel => "replace_rel",
            Subset::SwapAtt => "swap_att",
            Subset::SwapObj => "swap_obj",
            Subset::CocoOrder => "COCO-Order",
            Subset::Flickr30kOrder => "Flickr30k-Order",
            Subset::VgAttribution => "VG-Attribution",
            Subset::VgRelation => "VG-Relation",
        }
    }

    /// Short column code used in report tables.
    pub fn code(self) -> &'static str {
        match self {
            Subset::AddObj => "AO",
            Subset::AddAtt => "AA",
            Subset::ReplaceAtt => "RA",
            Subset::ReplaceObj => "RO",
            Subset::ReplaceRel => "RR",
            Subset::SwapAtt => "SA",
            Subset::SwapObj => "SO",
            Subset::CocoOrder => "C",
            Subset::Flickr30kOrder => "F",
            Subset::VgAttribution => "VG-A",
            Subset::VgRelation => "VG-R",
        }
    }

    pub fn benchmark(self) -> Benchmark {
        match self {
            Subset::CocoOrder | Subset::Flickr30kOrder | Subset::VgAttribution | Subset::VgRelation => {
                Benchmark::Aro
            }
            _ => Benchmark::SugarCrepe,
        }
    }

    pub fn parse(name: &str) -> Option<Subset> {
        Subset::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn is_word_order(self) -> bool {
        matches!(self, Subset::CocoOrder | Subset::Flickr30kOrder)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for Subset {
    type Error = String;

    fn try_from(value: String) -> Result<Self, String> {
        Subset::parse(&value).ok_or_else(|| format!("unknown subset `{value}`"))
    }
}

impl From<Subset> for String {
    fn from(s: Subset) -> String {
        s.name().to_string()
    }
}

/// One image with a matching and a hard-negative caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairItem {
    pub item_id: String,
    pub image: ImageRef,
    pub caption_pos: String,
    pub caption_neg: String,
    pub benchmark: Benchmark,
    pub subset: Subset,
}

/// Two images and two captions; caption `i` belongs to image `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinogroundItem {
    pub item_id: String,
    pub image_0: ImageRef,
    pub image_1: ImageRef,
    pub caption_0: String,
    pub caption_1: String,
}

impl WinogroundItem {
    pub fn caption(&self, i: usize) -> &str {
        if i == 0 { &self.caption_0 } else { &self.caption_1 }
    }

    pub fn image(&self, j: usize) -> &ImageRef {
        if j == 0 { &self.image_0 } else { &self.image_1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    Pairwise,
    Winoground,
}

/// Row-level parsing shared by the benchmark loaders and the demo-bank
/// ingestion.
pub(crate) struct RecordReader<'a> {
    pub line: usize,
    pub obj: &'a Map<String, Value>,
    pub base: &'a Path,
}

impl RecordReader<'_> {
    pub fn string(&self, field: &str) -> Result<String, DatasetError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => {
                Err(DatasetError::MissingField { line: self.line, field: field.to_string() })
            }
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(DatasetError::Malformed {
                line: self.line,
                message: format!("field `{field}` must be a string, got {other}"),
            }),
        }
    }

    pub fn non_empty(&self, field: &str) -> Result<String, DatasetError> {
        let s = self.string(field)?;
        if s.is_empty() {
            return Err(DatasetError::EmptyField { line: self.line, field: field.to_string() });
        }
        Ok(s)
    }

    pub fn image(&self, field: &str) -> Result<ImageRef, DatasetError> {
        let image = match self.obj.get(field) {
            None | Some(Value::Null) => {
                return Err(DatasetError::MissingField { line: self.line, field: field.to_string() })
            }
            Some(Value::String(s)) => ImageRef::from_locator(s.clone()),
            Some(Value::Object(o)) => {
                let nested = RecordReader { line: self.line, obj: o, base: self.base };
                let locator = nested.string("locator")?;
                match o.get("media_type") {
                    Some(Value::String(mt)) => ImageRef::new(locator, mt.clone()),
                    _ => ImageRef::from_locator(locator),
                }
            }
            Some(other) => {
                return Err(DatasetError::Malformed {
                    line: self.line,
                    message: format!("field `{field}` must be a string or object, got {other}"),
                })
            }
        };
        if image.locator.is_empty() {
            return Err(DatasetError::EmptyField { line: self.line, field: field.to_string() });
        }
        Ok(image.rebased(self.base))
    }
}

pub(crate) trait ManifestRecord: Sized {
    fn parse(rec: &RecordReader<'_>) -> Result<Self, DatasetError>;
    fn id(&self) -> &str;
    fn images(&self) -> Vec<&ImageRef>;
    fn count_key(&self) -> String;
}

impl ManifestRecord for PairItem {
    fn parse(rec: &RecordReader<'_>) -> Result<Self, DatasetError> {
        let item_id = rec.non_empty("item_id")?;
        let image = rec.image("image")?;
        let caption_pos = rec.string("caption_pos")?;
        let caption_neg = rec.string("caption_neg")?;
        let bench_name = rec.string("benchmark")?;
        let subset_name = rec.string("subset")?;
        let benchmark = match bench_name.parse::<Benchmark>() {
            Ok(b @ (Benchmark::Aro | Benchmark::SugarCrepe)) => b,
            _ => return Err(DatasetError::UnknownBenchmark { line: rec.line, name: bench_name }),
        };
        let subset = Subset::parse(&subset_name)
            .filter(|s| s.benchmark() == benchmark)
            .ok_or(DatasetError::UnknownSubset { line: rec.line, name: subset_name })?;
        if caption_pos == caption_neg {
            return Err(DatasetError::IdenticalCaptions { line: rec.line, item_id });
        }
        Ok(PairItem { item_id, image, caption_pos, caption_neg, benchmark, subset })
    }

    fn id(&self) -> &str {
        &self.item_id
    }

    fn images(&self) -> Vec<&ImageRef> {
        vec![&self.image]
    }

    fn count_key(&self) -> String {
        self.subset.name().to_string()
    }
}

impl ManifestRecord for WinogroundItem {
    fn parse(rec: &RecordReader<'_>) -> Result<Self, DatasetError> {
        let item_id = rec.non_empty("item_id")?;
        let image_0 = rec.image("image_0")?;
        let image_1 = rec.image("image_1")?;
        let caption_0 = rec.string("caption_0")?;
        let caption_1 = rec.string("caption_1")?;
        if caption_0 == caption_1 {
            return Err(DatasetError::IdenticalCaptions { line: rec.line, item_id });
        }
        Ok(WinogroundItem { item_id, image_0, image_1, caption_0, caption_1 })
    }

    fn id(&self) -> &str {
        &self.item_id
    }

    fn images(&self) -> Vec<&ImageRef> {
        vec![&self.image_0, &self.image_1]
    }

    fn count_key(&self) -> String {
        Benchmark::Winoground.name().to_string()
    }
}

pub(crate) fn read_manifest_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::FileNotFound { path: path.to_path_buf() },
        _ => DatasetError::Io { path: path.to_path_buf(), message: e.to_string() },
    })
}

/// Non-blank lines of `text` parsed as JSON objects, with 1-based line numbers.
pub(crate) fn json_lines(text: &str) -> impl Iterator<Item = (usize, Result<Map<String, Value>, DatasetError>)> + '_ {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| {
        let line = i + 1;
        let parsed = match serde_json::from_str::<Value>(l) {
            Ok(Value::Object(obj)) => Ok(obj),
            Ok(_) => Err(DatasetError::Malformed { line, message: "record is not a JSON object".into() }),
            Err(e) => Err(DatasetError::Malformed { line, message: e.to_string() }),
        };
        (line, parsed)
    })
}

struct Scan<T> {
    items: Vec<T>,
    issues: Vec<DatasetError>,
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses and validates every row, collecting row-level problems instead of
/// stopping at the first one. Only file-level failures are returned as `Err`.
fn scan<T: ManifestRecord>(path: &Path) -> Result<Scan<T>, DatasetError> {
    let text = read_manifest_text(path)?;
    let base = manifest_dir(path);
    let mut seen = HashSet::new();
    let mut scan = Scan { items: Vec::new(), issues: Vec::new() };
    for (line, obj) in json_lines(&text) {
        let item = obj.and_then(|obj| T::parse(&RecordReader { line, obj: &obj, base: &base }));
        let item = match item {
            Ok(item) => item,
            Err(e) => {
                scan.issues.push(e);
                continue;
            }
        };
        if !seen.insert(item.id().to_string()) {
            scan.issues.push(DatasetError::DuplicateId { line, item_id: item.id().to_string() });
            continue;
        }
        if let Some(bad) = item.images().into_iter().find(|img| !img.resolves()) {
            scan.issues.push(DatasetError::ImageUnresolvable {
                item_id: item.id().to_string(),
                locator: bad.locator.clone(),
            });
            continue;
        }
        scan.items.push(item);
    }
    Ok(scan)
}

fn load<T: ManifestRecord>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let scan = scan::<T>(path)?;
    match scan.issues.into_iter().next() {
        Some(err) => Err(err),
        None => Ok(scan.items),
    }
}

/// Loads an ARO or SugarCrepe manifest in file order.
pub fn load_pairwise_benchmark(path: impl AsRef<Path>) -> Result<Vec<PairItem>, DatasetError> {
    load(path.as_ref())
}

pub fn load_winoground(path: impl AsRef<Path>) -> Result<Vec<WinogroundItem>, DatasetError> {
    load(path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: String,
    pub line: Option<usize>,
    pub message: String,
}

impl From<&DatasetError> for ValidationIssue {
    fn from(e: &DatasetError) -> Self {
        ValidationIssue { code: e.code().to_string(), line: e.line(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub path: PathBuf,
    pub kind: Option<ManifestKind>,
    /// Valid items per subset (`Winoground` for two-image manifests).
    pub counts: BTreeMap<String, usize>,
    pub errors: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Guesses the manifest kind from its first parseable record: records with an
/// `image_0` field are Winoground rows.
pub fn detect_kind(path: impl AsRef<Path>) -> Result<ManifestKind, DatasetError> {
    let text = read_manifest_text(path.as_ref())?;
    let first = json_lines(&text).find_map(|(_, obj)| obj.ok());
    Ok(match first {
        Some(obj) if obj.contains_key("image_0") => ManifestKind::Winoground,
        _ => ManifestKind::Pairwise,
    })
}

/// Validates a manifest of either kind, reporting every problem. Never fails.
pub fn validate_manifest(path: impl AsRef<Path>) -> ValidationReport {
    let path = path.as_ref();
    match detect_kind(path) {
        Ok(kind) => validate_manifest_as(path, kind),
        Err(e) => ValidationReport {
            path: path.to_path_buf(),
            kind: None,
            counts: BTreeMap::new(),
            errors: vec![ValidationIssue::from(&e)],
        },
    }
}

pub fn validate_manifest_as(path: impl AsRef<Path>, kind: ManifestKind) -> ValidationReport {
    fn build<T: ManifestRecord>(path: &Path, kind: ManifestKind) -> ValidationReport {
        let mut report =
            ValidationReport { path: path.to_path_buf(), kind: Some(kind), counts: BTreeMap::new(), errors: vec![] };
        match scan::<T>(path) {
            Ok(scan) => {
                for item in &scan.items {
                    *report.counts.entry(item.count_key()).or_default() += 1;
                }
                report.errors = scan.issues.iter().map(ValidationIssue::from).collect();
            }
            Err(e) => report.errors.push(ValidationIssue::from(&e)),
        }
        report
    }
    match kind {
        ManifestKind::Pairwise => build::<PairItem>(path.as_ref(), kind),
        ManifestKind::Winoground => build::<WinogroundItem>(path.as_ref(), kind),
    }
}

pub fn write_pairwise_manifest<W: Write>(mut out: W, items: &[PairItem]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_winoground_manifest<W: Write>(mut out: W, items: &[WinogroundItem]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
