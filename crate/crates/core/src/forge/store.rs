//! On-disk layout of a demonstration bank: one directory per bank holding
//! `<bank_id>_<index>.<ext>` assets and a `bank.jsonl` manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DemoBank, DemoSource, Demonstration, ForgeError, Provenance};
use crate::dataset::{json_lines, read_manifest_text, DatasetError, RecordReader};
use crate::image_ref::ImageRef;

pub const BANK_MANIFEST: &str = "bank.jsonl";
const CHECKPOINT: &str = "progress.jsonl";

fn io_err(path: &Path, e: impl std::fmt::Display) -> ForgeError {
    ForgeError::Io(format!("{}: {e}", path.display()))
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ForgeError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone)]
pub struct BankStore {
    dir: PathBuf,
    bank_id: String,
}

impl BankStore {
    /// The directory name is the bank id.
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, ForgeError> {
        let dir = dir.into();
        let bank_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .filter(|n| !n.is_empty())
            .ok_or_else(|| ForgeError::InvalidInput(format!("{} has no directory name", dir.display())))?;
        Ok(Self { dir, bank_id })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn bank_id(&self) -> &str {
        &self.bank_id
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(BANK_MANIFEST)
    }

    pub fn ensure_dir(&self) -> Result<(), ForgeError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))
    }

    /// Validates that `bytes` decode as an image and stores them as asset
    /// `index`, with the extension taken from the detected format.
    pub fn write_asset(&self, index: usize, bytes: &[u8]) -> Result<ImageRef, ForgeError> {
        let format = image::guess_format(bytes).map_err(|e| ForgeError::ImageDecode(e.to_string()))?;
        image::load_from_memory_with_format(bytes, format).map_err(|e| ForgeError::ImageDecode(e.to_string()))?;
        let ext = format.extensions_str().first().copied().unwrap_or("img");
        let path = self.dir.join(format!("{}_{index}.{ext}", self.bank_id));
        write_atomic(&path, bytes)?;
        Ok(ImageRef::new(path.to_string_lossy(), format.to_mime_type()))
    }

    pub(super) fn checkpoint(&self, index: usize, demo: &Demonstration) -> Result<(), ForgeError> {
        let path = self.dir.join(CHECKPOINT);
        let line = serde_json::to_string(&CheckpointRow { index, demo: BankRow::from_demo(demo, self, 0) })
            .map_err(|e| ForgeError::Bank(e.to_string()))?;
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))
    }

    pub(super) fn load_checkpoint(&self) -> Result<Vec<(usize, Demonstration)>, ForgeError> {
        let path = self.dir.join(CHECKPOINT);
        if !path.exists() {
            return Ok(vec![]);
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        // A torn last line from an interrupted run is ignored.
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str::<CheckpointRow>(l).ok())
            .map(|row| (row.index, row.demo.into_demo(&self.dir)))
            .collect())
    }

    pub(super) fn clear_checkpoint(&self) -> Result<(), ForgeError> {
        let path = self.dir.join(CHECKPOINT);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_err(&path, e)),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointRow {
    index: usize,
    demo: BankRow,
}

/// Manifest line. Images inside the bank directory are stored by file name.
#[derive(Debug, Serialize, Deserialize)]
struct BankRow {
    bank_id: String,
    seed: u64,
    image: ImageRef,
    caption_correct: String,
    caption_wrong: String,
    source: DemoSource,
    #[serde(default)]
    objects: Vec<String>,
    #[serde(default)]
    provenance: Provenance,
}

impl BankRow {
    fn from_demo(d: &Demonstration, store: &BankStore, seed: u64) -> Self {
        let mut image = d.image.clone();
        if let Ok(rel) = Path::new(&image.locator).strip_prefix(&store.dir) {
            image.locator = rel.to_string_lossy().into_owned();
        }
        BankRow {
            bank_id: store.bank_id.clone(),
            seed,
            image,
            caption_correct: d.caption_correct.clone(),
            caption_wrong: d.caption_wrong.clone(),
            source: d.source,
            objects: d.objects.clone(),
            provenance: d.provenance.clone(),
        }
    }

    fn into_demo(self, dir: &Path) -> Demonstration {
        Demonstration {
            image: self.image.rebased(dir),
            caption_correct: self.caption_correct,
            caption_wrong: self.caption_wrong,
            source: self.source,
            objects: self.objects,
            provenance: self.provenance,
        }
    }
}

/// Writes the bank manifest into the store's directory.
pub fn save_bank(bank: &DemoBank, store: &BankStore) -> Result<(), ForgeError> {
    bank.check()?;
    store.ensure_dir()?;
    let mut buf = String::new();
    for d in &bank.demos {
        let row = BankRow::from_demo(d, store, bank.seed);
        buf.push_str(&serde_json::to_string(&row).map_err(|e| ForgeError::Bank(e.to_string()))?);
        buf.push('\n');
    }
    write_atomic(&store.manifest_path(), buf.as_bytes())
}

/// Loads a bank directory written by [`save_bank`]; every image must resolve.
pub fn load_bank(dir: impl AsRef<Path>) -> Result<DemoBank, ForgeError> {
    let store = BankStore::new(dir.as_ref())?;
    let path = store.manifest_path();
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut demos = Vec::new();
    let mut seed = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: BankRow =
            serde_json::from_str(line).map_err(|e| ForgeError::Bank(format!("line {}: {e}", i + 1)))?;
        if row.bank_id != store.bank_id {
            return Err(ForgeError::Bank(format!(
                "line {}: bank id `{}` does not match directory `{}`",
                i + 1,
                row.bank_id,
                store.bank_id
            )));
        }
        seed = row.seed;
        let demo = row.into_demo(store.dir());
        if !demo.image.resolves() {
            return Err(ForgeError::Dataset(DatasetError::ImageUnresolvable {
                item_id: format!("{}#{}", store.bank_id, demos.len()),
                locator: demo.image.locator,
            }));
        }
        demos.push(demo);
    }
    let bank = DemoBank { bank_id: store.bank_id.clone(), demos, seed };
    bank.check()?;
    Ok(bank)
}

/// Builds a bank of real demonstrations from a hand-written JSONL manifest
/// with `image`, `caption_correct` and `caption_wrong` fields. The bank id is
/// the manifest's file stem.
pub fn ingest_real_bank(manifest_path: impl AsRef<Path>) -> Result<DemoBank, ForgeError> {
    let path = manifest_path.as_ref();
    let text = read_manifest_text(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut demos = Vec::new();
    for (line, obj) in json_lines(&text) {
        let obj = obj?;
        let rec = RecordReader { line, obj: &obj, base: &base };
        let image = rec.image("image")?;
        let caption_correct = rec.non_empty("caption_correct")?;
        let caption_wrong = rec.non_empty("caption_wrong")?;
        if caption_correct == caption_wrong {
            return Err(DatasetError::IdenticalCaptions { line, item_id: format!("row {line}") }.into());
        }
        if !image.resolves() {
            return Err(DatasetError::ImageUnresolvable { item_id: format!("row {line}"), locator: image.locator }.into());
        }
        demos.push(Demonstration {
            image,
            caption_correct,
            caption_wrong,
            source: DemoSource::Real,
            objects: vec![],
            provenance: Provenance::default(),
        });
    }
    if demos.is_empty() {
        return Err(ForgeError::EmptyDemos);
    }
    let bank_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "real".into());
    Ok(DemoBank { bank_id, demos, seed: 0 })
}
