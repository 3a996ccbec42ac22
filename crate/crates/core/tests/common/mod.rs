#![allow(dead_code)]

pub mod server;

use std::fs::File;
use std::path::{Path, PathBuf};

use compbench::dataset::{write_pairwise_manifest, write_winoground_manifest};
use compbench::fixtures::{pairwise_fixture, png_bytes, winoground_fixture};
use compbench::forge::{save_bank, BankStore, DemoBank, DemoSource, Demonstration, Provenance};
use compbench::gateway::{ModelKind, ModelSpec};
use compbench::runner::{BenchmarkSpec, Mode, RunConfig};
use compbench::{ImageRef, PairItem, Subset, WinogroundItem};
use tempfile::TempDir;

pub struct Workspace {
    pub dir: TempDir,
    pub pairs: Vec<PairItem>,
    pub winos: Vec<WinogroundItem>,
    pub pair_manifest: PathBuf,
    pub wino_manifest: PathBuf,
}

impl Workspace {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn benchmarks(&self) -> Vec<BenchmarkSpec> {
        let mut out = vec![];
        if !self.pairs.is_empty() {
            out.push(BenchmarkSpec { manifest: self.pair_manifest.clone(), kind: None });
        }
        if !self.winos.is_empty() {
            out.push(BenchmarkSpec { manifest: self.wino_manifest.clone(), kind: None });
        }
        out
    }

    pub fn config(&self, mode: Mode, models: Vec<ModelSpec>) -> RunConfig {
        let mut c = RunConfig::new(mode, models, self.benchmarks(), self.path().join("out"));
        c.concurrency = 4;
        c
    }
}

/// `per_subset` items in every pairwise subset plus `winos` Winoground items.
pub fn workspace(per_subset: usize, winos: usize) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    let pairs = if per_subset > 0 { pairwise_fixture(&images, &Subset::ALL, per_subset).unwrap() } else { vec![] };
    let winos = winoground_fixture(&images, winos).unwrap();
    let pair_manifest = dir.path().join("pairs.jsonl");
    let wino_manifest = dir.path().join("winoground.jsonl");
    write_pairwise_manifest(File::create(&pair_manifest).unwrap(), &pairs).unwrap();
    write_winoground_manifest(File::create(&wino_manifest).unwrap(), &winos).unwrap();
    Workspace { dir, pairs, winos, pair_manifest, wino_manifest }
}

pub fn mock(name: &str, kind: ModelKind, backend: &str) -> ModelSpec {
    ModelSpec::mock(name, kind, backend)
}

/// Writes a five-demo bank under `parent/name`.
pub fn write_bank(parent: &Path, name: &str, source: DemoSource) -> PathBuf {
    let dir = parent.join(name);
    let store = BankStore::new(&dir).unwrap();
    store.ensure_dir().unwrap();
    let demos = (0..5)
        .map(|k| {
            let path = dir.join(format!("{name}_{k}.png"));
            std::fs::write(&path, png_bytes(2, 2)).unwrap();
            Demonstration {
                image: ImageRef::from_locator(path.to_string_lossy()),
                caption_correct: format!("{name} correct caption {k}"),
                caption_wrong: format!("{name} wrong caption {k}"),
                source,
                objects: match source {
                    DemoSource::Synthetic => vec!["cup".into(), "plate".into()],
                    DemoSource::Real => vec![],
                },
                provenance: Provenance::default(),
            }
        })
        .collect();
    save_bank(&DemoBank { bank_id: name.into(), demos, seed: 0 }, &store).unwrap();
    dir
}

/// Chat-completion endpoint that answers yes/no probes with per-token
/// log-probabilities. It says yes when the caption's final `(k)` tag is even,
/// and answers choice prompts with "B".
pub fn fake_vlm() -> server::FakeServer {
    server::FakeServer::start(|req| {
        if req.path != "/v1/chat/completions" {
            return (404, "{}".into());
        }
        let body = req.json();
        let text: String = body["messages"][0]["content"]
            .as_array()
            .unwrap()
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect();
        let Some(caption) = text.split("\nCaption: ").nth(1).and_then(|r| r.split('\n').next()) else {
            let reply = serde_json::json!({"choices": [{"message": {"content": "The answer is B"}, "finish_reason": "stop"}]});
            return (200, reply.to_string());
        };
        let tag: usize = caption.rsplit('(').next().unwrap().trim_end_matches(')').parse().unwrap_or(1);
        let (word, yes, no): (&str, f64, f64) = if tag.is_multiple_of(2) { ("Yes", -0.2, -1.8) } else { ("No", -2.5, -0.1) };
        let reply = serde_json::json!({
            "model": body["model"],
            "choices": [{
                "message": {"content": format!("The picture is gray. <{word}>")},
                "finish_reason": "stop",
                "logprobs": {"content": [
                    {"token": word, "logprob": yes.max(no), "top_logprobs": [
                        {"token": "Yes", "logprob": yes}, {"token": " yes", "logprob": yes - 0.3}, {"token": "No", "logprob": no}
                    ]},
                    {"token": ".", "logprob": -0.01, "top_logprobs": [{"token": ".", "logprob": -0.01}, {"token": "yes", "logprob": -6.0}]}
                ]}
            }]
        });
        (200, reply.to_string())
    })
}
