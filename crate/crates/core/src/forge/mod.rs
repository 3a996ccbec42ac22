//! Demonstration banks for few-shot prompting.
//!
//! Synthetic banks come from a three-step service pipeline per object list:
//! a caption naming the objects, an image drawn from that caption, and a
//! counter caption that keeps the objects but changes their arrangement.
//! Real banks are hand-annotated manifests.

mod clients;
mod store;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::http::ServiceError;
use crate::image_ref::ImageRef;

pub use clients::{
    ChatTextGen, HttpImageGen, ImageGenClient, ImageReply, ScriptedImageGen, ScriptedTextGen, TextGenClient,
    TextReply,
};
pub use store::{ingest_real_bank, load_bank, save_bank, BankStore, BANK_MANIFEST};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("caption names {mentioned} of the required {required} objects after {attempts} attempts: {caption:?}")]
    RetryableQuality { caption: String, mentioned: usize, required: usize, attempts: usize },
    #[error("counter caption equals the original after {attempts} attempts: {caption:?}")]
    DegenerateNegative { caption: String, attempts: usize },
    #[error("generated image does not decode: {0}")]
    ImageDecode(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("demonstration bank is empty")]
    EmptyDemos,
    #[error("malformed bank: {0}")]
    Bank(String),
    #[error("object list {position}: {source}")]
    AtList {
        /// 1-based position in the input.
        position: usize,
        #[source]
        source: Box<ForgeError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    Synthetic,
    Real,
}

/// One request made to a generation service while building a demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceCall {
    pub step: String,
    pub model: String,
    pub prompt: String,
    /// Text reply, or the asset file name for image calls.
    pub response: String,
    pub attempt: usize,
    pub timestamp: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub calls: Vec<ServiceCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub image: ImageRef,
    pub caption_correct: String,
    pub caption_wrong: String,
    pub source: DemoSource,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoBank {
    pub bank_id: String,
    pub demos: Vec<Demonstration>,
    pub seed: u64,
}

impl DemoBank {
    pub fn source(&self) -> Option<DemoSource> {
        self.demos.first().map(|d| d.source)
    }

    pub fn check(&self) -> Result<(), ForgeError> {
        let first = self.source().ok_or(ForgeError::EmptyDemos)?;
        for (i, d) in self.demos.iter().enumerate() {
            if d.source != first {
                return Err(ForgeError::Bank(format!("demo {i} mixes sources within one bank")));
            }
            if d.caption_correct == d.caption_wrong {
                return Err(ForgeError::Bank(format!("demo {i} has identical captions")));
            }
            if d.source == DemoSource::Synthetic && d.objects.is_empty() {
                return Err(ForgeError::Bank(format!("synthetic demo {i} lists no objects")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(String),
}

impl Clock {
    fn now(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339(),
            Clock::Fixed(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForgeOptions {
    /// Objects per caption.
    pub object_count: usize,
    /// Objects a caption must name; defaults to all but one.
    pub min_mentions: Option<usize>,
    /// Attempts per caption before giving up.
    pub max_attempts: usize,
    /// Object lists processed in parallel.
    pub concurrency: usize,
    pub clock: Clock,
}

impl Default for ForgeOptions {
    fn default() -> Self {
        Self { object_count: 4, min_mentions: None, max_attempts: 3, concurrency: 1, clock: Clock::System }
    }
}

impl ForgeOptions {
    fn required_mentions(&self, n: usize) -> usize {
        self.min_mentions.unwrap_or(n.saturating_sub(1).max(1)).min(n)
    }
}

pub fn positive_caption_prompt(objects: &[String]) -> String {
    format!(
        "Generate a caption for an image which is made of {} objects: {}. \
         Can you combine them into a compositionally aware caption?",
        objects.len(),
        objects.join(", ")
    )
}

pub fn negative_caption_prompt(caption_correct: &str) -> String {
    format!(
        "Generate counter caption to this one, with the same objects in a different position/attribute: '{caption_correct}'."
    )
}

/// Trims whitespace and one pair of wrapping quotes.
fn clean_caption(raw: &str) -> String {
    let t = raw.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”')] {
        if t.len() >= 2 && t.starts_with(open) && t.ends_with(close) {
            return t[open.len_utf8()..t.len() - close.len_utf8()].trim().to_string();
        }
    }
    t.to_string()
}

fn normalized(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn count_mentions(caption: &str, objects: &[String]) -> usize {
    let lower = caption.to_lowercase();
    objects.iter().filter(|o| lower.contains(&o.to_lowercase())).count()
}

fn call(step: &str, model: &str, prompt: &str, response: &str, attempt: usize, clock: &Clock) -> ServiceCall {
    ServiceCall {
        step: step.into(),
        model: model.into(),
        prompt: prompt.into(),
        response: response.into(),
        attempt,
        timestamp: clock.now(),
    }
}

/// Asks for a caption combining `objects`, retrying until it names enough of
/// them.
pub fn gen_positive_caption(
    objects: &[String],
    textgen: &dyn TextGenClient,
    opts: &ForgeOptions,
    log: &mut Provenance,
) -> Result<String, ForgeError> {
    if objects.len() != opts.object_count || objects.iter().any(|o| o.trim().is_empty()) {
        return Err(ForgeError::InvalidInput(format!(
            "expected {} non-empty object names, got {:?}",
            opts.object_count, objects
        )));
    }
    let prompt = positive_caption_prompt(objects);
    let required = opts.required_mentions(objects.len());
    let mut last = (String::new(), 0);
    for attempt in 1..=opts.max_attempts.max(1) {
        let reply = textgen.complete(&prompt)?;
        log.calls.push(call("positive_caption", &reply.model, &prompt, &reply.text, attempt, &opts.clock));
        let caption = clean_caption(&reply.text);
        let mentioned = count_mentions(&caption, objects);
        if mentioned >= required && !caption.is_empty() {
            return Ok(caption);
        }
        last = (caption, mentioned);
    }
    Err(ForgeError::RetryableQuality {
        caption: last.0,
        mentioned: last.1,
        required,
        attempts: opts.max_attempts.max(1),
    })
}

/// Asks for a counter caption, rejecting echoes of the original.
pub fn gen_negative_caption(
    caption_correct: &str,
    textgen: &dyn TextGenClient,
    opts: &ForgeOptions,
    log: &mut Provenance,
) -> Result<String, ForgeError> {
    if caption_correct.trim().is_empty() {
        return Err(ForgeError::InvalidInput("empty caption".into()));
    }
    let prompt = negative_caption_prompt(caption_correct);
    let mut last = String::new();
    for attempt in 1..=opts.max_attempts.max(1) {
        let reply = textgen.complete(&prompt)?;
        log.calls.push(call("negative_caption", &reply.model, &prompt, &reply.text, attempt, &opts.clock));
        let caption = clean_caption(&reply.text);
        if !caption.is_empty() && normalized(&caption) != normalized(caption_correct) {
            return Ok(caption);
        }
        last = caption;
    }
    Err(ForgeError::DegenerateNegative { caption: last, attempts: opts.max_attempts.max(1) })
}

/// Draws an image for `caption` and stores it as asset `index` of the bank.
pub fn gen_image(
    caption: &str,
    imagegen: &dyn ImageGenClient,
    store: &BankStore,
    index: usize,
    opts: &ForgeOptions,
    log: &mut Provenance,
) -> Result<ImageRef, ForgeError> {
    if caption.trim().is_empty() {
        return Err(ForgeError::InvalidInput("empty caption".into()));
    }
    let reply = imagegen.generate(caption)?;
    let image = store.write_asset(index, &reply.bytes)?;
    let name = std::path::Path::new(&image.locator)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    log.calls.push(call("image", &reply.model, caption, &name, 1, &opts.clock));
    Ok(image)
}

fn forge_one(
    index: usize,
    objects: &[String],
    textgen: &dyn TextGenClient,
    imagegen: &dyn ImageGenClient,
    store: &BankStore,
    opts: &ForgeOptions,
) -> Result<Demonstration, ForgeError> {
    let mut provenance = Provenance::default();
    let caption_correct = gen_positive_caption(objects, textgen, opts, &mut provenance)?;
    let image = gen_image(&caption_correct, imagegen, store, index, opts, &mut provenance)?;
    let caption_wrong = gen_negative_caption(&caption_correct, textgen, opts, &mut provenance)?;
    Ok(Demonstration {
        image,
        caption_correct,
        caption_wrong,
        source: DemoSource::Synthetic,
        objects: objects.to_vec(),
        provenance,
    })
}

/// Runs the caption → image → counter-caption pipeline for every object list
/// and persists the bank.
///
/// Completed demonstrations are checkpointed as they finish. If a list fails,
/// the error names its 1-based position, and a later call with the same store
/// resumes without regenerating the finished lists. The bank manifest is
/// written once, after every list succeeded.
pub fn build_synthetic_bank(
    object_lists: &[Vec<String>],
    textgen: &dyn TextGenClient,
    imagegen: &dyn ImageGenClient,
    seed: u64,
    store: &BankStore,
    opts: &ForgeOptions,
) -> Result<DemoBank, ForgeError> {
    if object_lists.is_empty() {
        return Err(ForgeError::EmptyDemos);
    }
    store.ensure_dir()?;
    let mut slots: Vec<Option<Demonstration>> = vec![None; object_lists.len()];
    for (index, demo) in store.load_checkpoint()? {
        if index < slots.len() && demo.objects == object_lists[index] && demo.image.resolves() {
            slots[index] = Some(demo);
        }
    }
    let pending: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].is_none()).collect();

    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results = Mutex::new(Vec::new());
    let workers = opts.concurrency.clamp(1, pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let Some(&index) = pending.get(next.fetch_add(1, Ordering::SeqCst)) else { break };
                let outcome = forge_one(index, &object_lists[index], textgen, imagegen, store, opts)
                    .and_then(|demo| store.checkpoint(index, &demo).map(|_| demo));
                if outcome.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                results.lock().expect("results poisoned").push((index, outcome));
            });
        }
    });

    let mut results = results.into_inner().expect("results poisoned");
    results.sort_by_key(|(i, _)| *i);
    for (index, outcome) in results {
        match outcome {
            Ok(demo) => slots[index] = Some(demo),
            Err(e) => return Err(ForgeError::AtList { position: index + 1, source: Box::new(e) }),
        }
    }
    let demos: Vec<Demonstration> = slots.into_iter().map(|d| d.expect("every list forged")).collect();
    let bank = DemoBank { bank_id: store.bank_id().to_string(), demos, seed };
    save_bank(&bank, store)?;
    store.clear_checkpoint()?;
    Ok(bank)
}

const OBJECT_WORDS: &[&str] = &[
    "apple", "backpack", "ball", "banana", "bench", "bicycle", "bird", "boat", "book", "bottle", "bowl",
    "box", "bus", "cake", "candle", "car", "cat", "chair", "clock", "cloud", "cup", "dog", "door", "duck",
    "fence", "flower", "fork", "giraffe", "guitar", "hat", "horse", "kite", "ladder", "lamp", "laptop",
    "mirror", "mug", "orange", "pillow", "plant", "plate", "rabbit", "rock", "scarf", "sheep", "shoe",
    "sofa", "spoon", "table", "teddy bear", "tree", "truck", "umbrella", "vase", "window", "zebra",
];

/// `count` lists of `per_list` distinct objects sampled from a bundled word
/// list.
pub fn sample_object_lists(count: usize, per_list: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            OBJECT_WORDS
                .choose_multiple(&mut rng, per_list.min(OBJECT_WORDS.len()))
                .map(|s| s.to_string())
                .collect()
        })
        .collect()
}

/// Parses an objects file: one list per non-blank line, names separated by
/// commas.
pub fn parse_object_lists(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| l.split(',').map(|o| o.trim().to_string()).filter(|o| !o.is_empty()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::png_bytes;

    fn objs(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn fixed() -> ForgeOptions {
        ForgeOptions { clock: Clock::Fixed("2024-01-01T00:00:00Z".into()), ..Default::default() }
    }

    #[test]
    fn positive_prompt_text() {
        assert_eq!(
            positive_caption_prompt(&objs(&["dog", "umbrella", "bench", "lamp"])),
            "Generate a caption for an image which is made of 4 objects: dog, umbrella, bench, lamp. \
             Can you combine them into a compositionally aware caption?"
        );
    }

    #[test]
    fn negative_prompt_text() {
        assert_eq!(
            negative_caption_prompt("a red cube on a blue ball"),
            "Generate counter caption to this one, with the same objects in a different position/attribute: \
             'a red cube on a blue ball'."
        );
    }

    #[test]
    fn positive_caption_accepted() {
        let caption = "A dog naps on a bench under an umbrella beside a lamp";
        let gen = ScriptedTextGen::new("gpt", move |_, _| Ok(caption.to_string()));
        let mut log = Provenance::default();
        let out = gen_positive_caption(&objs(&["dog", "umbrella", "bench", "lamp"]), &gen, &fixed(), &mut log).unwrap();
        assert_eq!(out, caption);
        assert_eq!(log.calls.len(), 1);
        assert_eq!(gen.requests()[0], positive_caption_prompt(&objs(&["dog", "umbrella", "bench", "lamp"])));
    }

    #[test]
    fn off_topic_caption_exhausts_retries() {
        let gen = ScriptedTextGen::new("gpt", |_, _| Ok("a nice day".to_string()));
        let mut log = Provenance::default();
        let err = gen_positive_caption(&objs(&["dog", "umbrella", "bench", "lamp"]), &gen, &fixed(), &mut log).unwrap_err();
        assert!(matches!(err, ForgeError::RetryableQuality { mentioned: 0, required: 3, attempts: 3, .. }));
        assert_eq!(gen.requests().len(), 3);
    }

    #[test]
    fn three_of_four_objects_is_enough_and_retry_recovers() {
        let gen = ScriptedTextGen::new("gpt", |_, n| {
            Ok(if n == 0 { "a dog".into() } else { "\"A dog on a bench near a lamp\"".into() })
        });
        let mut log = Provenance::default();
        let out = gen_positive_caption(&objs(&["dog", "umbrella", "bench", "lamp"]), &gen, &fixed(), &mut log).unwrap();
        assert_eq!(out, "A dog on a bench near a lamp");
        assert_eq!(log.calls.iter().map(|c| c.attempt).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn wrong_object_count_rejected() {
        let gen = ScriptedTextGen::new("gpt", |_, _| Ok(String::new()));
        let err = gen_positive_caption(&objs(&["dog"]), &gen, &fixed(), &mut Provenance::default()).unwrap_err();
        assert!(matches!(err, ForgeError::InvalidInput(_)));
        assert!(gen.requests().is_empty());
    }

    #[test]
    fn negative_caption_checks() {
        let swap = ScriptedTextGen::new("gpt", |_, _| Ok("a blue cube on a red ball".into()));
        let mut log = Provenance::default();
        assert_eq!(
            gen_negative_caption("a red cube on a blue ball", &swap, &fixed(), &mut log).unwrap(),
            "a blue cube on a red ball"
        );
        assert_eq!(swap.requests()[0], negative_caption_prompt("a red cube on a blue ball"));

        let echo = ScriptedTextGen::new("gpt", |p, _| {
            Ok(p.split('\'').nth(1).unwrap_or_default().to_uppercase() + "  ")
        });
        let err = gen_negative_caption("a red cube on a blue ball", &echo, &fixed(), &mut log).unwrap_err();
        assert!(matches!(err, ForgeError::DegenerateNegative { attempts: 3, .. }));
    }

    #[test]
    fn image_assets() {
        let dir = tempfile::tempdir().unwrap();
        let store = BankStore::new(dir.path().join("bank1")).unwrap();
        store.ensure_dir().unwrap();
        let gen = ScriptedImageGen::constant("dalle", png_bytes(1, 1));
        let mut log = Provenance::default();
        let a = gen_image("a cat", &gen, &store, 0, &fixed(), &mut log).unwrap();
        let b = gen_image("a cat", &gen, &store, 1, &fixed(), &mut log).unwrap();
        assert_ne!(a.locator, b.locator);
        assert!(a.locator.ends_with("bank1_0.png") && a.resolves() && b.resolves());
        assert_eq!(image::image_dimensions(&a.locator).unwrap(), (1, 1));

        let failing = ScriptedImageGen::new("dalle", |_, _| Err(ServiceError::Status { status: 500, body: "boom".into() }));
        let err = gen_image("a cat", &failing, &store, 2, &fixed(), &mut log).unwrap_err();
        assert_eq!(err, ForgeError::Service(ServiceError::Status { status: 500, body: "boom".into() }));

        let garbage = ScriptedImageGen::constant("dalle", b"not an image".to_vec());
        assert!(matches!(gen_image("a cat", &garbage, &store, 3, &fixed(), &mut log), Err(ForgeError::ImageDecode(_))));
    }

    #[test]
    fn object_list_helpers() {
        let lists = sample_object_lists(5, 4, 9);
        assert_eq!(lists.len(), 5);
        assert!(lists.iter().all(|l| l.len() == 4));
        assert_eq!(lists, sample_object_lists(5, 4, 9));
        assert_eq!(
            parse_object_lists("dog, cat ,bird,fish\n\n# note\nmug,lamp,box,tree\n"),
            vec![objs(&["dog", "cat", "bird", "fish"]), objs(&["mug", "lamp", "box", "tree"])]
        );
    }
}
