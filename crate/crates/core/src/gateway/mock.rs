//! In-process models for offline evaluation.
//!
//! Every mock is a pure function of its input and the tables it was built
//! from. The embedding mocks "see" an image through a scene table mapping
//! image locators to a description.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Backend, Decoding, EmbeddingBackend, GatewayError, GenerationResult, GenerativeBackend, ModelKind, ScoreKind};
use crate::dataset::{PairItem, WinogroundItem};
use crate::image_ref::ImageRef;
use crate::prompt::{PromptBundle, PromptSegment};
use crate::scoring::{EmbeddingVector, LogitRow};
use crate::{Embedding, ScoreRow};

/// Fixed lookup tables from text and image locator to vector.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    texts: HashMap<String, Embedding>,
    images: HashMap<String, Embedding>,
}

impl TableEmbedder {
    fn insert(map: &mut HashMap<String, Embedding>, key: &str, v: Embedding) -> Result<(), GatewayError> {
        match map.get(key) {
            Some(existing) if *existing != v => Err(GatewayError::MockMiss(format!("conflicting vectors for `{key}`"))),
            _ => {
                map.insert(key.to_string(), v);
                Ok(())
            }
        }
    }

    pub fn insert_text(&mut self, text: &str, v: Embedding) -> Result<(), GatewayError> {
        Self::insert(&mut self.texts, text, v)
    }

    pub fn insert_image(&mut self, image: &ImageRef, v: Embedding) -> Result<(), GatewayError> {
        Self::insert(&mut self.images, &image.locator, v)
    }

    /// Perfect encoder: each image shares a basis vector with its matching
    /// caption only. Captions must be unique across the fixture.
    pub fn oracle(pairs: &[PairItem], winoground: &[WinogroundItem]) -> Result<Self, GatewayError> {
        Self::build(pairs, winoground, false)
    }

    /// Like [`TableEmbedder::oracle`] but every image aligns with the wrong
    /// caption.
    pub fn anti_oracle(pairs: &[PairItem], winoground: &[WinogroundItem]) -> Result<Self, GatewayError> {
        Self::build(pairs, winoground, true)
    }

    fn build(pairs: &[PairItem], winoground: &[WinogroundItem], invert: bool) -> Result<Self, GatewayError> {
        let n = pairs.len();
        let dim = (2 * n + 2 * winoground.len()).max(1);
        let e = |i: usize| EmbeddingVector::basis(dim, i);
        let mut t = TableEmbedder::default();
        for (k, item) in pairs.iter().enumerate() {
            let (pos, neg) = if invert { (n + k, k) } else { (k, n + k) };
            t.insert_image(&item.image, e(k))?;
            t.insert_text(&item.caption_pos, e(pos))?;
            t.insert_text(&item.caption_neg, e(neg))?;
        }
        for (k, item) in winoground.iter().enumerate() {
            let base = 2 * n + 2 * k;
            t.insert_image(&item.image_0, e(base))?;
            t.insert_image(&item.image_1, e(base + 1))?;
            let (c0, c1) = if invert { (base + 1, base) } else { (base, base + 1) };
            t.insert_text(&item.caption_0, e(c0))?;
            t.insert_text(&item.caption_1, e(c1))?;
        }
        Ok(t)
    }
}

impl EmbeddingBackend for TableEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        self.texts.get(text).cloned().ok_or_else(|| GatewayError::MockMiss(format!("text `{text}`")))
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, GatewayError> {
        self.images.get(&image.locator).cloned().ok_or_else(|| GatewayError::MockMiss(format!("image `{image}`")))
    }
}

/// Image locator to scene description. Pairwise images are described by
/// their positive caption, Winoground image `j` by caption `j`.
pub fn scene_table(pairs: &[PairItem], winoground: &[WinogroundItem]) -> HashMap<String, String> {
    let mut scenes = HashMap::new();
    for p in pairs {
        scenes.insert(p.image.locator.clone(), p.caption_pos.clone());
    }
    for w in winoground {
        scenes.insert(w.image_0.locator.clone(), w.caption_0.clone());
        scenes.insert(w.image_1.locator.clone(), w.caption_1.clone());
    }
    scenes
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn scene_for<'a>(scenes: &'a HashMap<String, String>, image: &ImageRef) -> Result<&'a str, GatewayError> {
    scenes.get(&image.locator).map(String::as_str).ok_or_else(|| GatewayError::MockMiss(format!("scene for `{image}`")))
}

/// Order-agnostic text encoder: hashed word counts.
///
/// With `tie_noise > 0` each text vector also gets a small perturbation
/// seeded by the exact string, standing in for the residual order
/// sensitivity of real encoders. Image vectors are never perturbed.
#[derive(Debug, Clone)]
pub struct BagOfWordsEmbedder {
    pub dim: usize,
    pub tie_noise: f64,
    scenes: HashMap<String, String>,
}

impl BagOfWordsEmbedder {
    pub fn new(scenes: HashMap<String, String>) -> Self {
        Self { dim: 512, tie_noise: 0.0, scenes }
    }

    pub fn with_tie_noise(mut self, tie_noise: f64) -> Self {
        self.tie_noise = tie_noise;
        self
    }

    fn bag(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for w in words(text) {
            v[(fnv1a(w.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

impl EmbeddingBackend for BagOfWordsEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        let mut v = self.bag(text);
        if self.tie_noise > 0.0 {
            let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
            let mut rng = ChaCha8Rng::from_seed(seed);
            for x in &mut v {
                *x += self.tie_noise * rng.random_range(-1.0..1.0);
            }
        }
        Ok(EmbeddingVector::new(v)?)
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, GatewayError> {
        Ok(EmbeddingVector::new(self.bag(scene_for(&self.scenes, image)?))?)
    }
}

/// Word-order-sensitive encoder: hashed `(position, word)` features plus
/// bigrams, so any reordering changes the vector.
#[derive(Debug, Clone)]
pub struct OrderedEmbedder {
    pub dim: usize,
    scenes: HashMap<String, String>,
}

impl OrderedEmbedder {
    pub fn new(scenes: HashMap<String, String>) -> Self {
        Self { dim: 4096, scenes }
    }

    fn features(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let ws = words(text);
        let mut bump = |key: String| v[(fnv1a(key.as_bytes()) % self.dim as u64) as usize] += 1.0;
        for (i, w) in ws.iter().enumerate() {
            bump(format!("{i}:{w}"));
        }
        for pair in ws.windows(2) {
            bump(format!("{} {}", pair[0], pair[1]));
        }
        v
    }
}

impl EmbeddingBackend for OrderedEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        Ok(EmbeddingVector::new(self.features(text))?)
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, GatewayError> {
        Ok(EmbeddingVector::new(self.features(scene_for(&self.scenes, image)?))?)
    }
}

/// Canonical hash of a bundle, used to key scripted replies.
pub fn bundle_key(bundle: &PromptBundle) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(bundle).expect("bundle serializes")))
}

/// Replies looked up by bundle hash, with an optional fallback.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    table: HashMap<String, GenerationResult>,
    fallback: Option<GenerationResult>,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(mut self, bundle: &PromptBundle, result: GenerationResult) -> Self {
        self.table.insert(bundle_key(bundle), result);
        self
    }

    pub fn otherwise(mut self, result: GenerationResult) -> Self {
        self.fallback = Some(result);
        self
    }
}

impl GenerativeBackend for ScriptedGenerator {
    fn generate(&self, bundle: &PromptBundle, _: &Decoding) -> Result<GenerationResult, GatewayError> {
        self.table
            .get(&bundle_key(bundle))
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| GatewayError::MockMiss(format!("bundle {}", bundle_key(bundle))))
    }
}

/// Always the same text, without scores.
#[derive(Debug, Clone)]
pub struct ConstantGenerator {
    text: String,
}

impl ConstantGenerator {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl GenerativeBackend for ConstantGenerator {
    fn generate(&self, _: &PromptBundle, _: &Decoding) -> Result<GenerationResult, GatewayError> {
        Ok(GenerationResult::text_only(self.text.clone()))
    }
}

/// Arbitrary reply function.
pub struct FnGenerator<F>(pub F);

impl<F> GenerativeBackend for FnGenerator<F>
where
    F: Fn(&PromptBundle) -> GenerationResult + Send + Sync,
{
    fn generate(&self, bundle: &PromptBundle, _: &Decoding) -> Result<GenerationResult, GatewayError> {
        Ok((self.0)(bundle))
    }
}

/// The two query captions of a choice prompt, read back from its final
/// `A. ...` / `B. ...` lines.
pub fn query_choices(bundle: &PromptBundle) -> Option<(String, String)> {
    let text = bundle.render_text();
    let a_at = text.rfind("\nA. ")?;
    let rest = &text[a_at + 4..];
    let b_at = rest.find("\nB. ")?;
    let a = &rest[..b_at];
    let b = rest[b_at + 4..].split('\n').next()?;
    Some((a.to_string(), b.to_string()))
}

/// The caption and image of a yes/no probe.
pub fn probe_parts(bundle: &PromptBundle) -> Option<(String, ImageRef)> {
    let text = bundle.render_text();
    let at = text.rfind("\nCaption: ")?;
    let caption = text[at + 10..].split('\n').next()?.to_string();
    let image = bundle.segments.iter().rev().find_map(|s| match s {
        PromptSegment::ImageSlot { image } => Some(image.clone()),
        PromptSegment::Text { .. } => None,
    })?;
    Some((caption, image))
}

/// Generative model that knows the ground truth of a fixture.
///
/// It answers choice prompts with the label of the positive caption and
/// yes/no probes according to whether caption and image belong together,
/// emitting per-position scores where "yes" dominates exactly on matches.
/// The inverted variant always answers wrongly.
#[derive(Debug, Clone)]
pub struct OracleGenerator {
    positives: HashSet<String>,
    matches: HashSet<(String, String)>,
    invert: bool,
}

impl OracleGenerator {
    pub fn new(pairs: &[PairItem], winoground: &[WinogroundItem], invert: bool) -> Self {
        let positives = pairs.iter().map(|p| p.caption_pos.clone()).collect();
        let mut matches = HashSet::new();
        for w in winoground {
            matches.insert((w.caption_0.clone(), w.image_0.locator.clone()));
            matches.insert((w.caption_1.clone(), w.image_1.locator.clone()));
        }
        Self { positives, matches, invert }
    }

    fn rows(lead: &str, lead_score: f64, other: &str, other_score: f64) -> Vec<ScoreRow> {
        let row = |i: usize, entries: &[(&str, f64)]| {
            LogitRow::new(i, entries.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>())
        };
        vec![
            row(0, &[(lead, lead_score), (other, other_score)]),
            row(1, &[(",", -0.05), (lead, -4.0)]),
            row(2, &[("the", -0.3)]),
        ]
    }
}

impl GenerativeBackend for OracleGenerator {
    fn generate(&self, bundle: &PromptBundle, _: &Decoding) -> Result<GenerationResult, GatewayError> {
        if let Some((caption, image)) = probe_parts(bundle) {
            let matched = self.matches.contains(&(caption, image.locator)) != self.invert;
            let (text, rows) = if matched {
                ("Yes, the image matches the caption.", Self::rows("yes", -0.05, "no", -3.2))
            } else {
                ("No, the caption does not match.", Self::rows("no", -0.05, "yes", -3.2))
            };
            return Ok(GenerationResult {
                text: text.into(),
                rows,
                finish_reason: "stop".into(),
                score_kind: ScoreKind::LogProb,
            });
        }
        let (a, b) = query_choices(bundle).ok_or_else(|| GatewayError::MockMiss("unrecognized prompt".into()))?;
        let a_is_pos = self.positives.contains(&a) && !self.positives.contains(&b);
        let label = if a_is_pos != self.invert { "A" } else { "B" };
        Ok(GenerationResult::text_only(format!("The correct caption is: {label}")))
    }
}

/// Resolves the built-in mock names against the loaded benchmark items.
///
/// Embedding: `oracle`, `anti-oracle`, `bag-of-words`, `bag-of-words-noisy`,
/// `ordered`. Generative: `oracle`, `anti-oracle`, and `const:<text>`.
pub fn builtin(name: &str, kind: ModelKind, pairs: &[PairItem], winoground: &[WinogroundItem]) -> Option<Backend> {
    match kind {
        ModelKind::Embedding => {
            let backend: Arc<dyn EmbeddingBackend> = match name {
                "oracle" => Arc::new(TableEmbedder::oracle(pairs, winoground).ok()?),
                "anti-oracle" => Arc::new(TableEmbedder::anti_oracle(pairs, winoground).ok()?),
                "bag-of-words" => Arc::new(BagOfWordsEmbedder::new(scene_table(pairs, winoground))),
                "bag-of-words-noisy" => {
                    Arc::new(BagOfWordsEmbedder::new(scene_table(pairs, winoground)).with_tie_noise(1e-6))
                }
                "ordered" => Arc::new(OrderedEmbedder::new(scene_table(pairs, winoground))),
                _ => return None,
            };
            Some(Backend::Embedding(backend))
        }
        ModelKind::Generative => {
            let backend: Arc<dyn GenerativeBackend> = match name {
                "oracle" => Arc::new(OracleGenerator::new(pairs, winoground, false)),
                "anti-oracle" => Arc::new(OracleGenerator::new(pairs, winoground, true)),
                other => Arc::new(ConstantGenerator::new(other.strip_prefix("const:")?)),
            };
            Some(Backend::Generative(backend))
        }
    }
}
