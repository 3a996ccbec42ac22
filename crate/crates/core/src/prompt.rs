//! Prompt rendering for the choice, yes/no and few-shot prompts.
//!
//! Rendering is pure. The only randomness is the A/B placement of captions,
//! which is seeded explicitly by the caller.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::PairItem;
use crate::forge::Demonstration;
use crate::image_ref::ImageRef;

/// Marker used for image slots when a bundle is flattened to text.
pub const IMAGE_MARKER: &str = "<image>";

const DEMO_QUESTION: &str = "USER: Does the image match the caption?";
const FEWSHOT_INSTRUCTION: &str = "USER: Similarly, given an image and two captions choose the correct caption. \
Think step-by-step and analyze the captions against the image. \
Begin by describing the key elements visible in the image. \
Then, compare these elements with the details mentioned in the captions. \
Clearly state your final answer only in a single character, either A or B.";
const ZEROSHOT_CHOICE: &str = "Given this image and two candidate captions (A and B), \
which caption is the better description of the given image? \
Clearly state your final answer only in a single character, either A or B.";
const YES_NO_INSTRUCTION: &str =
    "After providing a brief explanation of your reasoning, clearly state your final answer as <Yes> or <No>.";
const ASSISTANT: &str = "ASSISTANT:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no demonstrations to label")]
    EmptyDemos,
    #[error("{shots}-shot prompt needs {shots} demonstrations, got {available}")]
    NotEnoughDemos { shots: usize, available: usize },
    #[error("unsupported shot count {0}; only 1 and 5 are rendered")]
    InvalidShotCount(usize),
    #[error("demonstration index {index} out of range for a bank of {len}")]
    DemoIndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Which label carries the positive caption. The negative caption always
/// gets the other label, so the map is a bijection by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelMap {
    pub positive: Label,
}

impl LabelMap {
    pub const POSITIVE_AT_A: LabelMap = LabelMap { positive: Label::A };
    pub const POSITIVE_AT_B: LabelMap = LabelMap { positive: Label::B };

    pub fn polarity_of(self, label: Label) -> Polarity {
        if label == self.positive { Polarity::Positive } else { Polarity::Negative }
    }

    pub fn label_of(self, polarity: Polarity) -> Label {
        match polarity {
            Polarity::Positive => self.positive,
            Polarity::Negative => self.positive.other(),
        }
    }

    /// Places `(positive, negative)` into `(A, B)` order.
    pub fn arrange<'a>(self, positive: &'a str, negative: &'a str) -> (&'a str, &'a str) {
        match self.positive {
            Label::A => (positive, negative),
            Label::B => (negative, positive),
        }
    }

    /// Per-item query assignment derived from `(seed, key)`.
    ///
    /// Hash-derived rather than drawn from a shared stream, so the result does
    /// not depend on the order items are evaluated in.
    pub fn seeded(seed: u64, key: &str) -> LabelMap {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest = h.finalize();
        if digest[0] & 1 == 0 { Self::POSITIVE_AT_A } else { Self::POSITIVE_AT_B }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSegment {
    Text { text: String },
    ImageSlot { image: ImageRef },
}

impl PromptSegment {
    pub fn text(text: impl Into<String>) -> Self {
        PromptSegment::Text { text: text.into() }
    }

    pub fn image(image: &ImageRef) -> Self {
        PromptSegment::ImageSlot { image: image.clone() }
    }
}

/// An ordered sequence of text and image slots plus the label maps needed to
/// score the answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub segments: Vec<PromptSegment>,
    /// Query A/B assignment; absent for yes/no probes.
    pub label_map: Option<LabelMap>,
    pub demo_label_maps: Vec<LabelMap>,
}

impl PromptBundle {
    pub fn image_count(&self) -> usize {
        self.images().count()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.segments.iter().filter_map(|s| match s {
            PromptSegment::ImageSlot { image } => Some(image),
            PromptSegment::Text { .. } => None,
        })
    }

    /// Text with each image slot replaced by [`IMAGE_MARKER`].
    pub fn render_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                PromptSegment::Text { text } => text.as_str(),
                PromptSegment::ImageSlot { .. } => IMAGE_MARKER,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDemonstration {
    pub image: ImageRef,
    pub caption_a: String,
    pub caption_b: String,
    pub correct_label: Label,
}

impl LabeledDemonstration {
    pub fn label_map(&self) -> LabelMap {
        LabelMap { positive: self.correct_label }
    }
}

/// Places each demonstration's correct caption at A or B with a seeded coin
/// flip. Deterministic in `(demos, seed)`.
pub fn assign_labels(demos: &[Demonstration], seed: u64) -> Result<Vec<LabeledDemonstration>, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::EmptyDemos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(demos
        .iter()
        .map(|d| {
            let map = if rng.random_bool(0.5) { LabelMap::POSITIVE_AT_A } else { LabelMap::POSITIVE_AT_B };
            let (a, b) = map.arrange(&d.caption_correct, &d.caption_wrong);
            LabeledDemonstration {
                image: d.image.clone(),
                caption_a: a.to_string(),
                caption_b: b.to_string(),
                correct_label: map.positive,
            }
        })
        .collect())
}

fn check_shots(shots: usize) -> Result<(), PromptError> {
    match shots {
        1 | 5 => Ok(()),
        n => Err(PromptError::InvalidShotCount(n)),
    }
}

/// Demonstrations used for a `shots`-shot prompt: the whole head of the bank
/// for five shots, the demo at `one_shot_index` for one shot.
pub fn select_demos(
    demos: &[LabeledDemonstration],
    shots: usize,
    one_shot_index: usize,
) -> Result<Vec<LabeledDemonstration>, PromptError> {
    check_shots(shots)?;
    if shots == 1 {
        return demos
            .get(one_shot_index)
            .map(|d| vec![d.clone()])
            .ok_or(PromptError::DemoIndexOutOfRange { index: one_shot_index, len: demos.len() });
    }
    if demos.len() < shots {
        return Err(PromptError::NotEnoughDemos { shots, available: demos.len() });
    }
    Ok(demos[..shots].to_vec())
}

/// The query that follows the demonstrations.
#[derive(Debug, Clone, Copy)]
pub enum FewShotQuery<'a> {
    /// Choose between two captions for one image.
    Choice { image: &'a ImageRef, caption_pos: &'a str, caption_neg: &'a str, labels: LabelMap },
    /// Yes/no probe for a single caption-image pair.
    Probe { caption: &'a str, image: &'a ImageRef },
}

impl<'a> FewShotQuery<'a> {
    pub fn for_item(item: &'a PairItem, labels: LabelMap) -> Self {
        FewShotQuery::Choice {
            image: &item.image,
            caption_pos: &item.caption_pos,
            caption_neg: &item.caption_neg,
            labels,
        }
    }
}

fn choice_lines(a: &str, b: &str) -> String {
    format!("A. {a}\nB. {b}")
}

/// Demonstration blocks followed by the query block, which ends with
/// `ASSISTANT:`. Uses the first `shots` demonstrations in bank order.
pub fn render_fewshot_prompt(
    demos: &[LabeledDemonstration],
    query: &FewShotQuery<'_>,
    shots: usize,
) -> Result<PromptBundle, PromptError> {
    check_shots(shots)?;
    if demos.len() < shots {
        return Err(PromptError::NotEnoughDemos { shots, available: demos.len() });
    }
    let demos = &demos[..shots];
    let mut segments = Vec::with_capacity(3 * shots + 3);
    for d in demos {
        segments.push(PromptSegment::text(format!(
            "{DEMO_QUESTION}\n{}\n",
            choice_lines(&d.caption_a, &d.caption_b)
        )));
        segments.push(PromptSegment::image(&d.image));
        segments.push(PromptSegment::text(format!(". The correct caption is: {}\n", d.correct_label)));
    }
    let label_map = match *query {
        FewShotQuery::Choice { image, caption_pos, caption_neg, labels } => {
            let (a, b) = labels.arrange(caption_pos, caption_neg);
            segments.push(PromptSegment::text(format!("{FEWSHOT_INSTRUCTION}\n")));
            segments.push(PromptSegment::image(image));
            segments.push(PromptSegment::text(format!(". The caption is:\n{}\n{ASSISTANT}", choice_lines(a, b))));
            Some(labels)
        }
        FewShotQuery::Probe { caption, image } => {
            segments.push(PromptSegment::text("USER: "));
            segments.push(PromptSegment::image(image));
            segments.push(PromptSegment::text(format!("{}\n{ASSISTANT}", probe_text(caption))));
            None
        }
    };
    Ok(PromptBundle { segments, label_map, demo_label_maps: demos.iter().map(|d| d.label_map()).collect() })
}

/// Zero-shot two-caption choice prompt for ARO and SugarCrepe.
pub fn render_zeroshot_choice_prompt(item: &PairItem, labels: LabelMap) -> PromptBundle {
    let (a, b) = labels.arrange(&item.caption_pos, &item.caption_neg);
    PromptBundle {
        segments: vec![
            PromptSegment::text("USER: "),
            PromptSegment::image(&item.image),
            PromptSegment::text(format!(" {ZEROSHOT_CHOICE}\n{}", choice_lines(a, b))),
        ],
        label_map: Some(labels),
        demo_label_maps: vec![],
    }
}

fn probe_text(caption: &str) -> String {
    format!(" Does the image match the caption?\nCaption: {caption}\n{YES_NO_INSTRUCTION}")
}

/// Zero-shot yes/no probe for one Winoground caption-image pair.
pub fn render_winoground_yesno_prompt(caption: &str, image: &ImageRef) -> PromptBundle {
    PromptBundle {
        segments: vec![
            PromptSegment::text("USER: "),
            PromptSegment::image(image),
            PromptSegment::text(probe_text(caption)),
        ],
        label_map: None,
        demo_label_maps: vec![],
    }
}
