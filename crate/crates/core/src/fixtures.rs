//! Small synthetic benchmarks for offline runs and tests.
//!
//! Fixture images are tiny PNGs written to a caller-supplied directory; their
//! content is irrelevant to the mock models, which key on locators.

use std::io::Cursor;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Benchmark, PairItem, Subset, WinogroundItem};
use crate::image_ref::ImageRef;

/// A solid-gray PNG of the given size.
pub fn png_bytes(width: u32, height: u32) -> Vec<u8> {
    let img = image::RgbImage::from_pixel(width, height, image::Rgb([128, 128, 128]));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encodes");
    out.into_inner()
}

fn write_image(dir: &Path, name: &str) -> std::io::Result<ImageRef> {
    let path = dir.join(name);
    std::fs::write(&path, png_bytes(1, 1))?;
    Ok(ImageRef::from_locator(path.to_string_lossy()))
}

const SUBJECTS: &[&str] = &["dog", "cat", "horse", "child", "woman", "man", "bird", "robot"];
const COLORS: &[&str] = &["red", "blue", "green", "yellow", "white", "black"];
const PLACES: &[&str] = &["table", "bench", "rug", "car", "boat", "sofa", "bed", "roof"];

/// `n` items per subset. Every caption is unique across the whole fixture.
pub fn pairwise_fixture(dir: &Path, subsets: &[Subset], n: usize) -> std::io::Result<Vec<PairItem>> {
    let mut items = Vec::new();
    for subset in subsets {
        for k in 0..n {
            let s = SUBJECTS[k % SUBJECTS.len()];
            let c = COLORS[(k / SUBJECTS.len()) % COLORS.len()];
            let p = PLACES[(k * 3) % PLACES.len()];
            let tag = subset.code();
            let pos = format!("a {c} {s} sits on the {p} ({tag} {k})");
            let neg = format!("the {p} sits on a {c} {s} ({tag} {k})");
            let id = format!("{}-{k}", subset.name());
            items.push(PairItem {
                image: write_image(dir, &format!("{id}.png"))?,
                item_id: id,
                caption_pos: pos,
                caption_neg: neg,
                benchmark: subset.benchmark(),
                subset: *subset,
            });
        }
    }
    Ok(items)
}

/// Word-order subset items whose negatives are shuffles of the positive's
/// words (never the identity permutation).
pub fn order_shuffle_fixture(dir: &Path, n: usize, seed: u64) -> std::io::Result<Vec<PairItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n);
    for k in 0..n {
        let subset = if k % 2 == 0 { Subset::CocoOrder } else { Subset::Flickr30kOrder };
        let pos = format!(
            "a {} {} is resting near the {} with item {k}",
            COLORS[k % COLORS.len()],
            SUBJECTS[(k / 3) % SUBJECTS.len()],
            PLACES[(k * 7) % PLACES.len()]
        );
        let words: Vec<&str> = pos.split_whitespace().collect();
        let neg = loop {
            let mut w = words.clone();
            w.shuffle(&mut rng);
            let candidate = w.join(" ");
            if candidate != pos {
                break candidate;
            }
        };
        let id = format!("order-{k}");
        items.push(PairItem {
            image: write_image(dir, &format!("{id}.png"))?,
            item_id: id,
            caption_pos: pos,
            caption_neg: neg,
            benchmark: Benchmark::Aro,
            subset,
        });
    }
    Ok(items)
}

pub fn winoground_fixture(dir: &Path, n: usize) -> std::io::Result<Vec<WinogroundItem>> {
    (0..n)
        .map(|k| {
            let a = SUBJECTS[k % SUBJECTS.len()];
            let b = PLACES[(k + 1) % PLACES.len()];
            let id = format!("wino-{k}");
            Ok(WinogroundItem {
                image_0: write_image(dir, &format!("{id}-0.png"))?,
                image_1: write_image(dir, &format!("{id}-1.png"))?,
                caption_0: format!("the {a} is on the {b} ({k})"),
                caption_1: format!("the {b} is on the {a} ({k})"),
                item_id: id,
            })
        })
        .collect()
}
