//! Scoring math: cosine similarity, pairwise accuracy, the Winoground
//! text/image/group conditions and the sequence-mean token score.
//!
//! Every comparison is strict. A tie is never counted as correct.

mod parse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use parse::{parse_choice, parse_yes_no, ChoiceOutcome, YesNo};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("embedding vector is empty")]
    EmptyVector,
    #[error("cannot take the accuracy of an empty sequence")]
    EmptySequence,
    #[error("no logit rows to average")]
    EmptyRows,
}

/// A dense embedding produced by an image or text encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, ScoringError> {
        if values.is_empty() {
            return Err(ScoringError::EmptyVector);
        }
        Ok(Self(values))
    }

    /// Unit vector `e_index` in a space of dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index {index} out of range for dimension {dim}");
        let mut values = vec![T::zero(); dim];
        values[index] = T::one();
        Self(values)
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// `dot(u, v) / (|u| |v|)`, clamped to `[-1, 1]`.
///
/// The dot product and both squared norms are accumulated in a single pass in
/// index order, so swapping the arguments gives a bit-identical result.
pub fn cosine_similarity<T: Scalar>(
    u: &EmbeddingVector<T>,
    v: &EmbeddingVector<T>,
) -> Result<T, ScoringError> {
    if u.dim() != v.dim() {
        return Err(ScoringError::DimensionMismatch { left: u.dim(), right: v.dim() });
    }
    let mut dot = T::zero();
    let mut uu = T::zero();
    let mut vv = T::zero();
    for (&a, &b) in u.values().iter().zip(v.values()) {
        dot = dot + a * b;
        uu = uu + a * a;
        vv = vv + b * b;
    }
    if uu == T::zero() || vv == T::zero() {
        return Err(ScoringError::ZeroNorm);
    }
    let cos = dot / (uu.sqrt() * vv.sqrt());
    Ok(cos.max(-T::one()).min(T::one()))
}

/// True iff the positive caption strictly outscores the negative one.
pub fn pairwise_correct<T: PartialOrd>(score_pos: T, score_neg: T) -> bool {
    score_pos > score_neg
}

/// Fraction of `true` outcomes.
pub fn accuracy<T: Scalar>(outcomes: &[bool]) -> Result<T, ScoringError> {
    if outcomes.is_empty() {
        return Err(ScoringError::EmptySequence);
    }
    let hits = outcomes.iter().filter(|&&o| o).count();
    let num = T::from_usize(hits).expect("count fits in scalar");
    let den = T::from_usize(outcomes.len()).expect("count fits in scalar");
    Ok(num / den)
}

/// Scores of both captions against both images; `s_ij` is caption `i`
/// against image `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix2x2<T> {
    pub s00: T,
    pub s01: T,
    pub s10: T,
    pub s11: T,
}

impl<T: Scalar> SimilarityMatrix2x2<T> {
    pub fn new(s00: T, s01: T, s10: T, s11: T) -> Self {
        Self { s00, s01, s10, s11 }
    }

    /// Builds the matrix from a scoring function `f(caption, image)`.
    pub fn from_fn<E>(mut f: impl FnMut(usize, usize) -> Result<T, E>) -> Result<Self, E> {
        Ok(Self { s00: f(0, 0)?, s01: f(0, 1)?, s10: f(1, 0)?, s11: f(1, 1)? })
    }

    pub fn is_finite(&self) -> bool {
        [self.s00, self.s01, self.s10, self.s11].iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WinogroundScores {
    pub text_correct: bool,
    pub image_correct: bool,
    pub group_correct: bool,
}

/// Text: each image prefers its own caption. Image: each caption prefers its
/// own image. Group: both.
pub fn winoground_item_scores<T: Scalar>(m: &SimilarityMatrix2x2<T>) -> WinogroundScores {
    let text_correct = m.s00 > m.s10 && m.s11 > m.s01;
    let image_correct = m.s00 > m.s01 && m.s11 > m.s10;
    WinogroundScores { text_correct, image_correct, group_correct: text_correct && image_correct }
}

/// Token scores returned for one generated position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRow<T> {
    pub position: usize,
    pub token_scores: BTreeMap<String, T>,
}

impl<T: Scalar> LogitRow<T> {
    pub fn new(position: usize, token_scores: BTreeMap<String, T>) -> Self {
        Self { position, token_scores }
    }

    pub fn score_or(&self, token: &str, floor: T) -> T {
        self.token_scores.get(token).copied().unwrap_or(floor)
    }
}

/// Mean over positions of `target_token`'s score. Positions where the token
/// is absent contribute `floor`, so the divisor is always the row count.
pub fn mean_token_logit<T: Scalar>(
    rows: &[LogitRow<T>],
    target_token: &str,
    floor: T,
) -> Result<T, ScoringError> {
    if rows.is_empty() {
        return Err(ScoringError::EmptyRows);
    }
    let sum = rows.iter().fold(T::zero(), |acc, row| acc + row.score_or(target_token, floor));
    Ok(sum / T::from_usize(rows.len()).expect("row count fits in scalar"))
}
