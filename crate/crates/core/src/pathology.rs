//! Detectors for failure patterns of coordinate-emitting models: boxes that
//! drift by a constant step, outputs cut off mid-structure, and whole-box
//! loss when any one of a box's tokens is wrong.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathologyError {
    #[error("minimum run length must be at least 3, got {0}")]
    RunTooShort(usize),
    #[error("tolerance must be finite and non-negative, got {0}")]
    BadTolerance(f64),
    #[error("token correctness probability must be in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("a box needs at least one token")]
    NoTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionConfig {
    pub min_run: usize,
    /// Largest spread allowed per coordinate among a run's successive deltas.
    pub tolerance: f64,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            min_run: 3,
            tolerance: 1.0,
        }
    }
}

impl RepetitionConfig {
    pub fn validate(&self) -> Result<(), PathologyError> {
        if self.min_run < 3 {
            return Err(PathologyError::RunTooShort(self.min_run));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(PathologyError::BadTolerance(self.tolerance));
        }
        Ok(())
    }
}

/// Consecutive boxes that each differ from the previous one by roughly the
/// same step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRun {
    pub start: usize,
    /// Number of boxes in the run.
    pub length: usize,
    /// Mean step per coordinate, `xmin, ymin, xmax, ymax`.
    pub delta: [f64; 4],
    pub tolerance: f64,
}

impl RepetitionRun {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

fn step(a: &BBox, b: &BBox) -> [f64; 4] {
    let (a, b) = (a.to_array(), b.to_array());
    [b[0] - a[0], b[1] - a[1], b[2] - a[2], b[3] - a[3]]
}

/// Scans left to right for maximal runs whose successive deltas stay within
/// `tolerance` of each other on every coordinate. A run ends where the next
/// delta would widen some coordinate's spread past the tolerance; the next
/// scan starts at the run's last box, so adjacent runs may share one box.
pub fn detect_arith_repetition(
    boxes: &[BBox],
    config: &RepetitionConfig,
) -> Result<Vec<RepetitionRun>, PathologyError> {
    config.validate()?;
    let deltas: Vec<[f64; 4]> = boxes.windows(2).map(|w| step(&w[0], &w[1])).collect();
    let mut runs = Vec::new();
    let mut start = 0;
    while start + 1 < boxes.len() {
        let mut lo = deltas[start];
        let mut hi = deltas[start];
        let mut end = start + 1;
        while end < deltas.len() {
            let d = deltas[end];
            let fits = (0..4).all(|k| hi[k].max(d[k]) - lo[k].min(d[k]) <= config.tolerance);
            if !fits {
                break;
            }
            for k in 0..4 {
                lo[k] = lo[k].min(d[k]);
                hi[k] = hi[k].max(d[k]);
            }
            end += 1;
        }
        // Deltas start..end cover boxes start..=end.
        let length = end - start + 1;
        if length >= config.min_run {
            let n = (end - start) as f64;
            let mut delta = [0.0; 4];
            for d in &deltas[start..end] {
                for k in 0..4 {
                    delta[k] += d[k] / n;
                }
            }
            runs.push(RepetitionRun {
                start,
                length,
                delta,
                tolerance: config.tolerance,
            });
            start = end;
        } else {
            start += 1;
        }
    }
    Ok(runs)
}

/// Whole-box emission model: a box survives only if every one of its tokens
/// is produced correctly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTokenErrorModel {
    pub tokens_per_box: u32,
    pub p: f64,
}

impl BoxTokenErrorModel {
    pub const DEFAULT_TOKENS_PER_BOX: u32 = 9;

    pub fn new(p: f64, tokens_per_box: u32) -> Result<Self, PathologyError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(PathologyError::BadProbability(p));
        }
        if tokens_per_box == 0 {
            return Err(PathologyError::NoTokens);
        }
        Ok(Self { tokens_per_box, p })
    }

    pub fn with_p(p: f64) -> Result<Self, PathologyError> {
        Self::new(p, Self::DEFAULT_TOKENS_PER_BOX)
    }
}

/// `p ^ tokens_per_box`.
pub fn box_survival(model: &BoxTokenErrorModel) -> f64 {
    model.p.powi(model.tokens_per_box as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationReason {
    /// A `[`, `{` or `(` is still open at the end of the text.
    UnclosedBracket,
    /// A grounding group (`<g>` or `<o>`) is still open.
    UnclosedGroup,
    /// The word count reached the output limit.
    LengthLimit,
    /// The text ends in an ellipsis.
    TrailingEllipsis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub truncated: bool,
    pub reasons: Vec<TruncationReason>,
    /// Byte offset where the output breaks off: the innermost unclosed
    /// opener if any, else the end of the text when truncated.
    pub cut_position: Option<usize>,
    pub words: usize,
}

/// Flags text that ends mid-structure or at the word limit. Whitespace
/// separated words stand in for tokens.
pub fn detect_truncation(raw: &str, max_len: usize) -> TruncationReport {
    let mut brackets: Vec<usize> = Vec::new();
    let mut group: Option<usize> = None;
    let mut i = 0;
    let bytes = raw.as_bytes();
    while i < bytes.len() {
        let rest = &raw[i..];
        if let Some(tag) = ["<g>", "<o>"].iter().find(|t| rest.starts_with(**t)) {
            group = Some(i);
            i += tag.len();
            continue;
        }
        if let Some(tag) = ["</g>", "</o>"].iter().find(|t| rest.starts_with(**t)) {
            group = None;
            i += tag.len();
            continue;
        }
        match bytes[i] {
            b'[' | b'{' | b'(' => brackets.push(i),
            b']' | b'}' | b')' => {
                brackets.pop();
            }
            _ => {}
        }
        i += 1;
    }
    let words = raw.split_whitespace().count();
    let trimmed = raw.trim_end();
    let mut reasons = Vec::new();
    if !brackets.is_empty() {
        reasons.push(TruncationReason::UnclosedBracket);
    }
    if group.is_some() {
        reasons.push(TruncationReason::UnclosedGroup);
    }
    if max_len > 0 && words >= max_len {
        reasons.push(TruncationReason::LengthLimit);
    }
    if trimmed.ends_with("...") || trimmed.ends_with('\u{2026}') {
        reasons.push(TruncationReason::TrailingEllipsis);
    }
    let opener = brackets.last().copied().into_iter().chain(group).max();
    let truncated = !reasons.is_empty();
    TruncationReport {
        truncated,
        reasons,
        cut_position: opener.or(truncated.then_some(raw.len())),
        words,
    }
}
