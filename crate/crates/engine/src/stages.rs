use groundkit::BBox;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{
    expect_capability, ClientError, ImageRef, StageClient, StageReply, StageRequest, Verdict,
};
use crate::phrases::PhraseSpan;
use crate::prompts::{region_caption_prompt, verify_rewrite_prompt, IMAGE_CAPTION_PROMPT};

/// Referring expressions must have more than this many words...
pub const REFERRING_MIN_EXCLUSIVE: usize = 5;
/// ...and fewer than this many.
pub const REFERRING_MAX_EXCLUSIVE: usize = 10;

pub const DEFAULT_GROUND_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Caption,
    Extract,
    Filter,
    Ground,
    RegionCaption,
    VerifyRewrite,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Caption => "caption",
            Stage::Extract => "extract",
            Stage::Filter => "filter",
            Stage::Ground => "ground",
            Stage::RegionCaption => "region_caption",
            Stage::VerifyRewrite => "verify_rewrite",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage failed")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: ClientError,
}

impl StageError {
    fn at(stage: Stage) -> impl FnOnce(ClientError) -> StageError {
        move |source| StageError { stage, source }
    }
}

/// A non-fatal finding attached to an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: Stage,
    pub message: String,
}

impl Diagnostic {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Diagnostic {
            stage,
            message: message.into(),
        }
    }
}

pub fn caption_image(image: &ImageRef, client: &dyn StageClient) -> Result<String, StageError> {
    let req = StageRequest::Caption {
        image: image.clone(),
        prompt: IMAGE_CAPTION_PROMPT.into(),
    };
    match client.call(&req).map_err(StageError::at(Stage::Caption))? {
        StageReply::Caption { caption } => Ok(caption),
        other => Err(StageError::at(Stage::Caption)(
            expect_capability(&other, req.capability()).unwrap_err(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingOptions {
    pub threshold: f64,
    /// Keep every box above the threshold instead of only the best one.
    pub keep_all: bool,
}

impl Default for GroundingOptions {
    fn default() -> Self {
        GroundingOptions {
            threshold: DEFAULT_GROUND_THRESHOLD,
            keep_all: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundedPhrase {
    pub phrase: PhraseSpan,
    pub bbox: BBox,
    pub score: f64,
}

/// Grounds all phrases in one request. Boxes are clipped to the image,
/// kept when `score >= threshold`, and listed by phrase then by
/// descending score. Phrases left without a box produce a diagnostic.
pub fn ground_phrases(
    image: &ImageRef,
    phrases: &[PhraseSpan],
    client: &dyn StageClient,
    opts: &GroundingOptions,
) -> Result<(Vec<GroundedPhrase>, Vec<Diagnostic>), StageError> {
    let mut diags = Vec::new();
    if phrases.is_empty() {
        return Ok((Vec::new(), diags));
    }
    let req = StageRequest::Ground {
        image: image.clone(),
        phrases: phrases.iter().map(|p| p.text.clone()).collect(),
    };
    let boxes = match client.call(&req).map_err(StageError::at(Stage::Ground))? {
        StageReply::Ground { boxes } => boxes,
        other => {
            return Err(StageError::at(Stage::Ground)(
                expect_capability(&other, req.capability()).unwrap_err(),
            ))
        }
    };
    let frame = image.extent();
    let mut per_phrase: Vec<Vec<(BBox, f64)>> = vec![Vec::new(); phrases.len()];
    for b in boxes {
        if b.phrase >= phrases.len() {
            diags.push(Diagnostic::new(
                Stage::Ground,
                format!("box refers to phrase {} of {}", b.phrase, phrases.len()),
            ));
            continue;
        }
        if !b.score.is_finite() || b.score < opts.threshold {
            continue;
        }
        let clipped = match frame {
            Some(f) => b.bbox.clip_to(&f),
            None => b.bbox,
        };
        if clipped.area() <= 0.0 {
            diags.push(Diagnostic::new(
                Stage::Ground,
                format!(
                    "box for {:?} lies outside the image",
                    phrases[b.phrase].text
                ),
            ));
            continue;
        }
        per_phrase[b.phrase].push((clipped, b.score));
    }
    let mut out = Vec::new();
    for (phrase, mut found) in phrases.iter().zip(per_phrase) {
        if found.is_empty() {
            diags.push(Diagnostic::new(
                Stage::Ground,
                format!("no box above {} for {:?}", opts.threshold, phrase.text),
            ));
            continue;
        }
        found.sort_by(|a, b| b.1.total_cmp(&a.1));
        if !opts.keep_all {
            found.truncate(1);
        }
        out.extend(found.into_iter().map(|(bbox, score)| GroundedPhrase {
            phrase: phrase.clone(),
            bbox,
            score,
        }));
    }
    Ok((out, diags))
}

/// True when the text is a single sentence: one terminal `.`, `!` or `?`
/// at the very end and no other sentence break.
pub fn is_one_sentence(text: &str) -> bool {
    let t = text.trim();
    if t.is_empty() || t.contains('\n') {
        return false;
    }
    let chars: Vec<char> = t.chars().collect();
    let terminal = |c: char| matches!(c, '.' | '!' | '?');
    if !terminal(*chars.last().unwrap()) {
        return false;
    }
    let body_end = chars.iter().rposition(|c| !terminal(*c)).unwrap_or(0);
    !chars[..body_end]
        .windows(2)
        .any(|w| terminal(w[0]) && w[1].is_whitespace())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionCaption {
    pub text: String,
    pub one_sentence: bool,
}

pub fn phrase_conditioned_caption(
    image: &ImageRef,
    bbox: &BBox,
    phrase: &str,
    client: &dyn StageClient,
) -> Result<RegionCaption, StageError> {
    let req = StageRequest::RegionCaption {
        image: image.clone(),
        bbox: *bbox,
        phrase: phrase.into(),
        prompt: region_caption_prompt(phrase),
    };
    match client
        .call(&req)
        .map_err(StageError::at(Stage::RegionCaption))?
    {
        StageReply::RegionCaption { caption } => Ok(RegionCaption {
            one_sentence: is_one_sentence(&caption),
            text: caption.trim().to_string(),
        }),
        other => Err(StageError::at(Stage::RegionCaption)(
            expect_capability(&other, req.capability()).unwrap_err(),
        )),
    }
}

/// Checks the word-count window and the no-comma rule.
pub fn check_referring(text: &str) -> Result<(), String> {
    let words = text.split_whitespace().count();
    if text.contains(',') {
        return Err("referring expression contains a comma".into());
    }
    if words <= REFERRING_MIN_EXCLUSIVE || words >= REFERRING_MAX_EXCLUSIVE {
        return Err(format!(
            "referring expression has {words} words, needs more than {REFERRING_MIN_EXCLUSIVE} and fewer than {REFERRING_MAX_EXCLUSIVE}"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    Accepted(String),
    Rejected(String),
}

pub fn verify_and_rewrite(
    detail: &str,
    phrase: &str,
    client: &dyn StageClient,
) -> Result<VerifyOutcome, StageError> {
    let req = StageRequest::VerifyRewrite {
        caption: detail.into(),
        phrase: phrase.into(),
        prompt: verify_rewrite_prompt(detail, phrase),
    };
    match client
        .call(&req)
        .map_err(StageError::at(Stage::VerifyRewrite))?
    {
        StageReply::VerifyRewrite(Verdict::Accept { referring }) => {
            let referring = referring.trim().to_string();
            Ok(match check_referring(&referring) {
                Ok(()) => VerifyOutcome::Accepted(referring),
                Err(why) => VerifyOutcome::Rejected(why),
            })
        }
        StageReply::VerifyRewrite(Verdict::Reject { reason }) => {
            Ok(VerifyOutcome::Rejected(reason))
        }
        other => Err(StageError::at(Stage::VerifyRewrite)(
            expect_capability(&other, req.capability()).unwrap_err(),
        )),
    }
}
