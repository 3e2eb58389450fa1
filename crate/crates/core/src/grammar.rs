//! Special-token vocabulary, LLM input-sequence construction and the
//! grounded-answer wire format.
//!
//! A grounded answer interleaves plain text with spans of the form
//! `<g>phrase</g><o><obj3><obj7></o>`, each linking a noun phrase to indices of
//! the input boxes. Tokens travel as literal text markers; no tokenizer ids
//! are involved.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

/// Size of the object-index vocabulary (`<obj0>` .. `<obj99>`).
pub const MAX_OBJECTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialToken {
    ObjIndex(usize),
    GroundStart,
    GroundEnd,
    ObjStart,
    ObjEnd,
    ImagePlaceholder,
    RoiPlaceholder,
}

impl SpecialToken {
    pub fn object(index: usize) -> Result<Self, GrammarError> {
        if index < MAX_OBJECTS {
            Ok(SpecialToken::ObjIndex(index))
        } else {
            Err(GrammarError::TooManyObjects(index + 1))
        }
    }
}

impl fmt::Display for SpecialToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecialToken::ObjIndex(k) => write!(f, "<obj{k}>"),
            SpecialToken::GroundStart => f.write_str("<g>"),
            SpecialToken::GroundEnd => f.write_str("</g>"),
            SpecialToken::ObjStart => f.write_str("<o>"),
            SpecialToken::ObjEnd => f.write_str("</o>"),
            SpecialToken::ImagePlaceholder => f.write_str("<image>"),
            SpecialToken::RoiPlaceholder => f.write_str("<roi>"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrammarError {
    #[error("object count must be between 1 and {MAX_OBJECTS}, got {0}")]
    TooManyObjects(usize),
    #[error("question text must not be empty")]
    EmptyQuestion,
    #[error("{0}")]
    Syntax(Diagnostic),
    #[error("invalid grounded answer: {0}")]
    InvalidAnswer(String),
}

/// Strict parsing rejects malformed structure; lenient parsing recovers every
/// well-formed span and reports the rest as diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    UnexpectedToken,
    IndexOutsideGroup,
    IndexOutOfRange,
    DuplicateIndex,
    EmptyPhrase,
    EmptyObjectGroup,
    NestedPhrase,
    MissingGroundEnd,
    MissingObjectGroup,
    UnclosedPhrase,
    UnclosedGroup,
    GroupClosedByOpener,
    OrphanObjectGroup,
}

impl DiagnosticKind {
    /// Kinds that are recorded but never fail a strict parse.
    pub fn is_informational(self) -> bool {
        matches!(
            self,
            DiagnosticKind::DuplicateIndex | DiagnosticKind::EmptyObjectGroup
        )
    }
}

/// Structured parse diagnostic. `position` is a byte offset into the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub position: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.position, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputItem {
    Token(SpecialToken),
    Newline,
    Text(String),
}

/// Symbolic LLM input: image placeholder, one `(index, roi)` pair per object,
/// then the question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSequence {
    items: Vec<InputItem>,
}

impl InputSequence {
    pub fn items(&self) -> &[InputItem] {
        &self.items
    }

    pub fn object_count(&self) -> usize {
        self.items
            .iter()
            .filter(|i| matches!(i, InputItem::Token(SpecialToken::RoiPlaceholder)))
            .count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            match item {
                InputItem::Token(t) => out.push_str(&t.to_string()),
                InputItem::Newline => out.push('\n'),
                InputItem::Text(s) => out.push_str(s),
            }
        }
        out
    }
}

/// Builds `<image>\n<obj0><roi>...<objN-1><roi>\nquestion`. Indices are
/// zero-based, matching the token vocabulary.
pub fn build_input_sequence(
    num_objects: usize,
    question: &str,
) -> Result<InputSequence, GrammarError> {
    if num_objects == 0 || num_objects > MAX_OBJECTS {
        return Err(GrammarError::TooManyObjects(num_objects));
    }
    if question.is_empty() {
        return Err(GrammarError::EmptyQuestion);
    }
    let mut items = Vec::with_capacity(2 * num_objects + 4);
    items.push(InputItem::Token(SpecialToken::ImagePlaceholder));
    items.push(InputItem::Newline);
    for k in 0..num_objects {
        items.push(InputItem::Token(SpecialToken::ObjIndex(k)));
        items.push(InputItem::Token(SpecialToken::RoiPlaceholder));
    }
    items.push(InputItem::Newline);
    items.push(InputItem::Text(question.to_string()));
    Ok(InputSequence { items })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedSpan {
    pub phrase: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Text(String),
    Span(GroundedSpan),
}

/// Parsed answer: plain text interleaved with grounded spans, in textual order.
///
/// Invariants: no empty or adjacent text segments, non-empty phrases, unique
/// indices within a span, and no special-token markers inside any text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundedAnswer {
    segments: Vec<Segment>,
}

impl GroundedAnswer {
    /// Normalizes adjacent text segments and validates the invariants.
    pub fn new(segments: Vec<Segment>) -> Result<Self, GrammarError> {
        let mut ans = GroundedAnswer::default();
        for seg in segments {
            match seg {
                Segment::Text(t) => ans.push_text(&t),
                Segment::Span(span) => {
                    if span.phrase.is_empty() {
                        return Err(GrammarError::InvalidAnswer("empty phrase".into()));
                    }
                    if contains_marker(&span.phrase) {
                        return Err(GrammarError::InvalidAnswer(format!(
                            "phrase {:?} contains a special-token marker",
                            span.phrase
                        )));
                    }
                    let mut seen = std::collections::HashSet::new();
                    if !span.indices.iter().all(|i| seen.insert(*i)) {
                        return Err(GrammarError::InvalidAnswer(format!(
                            "phrase {:?} repeats an object index",
                            span.phrase
                        )));
                    }
                    ans.segments.push(Segment::Span(span));
                }
            }
        }
        // Checked after merging: two pieces can join into a marker.
        for seg in &ans.segments {
            if let Segment::Text(t) = seg {
                if contains_marker(t) {
                    return Err(GrammarError::InvalidAnswer(format!(
                        "text {t:?} contains a special-token marker"
                    )));
                }
            }
        }
        Ok(ans)
    }

    /// Convenience constructor for an answer made only of spans.
    pub fn from_spans<S: Into<String>>(
        spans: impl IntoIterator<Item = (S, Vec<usize>)>,
    ) -> Result<Self, GrammarError> {
        Self::new(
            spans
                .into_iter()
                .map(|(phrase, indices)| {
                    Segment::Span(GroundedSpan {
                        phrase: phrase.into(),
                        indices,
                    })
                })
                .collect(),
        )
    }

    fn push_text(&mut self, t: &str) {
        if t.is_empty() {
            return;
        }
        if let Some(Segment::Text(prev)) = self.segments.last_mut() {
            prev.push_str(t);
        } else {
            self.segments.push(Segment::Text(t.to_string()));
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn spans(&self) -> impl Iterator<Item = &GroundedSpan> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Span(span) => Some(span),
            Segment::Text(_) => None,
        })
    }

    pub fn is_plain_text(&self) -> bool {
        self.spans().next().is_none()
    }

    /// Checks every index against the number of input boxes.
    pub fn validate_indices(&self, num_objects: usize) -> Result<(), GrammarError> {
        for span in self.spans() {
            if let Some(bad) = span.indices.iter().find(|&&i| i >= num_objects) {
                return Err(GrammarError::InvalidAnswer(format!(
                    "phrase {:?} references object {bad} but only {num_objects} boxes exist",
                    span.phrase
                )));
            }
        }
        Ok(())
    }
}

fn contains_marker(text: &str) -> bool {
    lex(text)
        .iter()
        .any(|l| !matches!(l.lexeme, Lexeme::Text(_)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lexeme<'a> {
    Text(&'a str),
    Token(SpecialToken),
}

#[derive(Debug, Clone, Copy)]
struct Lexed<'a> {
    start: usize,
    lexeme: Lexeme<'a>,
}

fn match_marker(rest: &[u8]) -> Option<(SpecialToken, usize)> {
    const FIXED: [(&[u8], SpecialToken); 6] = [
        (b"<g>", SpecialToken::GroundStart),
        (b"</g>", SpecialToken::GroundEnd),
        (b"<o>", SpecialToken::ObjStart),
        (b"</o>", SpecialToken::ObjEnd),
        (b"<image>", SpecialToken::ImagePlaceholder),
        (b"<roi>", SpecialToken::RoiPlaceholder),
    ];
    for (pat, tok) in FIXED {
        if rest.starts_with(pat) {
            return Some((tok, pat.len()));
        }
    }
    if rest.starts_with(b"<obj") {
        let digits = rest[4..].iter().take_while(|b| b.is_ascii_digit()).count();
        if digits > 0 && rest.get(4 + digits) == Some(&b'>') {
            // Overflowing indices are kept as out-of-range values.
            let value = std::str::from_utf8(&rest[4..4 + digits])
                .ok()
                .and_then(|s| s.parse::<usize>().ok())
                .unwrap_or(usize::MAX);
            return Some((SpecialToken::ObjIndex(value), 4 + digits + 1));
        }
    }
    None
}

fn lex(text: &str) -> Vec<Lexed<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if let Some((tok, len)) = match_marker(&bytes[i..]) {
                if text_start < i {
                    out.push(Lexed {
                        start: text_start,
                        lexeme: Lexeme::Text(&text[text_start..i]),
                    });
                }
                out.push(Lexed {
                    start: i,
                    lexeme: Lexeme::Token(tok),
                });
                i += len;
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < bytes.len() {
        out.push(Lexed {
            start: text_start,
            lexeme: Lexeme::Text(&text[text_start..]),
        });
    }
    out
}

/// Result of a parse: the answer plus every recorded diagnostic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub answer: GroundedAnswer,
    pub diagnostics: Vec<Diagnostic>,
}

enum State {
    Outside,
    Phrase {
        start: usize,
        text: String,
    },
    AfterPhrase {
        start: usize,
        phrase: String,
    },
    Group {
        start: usize,
        phrase: Option<String>,
        indices: Vec<usize>,
    },
}

struct Parser {
    mode: ParseMode,
    limit: usize,
    answer: GroundedAnswer,
    diagnostics: Vec<Diagnostic>,
}

impl Parser {
    fn note(
        &mut self,
        position: usize,
        kind: DiagnosticKind,
        message: String,
    ) -> Result<(), GrammarError> {
        let diag = Diagnostic {
            position,
            kind,
            message,
        };
        if self.mode == ParseMode::Strict && !kind.is_informational() {
            return Err(GrammarError::Syntax(diag));
        }
        self.diagnostics.push(diag);
        Ok(())
    }

    fn emit_span(
        &mut self,
        start: usize,
        phrase: Option<String>,
        indices: Vec<usize>,
    ) -> Result<(), GrammarError> {
        let Some(phrase) = phrase else {
            return self.note(
                start,
                DiagnosticKind::OrphanObjectGroup,
                format!(
                    "object group without a preceding phrase dropped ({} indices)",
                    indices.len()
                ),
            );
        };
        if phrase.is_empty() {
            return self.note(
                start,
                DiagnosticKind::EmptyPhrase,
                "grounded span with an empty phrase dropped".into(),
            );
        }
        if indices.is_empty() {
            self.note(
                start,
                DiagnosticKind::EmptyObjectGroup,
                format!("phrase {phrase:?} has no object indices"),
            )?;
        }
        self.answer
            .segments
            .push(Segment::Span(GroundedSpan { phrase, indices }));
        Ok(())
    }

    fn push_index(
        &mut self,
        pos: usize,
        k: usize,
        indices: &mut Vec<usize>,
    ) -> Result<(), GrammarError> {
        if k >= self.limit {
            let shown = if k == usize::MAX {
                "overflowing index".to_string()
            } else {
                format!("index {k}")
            };
            return self.note(
                pos,
                DiagnosticKind::IndexOutOfRange,
                format!("{shown} is outside the {} input boxes", self.limit),
            );
        }
        if indices.contains(&k) {
            return self.note(
                pos,
                DiagnosticKind::DuplicateIndex,
                format!("index {k} repeated within one span; deduplicated"),
            );
        }
        indices.push(k);
        Ok(())
    }

    fn step(&mut self, state: State, item: Lexed<'_>) -> Result<State, GrammarError> {
        use SpecialToken as T;
        let pos = item.start;
        Ok(match (state, item.lexeme) {
            (State::Outside, Lexeme::Text(t)) => {
                self.answer.push_text(t);
                State::Outside
            }
            (State::Outside, Lexeme::Token(T::GroundStart)) => State::Phrase {
                start: pos,
                text: String::new(),
            },
            (State::Outside, Lexeme::Token(T::ObjStart)) => {
                self.note(
                    pos,
                    DiagnosticKind::OrphanObjectGroup,
                    "object group opened without a grounded phrase".into(),
                )?;
                State::Group {
                    start: pos,
                    phrase: None,
                    indices: Vec::new(),
                }
            }
            (State::Outside, Lexeme::Token(T::ObjIndex(k))) => {
                self.note(
                    pos,
                    DiagnosticKind::IndexOutsideGroup,
                    format!("<obj{k}> outside an object group dropped"),
                )?;
                State::Outside
            }
            (State::Outside, Lexeme::Token(tok)) => {
                self.note(
                    pos,
                    DiagnosticKind::UnexpectedToken,
                    format!("unexpected {tok} dropped"),
                )?;
                State::Outside
            }

            (State::Phrase { start, mut text }, Lexeme::Text(t)) => {
                text.push_str(t);
                State::Phrase { start, text }
            }
            (State::Phrase { start, text }, Lexeme::Token(T::GroundEnd)) => State::AfterPhrase {
                start,
                phrase: text,
            },
            (State::Phrase { start, text }, Lexeme::Token(T::ObjStart)) => {
                self.note(
                    pos,
                    DiagnosticKind::MissingGroundEnd,
                    "object group opened before </g>".into(),
                )?;
                State::Group {
                    start,
                    phrase: Some(text),
                    indices: Vec::new(),
                }
            }
            (State::Phrase { start, text }, Lexeme::Token(T::ObjIndex(k))) => {
                self.note(
                    pos,
                    DiagnosticKind::MissingGroundEnd,
                    "object index inside a phrase; phrase closed implicitly".into(),
                )?;
                let mut indices = Vec::new();
                self.push_index(pos, k, &mut indices)?;
                State::Group {
                    start,
                    phrase: Some(text),
                    indices,
                }
            }
            (State::Phrase { text, .. }, Lexeme::Token(T::GroundStart)) => {
                self.note(
                    pos,
                    DiagnosticKind::NestedPhrase,
                    "<g> inside an open phrase; earlier phrase kept as plain text".into(),
                )?;
                self.answer.push_text(&text);
                State::Phrase {
                    start: pos,
                    text: String::new(),
                }
            }
            (st @ State::Phrase { .. }, Lexeme::Token(tok)) => {
                self.note(
                    pos,
                    DiagnosticKind::UnexpectedToken,
                    format!("unexpected {tok} inside a phrase dropped"),
                )?;
                st
            }

            (st @ State::AfterPhrase { .. }, Lexeme::Text(t)) if t.trim().is_empty() => st,
            (State::AfterPhrase { start, phrase }, Lexeme::Token(T::ObjStart)) => State::Group {
                start,
                phrase: Some(phrase),
                indices: Vec::new(),
            },
            (State::AfterPhrase { start, phrase }, other) => {
                self.note(
                    pos,
                    DiagnosticKind::MissingObjectGroup,
                    format!("phrase {phrase:?} is not followed by an object group"),
                )?;
                self.emit_span(start, Some(phrase), Vec::new())?;
                return self.step(
                    State::Outside,
                    Lexed {
                        start: pos,
                        lexeme: other,
                    },
                );
            }

            (st @ State::Group { .. }, Lexeme::Text(t)) if t.trim().is_empty() => st,
            (
                State::Group {
                    start,
                    phrase,
                    mut indices,
                },
                Lexeme::Token(T::ObjIndex(k)),
            ) => {
                self.push_index(pos, k, &mut indices)?;
                State::Group {
                    start,
                    phrase,
                    indices,
                }
            }
            (
                State::Group {
                    start,
                    phrase,
                    indices,
                },
                Lexeme::Token(T::ObjEnd),
            ) => {
                self.emit_span(start, phrase, indices)?;
                State::Outside
            }
            (
                State::Group {
                    start,
                    phrase,
                    indices,
                },
                Lexeme::Token(T::ObjStart),
            ) => {
                self.note(
                    pos,
                    DiagnosticKind::GroupClosedByOpener,
                    "object group terminated by <o> instead of </o>".into(),
                )?;
                self.emit_span(start, phrase, indices)?;
                State::Outside
            }
            (
                State::Group {
                    start,
                    phrase,
                    indices,
                },
                lexeme @ (Lexeme::Text(_) | Lexeme::Token(T::GroundStart)),
            ) => {
                self.note(
                    pos,
                    DiagnosticKind::UnclosedGroup,
                    "object group not closed before further content".into(),
                )?;
                self.emit_span(start, phrase, indices)?;
                return self.step(State::Outside, Lexed { start: pos, lexeme });
            }
            (st @ State::Group { .. }, Lexeme::Token(tok)) => {
                self.note(
                    pos,
                    DiagnosticKind::UnexpectedToken,
                    format!("unexpected {tok} inside an object group dropped"),
                )?;
                st
            }
        })
    }

    fn finish(&mut self, state: State, end: usize) -> Result<(), GrammarError> {
        match state {
            State::Outside => Ok(()),
            State::Phrase { start, text } => {
                self.note(
                    start,
                    DiagnosticKind::UnclosedPhrase,
                    "phrase not closed before end of text; kept as plain text".into(),
                )?;
                self.answer.push_text(&text);
                Ok(())
            }
            State::AfterPhrase { start, phrase } => {
                self.note(
                    end,
                    DiagnosticKind::MissingObjectGroup,
                    format!("phrase {phrase:?} is not followed by an object group"),
                )?;
                self.emit_span(start, Some(phrase), Vec::new())
            }
            State::Group {
                start,
                phrase,
                indices,
            } => {
                self.note(
                    end,
                    DiagnosticKind::UnclosedGroup,
                    "object group not closed before end of text".into(),
                )?;
                self.emit_span(start, phrase, indices)
            }
        }
    }
}

/// Parses model output against `num_objects` input boxes (capped at the
/// vocabulary size). Lenient mode never fails.
pub fn parse_grounded_answer(
    text: &str,
    num_objects: usize,
    mode: ParseMode,
) -> Result<ParsedAnswer, GrammarError> {
    let mut parser = Parser {
        mode,
        limit: num_objects.min(MAX_OBJECTS),
        answer: GroundedAnswer::default(),
        diagnostics: Vec::new(),
    };
    let mut state = State::Outside;
    for item in lex(text) {
        state = parser.step(state, item)?;
    }
    parser.finish(state, text.len())?;
    Ok(ParsedAnswer {
        answer: parser.answer,
        diagnostics: parser.diagnostics,
    })
}

fn write_span(out: &mut String, span: &GroundedSpan) {
    out.push_str("<g>");
    out.push_str(&span.phrase);
    out.push_str("</g><o>");
    for k in &span.indices {
        out.push_str("<obj");
        out.push_str(&k.to_string());
        out.push('>');
    }
    out.push_str("</o>");
}

/// Canonical text form. Object groups always close with `</o>`.
pub fn serialize_grounded_answer(ans: &GroundedAnswer) -> String {
    let mut out = String::new();
    for seg in &ans.segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Span(span) => write_span(&mut out, span),
        }
    }
    out
}

/// A phrase attached to one of the input boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    pub index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Resolves every `(phrase, index)` pair against the input boxes, in span
/// order then index order. An index may appear under several phrases.
pub fn answer_to_detections(
    ans: &GroundedAnswer,
    boxes: &[BBox],
    mode: ParseMode,
) -> Result<(Vec<LabeledBox>, Vec<Diagnostic>), GrammarError> {
    let mut dets = Vec::new();
    let mut diagnostics = Vec::new();
    let mut offset = 0usize;
    for seg in &ans.segments {
        match seg {
            Segment::Text(t) => offset += t.len(),
            Segment::Span(span) => {
                for &k in &span.indices {
                    match boxes.get(k) {
                        Some(b) => dets.push(LabeledBox {
                            label: span.phrase.clone(),
                            index: k,
                            bbox: *b,
                        }),
                        None => {
                            let diag = Diagnostic {
                                position: offset,
                                kind: DiagnosticKind::IndexOutOfRange,
                                message: format!(
                                    "phrase {:?} references object {k} but only {} boxes exist",
                                    span.phrase,
                                    boxes.len()
                                ),
                            };
                            if mode == ParseMode::Strict {
                                return Err(GrammarError::Syntax(diag));
                            }
                            diagnostics.push(diag);
                        }
                    }
                }
                let mut s = String::new();
                write_span(&mut s, span);
                offset += s.len();
            }
        }
    }
    Ok((dets, diagnostics))
}
