use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const BUNDLED_LEXICON: &str = include_str!("../data/closed_class.txt");

/// Default abstract-noun blocklist. Beyond "image" and "background" the
/// entries are a local choice.
pub const DEFAULT_ABSTRACT_NOUNS: &[&str] = &[
    "image",
    "background",
    "picture",
    "scene",
    "view",
    "photo",
    "foreground",
    "atmosphere",
    "photograph",
    "setting",
    "moment",
];

/// Words of this many or more make a descriptive phrase.
pub const DESCRIPTIVE_MIN_WORDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhraseKind {
    CategoryName,
    DescriptivePhrase,
}

impl PhraseKind {
    pub fn for_word_count(words: usize) -> Self {
        if words >= DESCRIPTIVE_MIN_WORDS {
            PhraseKind::DescriptivePhrase
        } else {
            PhraseKind::CategoryName
        }
    }
}

/// A noun phrase located in a caption. `start..end` is a byte range.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub kind: PhraseKind,
}

impl PhraseSpan {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    /// Last word, lowercased.
    pub fn head(&self) -> String {
        self.text
            .split_whitespace()
            .last()
            .unwrap_or("")
            .to_lowercase()
    }
}

/// Closed-class words that never belong to a noun phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: HashSet<String>,
}

impl Lexicon {
    /// Parses one word per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        Lexicon { words }
    }

    pub fn bundled() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::parse(BUNDLED_LEXICON))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn word_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:['’-][\p{L}\p{N}]+)*").unwrap())
}

/// Splits a caption into maximal runs of open-class words. Closed-class
/// words and any punctuation between words end a run, so leading
/// determiners never enter a span.
pub fn extract_noun_phrases(caption: &str, lexicon: &Lexicon) -> Vec<PhraseSpan> {
    let mut spans = Vec::new();
    let mut current: Option<(usize, usize, usize)> = None;
    let mut last_end = 0;
    let mut close = |cur: &mut Option<(usize, usize, usize)>| {
        if let Some((start, end, words)) = cur.take() {
            spans.push(PhraseSpan {
                text: caption[start..end].to_string(),
                start,
                end,
                kind: PhraseKind::for_word_count(words),
            });
        }
    };
    for m in word_pattern().find_iter(caption) {
        let gap = &caption[last_end..m.start()];
        if !gap.chars().all(char::is_whitespace) {
            close(&mut current);
        }
        last_end = m.end();
        if lexicon.contains(m.as_str()) {
            close(&mut current);
            continue;
        }
        current = match current {
            Some((start, _, words)) => Some((start, m.end(), words + 1)),
            None => Some((m.start(), m.end(), 1)),
        };
    }
    close(&mut current);
    spans
}

/// Drops phrases whose head word is in the blocklist (case-insensitive).
pub fn filter_abstract<S: AsRef<str>>(
    phrases: Vec<PhraseSpan>,
    blocklist: &[S],
) -> Vec<PhraseSpan> {
    let block: HashSet<String> = blocklist
        .iter()
        .map(|w| w.as_ref().to_lowercase())
        .collect();
    phrases
        .into_iter()
        .filter(|p| !block.contains(&p.head()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(caption: &str) -> Vec<(String, PhraseKind)> {
        extract_noun_phrases(caption, Lexicon::bundled())
            .into_iter()
            .map(|p| (p.text, p.kind))
            .collect()
    }

    #[test]
    fn soldier_example() {
        assert_eq!(
            texts("a soldier in a military-style uniform"),
            vec![
                ("soldier".to_string(), PhraseKind::CategoryName),
                (
                    "military-style uniform".to_string(),
                    PhraseKind::CategoryName
                ),
            ]
        );
    }

    #[test]
    fn long_span_is_descriptive() {
        let p = texts("A man holding a bright red umbrella.");
        assert_eq!(
            p[1],
            (
                "bright red umbrella".to_string(),
                PhraseKind::DescriptivePhrase
            )
        );
    }

    #[test]
    fn offsets_slice_the_caption() {
        let c = "Two dogs, a cat and the old wooden fence";
        for p in extract_noun_phrases(c, Lexicon::bundled()) {
            assert_eq!(&c[p.start..p.end], p.text);
        }
        assert_eq!(
            texts(c).into_iter().map(|t| t.0).collect::<Vec<_>>(),
            ["dogs", "cat", "old wooden fence"]
        );
    }

    #[test]
    fn punctuation_breaks_spans() {
        assert_eq!(texts("apples, pears").len(), 2);
    }

    #[test]
    fn the_image_yields_image_then_filter_drops_it() {
        let p = extract_noun_phrases("the image", Lexicon::bundled());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].text, "image");
        assert!(filter_abstract(p, DEFAULT_ABSTRACT_NOUNS).is_empty());
    }

    #[test]
    fn only_closed_class_words_give_nothing() {
        assert!(texts("it is in there with them").is_empty());
        assert!(texts("").is_empty());
    }

    #[test]
    fn filter_uses_head_word() {
        let p = extract_noun_phrases("the image of a soldier", Lexicon::bundled());
        let kept = filter_abstract(p.clone(), &["image"]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].text, "soldier");
        let none: [&str; 0] = [];
        assert_eq!(filter_abstract(p, &none).len(), 2);
        assert!(filter_abstract(Vec::new(), DEFAULT_ABSTRACT_NOUNS).is_empty());
    }

    #[test]
    fn bundled_lexicon_size() {
        let lex = Lexicon::bundled();
        assert!(lex.len() >= 600);
        assert!(lex.contains("The"));
        assert!(!lex.contains("soldier"));
    }
}
