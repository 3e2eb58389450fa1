use groundkit_engine::phrases::*;
use groundkit_engine::stages::{check_referring, is_one_sentence};
use proptest::prelude::*;

const VOCAB: &[&str] = &[
    "a",
    "the",
    "dog",
    "red",
    "umbrella",
    "in",
    "with",
    "military-style",
    "uniform",
    "holding",
    "sits",
    "on",
    "bench",
    "wooden",
    "and",
    "two",
    "image",
    "background",
    "café",
    "man's",
];
const PUNCT: &[&str] = &[" ", " ", " ", ", ", ". ", "; ", " - "];

fn caption() -> impl Strategy<Value = String> {
    prop::collection::vec((0..VOCAB.len(), 0..PUNCT.len()), 0..25).prop_map(|parts| {
        parts
            .into_iter()
            .map(|(w, p)| format!("{}{}", VOCAB[w], PUNCT[p]))
            .collect()
    })
}

proptest! {
    #[test]
    fn spans_are_ordered_slices_of_open_class_words(c in caption()) {
        let lex = Lexicon::bundled();
        let spans = extract_noun_phrases(&c, lex);
        let mut prev_end = 0;
        for s in &spans {
            prop_assert!(s.start >= prev_end && s.start < s.end);
            prop_assert_eq!(&c[s.start..s.end], s.text.as_str());
            prev_end = s.end;
            prop_assert!(s.text.split_whitespace().all(|w| !lex.contains(w)));
            prop_assert_eq!(s.kind, PhraseKind::for_word_count(s.word_count()));
            prop_assert!(!s.text.contains(','));
        }
    }

    #[test]
    fn every_open_class_word_lands_in_a_span(c in caption()) {
        let lex = Lexicon::bundled();
        let spans = extract_noun_phrases(&c, lex);
        let covered: usize = spans.iter().map(|s| s.word_count()).sum();
        let open = c
            .split(|ch: char| ch.is_whitespace() || ",.;".contains(ch))
            .filter(|w| !w.is_empty() && *w != "-" && !lex.contains(w))
            .count();
        prop_assert_eq!(covered, open);
    }

    #[test]
    fn filter_is_a_subsequence_without_blocked_heads(c in caption()) {
        let spans = extract_noun_phrases(&c, Lexicon::bundled());
        let kept = filter_abstract(spans.clone(), DEFAULT_ABSTRACT_NOUNS);
        let mut it = spans.iter();
        for k in &kept {
            prop_assert!(it.any(|s| s == k));
            prop_assert!(!DEFAULT_ABSTRACT_NOUNS.contains(&k.head().as_str()));
        }
        let empty: [&str; 0] = [];
        prop_assert_eq!(filter_abstract(spans.clone(), &empty), spans);
    }

    #[test]
    fn referring_check_is_word_window_and_no_comma(words in prop::collection::vec("[a-z]{1,6}", 0..14), comma in any::<bool>()) {
        let mut text = words.join(" ");
        if comma && !text.is_empty() {
            text.insert(text.len() / 2, ',');
        }
        let expected = !text.contains(',') && (6..=9).contains(&text.split_whitespace().count());
        prop_assert_eq!(check_referring(&text).is_ok(), expected);
    }

    #[test]
    fn joined_sentences_are_never_one_sentence(a in "[A-Z][a-z ]{1,20}[a-z]", b in "[A-Z][a-z ]{1,20}[a-z]") {
        let single = format!("{a}.");
        prop_assert!(is_one_sentence(&single));
        let joined = format!("{a}. {b}.");
        prop_assert!(!is_one_sentence(&joined));
    }
}
