use groundkit::grammar::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHABET: &[char] = &[
    'a', 'b', 'c', ' ', ' ', '.', ',', '\n', '<', '>', '/', 'g', 'o', 'é', '1',
];

fn random_text(rng: &mut impl Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}

/// Random valid answer: alternating text and spans with indices below `n`.
fn random_answer(rng: &mut impl Rng, n: usize) -> GroundedAnswer {
    loop {
        let mut segs = Vec::new();
        for _ in 0..rng.random_range(0..6) {
            if rng.random_bool(0.5) {
                segs.push(Segment::Text(random_text(rng, 12)));
            } else {
                let mut indices: Vec<usize> = (0..rng.random_range(0..4))
                    .map(|_| rng.random_range(0..n))
                    .collect();
                let mut seen = std::collections::HashSet::new();
                indices.retain(|i| seen.insert(*i));
                segs.push(Segment::Span(GroundedSpan {
                    phrase: random_text(rng, 10),
                    indices,
                }));
            }
        }
        // Random text can spell a marker; such candidates are invalid answers.
        if let Ok(a) = GroundedAnswer::new(segs) {
            return a;
        }
    }
}

#[test]
fn ten_thousand_answers_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=MAX_OBJECTS);
        let a = random_answer(&mut rng, n);
        let text = serialize_grounded_answer(&a);
        for mode in [ParseMode::Strict, ParseMode::Lenient] {
            let parsed =
                parse_grounded_answer(&text, n, mode).unwrap_or_else(|e| panic!("{text:?}: {e}"));
            assert_eq!(parsed.answer, a, "{text:?}");
        }
    }
}

#[test]
fn lenient_parser_is_total_on_random_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pieces: [&[u8]; 8] = [
        b"<g>", b"</g>", b"<o>", b"</o>", b"<obj", b"7>", b"<obj12>", b" ",
    ];
    for i in 0..10_000 {
        let len = rng.random_range(0..64);
        let mut bytes = Vec::with_capacity(len * 2);
        for _ in 0..len {
            if i % 2 == 0 && rng.random_bool(0.4) {
                bytes.extend_from_slice(pieces[rng.random_range(0..pieces.len())]);
            } else {
                bytes.push(rng.random());
            }
        }
        let text = String::from_utf8_lossy(&bytes);
        let n = rng.random_range(0..20);
        let parsed = parse_grounded_answer(&text, n, ParseMode::Lenient).unwrap();
        assert!(parsed.answer.validate_indices(n).is_ok());
        for d in &parsed.diagnostics {
            assert!(d.position <= text.len());
        }
    }
}

#[test]
fn detections_follow_span_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let boxes: Vec<groundkit::BBox> = (0..10)
        .map(|i| groundkit::BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0).unwrap())
        .collect();
    for _ in 0..500 {
        let a = random_answer(&mut rng, 10);
        let (dets, diags) = answer_to_detections(&a, &boxes, ParseMode::Strict).unwrap();
        assert!(diags.is_empty());
        let expected: Vec<(String, usize)> = a
            .spans()
            .flat_map(|s| s.indices.iter().map(move |&k| (s.phrase.clone(), k)))
            .collect();
        let got: Vec<(String, usize)> = dets.iter().map(|d| (d.label.clone(), d.index)).collect();
        assert_eq!(got, expected);
        for d in &dets {
            assert_eq!(d.bbox, boxes[d.index]);
        }
    }
}
