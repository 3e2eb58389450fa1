use groundkit::io::*;
use groundkit::metrics::ScoreMode;
use groundkit::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_record(rng: &mut impl Rng) -> PredictionRecord {
    let x = rng.random_range(0.0..500.0);
    let y = rng.random_range(0.0..500.0);
    let labelled = rng.random_bool(0.5);
    PredictionRecord {
        image_id: rng.random_range(0..50),
        category_id: (!labelled).then(|| rng.random_range(0..80)),
        label: labelled.then(|| {
            ["car", "traffic light", "a \"quoted\" name", "ü"][rng.random_range(0..4)].to_string()
        }),
        bbox: BBox::new(
            x,
            y,
            x + rng.random_range(0.0..100.0),
            y + rng.random_range(0.0..100.0),
        )
        .unwrap(),
        score: Some(rng.random_range(0.0..=1.0)),
        source: rng
            .random_bool(0.3)
            .then(|| "{class: car, rect: [1, 2, 3, 4]}".to_string()),
    }
}

#[test]
fn thousand_records_round_trip_through_a_file() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records: Vec<PredictionRecord> = (0..1000).map(|_| random_record(&mut rng)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    write_jsonl(&path, "groundkit predictions", &records).unwrap();
    assert_eq!(read_jsonl::<PredictionRecord>(&path).unwrap(), records);
    assert_eq!(read_predictions(&path, ScoreMode::Scored).unwrap(), records);
    let empty: Vec<PredictionRecord> = Vec::new();
    write_jsonl(&path, "groundkit predictions", &empty).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "# groundkit predictions\n"
    );
    assert!(read_jsonl::<PredictionRecord>(&path).unwrap().is_empty());
}

#[test]
fn unwritable_and_missing_paths_fail() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope").join("x.jsonl");
    let empty: Vec<PredictionRecord> = Vec::new();
    assert!(matches!(
        write_jsonl(&missing, "h", &empty),
        Err(IoError::File { .. })
    ));
    assert!(matches!(
        read_coco_ground_truth(&missing),
        Err(IoError::File { .. })
    ));
}

#[test]
fn bad_line_is_located() {
    let text = "# header\n{\"image_id\": 1, \"label\": \"a\", \"box\": [0, 0, 1, 1]}\n{not json}\n";
    match parse_predictions(text, ScoreMode::Unscored) {
        Err(IoError::Line { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn car_transcript_parses_in_order() {
    let text = "[\n{class: car, rect: [234, 186, 370, 283]}, \\\\\n{class: car, rect: [568, 214, 622, 283]}, \\\\\n{class: car, rect: [743, 186, 822, 300]}, \\\\\n{class: car, rect: [110, 199, 128, 240]}, \\\\\n{class: car, rect: [134, 200, 152, 240]}, \\\\\n{class: car, rect: [158, 200, 176, 240]}, \\\\\n{class: car, rect: [182, 200, 200, 240]}, \\\\\n{class: car, rect: [206, 200, 224, 240]} \\\\\n]...";
    let p = parse_response_dialect(text);
    assert_eq!(p.boxes.len(), 8);
    assert!(p.unparsed.is_empty());
    assert_eq!(p.boxes[7].bbox.to_array(), [206.0, 200.0, 224.0, 240.0]);
    assert!(p.boxes.iter().all(|b| b.class == "car"));
}
