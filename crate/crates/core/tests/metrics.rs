use std::collections::BTreeMap;

use groundkit::geometry::iou;
use groundkit::metrics::*;
use groundkit::BBox;
use proptest::prelude::*;

fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::from_xywh(x, y, w, h).unwrap()
}

fn cats(n: u64) -> Vec<Category> {
    (0..n)
        .map(|id| Category {
            id,
            name: format!("c{id}"),
            frequency: None,
        })
        .collect()
}

fn gto(b: BBox, category: CategoryId) -> GtObject {
    GtObject {
        bbox: b,
        category,
        ignore: false,
    }
}

fn det(b: BBox, category: CategoryId, score: Option<f64>) -> Detection {
    Detection {
        bbox: b,
        category,
        score,
    }
}

/// Three images; TP/FP/FN counted by hand in the comments.
fn seven_three_three() -> (GroundTruthSet, DetectionSet) {
    let grid = |i: usize| bx(100.0 * i as f64, 0.0, 50.0, 50.0);
    // Image 1: gts 0..4 of class 0; dets hit 0,1,2 exactly (3 TP), miss 3 (1 FN),
    // one far box (1 FP).
    let g1 = (0..4).map(|i| gto(grid(i), 0)).collect();
    let mut d1: Vec<Detection> = (0..3).map(|i| det(grid(i), 0, None)).collect();
    d1.push(det(bx(900.0, 900.0, 10.0, 10.0), 0, None));
    // Image 2: gts 0..3 class 1; dets hit 0,1 (2 TP), box 2 with wrong class
    // (1 FP, 1 FN).
    let g2 = (0..3).map(|i| gto(grid(i), 1)).collect();
    let d2 = vec![
        det(grid(0), 1, None),
        det(grid(1), 1, None),
        det(grid(2), 0, None),
    ];
    // Image 3: gts 0..3 class 0; exact hits on 0 and 1 (2 TP), a duplicate of
    // 0 (1 FP), nothing on 2 (1 FN).
    let g3 = (0..3).map(|i| gto(grid(i), 0)).collect();
    let d3 = vec![
        det(grid(0), 0, None),
        det(grid(1), 0, None),
        det(grid(0), 0, None),
    ];
    let gt = GroundTruthSet::new(cats(2), BTreeMap::from([(1, g1), (2, g2), (3, g3)])).unwrap();
    let d = DetectionSet::new(BTreeMap::from([(1, d1), (2, d2), (3, d3)])).unwrap();
    (gt, d)
}

#[test]
fn hand_counted_fixture() {
    let (gt, d) = seven_three_three();
    let pr = precision_recall_at(&d, &gt, 0.5, Aggregation::Global);
    assert_eq!((pr.tp, pr.fp, pr.fn_), (7, 3, 3));
    assert!((pr.precision - 0.7).abs() < 1e-9);
    assert!((pr.recall - 0.7).abs() < 1e-9);
}

#[test]
fn perfect_and_empty_predictions() {
    let (gt, _) = seven_three_three();
    let perfect = precision_recall_at(&gt.as_detections(), &gt, 0.5, Aggregation::Global);
    assert_eq!((perfect.precision, perfect.recall), (1.0, 1.0));
    let empty = DetectionSet::default();
    let none = precision_recall_at(&empty, &gt, 0.5, Aggregation::Global);
    assert_eq!((none.precision, none.recall), (0.0, 0.0));
}

/// Best det->gt map by brute force: most matches, then largest IoU sum.
fn exhaustive_labels(dets: &[Detection], gts: &[GtObject], t: f64) -> Vec<Option<usize>> {
    fn rec(
        k: usize,
        dets: &[Detection],
        gts: &[GtObject],
        t: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut (usize, f64, Vec<Option<usize>>),
    ) {
        if k == dets.len() {
            let n = cur.iter().flatten().count();
            let s: f64 = cur
                .iter()
                .enumerate()
                .filter_map(|(d, g)| g.map(|g| iou(&dets[d].bbox, &gts[g].bbox)))
                .sum();
            if n > best.0 || (n == best.0 && s > best.1) {
                *best = (n, s, cur.clone());
            }
            return;
        }
        cur.push(None);
        rec(k + 1, dets, gts, t, used, cur, best);
        cur.pop();
        for g in 0..gts.len() {
            if !used[g]
                && gts[g].category == dets[k].category
                && iou(&dets[k].bbox, &gts[g].bbox) >= t
            {
                used[g] = true;
                cur.push(Some(g));
                rec(k + 1, dets, gts, t, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut best = (0, -1.0, vec![None; dets.len()]);
    rec(
        0,
        dets,
        gts,
        t,
        &mut vec![false; gts.len()],
        &mut Vec::new(),
        &mut best,
    );
    best.2
}

#[test]
fn greedy_matches_exhaustive_oracle_on_constructed_case() {
    let gts = [
        gto(bx(0.0, 0.0, 10.0, 10.0), 0),
        gto(bx(30.0, 0.0, 10.0, 10.0), 0),
    ];
    let dets = [
        det(bx(0.0, 0.0, 10.0, 10.0), 0, Some(0.9)),
        det(bx(31.0, 0.0, 10.0, 10.0), 0, Some(0.8)),
        det(bx(2.0, 0.0, 10.0, 10.0), 0, Some(0.7)),
    ];
    let m = match_detections(&dets, &gts, 0.5);
    let oracle = exhaustive_labels(&dets, &gts, 0.5);
    let labels: Vec<Option<usize>> = m
        .labels
        .iter()
        .map(|l| match l {
            DetLabel::Tp(g) => Some(*g),
            _ => None,
        })
        .collect();
    assert_eq!(labels, oracle);
    assert_eq!(labels, vec![Some(0), Some(1), None]);
}

/// Straightforward AP reference: interpolated precision at recall r is the
/// best precision among PR points with recall >= r.
fn reference_ap(outcomes: &[bool], positives: usize) -> f64 {
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for &o in outcomes {
        if o {
            tp += 1
        } else {
            fp += 1
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
    }
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            points
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

#[test]
fn interpolation_matches_reference() {
    let cases: [(&[bool], usize); 5] = [
        (&[true, false], 1),
        (&[false, true, true, false, true], 4),
        (&[true, true, false, false, false, true], 5),
        (&[false, false, false], 2),
        (&[true, false, true, false, true, false, true], 4),
    ];
    for (o, n) in cases {
        assert!(
            (interpolated_ap(o, n) - reference_ap(o, n)).abs() < 1e-9,
            "{o:?}"
        );
    }
    assert_eq!(interpolated_ap(&[true, false], 1), 1.0);
}

fn two_class_toy() -> (GroundTruthSet, DetectionSet) {
    let gt = GroundTruthSet::new(
        cats(2),
        BTreeMap::from([
            (
                1,
                vec![
                    gto(bx(0.0, 0.0, 20.0, 20.0), 0),
                    gto(bx(50.0, 50.0, 20.0, 20.0), 1),
                ],
            ),
            (
                2,
                vec![
                    gto(bx(10.0, 10.0, 30.0, 30.0), 0),
                    gto(bx(60.0, 0.0, 20.0, 40.0), 0),
                ],
            ),
        ]),
    )
    .unwrap();
    let d = DetectionSet::new(BTreeMap::from([
        (
            1,
            vec![
                det(bx(1.0, 1.0, 20.0, 20.0), 0, Some(0.9)),
                det(bx(50.0, 52.0, 20.0, 20.0), 1, Some(0.6)),
                det(bx(0.0, 40.0, 20.0, 20.0), 1, Some(0.8)),
            ],
        ),
        (
            2,
            vec![
                det(bx(12.0, 10.0, 30.0, 30.0), 0, Some(0.7)),
                det(bx(200.0, 0.0, 20.0, 40.0), 0, Some(0.95)),
                det(bx(62.0, 3.0, 20.0, 40.0), 0, Some(0.3)),
            ],
        ),
    ]))
    .unwrap();
    (gt, d)
}

/// Restricts both sets to one class.
fn only_class(
    gt: &GroundTruthSet,
    d: &DetectionSet,
    c: CategoryId,
) -> (GroundTruthSet, DetectionSet) {
    let g = gt
        .images()
        .iter()
        .map(|(&id, v)| (id, v.iter().filter(|o| o.category == c).copied().collect()))
        .collect();
    let dd = d
        .images()
        .iter()
        .map(|(&id, v)| (id, v.iter().filter(|o| o.category == c).copied().collect()))
        .collect();
    (
        GroundTruthSet::new(gt.categories().to_vec(), g).unwrap(),
        DetectionSet::new(dd).unwrap(),
    )
}

#[test]
fn map_is_mean_of_independent_class_aps() {
    let (gt, d) = two_class_toy();
    let cfg = ApConfig::default();
    let report = average_precision(&d, &gt, &cfg).unwrap();
    let per: Vec<f64> = (0..2)
        .map(|c| {
            let (g, dd) = only_class(&gt, &d, c);
            average_precision(&dd, &g, &cfg).unwrap().per_class[&c]
        })
        .collect();
    assert!((report.map - (per[0] + per[1]) / 2.0).abs() < 1e-9);
    assert!(report.map > 0.0 && report.map < 1.0);
}

#[test]
fn class_ap_at_half_iou_matches_hand_curve() {
    let (gt, d) = two_class_toy();
    let cfg = ApConfig {
        iou_thresholds: vec![0.5],
        max_dets: None,
    };
    let r = average_precision(&d, &gt, &cfg).unwrap();
    // Class 0 by confidence: 0.95 FP, 0.9 TP, 0.7 TP, 0.3 TP over 3 positives.
    let expected0 = reference_ap(&[false, true, true, true], 3);
    assert!((r.per_class[&0] - expected0).abs() < 1e-9);
    // Class 1: 0.8 FP, 0.6 TP over 1 positive.
    assert!((r.per_class[&1] - 0.5).abs() < 1e-9);
}

#[test]
fn ground_truth_against_itself_scores_one() {
    let (gt, _) = two_class_toy();
    let r = average_precision(&gt.as_detections(), &gt, &ApConfig::default()).unwrap();
    assert_eq!(r.map, 1.0);
    let (gt, _) = seven_three_three();
    let r = average_precision(&gt.as_detections(), &gt, &ApConfig::default()).unwrap();
    assert_eq!(r.map, 1.0);
}

#[test]
fn random_tag_partition_splits_class_table() {
    let per_class: BTreeMap<CategoryId, f64> = (0..12)
        .map(|c| (c, ((c * 37) % 11) as f64 / 10.0))
        .collect();
    let tags = [Frequency::Rare, Frequency::Common, Frequency::Frequent];
    let mut c = cats(12);
    for (i, cat) in c.iter_mut().enumerate() {
        cat.frequency = Some(tags[(i * 7 + 3) % 3]);
    }
    let f = frequency_ap(&per_class, &c);
    for (tag, got) in tags.iter().zip([f.rare, f.common, f.frequent]) {
        let vals: Vec<f64> = c
            .iter()
            .filter(|x| x.frequency == Some(*tag))
            .map(|x| per_class[&x.id])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((got.unwrap() - mean).abs() < 1e-12);
    }
}

#[test]
fn referring_fixture_of_ten() {
    let g = bx(0.0, 0.0, 100.0, 100.0);
    let mut pairs: Vec<(Option<BBox>, BBox)> = (0..8)
        .map(|i| (Some(bx(i as f64, 0.0, 100.0, 100.0)), g))
        .collect();
    // IoU exactly 1/2 and a missing answer.
    pairs.push((Some(bx(0.0, 0.0, 100.0, 50.0)), g));
    pairs.push((None, g));
    let acc = referring_accuracy(&pairs, &ReferringConfig::default()).unwrap();
    assert!((acc - 0.8).abs() < 1e-12);
}

#[test]
fn all_frequent_bucket_equals_map() {
    let (gt, d) = two_class_toy();
    let mut c = gt.categories().to_vec();
    for x in &mut c {
        x.frequency = Some(Frequency::Frequent);
    }
    let gt = GroundTruthSet::new(c, gt.images().clone()).unwrap();
    let report = evaluate(&d, &gt, &EvalConfig::default());
    let f = report.frequency.unwrap();
    assert_eq!(f.frequent, Some(report.ap.unwrap().map));
    assert_eq!((f.rare, f.common), (None, None));
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..80.0f64, 0.0..80.0f64, 1.0..30.0f64, 1.0..30.0f64).prop_map(|(x, y, w, h)| bx(x, y, w, h))
}

fn arb_dataset(scored: bool) -> impl Strategy<Value = (GroundTruthSet, DetectionSet)> {
    let image = (
        prop::collection::vec((arb_box(), 0u64..2), 0..5),
        prop::collection::vec((arb_box(), 0u64..2, 0.0..1.0f64), 0..6),
    );
    prop::collection::vec(image, 1..4).prop_map(move |imgs| {
        let mut g = BTreeMap::new();
        let mut d = BTreeMap::new();
        for (i, (gs, ds)) in imgs.into_iter().enumerate() {
            // Detections are perturbed copies of ground truth half the time.
            let dets: Vec<Detection> = ds
                .iter()
                .enumerate()
                .map(|(k, &(b, c, s))| {
                    let bbox = if k % 2 == 0 && k / 2 < gs.len() {
                        gs[k / 2].0.translate(s * 3.0, 0.0)
                    } else {
                        b
                    };
                    det(bbox, c, scored.then_some(s))
                })
                .collect();
            g.insert(i as u64, gs.iter().map(|&(b, c)| gto(b, c)).collect());
            d.insert(i as u64, dets);
        }
        (
            GroundTruthSet::new(cats(2), g).unwrap(),
            DetectionSet::new(d).unwrap(),
        )
    })
}

proptest! {
    #[test]
    fn duplicate_false_positive_never_raises_ap((gt, d) in arb_dataset(true)) {
        let cfg = ApConfig::default();
        let base = average_precision(&d, &gt, &cfg).unwrap();
        let mut images = d.images().clone();
        let mut found = false;
        'outer: for (id, dets) in images.iter_mut() {
            let m = match_detections(dets, gt.objects(*id), 0.5);
            for (i, l) in m.labels.iter().enumerate() {
                if matches!(l, DetLabel::Tp(_)) {
                    let copy = dets[i];
                    dets.push(copy);
                    // A copy that lands on a second unmatched object is a real hit.
                    let after = match_detections(dets, gt.objects(*id), 0.5);
                    found = !matches!(after.labels.last(), Some(DetLabel::Tp(_)));
                    break 'outer;
                }
            }
        }
        prop_assume!(found);
        let dup = average_precision(&DetectionSet::new(images).unwrap(), &gt, &cfg).unwrap();
        for (c, ap) in &dup.per_class {
            prop_assert!(*ap <= base.per_class[c] + 1e-12);
        }
    }

    #[test]
    fn image_relabeling_leaves_metrics_unchanged((gt, d) in arb_dataset(true)) {
        let n = gt.images().len() as u64;
        let remap = |id: u64| n - 1 - id + 100;
        let g2 = gt.images().iter().map(|(&k, v)| (remap(k), v.clone())).collect();
        let d2 = d.images().iter().map(|(&k, v)| (remap(k), v.clone())).collect();
        let gt2 = GroundTruthSet::new(gt.categories().to_vec(), g2).unwrap();
        let d2 = DetectionSet::new(d2).unwrap();
        let cfg = EvalConfig::default();
        let a = evaluate(&d, &gt, &cfg);
        let b = evaluate(&d2, &gt2, &cfg);
        prop_assert_eq!(&a.pr, &b.pr);
        prop_assert_eq!(a.ap.is_some(), b.ap.is_some());
        if let (Some(aa), Some(bb)) = (a.ap, b.ap) {
            for (c, v) in &aa.per_class {
                prop_assert!((v - bb.per_class[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_confidences_reproduce_unscored_counts((gt, d) in arb_dataset(false)) {
        let scored: BTreeMap<_, _> = d
            .images()
            .iter()
            .map(|(&k, v)| (k, v.iter().map(|x| det(x.bbox, x.category, Some(0.5))).collect()))
            .collect();
        let scored = DetectionSet::new(scored).unwrap();
        for agg in [Aggregation::Global, Aggregation::PerImage] {
            prop_assert_eq!(
                precision_recall_at(&d, &gt, 0.5, agg),
                precision_recall_at(&scored, &gt, 0.5, agg)
            );
        }
    }

    #[test]
    fn rates_stay_in_unit_interval((gt, d) in arb_dataset(true)) {
        let r = evaluate(&d, &gt, &EvalConfig::default());
        for p in &r.pr {
            prop_assert!((0.0..=1.0).contains(&p.precision));
            prop_assert!((0.0..=1.0).contains(&p.recall));
        }
        if let Some(ap) = r.ap {
            prop_assert!((0.0..=1.0).contains(&ap.map));
        }
    }

    #[test]
    fn ground_truth_self_evaluation_is_perfect((gt, _) in arb_dataset(true)) {
        prop_assume!(gt.images().values().any(|v| !v.is_empty()));
        let r = average_precision(&gt.as_detections(), &gt, &ApConfig::default()).unwrap();
        prop_assert_eq!(r.map, 1.0);
    }

    #[test]
    fn semantic_iou_is_symmetric_and_bounded(a in "[a-z ,.]{0,30}", b in "[a-z ,.]{0,30}") {
        let x = semantic_iou(&a, &b);
        prop_assert_eq!(x, semantic_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        let e = HashedBagOfWords::default();
        let s = semantic_similarity(&a, &b, &e).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(semantic_similarity(&a, &a, &e).unwrap(), 1.0);
    }
}
