use groundkit::pathology::*;
use groundkit::BBox;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bx(c: [f64; 4]) -> BBox {
    BBox::try_from(c).unwrap()
}

/// Reference scan: every window of `min_run` boxes whose deltas agree within
/// the tolerance on each coordinate.
fn any_window_repeats(boxes: &[BBox], min_run: usize, tol: f64) -> bool {
    boxes.windows(min_run).any(|w| {
        let d: Vec<[f64; 4]> = w
            .windows(2)
            .map(|p| {
                let (a, b) = (p[0].to_array(), p[1].to_array());
                [b[0] - a[0], b[1] - a[1], b[2] - a[2], b[3] - a[3]]
            })
            .collect();
        (0..4).all(|k| {
            let lo = d.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min);
            let hi = d.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo <= tol
        })
    })
}

#[test]
fn random_boxes_have_no_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let boxes: Vec<BBox> = (0..500)
        .map(|_| {
            let x = rng.random_range(0.0..900.0);
            let y = rng.random_range(0.0..900.0);
            bx([
                x,
                y,
                x + rng.random_range(5.0..100.0),
                y + rng.random_range(5.0..100.0),
            ])
        })
        .collect();
    assert!(!any_window_repeats(&boxes, 3, 1.0));
    let runs = detect_arith_repetition(&boxes, &RepetitionConfig::default()).unwrap();
    assert!(runs.is_empty());
}

#[test]
fn runs_agree_with_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..2000 {
        let n = rng.random_range(0..10);
        let mut boxes = Vec::new();
        let mut cur = [10.0, 10.0, 20.0, 20.0];
        for _ in 0..n {
            let step = rng.random_range(0..3) as f64;
            cur = [cur[0] + step, cur[1], cur[2] + step, cur[3]];
            boxes.push(bx(cur));
        }
        let runs = detect_arith_repetition(&boxes, &RepetitionConfig::default()).unwrap();
        let cfg = RepetitionConfig {
            min_run: 3,
            tolerance: 0.5,
        };
        let exact = detect_arith_repetition(&boxes, &cfg).unwrap();
        assert_eq!(!runs.is_empty(), any_window_repeats(&boxes, 3, 1.0));
        assert_eq!(!exact.is_empty(), any_window_repeats(&boxes, 3, 0.5));
    }
}

#[test]
fn survival_is_monotone() {
    let mut prev = 0.0;
    for i in 0..=100 {
        let s = box_survival(&BoxTokenErrorModel::with_p(i as f64 / 100.0).unwrap());
        assert!(s >= prev);
        prev = s;
    }
    let mut prev = 1.0;
    for t in 1..30 {
        let s = box_survival(&BoxTokenErrorModel::new(0.95, t).unwrap());
        assert!(s <= prev);
        prev = s;
    }
}

fn int_boxes() -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec((0i32..4, 0i32..4, 0i32..2), 0..14).prop_map(|steps| {
        let mut cur = [100.0, 100.0, 150.0, 150.0];
        steps
            .into_iter()
            .map(|(a, b, c)| {
                cur = [
                    cur[0] + a as f64,
                    cur[1] + b as f64,
                    cur[2] + a as f64 + c as f64,
                    cur[3] + b as f64,
                ];
                bx(cur)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn translation_leaves_runs_unchanged(boxes in int_boxes(), dx in -90i32..90, dy in -90i32..90) {
        let cfg = RepetitionConfig::default();
        let moved: Vec<BBox> = boxes.iter().map(|b| b.translate(dx as f64, dy as f64)).collect();
        let a = detect_arith_repetition(&boxes, &cfg).unwrap();
        let b = detect_arith_repetition(&moved, &cfg).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.start, x.length), (y.start, y.length));
            for k in 0..4 {
                prop_assert!((x.delta[k] - y.delta[k]).abs() < 1e-9);
            }
        }
    }

    // With integer coordinates and a tolerance below one pixel runs are
    // exact-step blocks, so embedding a sequence can only extend them.
    #[test]
    fn supersequence_keeps_runs(boxes in int_boxes(), pre in int_boxes(), post in int_boxes()) {
        let cfg = RepetitionConfig { min_run: 3, tolerance: 0.5 };
        let mut sup = pre.clone();
        sup.extend(boxes.iter().copied());
        sup.extend(post.iter().copied());
        let inner = detect_arith_repetition(&boxes, &cfg).unwrap();
        let outer = detect_arith_repetition(&sup, &cfg).unwrap();
        for r in inner {
            let (s, e) = (r.start + pre.len(), r.end() + pre.len());
            prop_assert!(
                outer.iter().any(|o| o.start <= s && o.end() >= e),
                "run {:?} lost in supersequence", r
            );
        }
    }
}
