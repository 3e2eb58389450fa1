use groundkit::metrics::{precision_recall_at, Aggregation};
use groundkit::simulator::*;
use groundkit::Extent;

fn scene(frame: f64, n: usize) -> SceneSpec {
    SceneSpec {
        frame: Extent::square(frame).unwrap(),
        objects: CountDist::Fixed { n },
        sizes: SizeDist::Uniform {
            min: 20.0,
            max: 200.0,
        },
        classes: 3,
    }
}

fn within_three_sigma(observed: f64, p: f64, n: usize) -> bool {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    (observed - p).abs() <= 3.0 * sigma
}

#[test]
fn emission_fraction_tracks_closed_form() {
    let s = scene(1000.0, 10);
    let gt = generate_dataset(&s, 1000, 21).unwrap();
    for p in [0.9, 0.99] {
        let spec = RegressionModelSpec {
            p,
            ..RegressionModelSpec::default()
        };
        let out = simulate_regression(&gt, &s.frame, &spec, 21).unwrap();
        assert_eq!(out.objects, 10_000);
        let expected = spec.survival();
        assert!(
            within_three_sigma(out.emission_fraction(), expected, out.objects),
            "p={p}: {} vs {expected}",
            out.emission_fraction()
        );
    }
}

#[test]
fn retrieval_recall_converges() {
    let s = scene(1000.0, 10);
    let gt = generate_dataset(&s, 1000, 4).unwrap();
    let spec = ProposalModelSpec {
        recall_target: 0.9,
        accuracy: 0.95,
        ..ProposalModelSpec::default()
    };
    let d = simulate_retrieval(&gt, &s, &spec, 4).unwrap();
    let r = precision_recall_at(&d, &gt, 0.5, Aggregation::Global).recall;
    assert!((r - 0.855).abs() < 0.01, "{r}");
    assert!(within_three_sigma(r, 0.855, 10_000));
}

#[test]
fn quantization_degrades_with_frame_size() {
    let sizes = SizeDist::Fixed { w: 20.0, h: 20.0 };
    let rows =
        quantization_sweep(&[1000.0, 2000.0, 4000.0, 8000.0], 1000, &sizes, 10_000, 8).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].mean_iou <= w[0].mean_iou);
    }
    assert!(rows[0].mean_iou >= 0.95, "{}", rows[0].mean_iou);
    assert!(rows[3].mean_iou < rows[0].mean_iou);
}

#[test]
fn regression_iou_degrades_on_large_frames() {
    let spec = RegressionModelSpec {
        p: 1.0,
        ..RegressionModelSpec::default()
    };
    let mean_iou = |frame: f64| {
        let mut s = scene(frame, 10);
        s.sizes = SizeDist::Fixed { w: 20.0, h: 20.0 };
        let gt = generate_dataset(&s, 100, 6).unwrap();
        let out = simulate_regression(&gt, &s.frame, &spec, 6).unwrap();
        let mut total = 0.0;
        for (id, objs) in gt.images() {
            for (o, d) in objs.iter().zip(out.detections.detections(*id)) {
                total += groundkit::geometry::iou(&o.bbox, &d.bbox);
            }
        }
        total / out.objects as f64
    };
    assert!(mean_iou(4000.0) < mean_iou(1000.0));
}

#[test]
fn crossover_matches_closed_forms() {
    let s = scene(1000.0, 10);
    let retrieval = ProposalModelSpec {
        recall_target: 0.95,
        accuracy: 0.95,
        ..ProposalModelSpec::default()
    };
    let regression = RegressionModelSpec {
        p: 0.97,
        ..RegressionModelSpec::default()
    };
    let r = compare_pipelines(&s, &retrieval, &regression, 1000, 2024).unwrap();
    assert_eq!(r.objects, 10_000);
    assert!((r.retrieval.expected_recall - 0.9025).abs() < 1e-12);
    assert!((r.regression.expected_recall - 0.97f64.powi(9)).abs() < 1e-12);
    assert!(
        (r.retrieval.recall - 0.9025).abs() < 0.01,
        "{}",
        r.retrieval.recall
    );
    assert!(
        (r.regression.recall - 0.7602).abs() < 0.01,
        "{}",
        r.regression.recall
    );
    assert!(r.retrieval_wins);
    assert!(r.retrieval.recall > r.regression.recall);
}

#[test]
fn perfect_regression_beats_weak_retrieval() {
    let s = scene(1000.0, 5);
    let retrieval = ProposalModelSpec {
        recall_target: 0.5,
        accuracy: 1.0,
        ..ProposalModelSpec::default()
    };
    let regression = RegressionModelSpec {
        p: 1.0,
        bins: None,
        ..RegressionModelSpec::default()
    };
    let r = compare_pipelines(&s, &retrieval, &regression, 100, 1).unwrap();
    assert!(!r.retrieval_wins);
    assert_eq!(r.regression.recall, 1.0);
    assert!(r.retrieval.recall < 0.6);
}

#[test]
fn perfect_oracles_give_identical_reports() {
    let s = scene(1000.0, 5);
    let retrieval = ProposalModelSpec {
        recall_target: 1.0,
        accuracy: 1.0,
        jitter: 0.0,
        ..ProposalModelSpec::default()
    };
    let regression = RegressionModelSpec {
        p: 1.0,
        bins: None,
        ..RegressionModelSpec::default()
    };
    let r = compare_pipelines(&s, &retrieval, &regression, 50, 1).unwrap();
    assert_eq!(r.retrieval.recall, 1.0);
    assert_eq!(r.retrieval.precision, r.regression.precision);
    assert_eq!(r.retrieval.map, r.regression.map);
}

#[test]
fn outputs_are_bitwise_reproducible() {
    let s = scene(1000.0, 6);
    let run = || {
        compare_pipelines(
            &s,
            &ProposalModelSpec::default(),
            &RegressionModelSpec::default(),
            40,
            77,
        )
        .unwrap()
    };
    assert_eq!(run(), run());
    let sizes = SizeDist::Fixed { w: 20.0, h: 20.0 };
    assert_eq!(
        quantization_sweep(&[1000.0, 3000.0], 1000, &sizes, 1000, 5).unwrap(),
        quantization_sweep(&[1000.0, 3000.0], 1000, &sizes, 1000, 5).unwrap()
    );
}
