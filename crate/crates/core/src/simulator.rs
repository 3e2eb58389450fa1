//! Seeded Monte Carlo comparisons of two ways a language model can emit
//! detections: picking indices from a proposal set, or writing quantized
//! coordinates token by token.
//!
//! Every image or trial draws from its own ChaCha stream derived from the
//! master seed, so results do not depend on thread count or scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, round_trip, BBox, Extent, GeometryError};
use crate::metrics::{
    average_precision, precision_recall_at, Aggregation, ApConfig, Category, Detection,
    DetectionSet, GroundTruthSet, GtObject, ImageId, MetricsError,
};
use crate::pathology::{box_survival, BoxTokenErrorModel, PathologyError};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("{field} must be in [0, 1], got {value}")]
    Probability { field: &'static str, value: f64 },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("a sweep needs at least 1000 trials, got {0}")]
    TooFewTrials(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pathology(#[from] PathologyError),
    #[error("csv output failed")]
    Csv(#[from] csv::Error),
}

fn check_prob(field: &'static str, value: f64) -> Result<(), SimulatorError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SimulatorError::Probability { field, value })
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimulatorError {
    SimulatorError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Generator for one purpose (`lane`) and one image or trial (`index`).
pub fn stream_rng(seed: u64, lane: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ lane.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}

const LANE_SCENE: u64 = 1;
const LANE_RETRIEVAL: u64 = 2;
const LANE_REGRESSION: u64 = 3;
const LANE_SWEEP: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CountDist {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
    Poisson { mean: f64 },
}

impl CountDist {
    fn validate(&self) -> Result<(), SimulatorError> {
        match *self {
            CountDist::Uniform { min, max } if min > max => {
                Err(invalid("objects", "min exceeds max"))
            }
            CountDist::Poisson { mean } if !(mean.is_finite() && mean > 0.0) => {
                Err(invalid("objects", "Poisson mean must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        match *self {
            CountDist::Fixed { n } => n,
            CountDist::Uniform { min, max } => rng.random_range(min..=max),
            CountDist::Poisson { mean } => Poisson::new(mean).unwrap().sample(rng) as usize,
        }
    }
}

/// Box side lengths in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SizeDist {
    Fixed {
        w: f64,
        h: f64,
    },
    /// Width and height drawn independently from `[min, max]`.
    Uniform {
        min: f64,
        max: f64,
    },
}

impl SizeDist {
    fn validate(&self, frame: &Extent) -> Result<(), SimulatorError> {
        let (lo, hi) = match *self {
            SizeDist::Fixed { w, h } => (w.min(h), w.max(h)),
            SizeDist::Uniform { min, max } => (min, max),
        };
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(invalid("sizes", "sides must be positive with min <= max"));
        }
        if hi > frame.width.min(frame.height) {
            return Err(invalid("sizes", "boxes must fit in the frame"));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        match *self {
            SizeDist::Fixed { w, h } => (w, h),
            SizeDist::Uniform { min, max } if min == max => (min, min),
            SizeDist::Uniform { min, max } => {
                (rng.random_range(min..=max), rng.random_range(min..=max))
            }
        }
    }

    /// Uniformly placed box of sampled size, fully inside the frame.
    fn place(&self, frame: &Extent, rng: &mut impl Rng) -> BBox {
        let (w, h) = self.sample(rng);
        let x = rng.random_range(0.0..=frame.width - w);
        let y = rng.random_range(0.0..=frame.height - h);
        BBox {
            xmin: x,
            ymin: y,
            xmax: x + w,
            ymax: y + h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub frame: Extent,
    pub objects: CountDist,
    pub sizes: SizeDist,
    pub classes: u32,
}

/// Square 1000 px frame, ten objects of 20 to 200 px, three classes.
impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            frame: Extent {
                width: 1000.0,
                height: 1000.0,
            },
            objects: CountDist::Fixed { n: 10 },
            sizes: SizeDist::Uniform {
                min: 20.0,
                max: 200.0,
            },
            classes: 3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        self.objects.validate()?;
        self.sizes.validate(&self.frame)?;
        if self.classes == 0 {
            return Err(invalid("classes", "at least one class is needed"));
        }
        Ok(())
    }

    fn categories(&self) -> Vec<Category> {
        (0..self.classes as u64)
            .map(|id| Category {
                id,
                name: format!("class{id}"),
                frequency: None,
            })
            .collect()
    }
}

/// One image's ground truth drawn from the scene distribution.
pub fn generate_scene(spec: &SceneSpec, rng: &mut impl Rng) -> Vec<GtObject> {
    let n = spec.objects.sample(rng);
    (0..n)
        .map(|_| GtObject {
            bbox: spec.sizes.place(&spec.frame, rng),
            category: rng.random_range(0..spec.classes as u64),
            ignore: false,
        })
        .collect()
}

/// `images` scenes; image `i` uses stream `i` of the scene lane.
pub fn generate_dataset(
    spec: &SceneSpec,
    images: usize,
    seed: u64,
) -> Result<GroundTruthSet, SimulatorError> {
    spec.validate()?;
    let scenes: BTreeMap<ImageId, Vec<GtObject>> = (0..images as u64)
        .into_par_iter()
        .map(|i| {
            (
                i,
                generate_scene(spec, &mut stream_rng(seed, LANE_SCENE, i)),
            )
        })
        .collect();
    Ok(GroundTruthSet::new(spec.categories(), scenes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalModelSpec {
    /// Probability that an object has a proposal with IoU >= 0.5.
    pub recall_target: f64,
    /// Per-coordinate pixel standard deviation of covering proposals.
    pub jitter: f64,
    pub distractors: usize,
    /// Standard deviation added to proposal scores.
    pub score_noise: f64,
    /// Probability that retrieval picks the covering proposal.
    pub accuracy: f64,
}

impl Default for ProposalModelSpec {
    fn default() -> Self {
        Self {
            recall_target: 0.95,
            jitter: 2.0,
            distractors: 10,
            score_noise: 0.05,
            accuracy: 0.95,
        }
    }
}

impl ProposalModelSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        check_prob("recall_target", self.recall_target)?;
        check_prob("accuracy", self.accuracy)?;
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(invalid("jitter", "must be non-negative"));
        }
        if !(self.score_noise.is_finite() && self.score_noise >= 0.0) {
            return Err(invalid("score_noise", "must be non-negative"));
        }
        Ok(())
    }

    /// Expected recall at IoU 0.5.
    pub fn expected_recall(&self) -> f64 {
        self.recall_target * self.accuracy
    }
}

const MAX_ATTEMPTS: usize = 100;

fn jittered_cover(gt: &BBox, frame: &Extent, sigma: f64, rng: &mut impl Rng) -> BBox {
    if sigma == 0.0 {
        return *gt;
    }
    let noise = Normal::new(0.0, sigma).unwrap();
    for _ in 0..MAX_ATTEMPTS {
        let c = gt.to_array().map(|v| v + noise.sample(rng));
        let b = BBox {
            xmin: c[0].min(c[2]),
            ymin: c[1].min(c[3]),
            xmax: c[0].max(c[2]),
            ymax: c[1].max(c[3]),
        }
        .clip_to(frame);
        if iou(&b, gt) >= 0.5 {
            return b;
        }
    }
    *gt
}

fn noisy_score(base: f64, noise: Option<&Normal<f64>>, rng: &mut impl Rng) -> f64 {
    let s = base + noise.map_or(0.0, |n| n.sample(rng));
    s.clamp(0.0, 1.0)
}

/// Retrieval over a synthetic proposal set. Each object gets a covering
/// proposal with probability `recall_target`; retrieval then answers with the
/// covering proposal with probability `accuracy` and otherwise with a
/// distractor (which never overlaps any object at IoU 0.5). Every answer
/// carries the object's class.
pub fn simulate_retrieval(
    gt: &GroundTruthSet,
    scene: &SceneSpec,
    spec: &ProposalModelSpec,
    seed: u64,
) -> Result<DetectionSet, SimulatorError> {
    scene.validate()?;
    spec.validate()?;
    let noise = (spec.score_noise > 0.0).then(|| Normal::new(0.0, spec.score_noise).unwrap());
    let images: BTreeMap<ImageId, Vec<Detection>> = gt
        .images()
        .par_iter()
        .map(|(&id, objs)| {
            let mut rng = stream_rng(seed, LANE_RETRIEVAL, id);
            let mut distractors = Vec::with_capacity(spec.distractors);
            for _ in 0..spec.distractors {
                for _ in 0..MAX_ATTEMPTS {
                    let b = scene.sizes.place(&scene.frame, &mut rng);
                    if objs.iter().all(|o| iou(&b, &o.bbox) < 0.5) {
                        distractors.push(b);
                        break;
                    }
                }
            }
            let mut dets = Vec::with_capacity(objs.len());
            for o in objs {
                let covered = rng.random_bool(spec.recall_target);
                let cover = jittered_cover(&o.bbox, &scene.frame, spec.jitter, &mut rng);
                let correct = rng.random_bool(spec.accuracy);
                if covered && correct {
                    dets.push(Detection {
                        bbox: cover,
                        category: o.category,
                        score: Some(noisy_score(0.8, noise.as_ref(), &mut rng)),
                    });
                } else if let Some(d) = distractors.choose(&mut rng) {
                    dets.push(Detection {
                        bbox: *d,
                        category: o.category,
                        score: Some(noisy_score(0.3, noise.as_ref(), &mut rng)),
                    });
                }
            }
            (id, dets)
        })
        .collect();
    Ok(DetectionSet::new(images)?)
}

/// What a wrong token does to a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenFailure {
    /// The whole box is lost.
    #[default]
    DropBox,
    /// The box is emitted with a digit error in one coordinate per bad token.
    DigitShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionModelSpec {
    pub p: f64,
    /// Coordinate bins; `None` emits exact coordinates.
    pub bins: Option<u32>,
    pub tokens_per_box: u32,
    pub class_accuracy: f64,
    pub failure: TokenFailure,
    /// Relative drop in token accuracy per object already emitted in the
    /// image: object `k` uses `p * (1 - order_decay)^k`. Zero disables it.
    pub order_decay: f64,
}

impl Default for RegressionModelSpec {
    fn default() -> Self {
        Self {
            p: 0.97,
            bins: Some(1000),
            tokens_per_box: BoxTokenErrorModel::DEFAULT_TOKENS_PER_BOX,
            class_accuracy: 1.0,
            failure: TokenFailure::DropBox,
            order_decay: 0.0,
        }
    }
}

impl RegressionModelSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        check_prob("p", self.p)?;
        check_prob("class_accuracy", self.class_accuracy)?;
        check_prob("order_decay", self.order_decay)?;
        BoxTokenErrorModel::new(self.p, self.tokens_per_box)?;
        if matches!(self.bins, Some(b) if b < 2) {
            return Err(invalid("bins", "at least 2 bins are needed"));
        }
        Ok(())
    }

    pub fn survival(&self) -> f64 {
        box_survival(&BoxTokenErrorModel {
            tokens_per_box: self.tokens_per_box,
            p: self.p,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOutcome {
    pub detections: DetectionSet,
    pub objects: usize,
    /// Boxes whose tokens were all correct.
    pub intact: usize,
    pub emitted: usize,
}

impl RegressionOutcome {
    pub fn emission_fraction(&self) -> f64 {
        if self.objects == 0 {
            0.0
        } else {
            self.intact as f64 / self.objects as f64
        }
    }
}

fn emit_coords(b: &BBox, frame: &Extent, bins: Option<u32>) -> Result<BBox, GeometryError> {
    match bins {
        Some(bins) => round_trip(b, frame, bins),
        None => Ok(*b),
    }
}

fn digit_shift(b: &BBox, frame: &Extent, rng: &mut impl Rng) -> BBox {
    let mut c = b.to_array();
    let k = rng.random_range(0..4);
    let place = 10f64.powi(rng.random_range(0..3));
    let digit = rng.random_range(1..=9) as f64;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    c[k] += sign * digit * place;
    BBox {
        xmin: c[0].min(c[2]),
        ymin: c[1].min(c[3]),
        xmax: c[0].max(c[2]),
        ymax: c[1].max(c[3]),
    }
    .clip_to(frame)
}

/// Token-by-token coordinate emission. All emitted boxes get confidence 1,
/// since such models expose no scores.
pub fn simulate_regression(
    gt: &GroundTruthSet,
    frame: &Extent,
    spec: &RegressionModelSpec,
    seed: u64,
) -> Result<RegressionOutcome, SimulatorError> {
    spec.validate()?;
    let classes: Vec<u64> = gt.categories().iter().map(|c| c.id).collect();
    let per_image: Vec<(ImageId, Vec<Detection>, usize)> = gt
        .images()
        .par_iter()
        .map(|(&id, objs)| {
            let mut rng = stream_rng(seed, LANE_REGRESSION, id);
            let mut dets = Vec::new();
            let mut intact = 0;
            for (k, o) in objs.iter().enumerate() {
                let p = spec.p * (1.0 - spec.order_decay).powi(k as i32);
                let bad = (0..spec.tokens_per_box)
                    .filter(|_| !rng.random_bool(p))
                    .count();
                let mut bbox = if bad == 0 {
                    intact += 1;
                    o.bbox
                } else if spec.failure == TokenFailure::DigitShift {
                    (0..bad).fold(o.bbox, |b, _| digit_shift(&b, frame, &mut rng))
                } else {
                    continue;
                };
                bbox = emit_coords(&bbox, frame, spec.bins)?;
                let category = if rng.random_bool(spec.class_accuracy) || classes.len() < 2 {
                    o.category
                } else {
                    let others: Vec<u64> = classes
                        .iter()
                        .copied()
                        .filter(|&c| c != o.category)
                        .collect();
                    *others.choose(&mut rng).unwrap()
                };
                dets.push(Detection {
                    bbox,
                    category,
                    score: Some(1.0),
                });
            }
            Ok((id, dets, intact))
        })
        .collect::<Result<_, GeometryError>>()?;
    let objects = gt.images().values().map(Vec::len).sum();
    let intact = per_image.iter().map(|x| x.2).sum();
    let emitted = per_image.iter().map(|x| x.1.len()).sum();
    let detections = DetectionSet::new(per_image.into_iter().map(|(id, d, _)| (id, d)).collect())?;
    Ok(RegressionOutcome {
        detections,
        objects,
        intact,
        emitted,
    })
}

/// Fraction of ground-truth boxes whose quantization round trip keeps
/// IoU >= 0.5 with the original.
pub fn quantization_hit_rate(
    gt: &GroundTruthSet,
    frame: &Extent,
    bins: Option<u32>,
) -> Result<f64, SimulatorError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for o in gt.images().values().flatten() {
        total += 1;
        if iou(&emit_coords(&o.bbox, frame, bins)?, &o.bbox) >= 0.5 {
            hits += 1;
        }
    }
    Ok(if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub frame: f64,
    pub bins: u32,
    pub mean_iou: f64,
    pub min_iou: f64,
    /// Fraction of round trips with IoU >= 0.5.
    pub hit_rate: f64,
}

/// Mean round-trip IoU of randomly placed boxes for each square frame size.
/// Trial `t` draws from the same stream at every frame size.
pub fn quantization_sweep(
    frames: &[f64],
    bins: u32,
    sizes: &SizeDist,
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, SimulatorError> {
    if trials < 1000 {
        return Err(SimulatorError::TooFewTrials(trials));
    }
    frames
        .iter()
        .map(|&side| {
            let frame = Extent::square(side)?;
            sizes.validate(&frame)?;
            let ious: Vec<f64> = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let b = sizes.place(&frame, &mut stream_rng(seed, LANE_SWEEP, t));
                    Ok(iou(&round_trip(&b, &frame, bins)?, &b))
                })
                .collect::<Result<_, GeometryError>>()?;
            Ok(SweepRow {
                frame: side,
                bins,
                mean_iou: ious.iter().sum::<f64>() / trials as f64,
                min_iou: ious.iter().copied().fold(f64::INFINITY, f64::min),
                hit_rate: ious.iter().filter(|&&v| v >= 0.5).count() as f64 / trials as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub recall: f64,
    pub precision: f64,
    pub map: f64,
    /// Closed-form recall ceiling.
    pub expected_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub objects: usize,
    pub retrieval: PipelineStats,
    pub regression: PipelineStats,
    pub survival: f64,
    pub quantization_hit_rate: f64,
    pub emission_fraction: f64,
    /// True when the closed forms favor retrieval.
    pub retrieval_wins: bool,
}

fn stats(
    dets: &DetectionSet,
    gt: &GroundTruthSet,
    expected_recall: f64,
) -> Result<PipelineStats, SimulatorError> {
    let pr = precision_recall_at(dets, gt, 0.5, Aggregation::Global);
    let map = if dets.is_empty() {
        0.0
    } else {
        average_precision(dets, gt, &ApConfig::default())?.map
    };
    Ok(PipelineStats {
        recall: pr.recall,
        precision: pr.precision,
        map,
        expected_recall,
    })
}

/// Runs both simulators on one generated dataset of `images` scenes and
/// scores them with the detection metrics.
pub fn compare_pipelines(
    scene: &SceneSpec,
    retrieval: &ProposalModelSpec,
    regression: &RegressionModelSpec,
    images: usize,
    seed: u64,
) -> Result<ComparisonReport, SimulatorError> {
    let gt = generate_dataset(scene, images, seed)?;
    let ret = simulate_retrieval(&gt, scene, retrieval, seed)?;
    let reg = simulate_regression(&gt, &scene.frame, regression, seed)?;
    let hit = quantization_hit_rate(&gt, &scene.frame, regression.bins)?;
    let survival = regression.survival();
    let reg_expected = survival * hit * regression.class_accuracy;
    let ret_expected = retrieval.expected_recall();
    Ok(ComparisonReport {
        objects: gt.images().values().map(Vec::len).sum(),
        retrieval: stats(&ret, &gt, ret_expected)?,
        regression: stats(&reg.detections, &gt, reg_expected)?,
        survival,
        quantization_hit_rate: hit,
        emission_fraction: reg.emission_fraction(),
        retrieval_wins: ret_expected > reg_expected,
    })
}

/// Plain table rendered as aligned text or CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Fixed four-decimal formatting used in all reports.
pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let cols = self.headers.len();
        let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let parts: Vec<String> = (0..cols)
                .map(|i| {
                    let c = cells.get(i).map_or("", String::as_str);
                    format!("{c:>w$}", w = widths[i])
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &self.headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule);
        for r in &self.rows {
            line(&mut out, r);
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, SimulatorError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&["frame", "bins", "mean_iou", "min_iou", "hit_rate"]);
    for r in rows {
        t.push(vec![
            format!("{}", r.frame),
            r.bins.to_string(),
            fmt4(r.mean_iou),
            fmt4(r.min_iou),
            fmt4(r.hit_rate),
        ]);
    }
    t
}

pub fn comparison_table(r: &ComparisonReport) -> Table {
    let mut t = Table::new(&[
        "pipeline",
        "recall@0.5",
        "precision@0.5",
        "mAP",
        "expected_recall",
    ]);
    for (name, s) in [("retrieval", &r.retrieval), ("regression", &r.regression)] {
        t.push(vec![
            name.to_string(),
            fmt4(s.recall),
            fmt4(s.precision),
            fmt4(s.map),
            fmt4(s.expected_recall),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(n: usize) -> SceneSpec {
        SceneSpec {
            frame: Extent::square(1000.0).unwrap(),
            objects: CountDist::Fixed { n },
            sizes: SizeDist::Uniform {
                min: 20.0,
                max: 200.0,
            },
            classes: 3,
        }
    }

    #[test]
    fn scenes_are_reproducible() {
        let a = generate_dataset(&scene(5), 4, 9).unwrap();
        let b = generate_dataset(&scene(5), 4, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&scene(5), 4, 10).unwrap();
        assert_ne!(a, c);
        for o in a.images().values().flatten() {
            assert!(o.bbox.is_inside(&Extent::square(1000.0).unwrap()));
        }
    }

    #[test]
    fn empty_and_fixed_size_scenes() {
        let g = generate_dataset(&scene(0), 3, 1).unwrap();
        assert!(g.images().values().all(Vec::is_empty));
        let mut s = scene(6);
        s.sizes = SizeDist::Fixed { w: 10.0, h: 10.0 };
        let g = generate_dataset(&s, 2, 1).unwrap();
        for o in g.images().values().flatten() {
            assert!((o.bbox.width() - 10.0).abs() < 1e-9 && (o.bbox.height() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn retrieval_ceilings() {
        let s = scene(5);
        let gt = generate_dataset(&s, 20, 3).unwrap();
        let perfect = ProposalModelSpec {
            recall_target: 1.0,
            accuracy: 1.0,
            ..ProposalModelSpec::default()
        };
        let d = simulate_retrieval(&gt, &s, &perfect, 3).unwrap();
        assert_eq!(
            precision_recall_at(&d, &gt, 0.5, Aggregation::Global).recall,
            1.0
        );
        let none = ProposalModelSpec {
            recall_target: 0.0,
            ..perfect
        };
        let d = simulate_retrieval(&gt, &s, &none, 3).unwrap();
        assert_eq!(
            precision_recall_at(&d, &gt, 0.5, Aggregation::Global).recall,
            0.0
        );
    }

    #[test]
    fn perfect_regression_reproduces_ground_truth() {
        let s = scene(4);
        let gt = generate_dataset(&s, 10, 5).unwrap();
        let spec = RegressionModelSpec {
            p: 1.0,
            bins: None,
            ..RegressionModelSpec::default()
        };
        let out = simulate_regression(&gt, &s.frame, &spec, 5).unwrap();
        assert_eq!(out.emission_fraction(), 1.0);
        let pr = precision_recall_at(&out.detections, &gt, 0.5, Aggregation::Global);
        assert_eq!((pr.precision, pr.recall), (1.0, 1.0));
        assert_eq!(
            average_precision(&out.detections, &gt, &ApConfig::default())
                .unwrap()
                .map,
            1.0
        );
    }

    #[test]
    fn digit_shift_keeps_every_box() {
        let s = scene(4);
        let gt = generate_dataset(&s, 10, 5).unwrap();
        let spec = RegressionModelSpec {
            p: 0.5,
            failure: TokenFailure::DigitShift,
            ..RegressionModelSpec::default()
        };
        let out = simulate_regression(&gt, &s.frame, &spec, 5).unwrap();
        assert_eq!(out.emitted, out.objects);
        assert!(out.intact < out.objects);
    }

    #[test]
    fn order_decay_lowers_later_objects() {
        let s = scene(8);
        let gt = generate_dataset(&s, 200, 2).unwrap();
        let flat = RegressionModelSpec {
            p: 0.99,
            ..RegressionModelSpec::default()
        };
        let decayed = RegressionModelSpec {
            order_decay: 0.05,
            ..flat
        };
        let a = simulate_regression(&gt, &s.frame, &flat, 2).unwrap();
        let b = simulate_regression(&gt, &s.frame, &decayed, 2).unwrap();
        assert!(b.intact < a.intact);
    }

    #[test]
    fn sweep_rejects_few_trials_and_handles_empty_list() {
        let sizes = SizeDist::Fixed { w: 20.0, h: 20.0 };
        assert!(matches!(
            quantization_sweep(&[1000.0], 1000, &sizes, 999, 0),
            Err(SimulatorError::TooFewTrials(999))
        ));
        assert!(quantization_sweep(&[], 1000, &sizes, 1000, 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = scene(1);
        s.classes = 0;
        assert!(generate_dataset(&s, 1, 0).is_err());
        let mut s = scene(1);
        s.sizes = SizeDist::Uniform {
            min: 10.0,
            max: 5000.0,
        };
        assert!(generate_dataset(&s, 1, 0).is_err());
        let bad = RegressionModelSpec {
            p: 1.5,
            ..RegressionModelSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tables_render() {
        let mut t = Table::new(&["a", "value"]);
        t.push(vec!["x".into(), fmt4(0.5)]);
        assert_eq!(t.to_text(), "a   value\n-  ------\nx  0.5000\n");
        assert_eq!(t.to_csv().unwrap(), "a,value\nx,0.5000\n");
    }
}
