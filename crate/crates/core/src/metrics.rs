//! Detection and region-caption metrics.
//!
//! Unscored predictions (typical of language-model outputs) are scored with
//! precision and recall at an IoU threshold. Scored predictions get COCO-style
//! average precision with 101-point interpolation over IoU 0.50:0.05:0.95.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};

pub type ImageId = u64;
pub type CategoryId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("image {image}: ground-truth category {category} is not in the category table")]
    UnknownCategory {
        image: ImageId,
        category: CategoryId,
    },
    #[error("duplicate category id {0} in the category table")]
    DuplicateCategory(CategoryId),
    #[error("confidence must be present for all detections or none (image {0} breaks the rule)")]
    MixedScores(ImageId),
    #[error("image {image}: confidence {score} is outside [0, 1]")]
    ScoreOutOfRange { image: ImageId, score: f64 },
    #[error("average precision needs scored detections")]
    Unscored,
    #[error("no pairs to evaluate")]
    EmptyInput,
    #[error("text embedder failed: {0}")]
    Embedder(String),
    #[error("embedding length mismatch: {0} vs {1}")]
    EmbeddingMismatch(usize, usize),
}

/// LVIS-style category frequency bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    #[serde(alias = "r")]
    Rare,
    #[serde(alias = "c")]
    Common,
    #[serde(alias = "f")]
    Frequent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Frequency>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: CategoryId,
    #[serde(default)]
    pub ignore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: CategoryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthSet {
    categories: Vec<Category>,
    images: BTreeMap<ImageId, Vec<GtObject>>,
}

impl GroundTruthSet {
    /// Validates that every object's category resolves in the table.
    pub fn new(
        categories: Vec<Category>,
        images: BTreeMap<ImageId, Vec<GtObject>>,
    ) -> Result<Self, MetricsError> {
        let mut ids = BTreeSet::new();
        for c in &categories {
            if !ids.insert(c.id) {
                return Err(MetricsError::DuplicateCategory(c.id));
            }
        }
        for (&image, objs) in &images {
            if let Some(o) = objs.iter().find(|o| !ids.contains(&o.category)) {
                return Err(MetricsError::UnknownCategory {
                    image,
                    category: o.category,
                });
            }
        }
        Ok(Self { categories, images })
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, id: CategoryId) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn images(&self) -> &BTreeMap<ImageId, Vec<GtObject>> {
        &self.images
    }

    pub fn objects(&self, image: ImageId) -> &[GtObject] {
        self.images.get(&image).map_or(&[], |v| v.as_slice())
    }

    /// Treats every ground-truth box as a detection with confidence 1.
    pub fn as_detections(&self) -> DetectionSet {
        let images = self
            .images
            .iter()
            .map(|(&id, objs)| {
                let dets = objs
                    .iter()
                    .map(|o| Detection {
                        bbox: o.bbox,
                        category: o.category,
                        score: Some(1.0),
                    })
                    .collect();
                (id, dets)
            })
            .collect();
        DetectionSet { images }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Scored,
    Unscored,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet {
    images: BTreeMap<ImageId, Vec<Detection>>,
}

impl DetectionSet {
    /// Checks that confidences are in `[0, 1]` and present for all or none.
    pub fn new(images: BTreeMap<ImageId, Vec<Detection>>) -> Result<Self, MetricsError> {
        let mut seen: Option<bool> = None;
        for (&image, dets) in &images {
            for d in dets {
                if let Some(s) = d.score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(MetricsError::ScoreOutOfRange { image, score: s });
                    }
                }
                match seen {
                    None => seen = Some(d.score.is_some()),
                    Some(prev) if prev != d.score.is_some() => {
                        return Err(MetricsError::MixedScores(image))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { images })
    }

    pub fn images(&self) -> &BTreeMap<ImageId, Vec<Detection>> {
        &self.images
    }

    pub fn detections(&self, image: ImageId) -> &[Detection] {
        self.images.get(&image).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `None` for an empty set.
    pub fn mode(&self) -> Option<ScoreMode> {
        self.images.values().flatten().next().map(|d| {
            if d.score.is_some() {
                ScoreMode::Scored
            } else {
                ScoreMode::Unscored
            }
        })
    }
}

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetLabel {
    /// Matched the ground-truth object at this index.
    Tp(usize),
    Fp,
    /// Matched only an ignored ground-truth object; counts neither way.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// One label per detection, in input order.
    pub labels: Vec<DetLabel>,
    /// Detection index that claimed each ground-truth object.
    pub gt_matches: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, DetLabel::Tp(_)))
            .count()
    }

    pub fn fp(&self) -> usize {
        self.labels.iter().filter(|l| **l == DetLabel::Fp).count()
    }
}

/// Visiting order: descending confidence with a stable sort when scored,
/// input order otherwise.
fn visit_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    if dets.iter().any(|d| d.score.is_some()) {
        order.sort_by(|&a, &b| {
            let sa = dets[a].score.unwrap_or(0.0);
            let sb = dets[b].score.unwrap_or(0.0);
            sb.total_cmp(&sa)
        });
    }
    order
}

/// Greedy single-image matching. Each detection takes the unmatched,
/// non-ignored ground-truth object of its category with the highest IoU at
/// or above the threshold (lowest index on ties). Failing that, a detection
/// overlapping an ignored object of its category is ignored.
pub fn match_detections(dets: &[Detection], gts: &[GtObject], iou_threshold: f64) -> MatchResult {
    let mut labels = vec![DetLabel::Fp; dets.len()];
    let mut gt_matches = vec![None; gts.len()];
    for di in visit_order(dets) {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if g.ignore || g.category != d.category || gt_matches[gi].is_some() {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, _)) = best {
            labels[di] = DetLabel::Tp(gi);
            gt_matches[gi] = Some(di);
        } else if gts
            .iter()
            .any(|g| g.ignore && g.category == d.category && iou(&d.bbox, &g.bbox) >= iou_threshold)
        {
            labels[di] = DetLabel::Ignored;
        }
    }
    MatchResult { labels, gt_matches }
}

/// How per-image outcomes are combined into precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Counts summed over the dataset.
    #[default]
    Global,
    /// Mean of per-image rates.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrAt {
    pub iou_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Precision with no detections is 0 if any ground truth exists and 1
/// otherwise; recall with no ground truth is 1.
fn rates(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        if fn_ == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    (precision, recall)
}

fn image_ids(gt: &GroundTruthSet, dets: &DetectionSet) -> BTreeSet<ImageId> {
    gt.images
        .keys()
        .chain(dets.images.keys())
        .copied()
        .collect()
}

/// Precision and recall at one IoU threshold. Scored detections are visited
/// by confidence, unscored ones in file order.
pub fn precision_recall_at(
    dets: &DetectionSet,
    gt: &GroundTruthSet,
    iou_threshold: f64,
    aggregation: Aggregation,
) -> PrAt {
    let per_image: Vec<(usize, usize, usize)> = image_ids(gt, dets)
        .into_iter()
        .map(|id| {
            let gts = gt.objects(id);
            let m = match_detections(dets.detections(id), gts, iou_threshold);
            let positives = gts.iter().filter(|g| !g.ignore).count();
            let tp = m.tp();
            (tp, m.fp(), positives - tp)
        })
        .collect();
    let (tp, fp, fn_) = per_image
        .iter()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let (precision, recall) = match aggregation {
        Aggregation::Global => rates(tp, fp, fn_),
        Aggregation::PerImage if per_image.is_empty() => rates(0, 0, 0),
        Aggregation::PerImage => {
            let n = per_image.len() as f64;
            let (ps, rs) = per_image.iter().fold((0.0, 0.0), |acc, &(t, f, m)| {
                let (p, r) = rates(t, f, m);
                (acc.0 + p, acc.1 + r)
            });
            (ps / n, rs / n)
        }
    };
    PrAt {
        iou_threshold,
        precision,
        recall,
        tp,
        fp,
        fn_,
    }
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Recall sample points 0.00, 0.01, ..., 1.00.
pub fn coco_recall_points() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub iou_thresholds: Vec<f64>,
    /// Highest-confidence detections kept per image; `None` keeps all.
    pub max_dets: Option<usize>,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_iou_thresholds(),
            max_dets: Some(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// AP averaged over the IoU thresholds, for classes with ground truth.
    pub per_class: BTreeMap<CategoryId, f64>,
    /// Per class, AP at each IoU threshold in configuration order.
    pub per_class_at: BTreeMap<CategoryId, Vec<f64>>,
    pub map: f64,
    pub iou_thresholds: Vec<f64>,
}

impl ApReport {
    /// Mean AP over classes at the threshold with the given index.
    pub fn map_at(&self, threshold_index: usize) -> f64 {
        mean(self.per_class_at.values().map(|v| v[threshold_index]))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// 101-point interpolated AP from detections already sorted by descending
/// confidence. `outcomes` holds true for TP and false for FP.
pub fn interpolated_ap(outcomes: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(outcomes.len());
    let mut recall = Vec::with_capacity(outcomes.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in outcomes {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / positives as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let points = coco_recall_points();
    let total: f64 = points
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    total / points.len() as f64
}

fn capped(dets: &[Detection], max_dets: Option<usize>) -> Vec<Detection> {
    let order = visit_order(dets);
    let keep = max_dets.unwrap_or(usize::MAX);
    let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
    kept.sort_unstable();
    kept.into_iter().map(|i| dets[i]).collect()
}

fn class_ap(
    dets: &DetectionSet,
    gt: &GroundTruthSet,
    class: CategoryId,
    thresholds: &[f64],
    max_dets: Option<usize>,
) -> Option<Vec<f64>> {
    let ids = image_ids(gt, dets);
    let positives: usize = ids
        .iter()
        .map(|&id| {
            gt.objects(id)
                .iter()
                .filter(|g| g.category == class && !g.ignore)
                .count()
        })
        .sum();
    if positives == 0 {
        return None;
    }
    let per_image: Vec<(ImageId, Vec<Detection>, Vec<GtObject>)> = ids
        .iter()
        .map(|&id| {
            let d = capped(dets.detections(id), max_dets)
                .into_iter()
                .filter(|d| d.category == class)
                .collect();
            let g = gt
                .objects(id)
                .iter()
                .filter(|g| g.category == class)
                .copied()
                .collect();
            (id, d, g)
        })
        .collect();
    let aps = thresholds
        .iter()
        .map(|&t| {
            // (score, image, index, outcome); ignored detections are dropped.
            let mut scored: Vec<(f64, ImageId, usize, bool)> = Vec::new();
            for (id, d, g) in &per_image {
                let m = match_detections(d, g, t);
                for (i, label) in m.labels.iter().enumerate() {
                    let hit = match label {
                        DetLabel::Tp(_) => true,
                        DetLabel::Fp => false,
                        DetLabel::Ignored => continue,
                    };
                    scored.push((d[i].score.unwrap_or(1.0), *id, i, hit));
                }
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let outcomes: Vec<bool> = scored.iter().map(|s| s.3).collect();
            interpolated_ap(&outcomes, positives)
        })
        .collect();
    Some(aps)
}

/// COCO-style AP per class and its macro average over classes that have at
/// least one non-ignored ground-truth object.
pub fn average_precision(
    dets: &DetectionSet,
    gt: &GroundTruthSet,
    config: &ApConfig,
) -> Result<ApReport, MetricsError> {
    if dets.mode() == Some(ScoreMode::Unscored) {
        return Err(MetricsError::Unscored);
    }
    let classes: Vec<CategoryId> = gt.categories.iter().map(|c| c.id).collect();
    let results: Vec<(CategoryId, Option<Vec<f64>>)> = classes
        .par_iter()
        .map(|&c| {
            (
                c,
                class_ap(dets, gt, c, &config.iou_thresholds, config.max_dets),
            )
        })
        .collect();
    let mut per_class = BTreeMap::new();
    let mut per_class_at = BTreeMap::new();
    for (c, aps) in results {
        if let Some(aps) = aps {
            per_class.insert(c, mean(aps.iter().copied()));
            per_class_at.insert(c, aps);
        }
    }
    let map = mean(per_class.values().copied());
    Ok(ApReport {
        per_class,
        per_class_at,
        map,
        iou_thresholds: config.iou_thresholds.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyAp {
    pub rare: Option<f64>,
    pub common: Option<f64>,
    pub frequent: Option<f64>,
}

/// Macro AP within each frequency bucket. Buckets without an evaluated class
/// are `None`.
pub fn frequency_ap(per_class: &BTreeMap<CategoryId, f64>, categories: &[Category]) -> FrequencyAp {
    let bucket = |f: Frequency| {
        let values: Vec<f64> = categories
            .iter()
            .filter(|c| c.frequency == Some(f))
            .filter_map(|c| per_class.get(&c.id).copied())
            .collect();
        (!values.is_empty()).then(|| mean(values.into_iter()))
    };
    FrequencyAp {
        rare: bucket(Frequency::Rare),
        common: bucket(Frequency::Common),
        frequent: bucket(Frequency::Frequent),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferringConfig {
    pub threshold: f64,
    /// Require IoU strictly above the threshold.
    pub strict: bool,
}

impl Default for ReferringConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            strict: true,
        }
    }
}

pub fn referring_hit(pred: &BBox, gt: &BBox, config: &ReferringConfig) -> bool {
    let o = iou(pred, gt);
    if config.strict {
        o > config.threshold
    } else {
        o >= config.threshold
    }
}

/// Fraction of `(prediction, ground truth)` pairs that hit. A missing
/// prediction counts as a miss.
pub fn referring_accuracy(
    pairs: &[(Option<BBox>, BBox)],
    config: &ReferringConfig,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = pairs
        .iter()
        .filter(|(p, g)| p.is_some_and(|p| referring_hit(&p, g, config)))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Lowercased word set with everything but letters, digits and whitespace
/// removed.
pub fn caption_tokens(text: &str) -> BTreeSet<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Jaccard overlap of caption word sets; two empty captions score 1.
pub fn semantic_iou(pred: &str, gt: &str) -> f64 {
    let a = caption_tokens(pred);
    let b = caption_tokens(gt);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub trait TextEmbedder: Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError>;
}

/// Deterministic stand-in embedder: word counts hashed into a fixed number
/// of buckets with FNV-1a. It captures lexical overlap only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagOfWords {
    pub dim: usize,
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl TextEmbedder for HashedBagOfWords {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        if self.dim == 0 {
            return Err(MetricsError::Embedder("dimension must be positive".into()));
        }
        let mut v = vec![0.0; self.dim];
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric() || c.is_whitespace())
            .collect();
        for word in cleaned.split_whitespace() {
            v[(fnv1a(word.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        Ok(v)
    }
}

/// `(1 + cos) / 2` between the two embeddings. Identical embeddings score
/// exactly 1; a zero vector against a different one scores 0.5.
pub fn semantic_similarity(
    pred: &str,
    gt: &str,
    embedder: &dyn TextEmbedder,
) -> Result<f64, MetricsError> {
    let a = embedder.embed(pred)?;
    let b = embedder.embed(gt)?;
    if a.len() != b.len() {
        return Err(MetricsError::EmbeddingMismatch(a.len(), b.len()));
    }
    if a == b {
        return Ok(1.0);
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    };
    Ok((1.0 + cos) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCaptionScores {
    pub ss: f64,
    pub s_iou: f64,
    pub count: usize,
}

/// Mean SS and S-IoU over `(prediction, reference)` caption pairs.
pub fn region_caption_scores(
    pairs: &[(String, String)],
    embedder: &dyn TextEmbedder,
) -> Result<RegionCaptionScores, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let ss: Vec<f64> = pairs
        .iter()
        .map(|(p, g)| semantic_similarity(p, g, embedder))
        .collect::<Result<_, _>>()?;
    let n = pairs.len() as f64;
    Ok(RegionCaptionScores {
        ss: ss.iter().sum::<f64>() / n,
        s_iou: pairs.iter().map(|(p, g)| semantic_iou(p, g)).sum::<f64>() / n,
        count: pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Thresholds for precision and recall.
    pub pr_thresholds: Vec<f64>,
    pub aggregation: Aggregation,
    pub ap: ApConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pr_thresholds: vec![0.5],
            aggregation: Aggregation::Global,
            ap: ApConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Option<ScoreMode>,
    pub images: usize,
    pub detections: usize,
    pub pr: Vec<PrAt>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<ApReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<FrequencyAp>,
}

/// P/R at each configured threshold; AP and frequency buckets as well when
/// detections are scored.
pub fn evaluate(dets: &DetectionSet, gt: &GroundTruthSet, config: &EvalConfig) -> EvalReport {
    let pr = config
        .pr_thresholds
        .iter()
        .map(|&t| precision_recall_at(dets, gt, t, config.aggregation))
        .collect();
    let ap = match dets.mode() {
        Some(ScoreMode::Scored) => average_precision(dets, gt, &config.ap).ok(),
        _ => None,
    };
    let frequency = ap.as_ref().and_then(|ap| {
        gt.categories
            .iter()
            .any(|c| c.frequency.is_some())
            .then(|| frequency_ap(&ap.per_class, &gt.categories))
    });
    EvalReport {
        mode: dets.mode(),
        images: image_ids(gt, dets).len(),
        detections: dets.len(),
        pr,
        ap,
        frequency,
    }
}
