//! On-disk formats: COCO-style ground truth, prediction JSONL, the loose
//! `{class: ..., rect: [...]}` dialect that chat models write, and
//! header-prefixed JSONL record files.
//!
//! All text is UTF-8 with LF line endings. Record files start with one
//! `# ...` comment line; readers skip blank lines and lines starting with `#`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::metrics::{
    Category, CategoryId, Detection, DetectionSet, GroundTruthSet, GtObject, ImageId, MetricsError,
    ScoreMode,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("file {path}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Integrity(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn line_err(line: usize, message: impl ToString) -> IoError {
    IoError::Line {
        line,
        message: message.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(file_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: ImageId,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    /// Stored as `xyxy`; the COCO file holds `xywh`.
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub ignore: bool,
}

/// Images, categories and annotations with referential integrity checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub images: Vec<ImageInfo>,
    pub categories: Vec<Category>,
    pub annotations: Vec<Annotation>,
}

impl DatasetBundle {
    /// Ground truth per image; images without annotations are kept empty.
    pub fn ground_truth(&self) -> Result<GroundTruthSet, IoError> {
        let mut images: BTreeMap<ImageId, Vec<GtObject>> =
            self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in &self.annotations {
            images.entry(a.image_id).or_default().push(GtObject {
                bbox: a.bbox,
                category: a.category_id,
                ignore: a.ignore,
            });
        }
        Ok(GroundTruthSet::new(self.categories.clone(), images)?)
    }

    pub fn category_by_name(&self, name: &str) -> Option<CategoryId> {
        let name = name.trim().to_lowercase();
        self.categories
            .iter()
            .find(|c| c.name.to_lowercase() == name)
            .map(|c| c.id)
    }
}

#[derive(Deserialize)]
struct RawCoco {
    images: Vec<ImageInfo>,
    categories: Vec<Category>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
    #[serde(default)]
    ignore: Option<serde_json::Value>,
}

fn truthy(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Bool(b) => *b,
        serde_json::Value::Number(n) => n.as_f64().is_some_and(|x| x != 0.0),
        _ => false,
    }
}

/// Parses COCO JSON. Crowd or `ignore` annotations become ignored ground
/// truth. Errors name the offending ids.
pub fn parse_coco_ground_truth(text: &str) -> Result<DatasetBundle, IoError> {
    let raw: RawCoco = serde_json::from_str(text).map_err(|e| IoError::Line {
        line: e.line(),
        message: format!("column {}: {e}", e.column()),
    })?;
    let mut image_ids = BTreeSet::new();
    for i in &raw.images {
        if !image_ids.insert(i.id) {
            return Err(IoError::Integrity(format!("duplicate image id {}", i.id)));
        }
        if !(i.width > 0.0 && i.height > 0.0) {
            return Err(IoError::Integrity(format!(
                "image {} has non-positive size {}x{}",
                i.id, i.width, i.height
            )));
        }
    }
    let mut cat_ids = BTreeSet::new();
    for c in &raw.categories {
        if !cat_ids.insert(c.id) {
            return Err(IoError::Integrity(format!(
                "duplicate category id {}",
                c.id
            )));
        }
    }
    let mut ann_ids = BTreeSet::new();
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for a in raw.annotations {
        if !ann_ids.insert(a.id) {
            return Err(IoError::Integrity(format!(
                "duplicate annotation id {}",
                a.id
            )));
        }
        if !image_ids.contains(&a.image_id) {
            return Err(IoError::Integrity(format!(
                "annotation {} references missing image {}",
                a.id, a.image_id
            )));
        }
        if !cat_ids.contains(&a.category_id) {
            return Err(IoError::Integrity(format!(
                "annotation {} references missing category {}",
                a.id, a.category_id
            )));
        }
        let [x, y, w, h] = a.bbox;
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| {
            IoError::Integrity(format!("annotation {} has an invalid box: {e}", a.id))
        })?;
        annotations.push(Annotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox,
            ignore: a.iscrowd != 0 || a.ignore.as_ref().is_some_and(truthy),
        });
    }
    Ok(DatasetBundle {
        images: raw.images,
        categories: raw.categories,
        annotations,
    })
}

pub fn read_coco_ground_truth(path: &Path) -> Result<DatasetBundle, IoError> {
    parse_coco_ground_truth(&read_text(path)?)
}

/// One predicted box. Exactly one of `category_id` and `label` is expected;
/// free-text labels are resolved against the category table later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: ImageId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<CategoryId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Raw text the record was extracted from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Non-fatal finding attached to an input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoDiagnostic {
    pub line: usize,
    pub message: String,
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Parses prediction JSONL. In scored mode every record needs a score, in
/// unscored mode none may have one.
pub fn parse_predictions(text: &str, mode: ScoreMode) -> Result<Vec<PredictionRecord>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if is_skippable(line) {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| line_err(n, e))?;
        match (mode, r.score) {
            (ScoreMode::Scored, None) => {
                return Err(line_err(n, "scored mode needs a score on every record"))
            }
            (ScoreMode::Unscored, Some(_)) => {
                return Err(line_err(n, "unscored mode forbids scores"))
            }
            (_, Some(s)) if !(0.0..=1.0).contains(&s) => {
                return Err(line_err(n, format!("score {s} is outside [0, 1]")))
            }
            _ => {}
        }
        if r.category_id.is_none() && r.label.is_none() {
            return Err(line_err(n, "record needs category_id or label"));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path, mode: ScoreMode) -> Result<Vec<PredictionRecord>, IoError> {
    parse_predictions(&read_text(path)?, mode)
}

/// Category used for labels that match no category name; it never matches
/// ground truth, so such boxes count as false positives.
pub const UNRESOLVED_CATEGORY: CategoryId = u64::MAX;

/// Builds a detection set, resolving free-text labels by case-insensitive
/// exact name. Unresolved labels are kept under [`UNRESOLVED_CATEGORY`] and
/// reported; `line` in diagnostics is the 1-based record index.
pub fn resolve_predictions(
    records: &[PredictionRecord],
    categories: &[Category],
) -> Result<(DetectionSet, Vec<IoDiagnostic>), IoError> {
    let by_name: HashMap<String, CategoryId> = categories
        .iter()
        .map(|c| (c.name.to_lowercase(), c.id))
        .collect();
    let known: BTreeSet<CategoryId> = categories.iter().map(|c| c.id).collect();
    let mut diagnostics = Vec::new();
    let mut images: BTreeMap<ImageId, Vec<Detection>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let category = match (&r.category_id, &r.label) {
            (Some(id), _) => {
                if !known.contains(id) {
                    diagnostics.push(IoDiagnostic {
                        line: i + 1,
                        message: format!("category id {id} is not in the category table"),
                    });
                }
                *id
            }
            (None, Some(label)) => match by_name.get(&label.trim().to_lowercase()) {
                Some(id) => *id,
                None => {
                    diagnostics.push(IoDiagnostic {
                        line: i + 1,
                        message: format!("label {label:?} matches no category"),
                    });
                    UNRESOLVED_CATEGORY
                }
            },
            (None, None) => return Err(line_err(i + 1, "record needs category_id or label")),
        };
        images.entry(r.image_id).or_default().push(Detection {
            bbox: r.bbox,
            category,
            score: r.score,
        });
    }
    Ok((DetectionSet::new(images)?, diagnostics))
}

/// A box found in loosely formatted model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialectBox {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Byte range of the matched text.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DialectParse {
    pub boxes: Vec<DialectBox>,
    /// Lines mentioning `rect` that yielded no valid box.
    pub unparsed: Vec<IoDiagnostic>,
}

fn dialect_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"(-?\d+(?:\.\d+)?)";
        let pattern = format!(
            r#"\{{\s*['"]?class['"]?\s*:\s*['"]?([^,'"{{}}]*?)['"]?\s*,\s*['"]?rect['"]?\s*:\s*\[\s*{num}\s*,\s*{num}\s*,\s*{num}\s*,\s*{num}\s*\]\s*\}}"#
        );
        Regex::new(&pattern).expect("dialect pattern compiles")
    })
}

/// Tolerant reader for `{class: car, rect: [x0, y0, x1, y1]}` items, with or
/// without quotes around keys and values.
pub fn parse_response_dialect(text: &str) -> DialectParse {
    let re = dialect_regex();
    let mut out = DialectParse::default();
    let mut covered_lines = BTreeSet::new();
    for cap in re.captures_iter(text) {
        let m = cap.get(0).unwrap();
        let line = text[..m.start()].matches('\n').count() + 1;
        let c: Vec<f64> = (2..=5).map(|k| cap[k].parse().unwrap()).collect();
        match BBox::new(c[0], c[1], c[2], c[3]) {
            Ok(bbox) => {
                covered_lines.insert(line);
                out.boxes.push(DialectBox {
                    class: cap[1].trim().to_string(),
                    bbox,
                    span: (m.start(), m.end()),
                });
            }
            Err(e) => out.unparsed.push(IoDiagnostic {
                line,
                message: e.to_string(),
            }),
        }
    }
    for (i, l) in text.lines().enumerate() {
        let n = i + 1;
        if l.contains("rect")
            && !covered_lines.contains(&n)
            && !out.unparsed.iter().any(|d| d.line == n)
        {
            out.unparsed.push(IoDiagnostic {
                line: n,
                message: "no complete {class, rect} item".into(),
            });
        }
    }
    out.unparsed.sort_by_key(|d| d.line);
    out
}

/// Dialect boxes as unscored prediction records for one image.
pub fn dialect_predictions(text: &str, image_id: ImageId) -> Vec<PredictionRecord> {
    parse_response_dialect(text)
        .boxes
        .into_iter()
        .map(|b| PredictionRecord {
            image_id,
            category_id: None,
            label: Some(b.class),
            bbox: b.bbox,
            score: None,
            source: Some(text[b.span.0..b.span.1].to_string()),
        })
        .collect()
}

/// A JSON array of `[xmin, ymin, xmax, ymax]` boxes.
pub fn parse_boxes(text: &str) -> Result<Vec<BBox>, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Line {
        line: e.line(),
        message: format!("column {}: {e}", e.column()),
    })
}

pub fn read_boxes(path: &Path) -> Result<Vec<BBox>, IoError> {
    parse_boxes(&read_text(path)?)
}

/// Serializes records as one JSON object per line after a `# header` line.
pub fn to_jsonl<T: Serialize>(header: &str, records: &[T]) -> String {
    let mut out = format!("# {header}\n");
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &str, records: &[T]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_jsonl(header, records).as_bytes())
        .and_then(|_| w.flush())
        .map_err(file_err(path))
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !is_skippable(l))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| line_err(i + 1, e)))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if is_skippable(&line) {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| line_err(i + 1, e))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "images": [{"id": 1, "width": 640, "height": 480}],
        "categories": [{"id": 3, "name": "Car", "frequency": "f"}],
        "annotations": [{"id": 7, "image_id": 1, "category_id": 3, "bbox": [10, 20, 30, 40]}]
    }"#;

    #[test]
    fn minimal_coco_fixture() {
        let b = parse_coco_ground_truth(MINIMAL).unwrap();
        assert_eq!(
            (b.images.len(), b.categories.len(), b.annotations.len()),
            (1, 1, 1)
        );
        assert_eq!(b.annotations[0].bbox.to_array(), [10.0, 20.0, 40.0, 60.0]);
        assert_eq!(
            b.categories[0].frequency,
            Some(crate::metrics::Frequency::Frequent)
        );
        let gt = b.ground_truth().unwrap();
        assert_eq!(gt.objects(1).len(), 1);
        assert_eq!(b.category_by_name(" car "), Some(3));
    }

    #[test]
    fn dangling_image_is_named() {
        let text = MINIMAL.replace("\"image_id\": 1", "\"image_id\": 42");
        let err = parse_coco_ground_truth(&text).unwrap_err().to_string();
        assert!(
            err.contains("annotation 7") && err.contains("image 42"),
            "{err}"
        );
        let text = MINIMAL.replace("\"category_id\": 3", "\"category_id\": 5");
        let err = parse_coco_ground_truth(&text).unwrap_err().to_string();
        assert!(err.contains("category 5"), "{err}");
    }

    #[test]
    fn negative_size_is_rejected() {
        let text = MINIMAL.replace("[10, 20, 30, 40]", "[10, 20, -30, 40]");
        let err = parse_coco_ground_truth(&text).unwrap_err().to_string();
        assert!(err.contains("annotation 7"), "{err}");
    }

    #[test]
    fn crowd_annotations_are_ignored_ground_truth() {
        let text = MINIMAL.replace("\"bbox\"", "\"iscrowd\": 1, \"bbox\"");
        assert!(parse_coco_ground_truth(&text).unwrap().annotations[0].ignore);
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_coco_ground_truth("{\n\"images\": [,]}").unwrap_err();
        assert!(matches!(err, IoError::Line { line: 2, .. }));
    }

    #[test]
    fn prediction_modes() {
        assert!(parse_predictions("", ScoreMode::Scored).unwrap().is_empty());
        let scored = r#"{"image_id": 1, "category_id": 3, "box": [0, 0, 5, 5], "score": 0.4}"#;
        let plain = r#"{"image_id": 1, "label": "car", "box": [0, 0, 5, 5]}"#;
        let mixed = format!("{scored}\n{plain}\n");
        let err = parse_predictions(&mixed, ScoreMode::Scored).unwrap_err();
        assert!(matches!(err, IoError::Line { line: 2, .. }));
        let err = parse_predictions(scored, ScoreMode::Unscored).unwrap_err();
        assert!(matches!(err, IoError::Line { line: 1, .. }));
        let ok = parse_predictions(&format!("# header\n\n{plain}\n"), ScoreMode::Unscored).unwrap();
        assert_eq!(ok[0].label.as_deref(), Some("car"));
        let bad = r#"{"image_id": 1, "label": "car", "box": [5, 0, 1, 5]}"#;
        assert!(parse_predictions(bad, ScoreMode::Unscored).is_err());
    }

    #[test]
    fn labels_resolve_case_insensitively() {
        let cats = vec![Category {
            id: 3,
            name: "Car".into(),
            frequency: None,
        }];
        let recs = parse_predictions(
            "{\"image_id\": 1, \"label\": \"CAR\", \"box\": [0, 0, 5, 5]}\n{\"image_id\": 1, \"label\": \"truck\", \"box\": [0, 0, 5, 5]}",
            ScoreMode::Unscored,
        )
        .unwrap();
        let (dets, diags) = resolve_predictions(&recs, &cats).unwrap();
        let cats: Vec<u64> = dets.detections(1).iter().map(|d| d.category).collect();
        assert_eq!(cats, vec![3, UNRESOLVED_CATEGORY]);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].line, 2);
    }

    #[test]
    fn response_dialect_block() {
        let text = "[\n{class: car, rect: [234, 186, 370, 283]}, \n{'class': 'car', 'rect': [568, 214, 622, 283]},\n{\"class\": \"traffic light\", \"rect\": [1.5, 2, 3, 4.25]}\n{class: car, rect: [206, 200,";
        let p = parse_response_dialect(text);
        assert_eq!(p.boxes.len(), 3);
        assert_eq!(p.boxes[0].class, "car");
        assert_eq!(p.boxes[1].bbox.to_array(), [568.0, 214.0, 622.0, 283.0]);
        assert_eq!(p.boxes[2].class, "traffic light");
        assert_eq!(p.unparsed.len(), 1);
        assert_eq!(p.unparsed[0].line, 5);
        let recs = dialect_predictions(text, 9);
        assert_eq!(recs.len(), 3);
        assert_eq!(
            recs[0].source.as_deref(),
            Some("{class: car, rect: [234, 186, 370, 283]}")
        );
    }

    #[test]
    fn jsonl_round_trip_and_empty_header() {
        let recs = vec![PredictionRecord {
            image_id: 4,
            category_id: Some(1),
            label: None,
            bbox: BBox::new(0.5, 1.0, 2.0, 3.0).unwrap(),
            score: Some(0.25),
            source: None,
        }];
        let text = to_jsonl("predictions", &recs);
        assert_eq!(
            text,
            "# predictions\n{\"image_id\":4,\"category_id\":1,\"box\":[0.5,1.0,2.0,3.0],\"score\":0.25}\n"
        );
        assert_eq!(parse_jsonl::<PredictionRecord>(&text).unwrap(), recs);
        let empty: Vec<PredictionRecord> = Vec::new();
        assert_eq!(to_jsonl("predictions", &empty), "# predictions\n");
    }

    #[test]
    fn boxes_file() {
        let b = parse_boxes("[[0, 0, 10, 10], [1, 2, 3, 4]]").unwrap();
        assert_eq!(b.len(), 2);
        assert!(parse_boxes("[[3, 0, 1, 10]]").is_err());
    }
}
