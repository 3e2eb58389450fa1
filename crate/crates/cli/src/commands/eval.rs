use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use groundkit::io::{
    parse_jsonl, parse_predictions, read_coco_ground_truth, read_text, resolve_predictions,
    PredictionRecord,
};
use groundkit::metrics::{
    coco_iou_thresholds, evaluate, Aggregation, ApConfig, EvalConfig, ScoreMode,
};
use groundkit::simulator::{fmt4, Table};
use serde::{Deserialize, Serialize};

use crate::report::{config_line, print_warnings, write_json, Envelope, Status};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Scored,
    Unscored,
}

impl From<ModeArg> for ScoreMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Scored => ScoreMode::Scored,
            ModeArg::Unscored => ScoreMode::Unscored,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// COCO-style ground-truth JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction JSONL.
    #[arg(long)]
    preds: PathBuf,
    /// Inferred from the predictions when omitted.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// IoU thresholds for precision and recall, comma separated.
    #[arg(long, value_delimiter = ',')]
    iou: Vec<f64>,
    /// Average precision and recall per image instead of over the dataset.
    #[arg(long)]
    per_image: bool,
    /// Treat warnings such as unresolved labels as errors.
    #[arg(long)]
    strict: bool,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML settings; flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSettings {
    gt: PathBuf,
    preds: PathBuf,
    mode: Option<ScoreMode>,
    iou: Vec<f64>,
    aggregation: Aggregation,
    /// Highest-scored detections kept per image for AP.
    max_dets: Option<usize>,
    strict: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            gt: PathBuf::new(),
            preds: PathBuf::new(),
            mode: None,
            iou: vec![0.5],
            aggregation: Aggregation::Global,
            max_dets: Some(100),
            strict: false,
        }
    }
}

fn infer_mode(records: &[PredictionRecord]) -> anyhow::Result<Option<ScoreMode>> {
    let scored = records.iter().filter(|r| r.score.is_some()).count();
    Ok(match scored {
        0 if records.is_empty() => None,
        0 => Some(ScoreMode::Unscored),
        n if n == records.len() => Some(ScoreMode::Scored),
        n => bail!(
            "{n} of {} predictions carry a score; use all or none",
            records.len()
        ),
    })
}

pub fn run(args: EvalArgs) -> anyhow::Result<Status> {
    let mut s: EvalSettings = super::load_toml(args.config.as_deref())?;
    s.gt = args.gt;
    s.preds = args.preds;
    if let Some(m) = args.mode {
        s.mode = Some(m.into());
    }
    if !args.iou.is_empty() {
        s.iou = args.iou;
    }
    if args.per_image {
        s.aggregation = Aggregation::PerImage;
    }
    s.strict |= args.strict;
    if s.iou.is_empty() || s.iou.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        bail!("IoU thresholds must lie in (0, 1], got {:?}", s.iou);
    }

    let bundle = read_coco_ground_truth(&s.gt)
        .with_context(|| format!("ground truth {}", s.gt.display()))?;
    let gt = bundle.ground_truth()?;
    let text = read_text(&s.preds)?;
    let raw: Vec<PredictionRecord> =
        parse_jsonl(&text).with_context(|| format!("predictions {}", s.preds.display()))?;
    if s.mode.is_none() {
        s.mode = infer_mode(&raw)?;
    }
    let records = match s.mode {
        Some(mode) => parse_predictions(&text, mode)
            .with_context(|| format!("predictions {}", s.preds.display()))?,
        None => raw,
    };
    let (dets, diags) = resolve_predictions(&records, gt.categories())?;
    let mut warnings: Vec<String> = diags
        .iter()
        .map(|d| format!("prediction {}: {}", d.line, d.message))
        .collect();
    for id in dets
        .images()
        .keys()
        .filter(|id| !gt.images().contains_key(id))
    {
        warnings.push(format!(
            "image {id} has predictions but no ground-truth entry"
        ));
    }
    if s.strict && !warnings.is_empty() {
        print_warnings(&warnings);
        bail!("{} warning(s) in strict mode", warnings.len());
    }

    let cfg = EvalConfig {
        pr_thresholds: s.iou.clone(),
        aggregation: s.aggregation,
        ap: ApConfig {
            iou_thresholds: coco_iou_thresholds(),
            max_dets: s.max_dets,
        },
    };
    let report = evaluate(&dets, &gt, &cfg);

    println!("groundkit eval-det");
    println!("{}", config_line(&s)?);
    println!(
        "images: {}  detections: {}",
        report.images, report.detections
    );
    let mut t = Table::new(&["iou", "precision", "recall", "tp", "fp", "fn"]);
    for p in &report.pr {
        t.push(vec![
            fmt4(p.iou_threshold),
            fmt4(p.precision),
            fmt4(p.recall),
            p.tp.to_string(),
            p.fp.to_string(),
            p.fn_.to_string(),
        ]);
    }
    print!("{}", t.to_text());
    if let Some(ap) = &report.ap {
        println!("mAP: {}", fmt4(ap.map));
        let at = |thr: f64| {
            ap.iou_thresholds
                .iter()
                .position(|t| (t - thr).abs() < 1e-12)
        };
        if let (Some(i50), Some(i75)) = (at(0.5), at(0.75)) {
            println!(
                "AP50: {}  AP75: {}",
                fmt4(ap.map_at(i50)),
                fmt4(ap.map_at(i75))
            );
        }
        if let Some(f) = &report.frequency {
            let show = |v: Option<f64>| v.map_or("-".to_string(), fmt4);
            println!(
                "APr: {}  APc: {}  APf: {}",
                show(f.rare),
                show(f.common),
                show(f.frequent)
            );
        }
        let mut per = Table::new(&["category", "name", "AP"]);
        for (id, v) in &ap.per_class {
            let name = gt.category(*id).map_or("?", |c| c.name.as_str());
            per.push(vec![id.to_string(), name.to_string(), fmt4(*v)]);
        }
        print!("{}", per.to_text());
    }
    print_warnings(&warnings);
    if let Some(out) = &args.out {
        write_json(
            out,
            &Envelope {
                command: "eval-det",
                config: &s,
                result: &report,
                warnings: &warnings,
            },
        )?;
    }
    Ok(Status::from_warnings(&warnings))
}
