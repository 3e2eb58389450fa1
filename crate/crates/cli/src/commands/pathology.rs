use std::path::PathBuf;

use clap::Args;
use groundkit::io::{parse_response_dialect, read_boxes, read_text, IoDiagnostic};
use groundkit::pathology::{
    box_survival, detect_arith_repetition, detect_truncation, BoxTokenErrorModel, RepetitionConfig,
    RepetitionRun, TruncationReport,
};
use groundkit::simulator::{fmt4, Table};
use groundkit::BBox;
use serde::Serialize;

use crate::report::{config_line, write_json, Envelope, Status};

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true))]
pub struct PathologyArgs {
    /// Raw model response in the `{class: .., rect: [..]}` dialect.
    #[arg(long, group = "input")]
    transcript: Option<PathBuf>,
    /// JSON array of boxes in emission order.
    #[arg(long, group = "input")]
    boxes: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    min_run: usize,
    /// Allowed spread of the per-coordinate step inside a run, in pixels.
    #[arg(long, default_value_t = 1.0)]
    tolerance: f64,
    /// Output word limit used for the truncation check.
    #[arg(long, default_value_t = 1024)]
    max_len: usize,
    /// Per-token accuracies for the survival table, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.97,0.99")]
    p: Vec<f64>,
    #[arg(long, default_value_t = BoxTokenErrorModel::DEFAULT_TOKENS_PER_BOX)]
    tokens: u32,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PathologyConfig {
    input: PathBuf,
    kind: &'static str,
    repetition: RepetitionConfig,
    max_len: usize,
    p: Vec<f64>,
    tokens: u32,
}

#[derive(Debug, Serialize)]
struct SurvivalRow {
    p: f64,
    tokens_per_box: u32,
    survival: f64,
}

#[derive(Debug, Serialize)]
struct PathologyReport {
    boxes: usize,
    unparsed: Vec<IoDiagnostic>,
    runs: Vec<RepetitionRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<TruncationReport>,
    survival: Vec<SurvivalRow>,
}

pub fn run(args: PathologyArgs) -> anyhow::Result<Status> {
    let repetition = RepetitionConfig {
        min_run: args.min_run,
        tolerance: args.tolerance,
    };
    repetition.validate()?;
    let models = args
        .p
        .iter()
        .map(|&p| BoxTokenErrorModel::new(p, args.tokens))
        .collect::<Result<Vec<_>, _>>()?;

    let (cfg, boxes, unparsed, truncation) = if let Some(path) = args.transcript {
        let text = read_text(&path)?;
        let parsed = parse_response_dialect(&text);
        let boxes: Vec<BBox> = parsed.boxes.iter().map(|b| b.bbox).collect();
        let trunc = detect_truncation(&text, args.max_len);
        (("transcript", path), boxes, parsed.unparsed, Some(trunc))
    } else {
        let path = args.boxes.expect("clap enforces one input");
        let boxes = read_boxes(&path)?;
        (("boxes", path), boxes, Vec::new(), None)
    };
    let cfg = PathologyConfig {
        kind: cfg.0,
        input: cfg.1,
        repetition,
        max_len: args.max_len,
        p: args.p,
        tokens: args.tokens,
    };
    let runs = detect_arith_repetition(&boxes, &repetition)?;
    let report = PathologyReport {
        boxes: boxes.len(),
        unparsed,
        runs,
        truncation,
        survival: models
            .iter()
            .map(|m| SurvivalRow {
                p: m.p,
                tokens_per_box: m.tokens_per_box,
                survival: box_survival(m),
            })
            .collect(),
    };

    println!("groundkit pathology");
    println!("{}", config_line(&cfg)?);
    println!(
        "boxes: {}  unparsed lines: {}",
        report.boxes,
        report.unparsed.len()
    );
    println!("repetition runs: {}", report.runs.len());
    if !report.runs.is_empty() {
        let mut t = Table::new(&["start", "length", "d_xmin", "d_ymin", "d_xmax", "d_ymax"]);
        for r in &report.runs {
            let mut row = vec![r.start.to_string(), r.length.to_string()];
            row.extend(r.delta.iter().map(|d| fmt4(*d)));
            t.push(row);
        }
        print!("{}", t.to_text());
    }
    if let Some(tr) = &report.truncation {
        let reasons: Vec<String> = tr
            .reasons
            .iter()
            .map(|r| serde_json::to_value(r).map(|v| v.as_str().unwrap_or_default().to_string()))
            .collect::<Result<_, _>>()?;
        if tr.truncated {
            println!("truncated: yes ({})", reasons.join(", "));
        } else {
            println!("truncated: no");
        }
    }
    let mut t = Table::new(&["p", "tokens", "survival"]);
    for r in &report.survival {
        t.push(vec![
            fmt4(r.p),
            r.tokens_per_box.to_string(),
            fmt4(r.survival),
        ]);
    }
    print!("{}", t.to_text());
    if let Some(out) = &args.out {
        write_json(
            out,
            &Envelope {
                command: "pathology",
                config: &cfg,
                result: &report,
                warnings: &[],
            },
        )?;
    }
    Ok(Status::Clean)
}
