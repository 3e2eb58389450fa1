use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use groundkit::grammar::{answer_to_detections, parse_grounded_answer, LabeledBox, ParseMode};
use groundkit::io::{read_boxes, read_text};
use groundkit::simulator::{fmt4, Table};
use serde::Serialize;

use crate::report::{config_line, print_warnings, write_json, Envelope, Status};

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Text file holding the model answer.
    #[arg(long)]
    answer: PathBuf,
    /// JSON array of input boxes, `[[x0, y0, x1, y1], ...]`.
    #[arg(long)]
    boxes: PathBuf,
    /// Number of object tokens given to the model; defaults to the box count.
    #[arg(long)]
    num_objects: Option<usize>,
    /// Fail on the first grammar error instead of recovering.
    #[arg(long)]
    strict: bool,
    /// Write detections and diagnostics as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ParseConfig {
    answer: PathBuf,
    boxes: PathBuf,
    num_objects: usize,
    mode: ParseMode,
}

#[derive(Debug, Serialize)]
struct ParseResult {
    answer: String,
    detections: Vec<LabeledBox>,
    diagnostics: Vec<groundkit::grammar::Diagnostic>,
}

pub fn run(args: ParseArgs) -> anyhow::Result<Status> {
    let text = read_text(&args.answer)?;
    let boxes = read_boxes(&args.boxes)?;
    let cfg = ParseConfig {
        num_objects: args.num_objects.unwrap_or(boxes.len()),
        mode: if args.strict {
            ParseMode::Strict
        } else {
            ParseMode::Lenient
        },
        answer: args.answer,
        boxes: args.boxes,
    };
    let parsed = parse_grounded_answer(&text, cfg.num_objects, cfg.mode)
        .with_context(|| format!("parsing {}", cfg.answer.display()))?;
    let (detections, resolve_diags) = answer_to_detections(&parsed.answer, &boxes, cfg.mode)?;
    let mut diagnostics = parsed.diagnostics;
    diagnostics.extend(resolve_diags);
    let warnings: Vec<String> = diagnostics
        .iter()
        .filter(|d| !d.kind.is_informational())
        .map(|d| d.to_string())
        .collect();

    println!("groundkit parse");
    println!("{}", config_line(&cfg)?);
    println!(
        "spans: {}  detections: {}",
        parsed.answer.spans().count(),
        detections.len()
    );
    let mut t = Table::new(&["phrase", "index", "xmin", "ymin", "xmax", "ymax"]);
    for d in &detections {
        let mut row = vec![d.label.clone(), d.index.to_string()];
        row.extend(d.bbox.to_array().iter().map(|v| fmt4(*v)));
        t.push(row);
    }
    print!("{}", t.to_text());
    for d in diagnostics.iter().filter(|d| d.kind.is_informational()) {
        eprintln!("note: {d}");
    }
    print_warnings(&warnings);
    if let Some(out) = &args.out {
        let result = ParseResult {
            answer: groundkit::grammar::serialize_grounded_answer(&parsed.answer),
            detections,
            diagnostics,
        };
        write_json(
            out,
            &Envelope {
                command: "parse",
                config: &cfg,
                result: &result,
                warnings: &warnings,
            },
        )?;
    }
    Ok(Status::from_warnings(&warnings))
}
