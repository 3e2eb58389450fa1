use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Subcommand};
use groundkit_engine::pipeline::{checkpoint_path, Clients};
use groundkit_engine::{read_manifest, EngineConfig, Pipeline, RunOptions};
use serde::Serialize;

use crate::report::{config_line, write_json, Envelope, Status};

#[derive(Debug, Subcommand)]
pub enum EngineCommand {
    /// Start a fresh run, discarding any checkpoint.
    Run(EngineArgs),
    /// Continue from `<out>.ckpt`.
    Resume(EngineArgs),
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Image manifest, one JSON record per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Engine TOML config; all-mock defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Triplet store to write; the report goes to `<out>.report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Stop after this many newly finished images.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Serialize)]
struct EngineEcho<'a> {
    manifest: &'a Path,
    out: &'a Path,
    resume: bool,
    stop_after: Option<usize>,
    engine: &'a EngineConfig,
}

pub fn report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

pub fn run(cmd: EngineCommand, jobs: Option<usize>) -> anyhow::Result<Status> {
    let (args, resume) = match cmd {
        EngineCommand::Run(a) => (a, false),
        EngineCommand::Resume(a) => (a, true),
    };
    let mut config = match &args.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(j) = jobs {
        config.jobs = j;
    }
    let base_dir = args
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let client = config.build_client(&base_dir)?;
    let manifest = read_manifest(&args.manifest)?;
    if resume && !checkpoint_path(&args.out).exists() {
        eprintln!(
            "note: no checkpoint at {}, starting from scratch",
            checkpoint_path(&args.out).display()
        );
    }
    let pipeline = Pipeline::new(config.clone(), Clients::uniform(client))?;
    let opts = RunOptions {
        out: args.out.clone(),
        resume,
        stop_after: args.stop_after,
    };
    let report = pipeline
        .run(&manifest, &opts)
        .with_context(|| format!("engine run over {}", args.manifest.display()))?;

    let echo = EngineEcho {
        manifest: &args.manifest,
        out: &args.out,
        resume,
        stop_after: args.stop_after,
        engine: &config,
    };
    let mut warnings: Vec<String> = report
        .failures
        .iter()
        .map(|f| format!("image {} failed at {}: {}", f.id, f.stage, f.error))
        .collect();
    if !report.complete {
        warnings.push(format!(
            "run stopped with {} of {} images done; use `engine resume` to finish",
            report.annotated + report.skipped + report.failed,
            report.images
        ));
    }
    println!("groundkit engine");
    println!("{}", config_line(&echo)?);
    println!(
        "images: {}  annotated: {}  skipped: {}  failed: {}  resumed: {}  complete: {}",
        report.images,
        report.annotated,
        report.skipped,
        report.failed,
        report.resumed,
        report.complete
    );
    let c = &report.counts;
    println!(
        "extracted: {}  filtered: {}  grounded: {}  captioned: {}  flagged: {}  accepted: {}  rejected: {}",
        c.extracted, c.filtered, c.grounded, c.captioned, c.flagged, c.accepted, c.rejected
    );
    println!("diagnostics: {}", report.diagnostics.len());
    crate::report::print_warnings(&warnings);
    write_json(
        &report_path(&args.out),
        &Envelope {
            command: if resume {
                "engine resume"
            } else {
                "engine run"
            },
            config: &echo,
            result: &report,
            warnings: &warnings,
        },
    )?;
    Ok(Status::from_warnings(&warnings))
}
