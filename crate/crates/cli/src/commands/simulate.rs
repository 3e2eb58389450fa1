use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use groundkit::metrics::{evaluate, EvalConfig};
use groundkit::simulator::{
    compare_pipelines, comparison_table, fmt4, generate_dataset, quantization_sweep,
    simulate_regression, simulate_retrieval, sweep_table, ProposalModelSpec, RegressionModelSpec,
    SceneSpec, SizeDist, Table,
};
use serde::{Deserialize, Serialize};

use crate::report::{config_line, write_json, Envelope, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Coordinate quantization round-trip IoU per frame size.
    Quant,
    /// Index retrieval over synthetic proposals.
    Retrieval,
    /// Token-by-token coordinate emission.
    Regression,
    /// Both pipelines on the same scenes.
    Compare,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// TOML spec; every section is optional.
    #[arg(long, alias = "spec")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the table as CSV.
    #[arg(long)]
    csv: bool,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub frames: Vec<f64>,
    pub bins: u32,
    pub sizes: SizeDist,
    pub trials: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            frames: vec![1000.0, 2000.0, 4000.0, 8000.0],
            bins: 1000,
            sizes: SizeDist::Fixed { w: 20.0, h: 20.0 },
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub seed: u64,
    pub images: usize,
    pub scene: SceneSpec,
    pub retrieval: ProposalModelSpec,
    pub regression: RegressionModelSpec,
    pub sweep: SweepSpec,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            seed: 2024,
            images: 1000,
            scene: SceneSpec::default(),
            retrieval: ProposalModelSpec::default(),
            regression: RegressionModelSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

#[derive(Serialize)]
struct SimConfig<'a> {
    experiment: Experiment,
    spec: &'a SimSpec,
}

fn stats_table(rows: &[(&str, String)]) -> Table {
    let mut t = Table::new(&["metric", "value"]);
    for (k, v) in rows {
        t.push(vec![k.to_string(), v.clone()]);
    }
    t
}

pub fn run(args: SimulateArgs) -> anyhow::Result<Status> {
    let mut spec: SimSpec = super::load_toml(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    anyhow::ensure!(spec.images > 0, "images must be positive");
    let (table, result): (Table, serde_json::Value) = match args.experiment {
        Experiment::Quant => {
            let w = &spec.sweep;
            let rows = quantization_sweep(&w.frames, w.bins, &w.sizes, w.trials, spec.seed)
                .context("invalid sweep spec")?;
            (sweep_table(&rows), serde_json::to_value(&rows)?)
        }
        Experiment::Retrieval => {
            let gt = generate_dataset(&spec.scene, spec.images, spec.seed)
                .context("invalid scene spec")?;
            let dets = simulate_retrieval(&gt, &spec.scene, &spec.retrieval, spec.seed)
                .context("invalid retrieval spec")?;
            let report = evaluate(&dets, &gt, &EvalConfig::default());
            let pr = &report.pr[0];
            let t = stats_table(&[
                ("objects", (pr.tp + pr.fn_).to_string()),
                ("recall@0.5", fmt4(pr.recall)),
                ("precision@0.5", fmt4(pr.precision)),
                (
                    "mAP",
                    report.ap.as_ref().map_or("-".into(), |a| fmt4(a.map)),
                ),
                ("expected_recall", fmt4(spec.retrieval.expected_recall())),
            ]);
            (t, serde_json::to_value(&report)?)
        }
        Experiment::Regression => {
            let gt = generate_dataset(&spec.scene, spec.images, spec.seed)
                .context("invalid scene spec")?;
            let out = simulate_regression(&gt, &spec.scene.frame, &spec.regression, spec.seed)
                .context("invalid regression spec")?;
            let report = evaluate(&out.detections, &gt, &EvalConfig::default());
            let pr = &report.pr[0];
            let t = stats_table(&[
                ("objects", out.objects.to_string()),
                ("emitted", out.emitted.to_string()),
                ("intact", out.intact.to_string()),
                ("emission_fraction", fmt4(out.emission_fraction())),
                ("survival", fmt4(spec.regression.survival())),
                ("recall@0.5", fmt4(pr.recall)),
                ("precision@0.5", fmt4(pr.precision)),
            ]);
            let v = serde_json::json!({
                "objects": out.objects,
                "emitted": out.emitted,
                "intact": out.intact,
                "emission_fraction": out.emission_fraction(),
                "survival": spec.regression.survival(),
                "evaluation": report,
            });
            (t, v)
        }
        Experiment::Compare => {
            let r = compare_pipelines(
                &spec.scene,
                &spec.retrieval,
                &spec.regression,
                spec.images,
                spec.seed,
            )
            .context("invalid simulation spec")?;
            (comparison_table(&r), serde_json::to_value(&r)?)
        }
    };

    let cfg = SimConfig {
        experiment: args.experiment,
        spec: &spec,
    };
    if args.csv {
        print!("{}", table.to_csv()?);
    } else {
        println!("groundkit simulate");
        println!("{}", config_line(&cfg)?);
        print!("{}", table.to_text());
        if let Some(wins) = result.get("retrieval_wins").and_then(|v| v.as_bool()) {
            println!("winner: {}", if wins { "retrieval" } else { "regression" });
        }
    }
    if let Some(out) = &args.out {
        write_json(
            out,
            &Envelope {
                command: "simulate",
                config: &cfg,
                result: &result,
                warnings: &[],
            },
        )?;
    }
    Ok(Status::Clean)
}
