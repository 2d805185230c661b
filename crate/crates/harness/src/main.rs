use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use emesh_harness::calibrate::{calibrate, CalibrationOptions, CalibrationTarget};
use emesh_harness::experiment::{run_experiment, run_repetition, ExperimentPlan};
use emesh_harness::report::{collect_dir, emit_plot, write_result, PlotGroup};
use emesh_harness::scenario::{load_scenario, write_scenario, Role};

#[derive(Parser)]
#[command(name = "emesh", about = "Emergency mesh experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment (1: 5/min, 2: 10/min, 3: 20/min, 12 minutes each).
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        experiment: u8,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        reps: u32,
        #[arg(long)]
        out: PathBuf,
        /// Also write the first repetition's event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Parse and check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Draw response-time boxes and loss bars from a directory of CSVs.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit interference loss and radio range to target loss and hop figures.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
        /// Percent of requests without any offer.
        #[arg(long)]
        target_loss: f64,
        #[arg(long)]
        target_hops: f64,
        #[arg(long, default_value_t = 0xCA1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        reps: u32,
        /// Write the calibrated scenario here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { scenario, experiment, seed, reps, out, trace } => {
            let cfg = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let plan = ExperimentPlan::numbered(experiment, seed)?.with_repetitions(reps);
            let started = Instant::now();
            let result = run_experiment(&cfg, &plan)?;
            write_result(&result, &out)?;
            if let Some(path) = trace {
                let (_, t) = run_repetition(&cfg, &plan, 0)?;
                t.write_jsonl(fs::File::create(&path)?)?;
            }
            for rep in &result.repetitions {
                println!("rep {}: {}", rep.repetition, summary_line(&rep.aggregates));
            }
            println!("all:   {}", summary_line(&result.aggregates));
            eprintln!("{:.1}s", started.elapsed().as_secs_f64());
        }
        Cmd::Validate { scenario } => {
            let cfg = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            println!(
                "{}: ok ({} relays, {} proxy servers, {} proxy clients)",
                cfg.name,
                cfg.count(Role::Relay),
                cfg.count(Role::ProxyServer),
                cfg.count(Role::ProxyClient) + cfg.count(Role::Source),
            );
        }
        Cmd::Plot { input, out } => {
            let groups: Vec<PlotGroup> = collect_dir(&input)?
                .into_iter()
                .map(|((scenario, experiment), records)| PlotGroup { scenario, experiment, records })
                .collect();
            if groups.is_empty() {
                bail!("no result CSVs in {}", input.display());
            }
            emit_plot(&groups, &out)?;
            println!("{} groups -> {}", groups.len(), out.display());
        }
        Cmd::Calibrate { scenario, target_loss, target_hops, seed, reps, out } => {
            let cfg = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let opts = CalibrationOptions { seed, reps, ..CalibrationOptions::default() };
            let target = CalibrationTarget { loss_pct: target_loss, hops: target_hops };
            let (fitted, report) = calibrate(&cfg, target, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = out {
                fs::write(&path, write_scenario(&fitted))?;
            }
        }
    }
    Ok(())
}

fn summary_line(a: &emesh_harness::experiment::Aggregates) -> String {
    let fmt = |s: Option<emesh_harness::experiment::Stats>| match s {
        Some(s) => format!("{:.2} (sd {:.2}, median {:.2})", s.mean, s.std_dev, s.median),
        None => "n/a".into(),
    };
    format!(
        "{} requests, loss {:.2}%, hops {}, response ms {}",
        a.requests,
        a.loss_pct,
        fmt(a.hops),
        fmt(a.response_ms)
    )
}
