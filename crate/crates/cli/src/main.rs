use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pubmto::analysis::write_report;
use pubmto::data::{distance_to_segment, gen_ranking, ToyConfig};
use pubmto::harness::{
    analyze_dir, run_grid, run_toy, run_training, DatasetSpec, ExperimentConfig, GridSpec, MtoMethod,
};
use pubmto::{MtoError, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pubmto", version, about = "Multi-task optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-bowl trajectory study; writes trajectory_<k>.csv per init point.
    Toy(Common),
    /// Train one model per seed; writes trace.jsonl and result.json.
    Train(Common),
    /// Run the experiment grid and its aggregate report.
    Grid(Common),
    /// Rebuild the grid report from the trace files under --out.
    Analyze(Common),
    /// Generate the synthetic ranking dataset as CSV.
    GenData(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config (grid also accepts a full grid spec).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    solve_every: Option<usize>,
    /// Grid workers; defaults to the number of available cores.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.method {
            cfg.mto_method = m.parse()?;
        }
        if let Some(s) = self.solve_every {
            cfg.solve_every = s;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn threads(&self) -> Result<usize> {
        match self.threads {
            Some(0) => Err(MtoError::Config("--threads must be >= 1".into())),
            Some(t) => Ok(t),
            None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }
}

fn print_json(v: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn toy(args: &Common) -> Result<()> {
    let mut cfg = args.load()?;
    if let DatasetSpec::Ranking(_) = cfg.dataset {
        cfg.dataset = DatasetSpec::Toy(ToyConfig::default());
    }
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let runs = run_toy(&cfg, Some(&args.out))?;
    let toy = cfg.toy()?;
    let finals: Vec<_> = runs
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let p = t.last();
            json!({
                "init": k,
                "final": p,
                "distance_to_front": distance_to_segment(p, toy.c1, toy.c2),
            })
        })
        .collect();
    let summary = json!({ "method": cfg.mto_method.as_str(), "trajectories": finals });
    std::fs::write(args.out.join("toy_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    print_json(&summary);
    Ok(())
}

fn train(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let dir = if cfg.seeds.len() == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed{seed}"))
        };
        let mut run_cfg = cfg.clone();
        run_cfg.output_dir = Some(dir.clone());
        let r = run_training(&run_cfg, seed)?;
        rows.push(json!({
            "seed": seed,
            "best_epoch": r.best_epoch,
            "task_aucs": r.summary.task_aucs,
            "out": dir,
        }));
    }
    print_json(&json!({ "method": cfg.mto_method.as_str(), "runs": rows }));
    Ok(())
}

fn load_grid(args: &Common) -> Result<GridSpec> {
    let mut spec = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| MtoError::Config(format!("{}: {e}", p.display())))?;
            match toml::from_str::<GridSpec>(&text) {
                Ok(spec) => spec,
                Err(_) => GridSpec::full_shape(ExperimentConfig::from_toml_str(&text)?),
            }
        }
        None => GridSpec::full_shape(ExperimentConfig::default()),
    };
    if let Some(m) = &args.method {
        spec.methods = m
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<MtoMethod>>>()?;
    }
    if let Some(s) = args.solve_every {
        spec.base.solve_every = s;
    }
    if let Some(seed) = args.seed {
        spec.run_seeds = vec![seed];
    }
    spec.base.validate()?;
    Ok(spec)
}

fn grid(args: &Common) -> Result<()> {
    let spec = load_grid(args)?;
    let threads = args.threads()?;
    let outcome = run_grid(&spec, &args.out, threads)?;
    let r = &outcome.report;
    print_json(&json!({
        "cells": outcome.results.len(),
        "failures": r.failures.len(),
        "out": args.out,
    }));
    Ok(())
}

fn analyze(args: &Common) -> Result<()> {
    let report = analyze_dir(&args.out)?;
    write_report(&report, &args.out)?;
    print_json(&json!({
        "cells": report.cells.len(),
        "failures": report.failures.len(),
        "out": args.out,
    }));
    Ok(())
}

fn gen_data(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let mut data_cfg = *cfg.ranking()?;
    if let Some(seed) = args.seed {
        data_cfg.seed = seed;
    }
    let data = gen_ranking(&data_cfg)?;
    std::fs::create_dir_all(&args.out)?;
    data.write_csv(&args.out.join("data.csv"))?;
    data.write_report(&args.out.join("gen_report.json"))?;
    print_json(&serde_json::to_value(data.report())?);
    Ok(())
}

fn exit_code(e: &MtoError) -> u8 {
    match e {
        MtoError::Config(_) => 2,
        MtoError::Divergence { .. } => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Toy(a) => toy(a),
        Command::Train(a) => train(a),
        Command::Grid(a) => grid(a),
        Command::Analyze(a) => analyze(a),
        Command::GenData(a) => gen_data(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
