//! Batch front end: solve, map and score alignments from a TOML run config,
//! sweep over λ or ε, and generate the synthetic toy data.
//!
//! Exit codes: 0 success, 1 input/configuration/runtime error, 2 a solver
//! did not converge (artifacts are still written).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cruot::bcd::epsilon_sweep;
use cruot::data_io::{fmt_num, write_dataset, Lambda, RunArtifacts, RunConfig};
use cruot::entropic_map::{align, fit_map};
use cruot::evaluation::{label_transfer_accuracy, transported_mass};
use cruot::pipeline::{map_eval, prepare, Prepared};
use cruot::synthetic::toy_dataset;
use log::{info, warn};

const TOY_LABEL_COLUMN: &str = "component";

#[derive(Parser)]
#[command(
    name = "cruot",
    version,
    about = "Cost-regularized unbalanced optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the plan and cost map; write trace, cost map and plan summary.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve, fit the entropic map, align the source and score label transfer.
    MapEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run map-eval over a grid of λ or ε values and tabulate the results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated λ values; `inf` selects the balanced problem.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "epsilon_grid",
            required_unless_present = "epsilon_grid"
        )]
        lambda_grid: Vec<Lambda>,
        /// Comma-separated ε values, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        epsilon_grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the loaded (and subsampled) source and target tables as CSV.
    Subsample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the 3D two-ellipsoid source and 2D ellipse/square target.
    Toy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n_source: usize,
        #[arg(long, default_value_t = 500)]
        n_target: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Outcome of a command that ran to completion.
enum Status {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: solver did not converge; artifacts were written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<Status> {
    match command {
        Command::Solve { config, out } => cmd_solve(&config, out),
        Command::MapEval { config, out } => cmd_map_eval(&config, out),
        Command::Sweep {
            config,
            lambda_grid,
            epsilon_grid,
            out,
        } => {
            if lambda_grid.is_empty() {
                cmd_sweep_epsilon(&config, &epsilon_grid, out)
            } else {
                cmd_sweep_lambda(&config, &lambda_grid, out)
            }
        }
        Command::Subsample { config, out } => cmd_subsample(&config, out),
        Command::Toy {
            seed,
            n_source,
            n_target,
            out,
        } => cmd_toy(seed, n_source, n_target, &out),
    }
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<(RunConfig, Prepared)> {
    let mut cfg = RunConfig::from_file(config)
        .with_context(|| format!("reading config {}", config.display()))?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    let data = prepare(&cfg).context("loading data")?;
    info!(
        "source {}x{}, target {}x{}",
        data.source.len(),
        data.source.dim(),
        data.target.len(),
        data.target.dim()
    );
    Ok((cfg, data))
}

fn status(converged: bool) -> Status {
    if converged {
        Status::Done
    } else {
        Status::NotConverged
    }
}

fn cmd_solve(config: &Path, out: Option<PathBuf>) -> Result<Status> {
    let (cfg, data) = load(config, out)?;
    let result = data.solve(&cfg.solve_config()?)?;
    RunArtifacts {
        result: Some(&result),
        config: Some(&cfg),
        ..Default::default()
    }
    .write(&cfg.output_dir)?;
    Ok(status(result.converged))
}

fn cmd_map_eval(config: &Path, out: Option<PathBuf>) -> Result<Status> {
    let (cfg, data) = load(config, out)?;
    let eval = map_eval(&data, &cfg.solve_config()?, cfg.inner_epsilon(), cfg.knn_k)?;
    RunArtifacts {
        result: Some(&eval.result),
        report: Some(&eval.report),
        aligned: Some(&eval.aligned),
        config: Some(&cfg),
        map_converged: Some(eval.map_converged),
    }
    .write(&cfg.output_dir)?;
    println!("lta\t{}", fmt_num(eval.report.lta));
    Ok(status(eval.converged()))
}

fn cmd_sweep_lambda(config: &Path, grid: &[Lambda], out: Option<PathBuf>) -> Result<Status> {
    let (cfg, data) = load(config, out)?;
    let mut summary = String::from("lambda\tlta\ttransported_mass\tfinal_objective\tconverged\n");
    let mut all_converged = true;
    for &lambda in grid {
        let point_cfg = RunConfig {
            lambda,
            ..cfg.clone()
        };
        let eval = map_eval(
            &data,
            &point_cfg.solve_config()?,
            cfg.inner_epsilon(),
            cfg.knn_k,
        )
        .with_context(|| format!("lambda = {lambda}"))?;
        RunArtifacts {
            result: Some(&eval.result),
            report: Some(&eval.report),
            aligned: Some(&eval.aligned),
            config: Some(&point_cfg),
            map_converged: Some(eval.map_converged),
        }
        .write(cfg.output_dir.join(format!("lambda_{lambda}")))?;
        all_converged &= eval.converged();
        writeln!(
            summary,
            "{lambda}\t{}\t{}\t{}\t{}",
            fmt_num(eval.report.lta),
            fmt_num(transported_mass(&eval.result.plan)),
            fmt_num(eval.result.final_objective()),
            eval.converged()
        )?;
    }
    fs::write(cfg.output_dir.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(status(all_converged))
}

fn cmd_sweep_epsilon(config: &Path, grid: &[f64], out: Option<PathBuf>) -> Result<Status> {
    if grid.is_empty() {
        bail!("empty epsilon grid");
    }
    let (cfg, data) = load(config, out)?;
    let points = epsilon_sweep(
        &data.source,
        &data.a,
        &data.target,
        &data.b,
        &cfg.solve_config()?,
        grid,
    )?;
    let mut summary = String::from(
        "epsilon\tstripped_value\tlta\ttransported_mass\tfinal_objective\tconverged\n",
    );
    let mut all_converged = true;
    for point in &points {
        let result = &point.result;
        let model = fit_map(result, &data.source, &data.target, cfg.inner_epsilon())?;
        let aligned = align(&model, &data.source)?;
        let report = label_transfer_accuracy(&aligned, &data.target, cfg.knn_k)?
            .with_transported_mass(transported_mass(&result.plan));
        let mut point_cfg = cfg.clone();
        point_cfg.solve.epsilon = point.epsilon;
        RunArtifacts {
            result: Some(result),
            report: Some(&report),
            aligned: Some(&aligned),
            config: Some(&point_cfg),
            map_converged: Some(model.converged()),
        }
        .write(cfg.output_dir.join(format!("epsilon_{}", point.epsilon)))?;
        let converged = result.converged && model.converged();
        all_converged &= converged;
        writeln!(
            summary,
            "{}\t{}\t{}\t{}\t{}\t{converged}",
            point.epsilon,
            fmt_num(point.stripped_value),
            fmt_num(report.lta),
            fmt_num(transported_mass(&result.plan)),
            fmt_num(result.final_objective()),
        )?;
    }
    fs::write(cfg.output_dir.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(status(all_converged))
}

fn cmd_subsample(config: &Path, out: Option<PathBuf>) -> Result<Status> {
    let (cfg, data) = load(config, out)?;
    let label = cfg.label_column.as_deref().unwrap_or("label");
    fs::create_dir_all(&cfg.output_dir)?;
    write_dataset(&data.source, cfg.output_dir.join("source.csv"), label)?;
    write_dataset(&data.target, cfg.output_dir.join("target.csv"), label)?;
    if data.source.labels().is_none() {
        warn!("no label column configured; subsampling was not applied");
    }
    println!(
        "source\t{}\ntarget\t{}",
        data.source.len(),
        data.target.len()
    );
    Ok(Status::Done)
}

fn cmd_toy(seed: u64, n_source: usize, n_target: usize, out: &Path) -> Result<Status> {
    let (source, target) = toy_dataset(seed, n_source, n_target)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_dataset(&source, out.join("source.csv"), TOY_LABEL_COLUMN)?;
    write_dataset(&target, out.join("target.csv"), TOY_LABEL_COLUMN)?;
    Ok(Status::Done)
}
