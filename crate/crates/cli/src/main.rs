use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mdbench::bench::{
    default_jobs, read_container, report, run_benchmark, run_cell, write_container, write_summary, summarize, read_records,
    Budget, Container, HyperGrid, Manifest, Method, RecordWriter,
};
use mdbench::noise::NoiseSpec;
use mdbench::systems::{generate, lookup, registry, GenerateOptions, SystemKind};

#[derive(Parser)]
#[command(name = "mdbench", version, about = "Equation-discovery benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the registered systems.
    ListSystems {
        #[arg(long)]
        json: bool,
    },
    /// Simulate a system and write its dataset container.
    Generate {
        #[arg(long)]
        system: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        grid_scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add Gaussian noise at a target SNR to a dataset container.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        snr: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search one method on one dataset and append the record.
    Discover {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        /// Hyperparameter grid as JSON; the published grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "MDBENCH_JOBS")]
        jobs: Option<usize>,
        /// Wall-clock limit for the whole grid, seconds.
        #[arg(long)]
        budget: Option<f64>,
        /// Seed for subdomain placement and ensemble draws; the dataset seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a results file as CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a manifest, resuming from an existing results file.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Summary CSV written after the run.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, env = "MDBENCH_JOBS")]
        jobs: Option<usize>,
    },
    /// Print a method's default grid as JSON.
    Grid {
        #[arg(long)]
        method: Method,
        #[arg(long, default_value = "pde")]
        kind: String,
    },
}

fn parse_kind(s: &str) -> Result<SystemKind> {
    match s.to_ascii_lowercase().as_str() {
        "ode" => Ok(SystemKind::Ode),
        "pde" => Ok(SystemKind::Pde),
        _ => bail!("unknown kind `{s}` (expected ode or pde)"),
    }
}

fn list_systems(json: bool) -> Result<()> {
    let specs = registry();
    if json {
        let rows: Vec<serde_json::Value> = specs
            .iter()
            .map(|s| {
                serde_json::json!({
                    "name": s.name,
                    "kind": s.kind.as_str(),
                    "d": s.d,
                    "D": s.space.len(),
                    "time_points": s.time.count,
                    "space_points": s.space.iter().map(|a| a.count).collect::<Vec<_>>(),
                    "description": s.description,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("{:<22} {:<4} {:>2} {:>2} {:>6}  {}", "name", "kind", "d", "D", "N_t", "description");
    for s in specs {
        println!(
            "{:<22} {:<4} {:>2} {:>2} {:>6}  {}",
            s.name,
            s.kind.as_str(),
            s.d,
            s.space.len(),
            s.time.count,
            s.description
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::ListSystems { json } => list_systems(json)?,
        Command::Generate { system, seed, grid_scale, out } => {
            let spec = lookup(&system)?;
            let ds = generate(
                &spec,
                &GenerateOptions {
                    seed,
                    grid_scale,
                    substeps: None,
                },
            )?;
            write_container(&Container::from(ds), &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Corrupt { input, snr, seed, out } => {
            let mut c = read_container(&input).with_context(|| format!("reading {}", input.display()))?;
            if !c.dataset.is_clean() {
                bail!("{} is already noisy", input.display());
            }
            c.dataset = c.dataset.corrupt(&NoiseSpec::snr(snr, seed))?;
            write_container(&c, &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Discover {
            method,
            data,
            grid,
            out,
            jobs,
            budget,
            seed,
        } => {
            let ds = read_container(&data).with_context(|| format!("reading {}", data.display()))?.dataset;
            let grid = match grid {
                Some(p) => serde_json::from_str::<HyperGrid>(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => method.default_grid(ds.kind()),
            };
            let mut b = Budget::default();
            if let Some(secs) = budget {
                b.per_cell_secs = secs;
            }
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or_else(default_jobs)).build()?;
            let seed = seed.unwrap_or(ds.meta.dataset_seed);
            let record = pool.install(|| run_cell(&ds, method, &grid, b, seed));
            RecordWriter::open(&out)?.append(&record)?;
            println!("{}", serde_json::to_string(&record)?);
            if !record.is_ok() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { input, out } => {
            let rows = report(&input, &out)?;
            println!("{} summary rows written to {}", rows.len(), out.display());
        }
        Command::Run {
            manifest,
            out,
            summary,
            jobs,
        } => {
            let m = Manifest::load(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
            let s = run_benchmark(&m, &out, jobs.unwrap_or_else(default_jobs))?;
            if let Some(path) = summary {
                write_summary(&summarize(&read_records(&out)?), path)?;
            }
            println!("{} written, {} resumed, {} errors", s.written, s.resumed, s.errors);
            if !s.success() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Grid { method, kind } => {
            let kind = parse_kind(&kind)?;
            if !method.supports(kind) {
                bail!("{method} does not handle {} data", kind.as_str());
            }
            println!("{}", serde_json::to_string_pretty(&method.default_grid(kind))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
