use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robust_lowrank::harness::{
    presets, read_records, run_experiment_with_threads, slopes, summarize, write_outputs,
    write_summary, ExperimentSpec, Method, SummaryRow,
};
use robust_lowrank::{Error, Result};

/// Robust low-rank estimation studies.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study described by a TOML spec and write its reports.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's replication count.
        #[arg(long)]
        reps: Option<usize>,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Summarize a records file.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print log-log slopes of mean error against sample size.
    Slope {
        #[arg(long = "in")]
        input: PathBuf,
        /// Only this series label, e.g. `robust_d30x30_eta0.4`.
        #[arg(long)]
        series: Option<String>,
    },
    /// Robust vs standard recovery of four binary images under both noise designs.
    Images {
        /// Image file; the bundled glyphs when omitted.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Also write reports, one subdirectory per noise design.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:>6} {:>6} {:>9} {:>20} {:>9}  blocks",
        "n", "eta", "method", "err_fro", "failures"
    );
    for s in rows {
        let cell = s
            .err_fro
            .map(|m| m.table_cell())
            .unwrap_or_else(|| "-".into());
        let blocks: Vec<String> = s.block_err_fro.iter().map(|m| m.table_cell()).collect();
        println!(
            "{:>6} {:>6} {:>9} {:>20} {:>9}  {}",
            s.n,
            s.eta1,
            s.method.as_str(),
            cell,
            s.failures,
            if blocks.len() > 1 {
                blocks.join(" ")
            } else {
                String::new()
            }
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            spec,
            out,
            seed,
            reps,
            threads,
        } => {
            let mut spec = ExperimentSpec::from_file(&spec)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(reps) = reps {
                spec.replications = reps;
            }
            let records = run_experiment_with_threads(&spec, threads)?;
            let summary = write_outputs(&out, &records)?;
            print_summary(&summary);
            for row in slopes(&summary) {
                if let Some(slope) = row.slope {
                    println!("slope {} {slope:.4}", row.series.label);
                }
            }
        }
        Command::Summarize { input, out } => {
            let rows = summarize(&read_records(&input)?)?;
            write_summary(&out, &rows)?;
            print_summary(&rows);
        }
        Command::Slope { input, series } => {
            let rows = slopes(&summarize(&read_records(&input)?)?);
            let chosen: Vec<_> = rows
                .iter()
                .filter(|r| series.as_ref().is_none_or(|s| &r.series.label == s))
                .collect();
            if chosen.is_empty() {
                let known: Vec<&str> = rows.iter().map(|r| r.series.label.as_str()).collect();
                return Err(Error::BadSpec(format!(
                    "no series {series:?}; available: {}",
                    known.join(", ")
                )));
            }
            for r in chosen {
                match r.slope {
                    Some(slope) => println!("{} {slope:.6}", r.series.label),
                    None => println!("{} (fewer than three sample sizes)", r.series.label),
                }
            }
        }
        Command::Images {
            fixtures,
            n,
            reps,
            seed,
            threads,
            out,
        } => {
            for (name, noise) in [
                ("product", presets::ImageNoise::Product),
                ("columns", presets::ImageNoise::Columns),
            ] {
                let spec = presets::image_recovery(fixtures.clone(), noise, n, reps, seed);
                let records = run_experiment_with_threads(&spec, threads)?;
                let rows = match &out {
                    Some(dir) => write_outputs(&dir.join(name), &records)?,
                    None => summarize(&records)?,
                };
                println!("noise: {name}");
                print_summary(&rows);
                let total = |m: Method| rows.iter().find(|r| r.method == m).and_then(|r| r.err_fro);
                if let (Some(r), Some(s)) = (total(Method::Robust), total(Method::Standard)) {
                    println!("robust/standard mean error ratio {:.3}", r.mean / s.mean);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
