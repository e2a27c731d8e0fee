use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cellflow::format::{load_pipeline, read_dataset, write_output, LoadError};
use cellflow::graph::export_dot;
use cellflow::{ExecutionReport, RunOptions, ValueGraph, ValueSink};
use clap::{Parser, Subcommand};

/// Exit status for pipelines that fail to parse or validate.
const EXIT_INVALID: u8 = 2;
/// Exit status for failed executions.
const EXIT_FAILED: u8 = 1;

#[derive(Parser)]
#[command(
    name = "cellflow",
    version,
    about = "Run dataflow pipelines over hierarchical datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a pipeline description and report every problem found.
    Validate { pipeline: PathBuf },
    /// Print the dependency graph in Graphviz dot format.
    Graph { pipeline: PathBuf },
    /// Execute a pipeline over a dataset.
    Run {
        pipeline: PathBuf,
        dataset: PathBuf,
        /// Where to write persisted products (JSON Lines).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long, env = "CELLFLOW_WIDTH")]
        width: Option<usize>,
        /// Open cells per level before the dataset reader pauses.
        #[arg(long)]
        max_inflight_cells: Option<usize>,
        /// Children a single unfold may create.
        #[arg(long)]
        max_unfold: Option<usize>,
        /// Omit timing-dependent lines from the summary.
        #[arg(long)]
        deterministic_summary: bool,
    },
}

enum Failure {
    Invalid(LoadError),
    Exec(cellflow::ExecError),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load(path: &Path) -> Result<ValueGraph, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Other)?;
    load_pipeline(&text).map_err(Failure::Invalid)
}

fn write_summary(out: &mut impl Write, report: &ExecutionReport, deterministic: bool) -> io::Result<()> {
    write!(out, "{}", report.summary)?;
    writeln!(out, "persisted: {}", report.persisted)?;
    for n in &report.nodes {
        if deterministic {
            writeln!(out, "node {}: invocations={}", n.name, n.invocations)?;
        } else {
            writeln!(
                out,
                "node {}: invocations={} max_in_flight={}",
                n.name, n.invocations, n.max_in_flight
            )?;
        }
    }
    if !deterministic {
        writeln!(out, "wall_time_ms: {}", report.wall_time.as_millis())?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { pipeline } => {
            let graph = load(&pipeline)?;
            println!("ok: {} nodes, {} sources", graph.nodes().len(), graph.sources().len());
        }
        Command::Graph { pipeline } => {
            print!("{}", export_dot(&load(&pipeline)?));
        }
        Command::Run {
            pipeline,
            dataset,
            output,
            width,
            max_inflight_cells,
            max_unfold,
            deterministic_summary,
        } => {
            let graph = load(&pipeline)?;
            let mut options = match width {
                Some(w) => RunOptions::with_width(w),
                None => RunOptions::default(),
            };
            if let Some(n) = max_inflight_cells {
                options.max_inflight_cells = n;
            }
            if let Some(n) = max_unfold {
                options.max_unfold_children = n;
            }
            let input = File::open(&dataset).with_context(|| format!("opening {}", dataset.display()))?;
            let source = read_dataset(BufReader::new(input), graph.hierarchy());
            let mut sink = ValueSink::new();
            let report = cellflow::run(&graph, source, &options, &mut sink).map_err(Failure::Exec)?;
            if let Some(path) = output {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_output(BufWriter::new(file), &sink.into_sorted())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let stdout = io::stdout();
            write_summary(&mut stdout.lock(), &report, deterministic_summary).context("writing summary")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(LoadError::Parse(e))) => {
            eprintln!("error[ParseError]: {e}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Invalid(LoadError::Invalid(errors))) => {
            for e in &errors {
                eprintln!(
                    "error[{}]: nodes [{}] label `{}`: {}",
                    e.kind,
                    e.nodes.join(", "),
                    e.label,
                    e.detail
                );
            }
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Exec(e)) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(EXIT_FAILED)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
