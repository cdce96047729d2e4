use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use rngdram::config::ExperimentConfig;
use rngdram::dram::AddressLayout;
use rngdram::harness::{self, Execution, Harness, PointResult};
use rngdram::system::SystemConfig;
use rngdram::workloads::{classify, Trace, TraceSpec};

/// Cycle-level simulator of a DRAM memory system with a DRAM-based TRNG.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the configured machine over every workload (sweep axes ignored).
    Run {
        config: PathBuf,
        /// CSV output file; stdout if omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Run the Cartesian product of the sweep axes.
    Experiment {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Write a trace described by a TOML trace spec.
    GenTrace {
        spec: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Experiment config supplying DRAM geometry and core clock.
        #[arg(long)]
        system: Option<PathBuf>,
    },
    /// Print the MPKI and intensity class of a trace.
    Classify { trace: PathBuf },
    /// Summarize a results CSV per configuration and metric.
    Report {
        csv: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn simulate(config: &Path, out: &Option<PathBuf>, sequential: bool, sweep: bool) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
    let h = Harness::new(cfg, base_dir(config)).with_execution(exec);
    let results = if sweep { h.sweep() } else { h.run_base() };
    let mut w = output(out)?;
    harness::write_csv(&results, &mut w)?;
    w.flush()?;
    Ok(report_failures(&results))
}

fn report_failures(results: &[PointResult]) -> ExitCode {
    let failed: Vec<&PointResult> = results.iter().filter(|r| r.result.is_err()).collect();
    for r in &failed {
        if let Err(e) = &r.result {
            eprintln!("point {:?} ({}) failed: {e}", r.point, r.workload);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn gen_trace(spec: &Path, out: &Option<PathBuf>, system: &Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let trace_spec: TraceSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let sys = match system {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?.system,
        None => SystemConfig::default(),
    };
    sys.validate()?;
    let layout = AddressLayout::new(&sys.dram)?;
    let trace = trace_spec.build(&layout, sys.core.frequency, sys.core.issue_width, &base_dir(spec))?;
    let mut w = output(out)?;
    write!(w, "{trace}")?;
    w.flush()?;
    Ok(())
}

fn classify_trace(path: &Path) -> Result<()> {
    let trace = Trace::load(path)?;
    let s = classify(&trace);
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["instructions", "requests", "rng_requests", "mpki", "class"])?;
    w.write_record([
        s.instructions.to_string(),
        s.requests.to_string(),
        s.rng_requests.to_string(),
        format!("{}", s.mpki),
        format!("{:?}", s.class),
    ])?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { config, out, sequential } => simulate(config, out, *sequential, false),
        Cmd::Experiment { config, out, sequential } => simulate(config, out, *sequential, true),
        Cmd::GenTrace { spec, out, system } => gen_trace(spec, out, system).map(|_| ExitCode::SUCCESS),
        Cmd::Classify { trace } => classify_trace(trace).map(|_| ExitCode::SUCCESS),
        Cmd::Report { csv, out } => (|| {
            let input = File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
            let mut w = output(out)?;
            harness::report(input, &mut w)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        })(),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
