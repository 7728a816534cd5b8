use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use tilequorum::adversary::{compile, InvalidScenario, ScenarioSpec};
use tilequorum::baselines::run_all;
use tilequorum::metrics::{export, Format, MetricsRecord};
use tilequorum::scenarios;
use tilequorum::system::{RunOptions, RunReport};

/// Exit statuses; a batch reports the largest of its runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Ok = 0,
    Usage = 1,
    Violation = 2,
    Exhausted = 3,
}

#[derive(Parser)]
#[command(name = "tilequorum", version, about = "Simulate quorum agreement over rejuvenated FPGA tiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under each of its protocols and write the metrics.
    Run {
        /// Scenario file, or the name of a built-in scenario.
        scenario: String,
        #[command(flatten)]
        common: Common,
        /// Metrics destination; defaults to `<scenario name>.<format>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every `*.json` scenario in a directory and merge the metrics.
    Batch {
        dir: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Merged metrics destination; defaults to `batch.<format>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Check a scenario against the fault bound and the run invariants.
    Verify {
        scenario: String,
        #[command(flatten)]
        common: Common,
        /// Succeed only if the run delivers at least one wrong reply.
        #[arg(long)]
        expect_violation: bool,
    },
    /// Print the built-in scenarios, optionally writing them as files.
    ListScenarios {
        #[arg(long, value_name = "DIR")]
        export: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Replaces the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[arg(long, default_value_t = RunOptions::default().max_cycles)]
    max_cycles: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Jsonl,
}

impl OutFormat {
    fn format(self) -> Format {
        match self {
            OutFormat::Csv => Format::Csv,
            OutFormat::Jsonl => Format::Jsonl,
        }
    }

    fn ext(self) -> &'static str {
        match self {
            OutFormat::Csv => "csv",
            OutFormat::Jsonl => "jsonl",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Status::Usage as u8 } else { 0 });
        }
    };
    let status = match dispatch(cli.command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            Status::Usage
        }
    };
    ExitCode::from(status as u8)
}

fn dispatch(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Run { scenario, common, out } => cmd_run(&scenario, &common, out),
        Command::Batch { dir, common, out, jobs } => cmd_batch(&dir, &common, out, jobs),
        Command::Verify { scenario, common, expect_violation } => cmd_verify(&scenario, &common, expect_violation),
        Command::ListScenarios { export } => cmd_list(export),
    }
}

/// Reads a scenario file, falling back to a built-in of that name.
fn load(arg: &str, seed: Option<u64>) -> Result<ScenarioSpec> {
    let path = Path::new(arg);
    let mut spec = if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ScenarioSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
    } else if let Some(s) = scenarios::find(arg) {
        s
    } else {
        bail!("{arg}: no such file or built-in scenario");
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn run_spec(spec: &ScenarioSpec, f_bounded: bool, max_cycles: u64) -> Result<Vec<RunReport>, InvalidScenario> {
    let compiled = compile(spec, f_bounded)?;
    Ok(run_all(&compiled, &RunOptions { max_cycles, ..RunOptions::default() }))
}

fn status_of(reports: &[RunReport]) -> Status {
    reports
        .iter()
        .map(|r| {
            if r.exhausted {
                Status::Exhausted
            } else if r.safety_violations > 0 {
                Status::Violation
            } else {
                Status::Ok
            }
        })
        .max()
        .unwrap_or(Status::Ok)
}

fn summarize(name: &str, reports: &[RunReport]) {
    for r in reports {
        let m = &r.record;
        println!(
            "{name} [{}] n={} f={} delivered={}/{} decisions={} (full {}, partial {}, rejuvenate {}) cycles={} cycles/req={:.1} rejuvenations={}{}{}",
            m.protocol,
            m.n,
            m.f,
            r.workload_delivered,
            r.workload_requests,
            r.decisions.len(),
            m.full_match,
            m.partial_rejuv,
            m.full_rejuv,
            m.cycles_total,
            m.cycles_per_req,
            m.rejuv_count,
            if r.safety_violations > 0 { format!(" SAFETY VIOLATIONS={}", r.safety_violations) } else { String::new() },
            if r.exhausted { " EXHAUSTED" } else { "" },
        );
    }
}

fn write_metrics(path: &Path, records: &[MetricsRecord], format: Format) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    export(records, format, std::io::BufWriter::new(file))?;
    Ok(())
}

fn cmd_run(arg: &str, common: &Common, out: Option<PathBuf>) -> Result<Status> {
    let spec = load(arg, common.seed)?;
    let reports = run_spec(&spec, false, common.max_cycles)?;
    summarize(&spec.name, &reports);
    let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.{}", spec.name, common.format.ext())));
    let records: Vec<MetricsRecord> = reports.iter().map(|r| r.record.clone()).collect();
    write_metrics(&out, &records, common.format.format())?;
    Ok(status_of(&reports))
}

/// A scenario name with its per-protocol reports.
type Named = (String, Vec<RunReport>);

fn cmd_batch(dir: &Path, common: &Common, out: Option<PathBuf>, jobs: usize) -> Result<Status> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{}: no scenario files", dir.display());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let results: Vec<(PathBuf, Result<Named>)> = pool.install(|| {
        files
            .par_iter()
            .map(|p| {
                let r = load(&p.to_string_lossy(), common.seed).and_then(|s| Ok((s.name.clone(), run_spec(&s, false, common.max_cycles)?)));
                (p.clone(), r)
            })
            .collect()
    });
    let mut status = Status::Ok;
    let mut records = Vec::new();
    for (path, result) in results {
        match result {
            Ok((name, reports)) => {
                summarize(&name, &reports);
                status = status.max(status_of(&reports));
                records.extend(reports.into_iter().map(|r| r.record));
            }
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                status = status.max(Status::Usage);
            }
        }
    }
    let out = out.unwrap_or_else(|| PathBuf::from(format!("batch.{}", common.format.ext())));
    write_metrics(&out, &records, common.format.format())?;
    Ok(status)
}

fn cmd_verify(arg: &str, common: &Common, expect_violation: bool) -> Result<Status> {
    let spec = load(arg, common.seed)?;
    // negative scenarios break the fault bound on purpose
    let reports = run_spec(&spec, !expect_violation, common.max_cycles)?;
    summarize(&spec.name, &reports);
    let violated = reports.iter().any(|r| r.safety_violations > 0);
    if expect_violation {
        if violated {
            println!("{}: expected violation observed", spec.name);
            return Ok(Status::Ok);
        }
        println!("{}: expected a violation, none observed", spec.name);
        return Ok(Status::Violation);
    }
    let mut status = status_of(&reports);
    for r in &reports {
        if r.record.cycles_total != r.breakdown.total() {
            println!("{} [{}]: cycle breakdown does not add up", spec.name, r.record.protocol);
            status = status.max(Status::Violation);
        }
    }
    let again = run_spec(&spec, true, common.max_cycles)?;
    if again.iter().zip(&reports).any(|(a, b)| a.trace_digest != b.trace_digest || a.record != b.record) {
        println!("{}: rerun diverged", spec.name);
        status = status.max(Status::Violation);
    }
    if status == Status::Ok {
        println!("{}: ok", spec.name);
    }
    Ok(status)
}

fn cmd_list(export_dir: Option<PathBuf>) -> Result<Status> {
    let all = scenarios::builtin();
    if let Some(d) = &export_dir {
        fs::create_dir_all(d)?;
    }
    for s in all {
        let protocols: Vec<String> = s.protocols().iter().map(|p| p.to_string()).collect();
        println!(
            "{:<28} n={} f={} app={:?} requests={} faults={} protocols={}",
            s.name,
            s.n,
            s.f,
            s.app,
            s.workload.requests,
            s.faults.len(),
            protocols.join(",")
        );
        if let Some(d) = &export_dir {
            fs::write(d.join(format!("{}.json", s.name)), s.to_json() + "\n")?;
        }
    }
    Ok(Status::Ok)
}
