use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accgadget::adjudication::{adjudicate, Evidence, LedgerKind};
use accgadget::check::{default_t_recent, validate_params};
use accgadget::sim::Trace;
use accgadget::{check_all, measure_metrics, QuorumPreset, Scenario, SecurityReport, Simulation, Strategy};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "accgadget", version, about = "Accountability-gadget simulator, checkers and judge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios, check the traces and write all artifacts.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory; one subdirectory per scenario when several are given.
        #[arg(long, env = "ACCGADGET_OUT", default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_parser = parse_preset)]
        quorum_preset: Option<QuorumPreset>,
        /// Strategy kind (`honest`, `selfish_mine`, `equivocate`) or a JSON strategy object.
        #[arg(long, value_parser = parse_strategy)]
        strategy_override: Option<Strategy>,
        /// Also write every honest node's final evidence under `evidence/`.
        #[arg(long)]
        evidence: bool,
    },
    /// Re-run the checkers on a trace file.
    Check {
        trace: PathBuf,
        /// Where to write the report; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Judge two pieces of evidence and print the verdict.
    Adjudicate {
        evidence1: PathBuf,
        evidence2: PathBuf,
        /// Resolved scenario supplying n and the quorum sizes. Defaults to
        /// `scenario.resolved.json` next to the first evidence's run.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Measure a trace and print the metrics.
    Metrics { trace: PathBuf },
}

fn parse_preset(s: &str) -> Result<QuorumPreset, String> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    let json = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        format!("{{\"kind\":\"{s}\"}}")
    };
    serde_json::from_str(&json).map_err(|e| format!("bad strategy `{s}`: {e}"))
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct UsageError(anyhow::Error);

enum Outcome {
    Pass,
    CheckFailed,
}

fn parse_scenario(path: &Path) -> Result<Scenario, UsageError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(UsageError)?;
    Scenario::from_json(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(UsageError)
}

fn read_trace(path: &Path) -> Result<Trace, UsageError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(UsageError)?;
    Trace::from_json(&text)
        .with_context(|| format!("parsing trace {}", path.display()))
        .map_err(UsageError)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Prints pretty JSON to stdout, ignoring a closed pipe.
fn emit<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn summarize(label: &str, report: &SecurityReport) {
    for c in report.checks() {
        let status = match (c.passed, c.expected) {
            (true, _) => "ok",
            (false, true) => "FAIL",
            (false, false) => "violated (not promised)",
        };
        let at = c.first_violation_slot.map(|s| format!(" at slot {s}")).unwrap_or_default();
        eprintln!("{label}: {:<13} {status}{at}", c.name);
    }
    if let Some(c) = report.checks().into_iter().filter(|c| c.is_unexpected_failure()).min_by_key(|c| c.first_violation_slot) {
        eprintln!(
            "{label}: first violation: {} at slot {}: {}",
            c.name,
            c.first_violation_slot.unwrap_or_default(),
            c.detail
        );
    }
}

fn run_one(
    path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    preset: Option<QuorumPreset>,
    strategy: Option<&Strategy>,
    evidence: bool,
) -> Result<Outcome, UsageError> {
    let mut sc = parse_scenario(path)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(p) = preset {
        sc.quorum_preset = p;
        sc.q_accept = None;
        sc.q_reject = None;
    }
    if let Some(s) = strategy {
        sc.strategy = s.clone();
    }
    let mut sim = Simulation::new(sc).map_err(|e| UsageError(e.into()))?;
    let label = path.display().to_string();
    let io = |r: anyhow::Result<()>| r.map_err(UsageError);
    sim.run_to_end();
    io(fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display())))?;
    if evidence {
        let dir = out_dir.join("evidence");
        io(fs::create_dir_all(&dir).context("creating evidence directory"))?;
        for node in sim.scenario().honest_nodes() {
            for (kind, name) in [(LedgerKind::Da, "da"), (LedgerKind::Acc, "acc"), (LedgerKind::Bft, "bft")] {
                let ev = sim.evidence(node, kind);
                io(write_json(&dir.join(format!("node{}.{name}.json", node.0)), &ev))?;
            }
        }
    }
    let trace = sim.into_trace();
    let report = check_all(&trace);
    let metrics = measure_metrics(&trace, report.t_recent);
    for w in &validate_params(&trace.scenario, report.t_recent).warnings {
        eprintln!("{label}: warning: {w}");
    }
    io(trace
        .write_artifacts(out_dir)
        .with_context(|| format!("writing artifacts to {}", out_dir.display())))?;
    io(write_json(&out_dir.join("scenario.resolved.json"), &trace.scenario))?;
    io(write_json(&out_dir.join("report.json"), &report))?;
    io(write_json(&out_dir.join("metrics.json"), &metrics))?;
    summarize(&label, &report);
    Ok(if report.ok() { Outcome::Pass } else { Outcome::CheckFailed })
}

fn execute(cli: Cli) -> Result<Outcome, UsageError> {
    match cli.command {
        Command::Run {
            scenarios,
            seed,
            out_dir,
            quorum_preset,
            strategy_override,
            evidence,
        } => {
            let mut all = Outcome::Pass;
            for path in &scenarios {
                let dir = if scenarios.len() == 1 {
                    out_dir.clone()
                } else {
                    let stem = path.file_stem().ok_or_else(|| UsageError(anyhow!("bad path {}", path.display())))?;
                    out_dir.join(stem)
                };
                if let Outcome::CheckFailed =
                    run_one(path, &dir, seed, quorum_preset, strategy_override.as_ref(), evidence)?
                {
                    all = Outcome::CheckFailed;
                }
            }
            Ok(all)
        }
        Command::Check { trace, out } => {
            let t = read_trace(&trace)?;
            let report = check_all(&t);
            match out {
                Some(p) => write_json(&p, &report).map_err(UsageError)?,
                None => emit(&report),
            }
            summarize(&trace.display().to_string(), &report);
            Ok(if report.ok() { Outcome::Pass } else { Outcome::CheckFailed })
        }
        Command::Adjudicate {
            evidence1,
            evidence2,
            scenario,
        } => {
            let load = |p: &Path| -> Result<Evidence, UsageError> {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .map_err(UsageError)?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing evidence {}", p.display()))
                    .map_err(UsageError)
            };
            let (w1, w2) = (load(&evidence1)?, load(&evidence2)?);
            let sc_path = scenario.unwrap_or_else(|| {
                let dir = evidence1.parent().unwrap_or(Path::new("."));
                let run_dir = if dir.ends_with("evidence") { dir.parent().unwrap_or(dir) } else { dir };
                run_dir.join("scenario.resolved.json")
            });
            let sc = parse_scenario(&sc_path)?.resolve().map_err(|e| UsageError(e.into()))?;
            let verdict = adjudicate(&w1, &w2, &sc.gadget_params(), sc.n, sc.q_bft()).map_err(|e| UsageError(e.into()))?;
            emit(&verdict);
            Ok(Outcome::Pass)
        }
        Command::Metrics { trace } => {
            let t = read_trace(&trace)?;
            let m = measure_metrics(&t, default_t_recent(&t));
            emit(&m);
            Ok(Outcome::Pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(UsageError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
