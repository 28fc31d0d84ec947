use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use icps::atom::Millis;
use icps::eventlog::read_records;
use icps::expect::Expectations;
use icps::harness::{Harness, RunConfig};
use icps::planner::Problem;
use icps::report::RunReport;
use icps::server::{self, ServeConfig};
use icps::sim::{Scenario, TimelineItem};

#[derive(Parser)]
#[command(name = "icps", version, about = "Office coordination backend and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion on simulated time.
    Run(RunArgs),
    /// Check a recorded event log against an expectation file.
    Verify(VerifyArgs),
    /// Solve a planning problem file and print the plan.
    Plan {
        problem: PathBuf,
    },
    /// Serve a scenario live over TCP (entities) and HTTP/WebSocket (consoles).
    Serve(ServeArgs),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file; may also be given with --scenario.
    #[arg(value_name = "SCENARIO", required_unless_present = "scenario_flag")]
    scenario: Option<PathBuf>,
    #[arg(long = "scenario", value_name = "PATH", conflicts_with = "scenario")]
    scenario_flag: Option<PathBuf>,
}

impl ScenarioArg {
    fn path(&self) -> &Path {
        self.scenario
            .as_deref()
            .or(self.scenario_flag.as_deref())
            .expect("clap requires one")
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Command text to submit instead of the scenario timeline.
    #[arg(long)]
    goal: Vec<String>,
    /// Person speaking the --goal text.
    #[arg(long = "as")]
    speaker: Option<String>,
    /// Entity relaying the --goal text; the console when absent.
    #[arg(long)]
    via: Option<String>,
    /// Simulated second at which --goal is submitted.
    #[arg(long, default_value_t = 1.0)]
    at: f64,
    /// Keep the scenario timeline when --goal is given.
    #[arg(long)]
    from_timeline: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Cancel the running goal this long after the first submission, e.g. `20s`.
    #[arg(long, value_parser = parse_duration)]
    cancel_after: Option<Millis>,
    #[arg(long, value_parser = parse_duration, default_value = "600s")]
    max_sim_time: Millis,
    /// Write the event log as NDJSON.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Expectation file to check the run against.
    #[arg(long)]
    expect: Option<PathBuf>,
    /// Write the run report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the first goal's planning problem as JSON.
    #[arg(long)]
    dump_problem: Option<PathBuf>,
    /// Pace simulated time against the wall clock; 1 is real time.
    #[arg(long)]
    realtime_factor: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Event log written by `run --record`.
    log: PathBuf,
    #[arg(long)]
    expect: PathBuf,
    /// Report of the same run, for wall-clock planning times.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// TCP port for entity connections.
    #[arg(long, default_value_t = 7400)]
    port: u16,
    /// HTTP port for `/ws` and `/snapshot`; the TCP port plus one by default.
    #[arg(long)]
    http_port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    #[arg(long, default_value_t = 1.0)]
    realtime_factor: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the event log here on shutdown.
    #[arg(long)]
    record: Option<PathBuf>,
}

fn parse_duration(s: &str) -> Result<Millis, String> {
    let d = humantime::parse_duration(s.trim()).map_err(|e| e.to_string())?;
    Millis::try_from(d.as_millis()).map_err(|_| "duration too long".to_string())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
        Command::Plan { problem } => plan(&problem),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn run(args: RunArgs) -> Result<bool> {
    let scenario = load_scenario(args.scenario.path())?;
    let expectations = args.expect.as_deref().map(Expectations::load).transpose()?;
    let goals: Vec<TimelineItem> = args
        .goal
        .iter()
        .map(|text| TimelineItem {
            at_s: args.at,
            goal: Some(text.clone()),
            speaker: args.speaker.clone(),
            via: args.via.clone(),
            request_id: None,
            cancel: None,
            answer: None,
        })
        .collect();
    let cfg = RunConfig {
        seed: args.seed,
        max_sim_ms: args.max_sim_time,
        cancel_after: args.cancel_after,
        skip_timeline: !goals.is_empty() && !args.from_timeline,
        goals,
        ..RunConfig::default()
    };
    let mut harness = Harness::new(scenario, &cfg).map_err(anyhow::Error::msg)?;
    match args.realtime_factor {
        Some(factor) if factor > 0.0 => {
            let mut last = harness.now();
            while let Some(next) = harness.next_time() {
                if harness.finished() {
                    break;
                }
                let wait = (next - last).max(0) as f64 / factor;
                std::thread::sleep(Duration::from_secs_f64(wait / 1000.0));
                if !harness.step() {
                    break;
                }
                last = harness.now();
            }
        }
        _ => while harness.step() {},
    }
    let outcome = harness.finish();
    let mut report = outcome.report;

    if let Some(path) = &args.record {
        fs::write(path, outcome.log.to_ndjson()).with_context(|| format!("writing {}", path.display()))?;
        report.event_log = Some(path.display().to_string());
    }
    if let Some(path) = &args.dump_problem {
        let Some(problem) = &outcome.problem else {
            bail!("no planning problem to dump: the first goal was not a plain goal");
        };
        fs::write(path, problem.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    let expected_failures = match &expectations {
        Some(e) => {
            report.verdicts = e.check(outcome.log.records(), &report);
            e.expected_failures(&report)
        }
        None => Vec::new(),
    };
    if let Some(path) = &args.report {
        fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", report.summary());
    Ok(verdict_ok(&report, &expected_failures))
}

fn verdict_ok(report: &RunReport, expected_failures: &[String]) -> bool {
    let unexpected: Vec<_> = report.unexpected_failures(expected_failures).collect();
    for g in &unexpected {
        println!("  unexpected failure: {}", g.request_id);
    }
    report.all_verdicts_pass() && unexpected.is_empty()
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let expectations = Expectations::load(&args.expect)?;
    let file = fs::File::open(&args.log).with_context(|| format!("opening {}", args.log.display()))?;
    let records = read_records(std::io::BufReader::new(file)).with_context(|| format!("reading {}", args.log.display()))?;
    let saved: Option<RunReport> = match &args.report {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let (name, seed) = saved.as_ref().map_or((String::new(), 0), |r| (r.scenario.clone(), r.seed));
    let mut report = RunReport::from_log(&name, seed, &records);
    if let Some(saved) = &saved {
        let timings = saved
            .goals
            .iter()
            .map(|g| (g.request_id.clone(), g.planning_ms.clone()))
            .collect();
        report.attach_planning_ms(&timings);
    }
    report.verdicts = expectations.check(&records, &report);
    let expected_failures = expectations.expected_failures(&report);
    for v in &report.verdicts {
        let mark = if v.passed { "pass" } else { "FAIL" };
        println!("[{mark}] {}: {}", v.name, v.detail);
    }
    Ok(verdict_ok(&report, &expected_failures))
}

fn plan(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let problem = Problem::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    match problem.solve() {
        Ok(plan) => {
            for (i, step) in plan.steps.iter().enumerate() {
                println!("{:>2}. {step}", i + 1);
            }
            Ok(true)
        }
        Err(e) => {
            println!("no plan: {e}");
            Ok(false)
        }
    }
}

fn serve(args: ServeArgs) -> Result<bool> {
    let scenario = load_scenario(args.scenario.path())?;
    let cfg = RunConfig {
        seed: args.seed,
        ..RunConfig::default()
    };
    let harness = Harness::new(scenario, &cfg).map_err(anyhow::Error::msg)?;
    let serve_cfg = ServeConfig {
        tcp: SocketAddr::new(args.bind, args.port),
        http: SocketAddr::new(args.bind, args.http_port.unwrap_or(args.port.saturating_add(1))),
        realtime_factor: args.realtime_factor,
        tick: Duration::from_millis(50),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = server::start(harness, serve_cfg).await?;
        eprintln!(
            "entities: tcp://{}  console: ws://{}/ws  snapshot: http://{}/snapshot",
            handle.tcp_addr, handle.http_addr, handle.http_addr
        );
        tokio::signal::ctrl_c().await?;
        let log = handle.log();
        handle.stop().await;
        if let Some(path) = &args.record {
            fs::write(path, log.to_ndjson()).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(true)
    })
}
