//! `vrbf`: run formation scenarios and the verification suites.
//!
//! Exit codes: 0 success, 1 bad arguments or scenario, 2 simulation failure,
//! 3 verification failure.

mod args;

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use thiserror::Error;
use vrb_formation::sim::{
    corridor_config, corridor_layout, corridor_scenario, run_with, write_jsonl, CorridorReport,
    MetricsLog, Scenario, StateSnapshot, PAIRS_CSV, ROBOTS_CSV, TICKS_CSV,
};
use vrb_formation::verify::{verify_bound, verify_qp, BoundSuite, InstanceKind};
use vrb_formation::{ScenarioError, SimError};
use vrb_teleop::{serve, ServeOptions, ServerStats, TeleopError};

use args::{Cli, Command, CorridorArgs, Overrides, RunArgs, VerifyBoundArgs, VerifyQpArgs};

pub const STREAM_JSONL: &str = "stream.jsonl";

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Teleop(#[from] TeleopError),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(_) | CliError::Sim(SimError::Scenario(_)) => 1,
            CliError::Sim(_) => 2,
            CliError::Teleop(TeleopError::Sim(SimError::Scenario(_))) => 1,
            CliError::Teleop(TeleopError::Sim(_)) => 2,
            CliError::Write { .. } | CliError::Teleop(_) => 1,
            CliError::Verification(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Corridor(a) => corridor(a),
        Command::VerifyBound(a) => bound(a),
        Command::VerifyQp(a) => qp(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn apply(scenario: &mut Scenario, o: &Overrides) -> Result<(), ScenarioError> {
    if let Some(seed) = o.seed {
        scenario.seed = seed;
    }
    if let Some(ticks) = o.ticks {
        scenario.duration_ticks = ticks;
    }
    if let Some(p) = o.pcoll {
        scenario.config.p_coll_bound = p;
    }
    scenario.validate()
}

/// Runs offline, writes the CSV files and the snapshot stream.
fn simulate(scenario: &Scenario, out: &Path) -> Result<MetricsLog, CliError> {
    let mut stream: Vec<StateSnapshot> = Vec::with_capacity(scenario.duration_ticks as usize);
    let log = run_with(scenario, |world, record| {
        let snap = world.snapshot(record);
        stream.push(if stream.is_empty() {
            snap.with_obstacles(&scenario.obstacles)
        } else {
            snap
        });
    })?;
    let write_err = |path: PathBuf| move |source| CliError::Write { path, source };
    log.write_csv(out).map_err(write_err(out.to_path_buf()))?;
    let stream_path = out.join(STREAM_JSONL);
    write_jsonl(&stream_path, &stream).map_err(write_err(stream_path.clone()))?;
    Ok(log)
}

/// Aligned `label value` lines written to stdout in one go.
#[derive(Default)]
struct Summary(String);

impl Summary {
    fn line(&mut self, label: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{label:<25}{value}");
    }

    fn outputs(&mut self, dir: &Path) {
        for name in [TICKS_CSV, ROBOTS_CSV, PAIRS_CSV, STREAM_JSONL] {
            self.line("output", dir.join(name).display());
        }
    }

    /// A closed stdout (e.g. piped into `head`) is not an error.
    fn print(self) {
        let _ = std::io::stdout().lock().write_all(self.0.as_bytes());
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let mut scenario = Scenario::load(&a.scenario)?;
    apply(&mut scenario, &a.overrides)?;
    if let Some(addr) = a.serve {
        return live(scenario, addr, a.overrides.ticks);
    }
    let log = simulate(&scenario, &a.out)?;
    let mut out = Summary::default();
    out.line("scenario", &scenario.name);
    out.line("robots", scenario.len());
    out.line("seed", scenario.seed);
    out.line("ticks", log.ticks.len());
    out.line(
        "min true pair distance",
        format!("{:.4} m", log.min_true_distance().unwrap_or(f64::NAN)),
    );
    out.line(
        "min margin to bound",
        format!("{:.4} m", log.min_distance_margin().unwrap_or(f64::NAN)),
    );
    out.line(
        "min distance/bound",
        format!("{:.4}", log.min_bound_ratio().unwrap_or(f64::NAN)),
    );
    out.line("first activation tick", fmt_opt(log.first_activation()));
    out.line("ticks with activation", log.activation_ticks());
    out.line(
        "max reference speed",
        format!("{:.4} m/s", log.max_reference_speed()),
    );
    out.line("hard collisions", log.total_collisions());
    out.outputs(&a.out);
    out.print();
    Ok(())
}

fn live(scenario: Scenario, addr: SocketAddr, ticks: Option<u64>) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(TeleopError::Io)?;
    runtime.block_on(async move {
        let options = ServeOptions {
            max_ticks: ticks,
            ..ServeOptions::default()
        };
        let server = serve(scenario, addr, options).await?;
        println!(
            "serving ws://{}/ws and http://{}/health",
            server.local_addr(),
            server.local_addr()
        );
        let stats = server.stats().clone();
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = wait_until_idle(&stats) => {}
        }
        server.shutdown().await?;
        println!("stopped after {} ticks", stats.health().tick);
        Ok(())
    })
}

/// Resolves once the simulation loop has stopped (tick limit or error).
async fn wait_until_idle(stats: &Arc<ServerStats>) {
    while stats.health().running {
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

fn corridor(a: CorridorArgs) -> Result<(), CliError> {
    let mut scenario = corridor_scenario(a.width, a.robots, &corridor_config())?;
    apply(&mut scenario, &a.overrides)?;
    let log = simulate(&scenario, &a.out)?;
    let report = CorridorReport::from_log(&log, &corridor_layout(a.width));
    let mut out = Summary::default();
    out.line("scenario", &scenario.name);
    out.line("ticks", report.ticks);
    out.line(
        "initial min distance",
        format!("{:.4} m", report.initial_min_distance_m),
    );
    out.line("first activation tick", fmt_opt(report.first_activation));
    out.line(
        "min distance/bound",
        format!("{:.4}", report.min_bound_ratio),
    );
    out.line(
        "min true pair distance",
        format!("{:.4} m", report.min_true_distance_m),
    );
    out.line("exit tick", fmt_opt(report.exit_tick));
    out.line("rebound peaks", report.rebound_peaks.len());
    out.line(
        "max reference speed",
        format!("{:.4} m/s", report.max_reference_speed_m_per_s),
    );
    out.line("hard collisions", report.collisions);
    out.outputs(&a.out);
    out.print();
    Ok(())
}

fn bound(a: VerifyBoundArgs) -> Result<(), CliError> {
    let suite = BoundSuite {
        p_coll_bound: a.pcoll,
        instances: a.instances,
        calibration: a.calibration,
        samples: a.samples,
        seed: a.seed,
        ..BoundSuite::default()
    };
    let report = verify_bound(&suite).map_err(ScenarioError::Chance)?;
    let se = (a.pcoll * (1.0 - a.pcoll) / a.samples as f64).sqrt();
    let count = |k: InstanceKind| report.results.iter().filter(|r| r.kind == k).count();
    let mut out = Summary::default();
    out.line("p_coll bound", format!("{:e}", report.p_coll_bound));
    out.line("xi", format!("{:.6}", report.xi));
    out.line("samples per instance", report.samples);
    out.line("halfspace instances", count(InstanceKind::Random));
    out.line("calibration instances", count(InstanceKind::Calibration));
    out.line(
        "max calibration prob",
        format!(
            "{:.3e} (limit {:.3e})",
            report.max_calibration_probability(),
            a.pcoll + 3.0 * se
        ),
    );
    out.line("failures", report.failures());
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&report).expect("reports always serialize");
        std::fs::write(path, json).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
    }
    if report.passed() {
        out.line("result", "PASS");
        out.print();
        Ok(())
    } else {
        out.line("result", "FAIL");
        out.print();
        Err(CliError::Verification(format!(
            "{} of {} instances exceed the bound",
            report.failures(),
            report.results.len()
        )))
    }
}

fn qp(a: VerifyQpArgs) -> Result<(), CliError> {
    let report = verify_qp(a.problems, a.seed);
    let mut out = Summary::default();
    out.line("problems", report.problems);
    out.line("infeasible (both agree)", report.infeasible);
    out.line(
        "max objective gap",
        format!("{:.3e}", report.max_objective_gap),
    );
    out.line("max row violation", format!("{:.3e}", report.max_violation));
    out.line("mismatches", report.mismatches.len());
    if report.passed() {
        out.line("result", "PASS");
        out.print();
        Ok(())
    } else {
        out.line("result", "FAIL");
        out.print();
        Err(CliError::Verification(format!(
            "{} of {} problems disagree with enumeration",
            report.mismatches.len(),
            report.problems
        )))
    }
}
