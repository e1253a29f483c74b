use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use agriswarm_core::sim::{replay, run, Scenario, SimReport};
use agriswarm_gateway::error::GatewayError;
use agriswarm_gateway::mission::{plan_document, sweep_config};
use agriswarm_gateway::store::{write_atomic, DATA_DIR_ENV};
use agriswarm_gateway::{router, AppState};

/// Multi-UAV field survey planner, simulator and ground-station service.
#[derive(Debug, Parser)]
#[command(name = "agriswarm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a boustrophedon sweep over a GeoJSON field.
    Plan {
        #[arg(long)]
        field: PathBuf,
        /// Sweep line spacing in meters.
        #[arg(long)]
        spacing: f64,
        /// Sweep heading in degrees. Defaults to 0.
        #[arg(long, allow_negative_numbers = true)]
        angle: Option<f64>,
        /// Output file. Prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario to completion at full speed.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Parent directory for the run output.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Re-run a trace and check it reproduces line for line.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Also write the replayed run outputs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the report of a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
    /// Serve the HTTP and WebSocket API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, env = DATA_DIR_ENV, default_value = "data")]
        data_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Json,
}

fn read(path: &Path) -> Result<String, GatewayError> {
    std::fs::read_to_string(path).map_err(|e| GatewayError::BadRequest(format!("{}: {e}", path.display())))
}

fn execute(command: Command) -> Result<(), GatewayError> {
    match command {
        Command::Plan {
            field,
            spacing,
            angle,
            out,
        } => {
            let (_, text) = plan_document(&read(&field)?, &sweep_config(spacing, angle))?;
            match out {
                Some(path) => write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Simulate { scenario, seed, out } => {
            let text = read(&scenario)?;
            let mut parsed = Scenario::from_json(&text)?;
            if let Some(seed) = seed {
                parsed.seed = seed;
            }
            let stem = scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            let dir = out.join(format!("{stem}-s{}", parsed.seed));
            let output = run(parsed.clone())?;
            output.write_to(&dir)?;
            let mut scenario_json =
                serde_json::to_string_pretty(&parsed).map_err(|e| GatewayError::Internal(e.to_string()))?;
            scenario_json.push('\n');
            write_atomic(&dir.join("scenario.json"), scenario_json.as_bytes())?;
            let r = &output.report;
            println!(
                "{}",
                serde_json::json!({
                    "run_dir": dir,
                    "status": r.status,
                    "ticks": r.ticks,
                    "coverage_pct": r.coverage_pct,
                    "report_sha256": output.report_sha256(),
                    "trace_sha256": output.trace_sha256(),
                })
            );
        }
        Command::Replay { trace, out } => {
            let output = replay(&read(&trace)?)?;
            if let Some(dir) = out {
                output.write_to(&dir)?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "status": output.report.status,
                    "ticks": output.report.ticks,
                    "report_sha256": output.report_sha256(),
                    "trace_sha256": output.trace_sha256(),
                })
            );
        }
        Command::Report { run, format } => {
            let text = read(&run.join("report.json"))?;
            match format {
                Format::Json => print!("{text}"),
                Format::Md => {
                    let report: SimReport = serde_json::from_str(&text)
                        .map_err(|e| GatewayError::BadRequest(format!("{}: {e}", run.join("report.json").display())))?;
                    print!("{}", report.to_markdown());
                }
            }
        }
        Command::Serve { host, port, data_dir } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| GatewayError::BadRequest(format!("address: {e}")))?;
            let state = AppState::open(&data_dir)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("listening on {addr}, data in {}", data_dir.display());
                axum::serve(listener, router(state)).await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            let summary: Vec<&str> = message
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            let summary = summary.join(" ");
            eprintln!(
                "{}",
                serde_json::json!({"error": "usage", "message": summary.trim_start_matches("error: ")})
            );
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
