use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corridor::{report, run_modes, LoadError, ScenarioFile};
use corridor_core::sim::{RunMode, Sim};

/// Emergency-vehicle green corridor: simulate, serve and inspect.
#[derive(Debug, Parser)]
#[command(name = "corridor", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write reports.
    Run {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Mode to run: baseline, auto or operator; repeat to compare [default: the scenario's mode]
        #[arg(long = "mode", value_parser = parse_mode)]
        modes: Vec<RunMode>,
        /// Seed for the SMS network [default: the scenario's seed]
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report-<MODE>.json and events-<MODE>.jsonl.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario in real time behind the control-room HTTP API.
    Serve {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Address to listen on.
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Mode to run [default: the scenario's mode]
        #[arg(long, value_parser = parse_mode)]
        mode: Option<RunMode>,
        /// Seed for the SMS network [default: the scenario's seed]
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the event log written on shutdown.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Decode an NMEA capture line by line.
    Parse {
        /// File of NMEA sentences.
        file: PathBuf,
    },
    /// Write the bundled 4x4 demo scenario.
    Demo {
        /// Output file; "-" writes to standard output.
        #[arg(long, default_value = "-")]
        out: PathBuf,
        /// Seed stored in the scenario.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    s.parse::<RunMode>().map_err(|e| e.to_string())
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn io_fail(path: &std::path::Path, e: std::io::Error) -> ExitCode {
    fail(1, format!("{}: {e}", path.display()))
}

fn load_fail(e: LoadError) -> ExitCode {
    fail(e.exit_code(), e)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, modes, seed, out } => {
            let file = match ScenarioFile::load(&scenario) {
                Ok(f) => f,
                Err(e) => return load_fail(e),
            };
            let outputs = match run_modes(&file, &modes, seed) {
                Ok(o) => o,
                Err(e) => return load_fail(e),
            };
            for o in &outputs {
                print!("{}", report::table(&o.metrics));
                if let Err(e) = report::write_run(&out, o) {
                    return io_fail(&out, e);
                }
                println!();
            }
            if let [first, rest @ ..] = &outputs[..] {
                for other in rest {
                    print!("{}", report::comparison(&first.metrics, &other.metrics));
                }
            }
            ExitCode::SUCCESS
        }
        Command::Serve { scenario, listen, speed, mode, seed, out } => {
            if !(speed.is_finite() && speed > 0.0) {
                return fail(2, "--speed must be a positive number");
            }
            let mut s = match ScenarioFile::load(&scenario).and_then(|f| f.to_scenario()) {
                Ok(s) => s,
                Err(e) => return load_fail(e),
            };
            if let Some(m) = mode {
                s.config.mode = m;
            }
            if let Some(seed) = seed {
                s.config.seed = seed;
                s.config.network.seed = seed;
            }
            let sim = match Sim::new(s) {
                Ok(sim) => sim,
                Err(e) => return fail(2, e),
            };
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => return fail(1, e),
            };
            match rt.block_on(corridor::server::serve(sim, listen, speed, out)) {
                Ok(path) => {
                    eprintln!("event log written to {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(1, e),
            }
        }
        Command::Parse { file } => match std::fs::read(&file) {
            Ok(bytes) => {
                print!("{}", corridor::nmea_file::parse_text(&String::from_utf8_lossy(&bytes)).render());
                ExitCode::SUCCESS
            }
            Err(e) => io_fail(&file, e),
        },
        Command::Demo { out, seed } => {
            let text = corridor::demo::demo_scenario(seed).to_json();
            if out.as_os_str() == "-" {
                print!("{text}");
                ExitCode::SUCCESS
            } else {
                match std::fs::write(&out, text) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => io_fail(&out, e),
                }
            }
        }
    }
}
