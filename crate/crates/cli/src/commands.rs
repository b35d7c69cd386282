use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use gridgym::agents::{agent_by_name, summary_csv, Scripted, AGENT_NAMES};
use gridgym::chronics::{write_chronics, SynthProfile};
use gridgym::error::{EnvError, IoError};
use gridgym::log::first_divergence;
use gridgym::{
    default_topology, load_chronics, reduce_to_buses, run_episode, synthesize_chronics, validate_case,
    Chronics, DcSolver, EnvConfig, Environment, EpisodeLog, EpisodeSource, GridCase,
};

use crate::service::Service;

/// Bad arguments, unknown agent, config mismatch.
pub const EXIT_USAGE: i32 = 2;
/// Missing or unreadable input files.
pub const EXIT_FILE: i32 = 3;
/// Replay did not reproduce the log.
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "gridgym", version, about = "Grid operation environment on a DC power-flow core")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode with a baseline agent and write its log.
    Run {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        chronics: PathBuf,
        #[arg(long, default_value = "do_nothing")]
        agent: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-execute a logged episode and compare it with the log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Exit nonzero unless the replay matches the log exactly.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(long)]
        chronics: Option<PathBuf>,
    },
    /// Print a CSV of episode scores.
    Score {
        /// Glob pattern for episode logs.
        #[arg(long)]
        logs: String,
    },
    /// Check a case file for structural problems.
    ValidateCase {
        #[arg(long)]
        case: PathBuf,
        /// Also print the susceptance matrices and the base-case flow as JSON.
        #[arg(long)]
        dump_flow: bool,
        /// Injections for the flow dump; zero injections when absent.
        #[arg(long)]
        chronics: Option<PathBuf>,
    },
    /// Generate a synthetic chronics directory for a case.
    SynthChronics {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value_t = 288)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        peak_fraction: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Serve interactive sessions over WebSocket.
    Serve {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        chronics: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8750")]
        bind: String,
        /// Directory of static files to serve at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

impl Command {
    pub fn execute(self) -> Outcome {
        match self {
            Command::Run {
                case,
                chronics,
                agent,
                seed,
                out,
            } => run(&case, &chronics, &agent, seed, &out),
            Command::Replay {
                log,
                verify,
                case,
                chronics,
            } => replay(&log, verify, case.as_deref(), chronics.as_deref()),
            Command::Score { logs } => score(&logs),
            Command::ValidateCase {
                case,
                dump_flow,
                chronics,
            } => validate(&case, dump_flow, chronics.as_deref()),
            Command::SynthChronics {
                case,
                steps,
                seed,
                out,
                peak_fraction,
                noise,
            } => synth(&case, steps, seed, &out, peak_fraction, noise),
            Command::Serve {
                case,
                chronics,
                bind,
                static_dir,
            } => serve(&case, &chronics, &bind, static_dir),
        }
    }
}

fn io_failure(e: IoError) -> Failure {
    Failure::new(EXIT_FILE, e.to_string())
}

fn active_config() -> Result<EnvConfig, Failure> {
    EnvConfig::from_env().map_err(|e| match e {
        IoError::Read { .. } => io_failure(e),
        IoError::Format { .. } => Failure::new(EXIT_USAGE, format!("invalid config: {e}")),
    })
}

fn load_case(path: &Path) -> Result<Arc<GridCase>, Failure> {
    GridCase::load(path).map(Arc::new).map_err(io_failure)
}

fn load_inputs(case: &Path, chronics: &Path) -> Result<(Arc<GridCase>, Chronics), Failure> {
    let case = load_case(case)?;
    let chronics = load_chronics(chronics).map_err(|e| Failure::new(EXIT_FILE, e.to_string()))?;
    Ok((case, chronics))
}

fn env_failure(e: EnvError) -> Failure {
    Failure::new(EXIT_FILE, e.to_string())
}

fn source(case: &Path, chronics: &Path) -> EpisodeSource {
    EpisodeSource {
        case_path: case.display().to_string(),
        chronics_path: chronics.display().to_string(),
    }
}

fn run(case_path: &Path, chronics_path: &Path, agent: &str, seed: u64, out: &Path) -> Outcome {
    let mut policy = agent_by_name(agent).ok_or_else(|| {
        Failure::new(
            EXIT_USAGE,
            format!("unknown agent `{agent}` (available: {})", AGENT_NAMES.join(", ")),
        )
    })?;
    let config = active_config()?;
    let (case, chronics) = load_inputs(case_path, chronics_path)?;
    let log = run_episode(
        policy.as_mut(),
        case,
        &chronics,
        seed,
        &config,
        &source(case_path, chronics_path),
    )
    .map_err(env_failure)?;
    log.write(out).map_err(io_failure)?;
    let term = serde_json::to_value(log.termination()).expect("termination serializes");
    println!(
        "steps={} termination={} score={}",
        log.summary.steps,
        term.as_str().unwrap_or_default(),
        log.score()
    );
    Ok(())
}

fn replay(log_path: &Path, verify: bool, case: Option<&Path>, chronics: Option<&Path>) -> Outcome {
    let text = std::fs::read_to_string(log_path)
        .map_err(|e| Failure::new(EXIT_FILE, format!("{}: {e}", log_path.display())))?;
    let corrupt = |why: String| Failure::new(EXIT_DIVERGED, format!("{}: {why}", log_path.display()));
    let log = EpisodeLog::parse(&text).map_err(corrupt)?;
    let intact = log.digest_matches();
    if log.header.config.hash() != log.header.config_hash {
        return Err(corrupt("header config does not match its hash".into()));
    }
    let config = active_config()?;
    if config.hash() != log.header.config_hash {
        return Err(Failure::new(
            EXIT_USAGE,
            format!(
                "active config hash {} differs from the log's {}; set GRIDGYM_CONFIG to match",
                config.hash(),
                log.header.config_hash
            ),
        ));
    }

    let case_path = case.map_or_else(|| PathBuf::from(&log.header.case_path), Path::to_path_buf);
    let chronics_path = chronics.map_or_else(|| PathBuf::from(&log.header.chronics_path), Path::to_path_buf);
    // A damaged header can name paths that do not exist; blame the log, not the filesystem.
    let (case, chronics) = load_inputs(&case_path, &chronics_path).map_err(|f| {
        if intact {
            f
        } else {
            corrupt(format!("summary digest does not match the log contents ({})", f.message))
        }
    })?;
    let actions = log.steps.iter().map(|s| s.action.clone()).collect();
    let mut agent = Scripted::new(log.header.agent.clone(), actions);
    // Keep the recorded paths so a clean replay reproduces the header verbatim.
    let recorded = EpisodeSource {
        case_path: log.header.case_path.clone(),
        chronics_path: log.header.chronics_path.clone(),
    };
    let again = run_episode(&mut agent, case, &chronics, log.header.seed, &config, &recorded)
        .map_err(env_failure)?;

    let problem = match first_divergence(&log.lines(), &again.lines()) {
        Some((line, detail)) => {
            let record = match line {
                0 => "header".to_string(),
                l if l <= log.steps.len() => format!("step t={}", log.steps[l - 1].t),
                _ => "summary".to_string(),
            };
            Some(format!("replay diverges at line {} ({record}): {detail}", line + 1))
        }
        None if !intact => Some("summary digest does not match the log contents".into()),
        None if log.to_jsonl() != text => Some("log is not in canonical form".into()),
        None => None,
    };
    match problem {
        None => {
            println!("replay matches: {} steps, score={}", again.summary.steps, again.score());
            Ok(())
        }
        Some(message) if verify => Err(corrupt(message)),
        Some(message) => {
            println!("{message}");
            Ok(())
        }
    }
}

fn score(pattern: &str) -> Outcome {
    let paths = glob::glob(pattern).map_err(|e| Failure::new(EXIT_USAGE, format!("bad glob `{pattern}`: {e}")))?;
    let mut logs = Vec::new();
    for entry in paths {
        let path = entry.map_err(|e| Failure::new(EXIT_FILE, e.to_string()))?;
        let log = EpisodeLog::read(&path).map_err(io_failure)?;
        logs.push((path.display().to_string(), log));
    }
    if logs.is_empty() {
        return Err(Failure::new(EXIT_FILE, format!("no logs match `{pattern}`")));
    }
    print!("{}", summary_csv(&logs));
    Ok(())
}

fn validate(case_path: &Path, dump_flow: bool, chronics: Option<&Path>) -> Outcome {
    let case = load_case(case_path)?;
    let violations = validate_case(&case);
    if !violations.is_empty() {
        for v in &violations {
            println!("{}: {v}", case_path.display());
        }
        return Err(Failure::new(1, format!("{} violation(s)", violations.len())));
    }
    println!(
        "{}: ok ({} substations, {} lines, {} generators, {} loads)",
        case.name(),
        case.n_substations(),
        case.n_lines(),
        case.n_generators(),
        case.n_loads()
    );
    if dump_flow {
        let flow = match chronics {
            Some(dir) => {
                let chronics = load_chronics(dir).map_err(|e| Failure::new(EXIT_FILE, e.to_string()))?;
                let env = Environment::new(case.clone(), &chronics, EnvConfig::default(), 0).map_err(env_failure)?;
                (env.solver().map_err(env_failure)?, env.solution().clone())
            }
            None => {
                let model = reduce_to_buses(&case, &default_topology(&case))
                    .map_err(|e| Failure::new(1, e.to_string()))?;
                let solver = DcSolver::new(&case, &model).map_err(|e| Failure::new(1, e.to_string()))?;
                let sol = solver
                    .solve(&gridgym::InjectionSet::zeros(&case))
                    .map_err(|e| Failure::new(1, e.to_string()))?;
                (Arc::new(solver), sol)
            }
        };
        let dump = serde_json::json!({ "matrices": flow.0.dump(), "solution": flow.1 });
        // A closed pipe (`| head`) is not an error worth reporting.
        let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&dump).expect("dump serializes"));
    }
    Ok(())
}

fn synth(
    case_path: &Path,
    steps: usize,
    seed: u64,
    out: &Path,
    peak_fraction: Option<f64>,
    noise: Option<f64>,
) -> Outcome {
    if steps == 0 {
        return Err(Failure::new(EXIT_USAGE, "--steps must be at least 1"));
    }
    let case = load_case(case_path)?;
    let mut profile = SynthProfile::default();
    if let Some(p) = peak_fraction {
        profile.peak_fraction = p;
    }
    if let Some(n) = noise {
        profile.noise = n;
    }
    let mut chronics =
        synthesize_chronics(&case, steps, seed, &profile).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    if let Some(name) = out.file_name() {
        chronics.name = name.to_string_lossy().into_owned();
    }
    let dir = write_chronics(out, &chronics).map_err(|e| Failure::new(EXIT_FILE, e.to_string()))?;
    println!("wrote {steps} steps to {}", dir.display());
    Ok(())
}

fn serve(case_path: &Path, chronics_path: &Path, bind: &str, static_dir: Option<PathBuf>) -> Outcome {
    let config = active_config()?;
    let (case, chronics) = load_inputs(case_path, chronics_path)?;
    let service = Service::new(case, chronics, config, source(case_path, chronics_path))
        .map_err(|e| Failure::new(EXIT_FILE, e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_FILE, e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Failure::new(EXIT_FILE, format!("cannot bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::new(EXIT_FILE, e.to_string()))?;
        println!("listening on ws://{addr}/ws");
        crate::server::serve(listener, Arc::new(service), static_dir)
            .await
            .map_err(|e| Failure::new(EXIT_FILE, e.to_string()))
    })
}
