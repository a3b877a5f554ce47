use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use scopevoice::config::{BackendKind, ServiceConfig};
use scopevoice::engine::{Mode, SessionRecord};
use scopevoice::http::{self, AppState};
use scopevoice::script::{load_script, replay};
use scopevoice::sessions::{Backends, SessionManager};
use scopevoice_core::dictation::{ListeningProfile, ProfileName};
use scopevoice_core::prompt::{build_initial_prompt, render_json};

#[derive(Parser)]
#[command(
    name = "scopevoice",
    version,
    about = "Voice-control broker for a surgical AR assistant"
)]
struct Cli {
    /// Service configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured case directory.
    #[arg(long, global = true)]
    cases_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the HTTP and WebSocket service.
    Serve {
        /// Address to bind, e.g. 127.0.0.1:8080.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Replays a scenario script against a fresh session and reports per task.
    Replay {
        /// JSON-lines script of utterances and checkpoints.
        script: PathBuf,
        /// Case id under the case directory.
        #[arg(long)]
        case: String,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Chat backend for llm mode; the configured one by default.
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        /// Listening profile; the configured one by default.
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Prints the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Lists the keyword lexicon generated for a case.
    Lexicon {
        /// Case id under the case directory.
        #[arg(long)]
        case: String,
    },
    /// Prints the rendered initial prompt for a case.
    Prompt {
        /// Case id under the case directory.
        #[arg(long)]
        case: String,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ProfileArg {
    Study,
    Refined,
}

impl From<ProfileArg> for ProfileName {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Study => ProfileName::Study,
            ProfileArg::Refined => ProfileName::Refined,
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut cfg = match &cli.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    if let Some(dir) = cli.cases_dir {
        cfg.cases_dir = dir;
    }
    let catalog = scopevoice::catalog_from_config(&cfg)?;
    match cli.command {
        Command::Serve { listen } => {
            let addr = listen.unwrap_or(cfg.listen);
            let manager = Arc::new(SessionManager::new(
                catalog,
                Backends::from_config(&cfg),
                cfg.listening_profile(),
            ));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(http::serve(AppState::new(manager), addr))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay {
            script,
            case,
            mode,
            backend,
            profile,
            json,
        } => {
            let steps = load_script(&script)?;
            let backends = Backends::from_config(&cfg);
            let chat = match mode {
                Mode::Grammar => None,
                Mode::Llm => Some(backends.pick(backend)?),
            };
            let profile = profile.map_or_else(|| cfg.listening_profile(), |p| ListeningProfile::named(p.into()));
            let mut session = SessionRecord::new(catalog.get(&case)?, mode, profile, chat)?;
            let report = replay(&mut session, &steps)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for t in &report.tasks {
                    println!(
                        "task {:<4} {}  {:>6} ms  {} attempt(s)",
                        t.task,
                        if t.passed { "pass" } else { "FAIL" },
                        t.elapsed_ms,
                        t.attempts
                    );
                    if !t.passed {
                        println!("    expected {:?}", t.expected);
                        println!("    visible  {:?}", t.actual);
                    }
                }
                println!("{}/{} tasks passed on {}", report.passed, report.total, report.case_id);
            }
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Lexicon { case } => {
            let loaded = catalog.get(&case)?;
            for (phrase, entry) in loaded.lexicon.entries() {
                println!("{phrase:<28} {}", entry.binding);
            }
            println!("{} keywords", loaded.lexicon.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Prompt { case } => {
            let loaded = catalog.get(&case)?;
            let store = loaded.examples.lock().unwrap_or_else(|e| e.into_inner());
            let doc = build_initial_prompt(&loaded.case, &loaded.matrix, &loaded.registry, &store)?;
            print!("{}", render_json(&doc));
            Ok(ExitCode::SUCCESS)
        }
    }
}
