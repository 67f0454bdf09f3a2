use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bazaar_core::eval::{
    compute_report, config_digest, eval_start, generate_dataset, run_suite, write_transcripts, AgentBackend, Dataset,
    DatasetConfig, DatasetMode, RunOptions, SimulatorChoice, TaskKind,
};
use bazaar_core::tools::KnowledgeIndex;
use bazaar_server::config::{build_backend, BackendKind, Config};
use bazaar_server::repl::{self, ReplError};
use bazaar_server::{build_agent, serve_on};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bazaar", version, about = "Conversational assistant for a second-hand marketplace")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and event-stream gateway.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `bind` from the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Chat with the assistant in the terminal.
    Chat {
        #[arg(long)]
        user: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        /// Script file for the scripted backend.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Marketplace store directory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Check and summarise a knowledge-base directory of markdown articles.
    IngestKb {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Write a synthetic evaluation dataset.
    GenerateDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Template)]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        tasks_per_kind: usize,
        /// Backend settings for model mode.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the evaluation suite and write a report.
    Eval {
        /// A dataset directory, or a seed for a fresh template dataset.
        #[arg(long, default_value = "42")]
        dataset: String,
        /// Listings in a fresh template dataset.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        tasks_per_kind: usize,
        #[arg(long, value_delimiter = ',', default_value = "search,renew,bulk")]
        tasks: Vec<String>,
        #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
        backend: BackendKind,
        #[arg(long, value_enum, default_value_t = Sim::Scripted)]
        simulator: Sim,
        /// Backend settings for remote and replay runs and the model simulator.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/report.json")]
        report: PathBuf,
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Template,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sim {
    Scripted,
    Model,
}

type BoxError = Box<dyn std::error::Error>;

fn load_config(path: Option<&Path>) -> Result<Config, BoxError> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn serve(config: &Path, bind: Option<String>) -> Result<(), BoxError> {
    let mut config = Config::load(config)?;
    if let Some(b) = bind {
        config.bind = b;
    }
    let agent = build_agent(&config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.bind).await?;
        // the bound address goes to stdout so scripts can pick it up
        println!("listening on http://{}", listener.local_addr()?);
        serve_on(listener, agent, &config, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}

fn chat(
    user: &str,
    config: Option<&Path>,
    backend: Option<BackendKind>,
    script: Option<PathBuf>,
    store: Option<PathBuf>,
) -> Result<(), ReplError> {
    let setup = || -> Result<_, BoxError> {
        let mut config = load_config(config)?;
        if let Some(kind) = backend {
            config.backend.kind = kind;
        }
        if script.is_some() {
            config.backend.script_path = script;
        }
        if store.is_some() {
            config.store_dir = store;
        }
        Ok(build_agent(&config)?)
    };
    let agent = setup().map_err(|e| ReplError::BackendUnavailable(e.to_string()))?;
    let stdin = io::stdin();
    repl::run(&agent, user, stdin.lock(), io::stdout())
}

fn ingest_kb(dir: &Path) -> Result<(), BoxError> {
    let index = KnowledgeIndex::ingest_dir(dir)?;
    for doc in index.docs() {
        println!("{:<32} {:>3} chunk(s)  {}", doc.doc_id, doc.chunks.len(), doc.title);
    }
    println!(
        "{} document(s), {} chunk(s), digest {}",
        index.docs().len(),
        index.chunk_count(),
        index.digest()
    );
    Ok(())
}

fn generate(
    out: &Path,
    n: usize,
    seed: u64,
    mode: Mode,
    tasks_per_kind: usize,
    config: Option<&Path>,
) -> Result<(), BoxError> {
    let dataset_config = DatasetConfig {
        n,
        seed,
        mode: match mode {
            Mode::Template => DatasetMode::Template,
            Mode::Model => DatasetMode::Model,
        },
        tasks_per_kind,
    };
    let backend = match mode {
        Mode::Template => None,
        Mode::Model => Some(build_backend(&load_config(config)?.backend)?),
    };
    let dataset = generate_dataset(&dataset_config, backend.as_deref())?;
    dataset.save(out)?;
    println!(
        "wrote {} listing(s) and {} task(s) to {}",
        dataset.state.listings.len(),
        dataset.manifest.tasks.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    dataset: &str,
    n: usize,
    tasks_per_kind: usize,
    tasks: &[String],
    backend: BackendKind,
    simulator: Sim,
    config: Option<&Path>,
    report: &Path,
    transcripts: Option<&Path>,
) -> Result<bool, BoxError> {
    let config = load_config(config)?;
    let dataset = if Path::new(dataset).is_dir() {
        Dataset::load(Path::new(dataset))?
    } else {
        let seed: u64 = dataset
            .parse()
            .map_err(|_| format!("--dataset must be a directory or a seed, got {dataset:?}"))?;
        generate_dataset(
            &DatasetConfig {
                tasks_per_kind,
                ..DatasetConfig::template(n, seed)
            },
            None,
        )?
    };
    let kinds: Vec<TaskKind> = tasks.iter().map(|t| t.parse()).collect::<Result<_, _>>()?;
    let tasks = dataset.tasks_of(&kinds);

    let agent_backend = match backend {
        BackendKind::Scripted => AgentBackend::Scripted,
        kind => {
            let mut b = config.backend.clone();
            b.kind = kind;
            AgentBackend::Shared(build_backend(&b)?)
        }
    };
    let simulator = match simulator {
        Sim::Scripted => SimulatorChoice::Scripted,
        Sim::Model => {
            let mut b = config.backend.clone();
            if b.kind == BackendKind::Scripted {
                b.kind = BackendKind::Remote;
            }
            SimulatorChoice::Model(build_backend(&b)?, config.temperatures.simulator)
        }
    };
    let mut options = RunOptions::new(dataset.manifest.seller_id.clone(), eval_start(&dataset.manifest));
    options.agent = config.agent_config();

    let outcomes = run_suite(&dataset, &tasks, &agent_backend, &simulator, &options)?;
    let digest = config_digest(&dataset, &tasks, &agent_backend, &simulator, &options);
    let result = compute_report(&outcomes, &digest, chrono::Utc::now())?;
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(report, serde_json::to_string_pretty(&result)? + "\n")?;
    if let Some(dir) = transcripts {
        write_transcripts(dir, &outcomes)?;
    }
    print!("{}", result.render_table());
    println!("report written to {}", report.display());
    Ok(result.overall.successes == result.overall.n)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome: Result<ExitCode, BoxError> = match cli.command {
        Command::Serve { config, bind } => serve(&config, bind).map(|_| ExitCode::SUCCESS),
        Command::Chat {
            user,
            config,
            backend,
            script,
            store,
        } => match chat(&user, config.as_deref(), backend, script, store) {
            Ok(()) => Ok(ExitCode::SUCCESS),
            Err(ReplError::BackendUnavailable(msg)) => {
                eprintln!("bazaar: backend unavailable: {msg}");
                return ExitCode::from(3);
            }
            Err(e) => Err(e.into()),
        },
        Command::IngestKb { dir } => ingest_kb(&dir).map(|_| ExitCode::SUCCESS),
        Command::GenerateDataset {
            out,
            n,
            seed,
            mode,
            tasks_per_kind,
            config,
        } => generate(&out, n, seed, mode, tasks_per_kind, config.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Eval {
            dataset,
            n,
            tasks_per_kind,
            tasks,
            backend,
            simulator,
            config,
            report,
            transcripts,
        } => eval(
            &dataset,
            n,
            tasks_per_kind,
            &tasks,
            backend,
            simulator,
            config.as_deref(),
            &report,
            transcripts.as_deref(),
        )
        .map(|all_passed| if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bazaar: {e}");
            ExitCode::from(2)
        }
    }
}
