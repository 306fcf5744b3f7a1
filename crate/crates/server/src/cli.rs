//! `complyctl` verbs. Exit codes: 0 success, 1 validation error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use complyflow::domain::Label;
use complyflow::dqn::{train_dqn, DqnConfig};
use complyflow::engine::{Engine, EngineConfig, EngineError, ModelBundle};
use complyflow::rules::{parse_rules, RuleError};
use complyflow::sim::report::{config_hash, module_summary, render, write_report, RunManifest};
use complyflow::sim::training::{train_anomaly, train_bundle, train_doc, train_sequence, TrainOptions};
use complyflow::sim::{generate_workload, preset, preset_names, simulate, simulate_process, Scenario, SimError, SimulateOptions};
use thiserror::Error;

use crate::bench::{run_bench, BenchConfig, BenchError};
use crate::config::{ConfigError, ServerConfig};
use crate::{build_engine, serve, AppState, ServerError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        let validation = match self {
            CliError::Usage(_) | CliError::Rules(_) | CliError::Config(_) => true,
            CliError::Sim(e) => matches!(e, SimError::InvalidScenario(_) | SimError::UnknownPreset(_) | SimError::Parse(_)),
            CliError::Server(e) => matches!(e, ServerError::Config(_)),
            CliError::Bench(e) => matches!(e, BenchError::InvalidConfig(_)),
            CliError::Engine(e) => matches!(e, EngineError::Rules(_) | EngineError::Config(_)),
            CliError::Io { .. } => false,
        };
        if validation {
            1
        } else {
            2
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Parser)]
#[command(name = "complyctl", version, about = "Compliance automation engine: training, simulation, serving and load testing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Built-in scenario name.
    #[arg(long, default_value = "securities-firm")]
    pub preset: String,
    /// Scenario TOML file; overrides --preset.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Override the scenario's event count.
    #[arg(long)]
    pub count: Option<usize>,
    /// Override the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ScenarioArgs {
    pub fn load(&self) -> Result<Scenario, CliError> {
        let mut s = match &self.scenario {
            Some(path) => Scenario::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)?,
            None => preset(&self.preset)?,
        };
        if let Some(n) = self.count {
            s.count = n;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Subcommand)]
pub enum RulesCommand {
    /// Parse a rule file and print it in canonical evaluation order.
    Check { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the feature pipeline and one-class SVM on a scenario workload.
    TrainSvm {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0.05)]
        nu: f64,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        /// Bundle directory; writes features.json and svm.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sequence risk model on the burst task.
    TrainSeq {
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        valid: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the document classifier on the keyword corpus.
    TrainDoc {
        #[arg(long, default_value_t = 800)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the escalation routing policy.
    TrainDqn {
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Policy JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every model and write a bundle directory.
    Train {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Small budgets for smoke runs.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a scenario's events and labels as JSON lines.
    Generate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, train, run the engine with a simulated reviewer and write the report.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Small budgets for smoke runs.
        #[arg(long)]
        quick: bool,
        /// Use a trained bundle instead of training.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Also save the trained bundle here.
        #[arg(long)]
        save_models: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        /// TOML config file; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config port.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Closed-loop load test against a running service.
    Bench {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        target: String,
        /// Comma-separated concurrency levels.
        #[arg(long, value_delimiter = ',', default_value = "10,50,100,200")]
        levels: Vec<usize>,
        #[arg(long, default_value_t = 10.0)]
        duration_secs: f64,
        #[arg(long)]
        token: Option<String>,
        /// Template events come from this scenario.
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report files from a persisted engine directory.
    Report {
        #[arg(long)]
        wal_dir: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Ground-truth labels (JSON lines) for the module accuracy rows.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rule file tools.
    #[command(subcommand)]
    Rules(RulesCommand),
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Io { path: PathBuf::from("<runtime>"), source: e })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainSvm { scenario, nu, rows, out } => {
            let workload = generate_workload(&scenario.load()?)?;
            let options = TrainOptions { svm_nu: nu, svm_rows: rows, ..TrainOptions::default() };
            let (features, svm) = train_anomaly(&workload, &options)?;
            let bundle = ModelBundle { features: Some(features), svm: Some(svm), ..ModelBundle::default() };
            bundle.save_dir(&out)?;
            let svm = bundle.svm.as_ref().expect("just set");
            println!("svm: {} support vectors, rho {:.6}, dim {}", svm.alphas.len(), svm.rho, svm.dim());
        }
        Command::TrainSeq { train, valid, epochs, seed, out } => {
            let mut options = TrainOptions { seq_train: train, seq_valid: valid, seed, ..TrainOptions::default() };
            options.seq.epochs = epochs;
            let (model, history) = train_sequence(&options)?;
            model.save(&out).map_err(|e| EngineError::Model(e.to_string()))?;
            for e in &history.epochs {
                println!("epoch {:>2} loss {:.4} valid {:.4}", e.epoch, e.train_loss, e.valid_accuracy);
            }
            println!("kept epoch {}", history.best_epoch);
        }
        Command::TrainDoc { train, test, seed, out } => {
            let options = TrainOptions { doc_train: train, doc_test: test, seed, ..TrainOptions::default() };
            let (model, acc) = train_doc(&options)?;
            model.save(&out).map_err(|e| EngineError::Model(e.to_string()))?;
            println!("doc classifier test accuracy {acc:.4}");
        }
        Command::TrainDqn { episodes, seed, out } => {
            let (policy, history) =
                train_dqn(&DqnConfig { episodes, seed, ..DqnConfig::default() }).map_err(|e| CliError::Usage(e.to_string()))?;
            write_file(&out, &(serde_json::to_string_pretty(&policy.to_json()).expect("policy serializes") + "\n"))?;
            println!("{} episodes, {} updates", history.episode_returns.len(), history.updates);
        }
        Command::Train { scenario, quick, out } => {
            let workload = generate_workload(&scenario.load()?)?;
            let options = if quick { TrainOptions::quick() } else { TrainOptions::default() };
            let (bundle, summary) = train_bundle(&workload, &options)?;
            bundle.save_dir(&out)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Generate { scenario, out } => {
            let workload = generate_workload(&scenario.load()?)?;
            std::fs::create_dir_all(&out).map_err(io_err(&out))?;
            let events = out.join("events.jsonl");
            let labels = out.join("labels.jsonl");
            workload.write_events(std::io::BufWriter::new(std::fs::File::create(&events).map_err(io_err(&events))?)).map_err(io_err(&events))?;
            workload.write_labels(std::io::BufWriter::new(std::fs::File::create(&labels).map_err(io_err(&labels))?)).map_err(io_err(&labels))?;
            println!("{} events, {} violations -> {}", workload.events.len(), workload.positives(), out.display());
        }
        Command::Simulate { scenario, quick, models, save_models, out } => {
            let scenario = scenario.load()?;
            let mut options = SimulateOptions::default();
            if quick {
                options.train = TrainOptions::quick();
            }
            if let Some(dir) = &models {
                options.models = Some(ModelBundle::load_dir(dir)?);
            }
            let run = simulate(&scenario, &options)?;
            if let Some(dir) = &save_models {
                run.engine.models().save_dir(dir)?;
            }
            let files = run.report()?;
            write_report(&out, &files)?;
            if !run.ingest_errors.is_empty() {
                eprintln!("ingest errors: {:?}", run.ingest_errors);
            }
            print!("{}", files.tables);
            println!("report written to {}", out.display());
        }
        Command::Serve { config, port } => {
            let mut cfg = match &config {
                Some(path) => ServerConfig::load(path)?,
                None => ServerConfig::default(),
            };
            if let Some(p) = port {
                cfg.port = p;
            }
            let engine = build_engine(&cfg)?;
            if let Some(kind) = engine.models().missing() {
                log::warn!("model {kind} not loaded; unmatched events will be parked until it is");
            }
            let state = AppState::new(engine, cfg.token.clone());
            runtime()?.block_on(async move {
                let addr = format!("{}:{}", cfg.bind, cfg.port);
                let listener = tokio::net::TcpListener::bind(&addr).await.map_err(ServerError::from)?;
                println!("listening on http://{}", listener.local_addr().map_err(ServerError::from)?);
                serve(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
        }
        Command::Bench { target, levels, duration_secs, token, scenario, out } => {
            if !(duration_secs.is_finite() && duration_secs > 0.0) {
                return Err(CliError::Usage("--duration-secs must be positive".into()));
            }
            let mut s = scenario.load()?;
            s.count = s.count.min(2000);
            let cfg = BenchConfig {
                target,
                levels,
                duration: Duration::from_secs_f64(duration_secs),
                token,
                request_timeout: Duration::from_secs(30),
                events: generate_workload(&s)?.events,
                run_id: format!("bench-{}", std::process::id()),
            };
            let report = runtime()?.block_on(run_bench(&cfg))?;
            let csv = report.to_csv()?;
            match &out {
                Some(path) => write_file(path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Report { wal_dir, scenario, labels, out } => {
            if !wal_dir.join(complyflow::engine::wal::WAL_FILE).exists() {
                return Err(CliError::Usage(format!("{} holds no WAL", wal_dir.display())));
            }
            let scenario = scenario.load()?;
            let engine = Engine::open(&wal_dir, EngineConfig::default())?;
            let labels: Vec<Label> = match &labels {
                Some(path) => std::fs::read_to_string(path)
                    .map_err(io_err(path))?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str)
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
                None => engine.labels().to_vec(),
            };
            let metrics = engine.metrics();
            let manifest = RunManifest {
                scenario: scenario.name.clone(),
                seed: scenario.seed,
                event_count: metrics.ingested_total as usize,
                config_hash: config_hash(&scenario),
                engine_state_hash: engine.state_hash(),
                crate_version: env!("CARGO_PKG_VERSION").to_owned(),
                extra_seeds: Default::default(),
            };
            let files = render(&metrics, &simulate_process(&scenario), &module_summary(&engine, &labels), &manifest)?;
            write_report(&out, &files)?;
            println!("report written to {}", out.display());
        }
        Command::Rules(RulesCommand::Check { file }) => {
            let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
            let rules = parse_rules(&text)?;
            print!("{}", rules.canonical());
            eprintln!("{} rules ok", rules.len());
        }
    }
    Ok(())
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Sim(SimError::UnknownPreset(_)) = &e {
                eprintln!("known presets: {}", preset_names().join(", "));
            }
            ExitCode::from(e.exit_code())
        }
    }
}
