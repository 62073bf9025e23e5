use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use noteflow_core::event::NotebookKey;
use noteflow_core::pipeline::{
    self, BackendSettings, PipelineConfig, PipelineError, QuantileNormalization, ReportOptions,
};
use noteflow_core::snapshot::{build_histories, StepCommand, Stepper};
use noteflow_ingest::{EventStore, ExportFilter, FileStore, MemoryStore, SharedStore};

#[derive(Parser)]
#[command(name = "noteflow", version, about = "Notebook interaction telemetry: ingest, reconstruct, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ingestion server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8750")]
        addr: String,
        /// Append-only store file; omit for an in-memory store.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write stored events as a JSONL dump.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        session: Option<String>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        notebook: Option<String>,
        #[arg(long)]
        from: Option<i64>,
        #[arg(long)]
        to: Option<i64>,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Repair a raw dump into the log table.
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the log table into per-action snapshots.
    Snapshots {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every snapshot as .ipynb.
        #[arg(long)]
        ipynb: bool,
    },
    /// Extract execution transitions, chains and change sizes.
    Transitions {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label transitions with edit purposes and data-science steps.
    Annotate {
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 0)]
        audit_sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate annotations into matrices, profiles and report.json.
    Report {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Step through one notebook's history interactively.
    ///
    /// Commands on stdin: n (next), p (prev), g N (goto), e PATH (export .ipynb), q (quit).
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        notebook: String,
    },
    /// Run every stage from a raw dump.
    Run {
        /// JSON configuration file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        ipynb: bool,
        #[arg(long)]
        audit_sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// Annotate self-transitions with the language-model backend
    /// (NOTEFLOW_BACKEND_URL, NOTEFLOW_BACKEND_TOKEN).
    #[arg(long)]
    backend: bool,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Response archive from an earlier run; cached prompts skip the network.
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl BackendArgs {
    fn apply(&self, mut s: BackendSettings) -> BackendSettings {
        s.enabled |= self.backend;
        if let Some(m) = &self.model {
            s.model = m.clone();
        }
        if let Some(n) = self.max_in_flight {
            s.max_in_flight = n.max(1);
        }
        if let Some(c) = &self.cache {
            s.cache = Some(c.clone());
        }
        s
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantileMode {
    BinShare,
    StepShare,
}

impl From<QuantileMode> for QuantileNormalization {
    fn from(m: QuantileMode) -> Self {
        match m {
            QuantileMode::BinShare => QuantileNormalization::BinShare,
            QuantileMode::StepShare => QuantileNormalization::StepShare,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// CSV with columns user_id,notebook_name,task,expertise.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Leave unchanged re-executions out of the mean change size.
    #[arg(long)]
    exclude_zero_distance: bool,
    #[arg(long, value_enum)]
    quantile_normalization: Option<QuantileMode>,
}

impl ReportArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        if let Some(g) = &self.groups {
            c.groups = Some(g.clone());
        }
        if self.exclude_zero_distance {
            c.include_zero_distance = false;
        }
        if let Some(q) = self.quantile_normalization {
            c.quantile_normalization = q.into();
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<PipelineError>().map_or(3, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Serve { addr, store } => serve(&addr, store),
        Command::Export { store, session, user, notebook, from, to, out } => {
            let filter = ExportFilter { session, user, notebook, from, to };
            let events = FileStore::open(&store).with_context(|| store.display().to_string())?.export(&filter)?;
            let text = noteflow_ingest::to_jsonl(&events);
            match out {
                Some(path) => fs::write(&path, text).with_context(|| path.display().to_string())?,
                None => io::stdout().write_all(text.as_bytes())?,
            }
            Ok(())
        }
        Command::Normalize { input, out } => {
            let s = pipeline::stage_normalize(&input, &out)?;
            println!("{} records, {} rejects ({} duplicates), {} synthesized", s.records, s.rejects, s.duplicates, s.synthesized);
            Ok(())
        }
        Command::Snapshots { log, out, ipynb } => {
            let n = pipeline::stage_snapshots(&log, &out, ipynb)?;
            println!("{n} snapshots");
            Ok(())
        }
        Command::Transitions { log, out } => {
            let n = pipeline::stage_transitions(&log, &out)?;
            println!("{n} transitions");
            Ok(())
        }
        Command::Annotate { transitions, out, backend, audit_sample, seed } => {
            let settings = backend.apply(BackendSettings::default());
            let client = if settings.enabled { Some(pipeline::backend_client(&settings)?) } else { None };
            let annotated = pipeline::stage_annotate(
                &transitions,
                &out,
                client.as_deref().map(|c| (c, settings.max_in_flight)),
                Some((audit_sample, seed)),
            )?;
            println!("{} transitions annotated", annotated.len());
            Ok(())
        }
        Command::Report { annotations, log, out, report } => {
            let mut config = PipelineConfig::default();
            report.apply(&mut config);
            let hash = config.hash();
            let r = pipeline::stage_report(
                &annotations,
                &log,
                &out,
                &ReportOptions {
                    groups: config.groups.as_deref(),
                    include_zero_distance: config.include_zero_distance,
                    quantile_normalization: config.quantile_normalization,
                    config_hash: &hash,
                },
            )?;
            println!("report over {} transitions written to {}", r.transitions.total, out.display());
            Ok(())
        }
        Command::Replay { log, user, notebook } => replay(&log, NotebookKey::new(user, notebook)),
        Command::Run { config, input, out, ipynb, audit_sample, seed, backend, report } => {
            let mut c = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
                    serde_json::from_str::<PipelineConfig>(&text)
                        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?
                }
                None => PipelineConfig::default(),
            };
            if let Some(i) = input {
                c.input = i;
            }
            if let Some(o) = out {
                c.output = o;
            }
            c.export_ipynb |= ipynb;
            c.audit_sample = audit_sample.unwrap_or(c.audit_sample);
            c.seed = seed.unwrap_or(c.seed);
            c.backend = backend.apply(c.backend);
            report.apply(&mut c);
            if c.input.as_os_str().is_empty() || c.output.as_os_str().is_empty() {
                return Err(PipelineError::Validation("both an input dump and an output directory are required".into()).into());
            }
            let m = pipeline::run_pipeline(&c)?;
            println!("config {}: {} artifacts in {}", m.config_hash, m.artifacts.len(), c.output.display());
            Ok(())
        }
    }
}

fn serve(addr: &str, store: Option<PathBuf>) -> anyhow::Result<()> {
    let store: SharedStore = match &store {
        Some(path) => Arc::new(FileStore::open(path).with_context(|| path.display().to_string())?),
        None => Arc::new(MemoryStore::new()),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("bind {addr}"))?;
        noteflow_ingest::serve(listener, store).await?;
        Ok(())
    })
}

fn parse_command(line: &str) -> Result<Option<(StepCommand, Option<&str>)>, String> {
    let mut parts = line.split_whitespace();
    let Some(word) = parts.next() else { return Ok(None) };
    let arg = parts.next();
    match word {
        "n" | "next" => Ok(Some((StepCommand::Next, None))),
        "p" | "prev" => Ok(Some((StepCommand::Prev, None))),
        "g" | "goto" => {
            let k = arg.ok_or("goto needs a position")?.parse().map_err(|_| "position must be a number".to_string())?;
            Ok(Some((StepCommand::Goto(k), None)))
        }
        "e" | "export" => Ok(Some((StepCommand::Export, Some(arg.ok_or("export needs a file path")?)))),
        other => Err(format!("unknown command `{other}`")),
    }
}

fn replay(log_path: &Path, key: NotebookKey) -> anyhow::Result<()> {
    let log = pipeline::read_log(log_path)?;
    let histories = build_histories(&log).map_err(|e| PipelineError::Stage { stage: "replay", message: e.to_string() })?;
    let history = histories
        .into_iter()
        .find(|h| h.key == key)
        .ok_or_else(|| PipelineError::Validation(format!("notebook {key} not found in {}", log_path.display())))?;
    let mut stepper = Stepper::new(history);
    let mut stdout = io::stdout().lock();
    write!(stdout, "{}", stepper.summary())?;
    for line in io::stdin().lock().lines() {
        let line = line?;
        if matches!(line.trim(), "q" | "quit") {
            break;
        }
        let (command, path) = match parse_command(&line) {
            Ok(Some(c)) => c,
            Ok(None) => continue,
            Err(msg) => {
                writeln!(stdout, "? {msg}")?;
                continue;
            }
        };
        match stepper.step(command) {
            Ok(outcome) => {
                if let Some(notice) = &outcome.notice {
                    writeln!(stdout, "({notice})")?;
                }
                if let (Some(_), Some(path)) = (&outcome.notebook, path) {
                    fs::write(path, noteflow_core::ipynb::to_string(&stepper.current())).with_context(|| path.to_string())?;
                    writeln!(stdout, "exported {path}")?;
                }
                write!(stdout, "{}", outcome.summary)?;
            }
            Err(e) => writeln!(stdout, "? {e}")?,
        }
    }
    Ok(())
}

