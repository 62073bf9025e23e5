//! End-to-end run: raw dump -> log table -> snapshots -> transitions ->
//! annotations -> report. Stages talk to each other only through files in
//! the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{csv_field, fmt_f64, Groups};
use crate::annotate::backend::{self, BackendConfig, CachedClient, HttpClient};
use crate::annotate::{self, AnnotatedTransition};
use crate::event::{parse_event, RawEvent};
use crate::ipynb;
use crate::normalize::{normalize, LogRecord, Normalized};
use crate::report::analyze;
use crate::snapshot::{build_histories, NotebookHistory};
use crate::transition::{chain_stats, extract_all, Transition, TransitionKind};

pub const LOG_JSONL: &str = "log.jsonl";
pub const LOG_CSV: &str = "log.csv";
pub const REJECTS: &str = "rejects.jsonl";
pub const SNAPSHOTS_JSONL: &str = "snapshots.jsonl";
pub const SNAPSHOTS_CSV: &str = "snapshots.csv";
pub const TRANSITIONS: &str = "transitions.jsonl";
pub const CHAINS: &str = "chains.csv";
pub const EDIT_DISTANCE: &str = "edit_distance.csv";
pub const OUTPUT_KINDS: &str = "output_kinds.csv";
pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const BACKEND_ARCHIVE: &str = "backend_responses.jsonl";
pub const AUDIT_SAMPLE: &str = "audit_sample.jsonl";
pub const SELF_MATRIX: &str = "self_matrix.csv";
pub const INTER_MATRIX: &str = "inter_matrix.csv";
pub const QUANTILES: &str = "quantiles.csv";
pub const TIME_STATS: &str = "time_stats.csv";
pub const OBJECT_SERIES: &str = "object_series.csv";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";
pub const QUARANTINE_DIR: &str = "quarantine";
const STAGING_DIR: &str = ".staging";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub enabled: bool,
    pub model: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Archive of earlier responses; hits are served without a network call.
    pub cache: Option<PathBuf>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings { enabled: false, model: "gpt-4o".into(), max_in_flight: 4, timeout_secs: 60, cache: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileNormalization {
    /// Share of each step within a bin.
    BinShare,
    /// Share of a step's events falling in each bin.
    StepShare,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Raw JSONL event dump.
    pub input: PathBuf,
    pub output: PathBuf,
    /// Optional CSV mapping notebooks to task and expertise.
    pub groups: Option<PathBuf>,
    pub include_zero_distance: bool,
    pub quantile_normalization: QuantileNormalization,
    pub export_ipynb: bool,
    /// Number of self-transitions drawn for manual audit.
    pub audit_sample: usize,
    pub seed: u64,
    pub backend: BackendSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            output: PathBuf::new(),
            groups: None,
            include_zero_distance: true,
            quantile_normalization: QuantileNormalization::BinShare,
            export_ipynb: false,
            audit_sample: 0,
            seed: 0,
            backend: BackendSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// sha256 of the configuration without the output location, so the same
    /// run written to two directories carries the same hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let canonical = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    /// Process exit code: 2 for invalid input or configuration, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn stage_err(stage: &'static str) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// Parse a raw dump; the first malformed line aborts with its line number.
pub fn read_dump(path: &Path) -> Result<Vec<RawEvent>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_event(&line).map_err(|e| PipelineError::Validation(format!("{}:{}: {e}", path.display(), n + 1)))?);
    }
    Ok(events)
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(LogRecord::from_line(&line).map_err(|e| PipelineError::Validation(format!("{}:{}: {e}", path.display(), n + 1)))?);
    }
    Ok(out)
}

pub fn read_transitions(path: &Path) -> Result<Vec<Transition>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| PipelineError::Validation(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

fn histories(stage: &'static str, log: &[LogRecord]) -> Result<Vec<NotebookHistory>, PipelineError> {
    build_histories(log).map_err(|e| PipelineError::Stage { stage, message: e.to_string() })
}

/// Runs `body` against a staging directory. On success its files move into
/// `out`; on failure they move to `out/quarantine/<stage>`.
fn run_stage<T>(
    out: &Path,
    stage: &'static str,
    body: impl FnOnce(&Path) -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    let staging = out.join(STAGING_DIR).join(stage);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(stage_err(stage))?;
    }
    fs::create_dir_all(&staging).map_err(stage_err(stage))?;
    match body(&staging) {
        Ok(value) => {
            promote(&staging, out).map_err(stage_err(stage))?;
            fs::remove_dir_all(&staging).map_err(stage_err(stage))?;
            let _ = fs::remove_dir(out.join(STAGING_DIR));
            Ok(value)
        }
        Err(e) => {
            let quarantine = out.join(QUARANTINE_DIR).join(stage);
            let _ = fs::remove_dir_all(&quarantine);
            if fs::create_dir_all(out.join(QUARANTINE_DIR)).is_ok() {
                let _ = fs::rename(&staging, &quarantine);
            }
            let _ = fs::remove_dir(out.join(STAGING_DIR));
            Err(e)
        }
    }
}

fn promote(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if target.is_dir() {
            fs::remove_dir_all(&target)?;
        }
        fs::rename(entry.path(), target)?;
    }
    Ok(())
}

fn write_lines<I, S>(path: &Path, lines: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        w.write_all(l.as_ref().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeSummary {
    pub input_events: usize,
    pub records: usize,
    pub synthesized: usize,
    pub duplicates: usize,
    pub rejects: usize,
}

impl NormalizeSummary {
    fn of(input: usize, n: &Normalized) -> NormalizeSummary {
        NormalizeSummary {
            input_events: input,
            records: n.records.len(),
            synthesized: n.synthesized,
            duplicates: n.duplicates(),
            rejects: n.rejects.len(),
        }
    }
}

/// Log table as CSV; outputs, extras and repairs are JSON-encoded cells.
pub fn log_csv(records: &[LogRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seq_no", "kind", "session_id", "kernel_id", "notebook_name", "timestamp", "seq", "user_id", "cell_id",
        "cell_ordinal", "source", "outputs", "new_cell_type", "extras", "repaired",
    ])?;
    for r in records {
        let e = &r.event;
        let json = |v: serde_json::Value| serde_json::to_string(&v).expect("json");
        w.write_record([
            r.seq_no.to_string(),
            e.kind.as_str().to_string(),
            e.session_id.clone(),
            e.kernel_id.clone(),
            e.notebook_name.clone(),
            e.timestamp.to_string(),
            e.seq.to_string(),
            e.user_id.clone(),
            e.cell_id.clone().unwrap_or_default(),
            e.cell_ordinal.map(|o| o.to_string()).unwrap_or_default(),
            e.source.clone().unwrap_or_default(),
            e.outputs.as_ref().map(|o| json(serde_json::to_value(o).expect("json"))).unwrap_or_default(),
            e.new_cell_type.map(|t| t.as_str().to_string()).unwrap_or_default(),
            if e.extras.is_empty() { String::new() } else { json(serde_json::to_value(&e.extras).expect("json")) },
            r.repaired.join(";"),
        ])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

pub fn stage_normalize(input: &Path, out: &Path) -> Result<NormalizeSummary, PipelineError> {
    const STAGE: &str = "normalize";
    let events = read_dump(input)?;
    run_stage(out, STAGE, |dir| {
        let count = events.len();
        let n = normalize(events);
        write_lines(&dir.join(LOG_JSONL), n.records.iter().map(LogRecord::to_line)).map_err(stage_err(STAGE))?;
        let csv = log_csv(&n.records).map_err(|e| PipelineError::Stage { stage: STAGE, message: e.to_string() })?;
        fs::write(dir.join(LOG_CSV), csv).map_err(stage_err(STAGE))?;
        write_lines(&dir.join(REJECTS), n.rejects.iter().map(|r| r.to_line())).map_err(stage_err(STAGE))?;
        Ok(NormalizeSummary::of(count, &n))
    })
}

#[derive(Serialize)]
struct SnapshotLine<'a> {
    user_id: &'a str,
    notebook_name: &'a str,
    after_seq_no: Option<u64>,
    cells: &'a [crate::snapshot::CellState],
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

pub fn stage_snapshots(log_path: &Path, out: &Path, export_ipynb: bool) -> Result<usize, PipelineError> {
    const STAGE: &str = "snapshots";
    let log = read_log(log_path)?;
    run_stage(out, STAGE, |dir| {
        let hs = histories(STAGE, &log)?;
        let mut jsonl = BufWriter::new(fs::File::create(dir.join(SNAPSHOTS_JSONL)).map_err(stage_err(STAGE))?);
        let mut csv = csv::Writer::from_path(dir.join(SNAPSHOTS_CSV)).map_err(|e| PipelineError::Stage { stage: STAGE, message: e.to_string() })?;
        let csv_err = |e: csv::Error| PipelineError::Stage { stage: STAGE, message: e.to_string() };
        csv.write_record(["user_id", "notebook_name", "after_seq_no", "ordinal", "cell_id", "cell_type", "execution_count", "source_chars", "output_kind"])
            .map_err(csv_err)?;
        let mut count = 0;
        for h in &hs {
            for snap in &h.snapshots {
                count += 1;
                let line = SnapshotLine {
                    user_id: &h.key.user_id,
                    notebook_name: &h.key.notebook_name,
                    after_seq_no: snap.after_seq_no,
                    cells: &snap.cells,
                };
                writeln!(jsonl, "{}", serde_json::to_string(&line).expect("json")).map_err(stage_err(STAGE))?;
                let seq = snap.after_seq_no.map(|s| s.to_string()).unwrap_or_default();
                for (i, c) in snap.cells.iter().enumerate() {
                    csv.write_record([
                        h.key.user_id.as_str(),
                        h.key.notebook_name.as_str(),
                        seq.as_str(),
                        &i.to_string(),
                        c.cell_id.as_str(),
                        c.cell_type.as_str(),
                        &c.execution_count.to_string(),
                        &c.source.chars().count().to_string(),
                        crate::transition::OutputKind::of(&c.last_outputs).as_str(),
                    ])
                    .map_err(csv_err)?;
                }
                if export_ipynb {
                    let nb_dir = dir.join("ipynb").join(safe_name(&h.key.user_id)).join(safe_name(&h.key.notebook_name));
                    fs::create_dir_all(&nb_dir).map_err(stage_err(STAGE))?;
                    fs::write(nb_dir.join(format!("{seq}.ipynb")), ipynb::to_string(snap)).map_err(stage_err(STAGE))?;
                }
            }
        }
        jsonl.flush().map_err(stage_err(STAGE))?;
        csv.flush().map_err(stage_err(STAGE))?;
        Ok(count)
    })
}

pub fn stage_transitions(log_path: &Path, out: &Path) -> Result<usize, PipelineError> {
    const STAGE: &str = "transitions";
    let log = read_log(log_path)?;
    run_stage(out, STAGE, |dir| {
        let hs = histories(STAGE, &log)?;
        let transitions = extract_all(&hs);
        write_lines(&dir.join(TRANSITIONS), transitions.iter().map(|t| serde_json::to_string(t).expect("json")))
            .map_err(stage_err(STAGE))?;
        write_transition_tables(dir, &transitions).map_err(stage_err(STAGE))?;
        Ok(transitions.len())
    })
}

fn write_transition_tables(dir: &Path, transitions: &[Transition]) -> std::io::Result<()> {
    let stats = chain_stats(transitions);
    let mut chains = String::from("user_id,notebook_name,cell_id,start_seq_no,executions\n");
    for c in &stats.chains {
        chains.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&c.notebook.user_id),
            csv_field(&c.notebook.notebook_name),
            csv_field(&c.cell_id),
            c.start_seq_no,
            c.executions
        ));
    }
    fs::write(dir.join(CHAINS), chains)?;

    // points pair up with self-transitions in stream order
    let mut distances = String::from("series,transition_id,position,distance,count\n");
    for (t, p) in transitions.iter().filter(|t| t.is_self()).zip(&stats.points) {
        distances.push_str(&format!("point,{},{},{},1\n", csv_field(&t.id), p.position, fmt_f64(p.distance)));
    }
    for m in &stats.position_means {
        distances.push_str(&format!("mean,,{},{},{}\n", m.position, fmt_f64(m.mean_distance), m.count));
    }
    fs::write(dir.join(EDIT_DISTANCE), distances)?;

    let mut kinds = String::from("transition_kind,output_kind,count,share\n");
    for kind in [TransitionKind::SelfLoop, TransitionKind::Inter] {
        let of_kind: Vec<&Transition> = transitions.iter().filter(|t| t.kind == kind).collect();
        for ok in crate::transition::OutputKind::ALL {
            let count = of_kind.iter().filter(|t| t.from_output_kind == ok).count();
            let share = if of_kind.is_empty() { 0.0 } else { count as f64 / of_kind.len() as f64 };
            kinds.push_str(&format!("{},{},{},{}\n", kind.as_str(), ok.as_str(), count, fmt_f64(share)));
        }
    }
    fs::write(dir.join(OUTPUT_KINDS), kinds)
}

/// Client for the backend stage, or a validation error when its
/// configuration is incomplete. Never touches the network.
pub fn backend_client(settings: &BackendSettings) -> Result<Box<dyn annotate::AnnotationClient>, PipelineError> {
    let live = BackendConfig::from_env(&settings.model, settings.timeout_secs).map(HttpClient::new);
    match (&settings.cache, live) {
        (Some(cache), live) if cache.exists() => {
            let client = CachedClient::load(live.ok(), cache).map_err(|e| PipelineError::Validation(format!("{}: {e}", cache.display())))?;
            Ok(Box::new(client))
        }
        (_, Ok(client)) => Ok(Box::new(client)),
        (_, Err(e)) => Err(PipelineError::Validation(e.to_string())),
    }
}

pub fn stage_annotate(
    transitions_path: &Path,
    out: &Path,
    backend: Option<(&dyn annotate::AnnotationClient, usize)>,
    audit: Option<(usize, u64)>,
) -> Result<Vec<AnnotatedTransition>, PipelineError> {
    const STAGE: &str = "annotate";
    let transitions = read_transitions(transitions_path)?;
    run_stage(out, STAGE, |dir| {
        let annotated = match backend {
            Some((client, in_flight)) => {
                let (annotated, archive) = annotate::annotate_with_backend(&transitions, client, in_flight);
                backend::write_archive(&dir.join(BACKEND_ARCHIVE), &archive).map_err(stage_err(STAGE))?;
                annotated
            }
            None => annotate::annotate_rules(&transitions),
        };
        annotate::write_annotations(&dir.join(ANNOTATIONS), &annotated).map_err(stage_err(STAGE))?;
        if let Some((size, seed)) = audit.filter(|a| a.0 > 0) {
            write_audit_sample(&dir.join(AUDIT_SAMPLE), &annotated, size, seed).map_err(stage_err(STAGE))?;
        }
        Ok(annotated)
    })
}

#[derive(Serialize)]
struct AuditLine<'a> {
    transition_id: &'a str,
    user_id: &'a str,
    notebook_name: &'a str,
    before: &'a str,
    after: &'a str,
    purposes: &'a [annotate::PurposeLabel],
}

fn write_audit_sample(path: &Path, annotated: &[AnnotatedTransition], size: usize, seed: u64) -> std::io::Result<()> {
    let self_ones: Vec<&AnnotatedTransition> = annotated.iter().filter(|a| a.transition.is_self()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<&AnnotatedTransition> = self_ones.choose_multiple(&mut rng, size).copied().collect();
    picked.sort_by_key(|a| (a.transition.notebook.clone(), a.transition.to_seq_no));
    write_lines(
        path,
        picked.iter().map(|a| {
            serde_json::to_string(&AuditLine {
                transition_id: &a.transition.id,
                user_id: &a.transition.notebook.user_id,
                notebook_name: &a.transition.notebook.notebook_name,
                before: &a.transition.from_cell.source,
                after: &a.transition.to_cell.source,
                purposes: &a.purposes,
            })
            .expect("json")
        }),
    )
}

pub struct ReportOptions<'a> {
    pub groups: Option<&'a Path>,
    pub include_zero_distance: bool,
    pub quantile_normalization: QuantileNormalization,
    pub config_hash: &'a str,
}

pub fn stage_report(annotations_path: &Path, log_path: &Path, out: &Path, options: &ReportOptions) -> Result<crate::report::Report, PipelineError> {
    const STAGE: &str = "report";
    let annotated = annotate::read_annotations(annotations_path)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", annotations_path.display())))?;
    let log = read_log(log_path)?;
    let mut groups = Groups::from_log(&log);
    if let Some(path) = options.groups {
        let extra = Groups::from_csv(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        groups = groups.merged(extra);
    }
    run_stage(out, STAGE, |dir| {
        let hs = histories(STAGE, &log)?;
        let analysis = analyze(&annotated, &log, &hs, &groups, options.include_zero_distance, options.config_hash);
        let io = stage_err(STAGE);
        fs::write(dir.join(SELF_MATRIX), analysis.self_matrix.to_csv()).map_err(&io)?;
        fs::write(dir.join(INTER_MATRIX), analysis.inter_matrix.to_csv()).map_err(&io)?;
        fs::write(dir.join(QUANTILES), analysis.quantiles.to_csv()).map_err(&io)?;
        fs::write(dir.join(TIME_STATS), analysis.time.to_csv()).map_err(&io)?;
        fs::write(dir.join(OBJECT_SERIES), analysis.objects.to_csv()).map_err(&io)?;
        let mut json = serde_json::to_value(&analysis.report).expect("json");
        json["quantile_normalization"] = serde_json::to_value(options.quantile_normalization).expect("json");
        json["quantile_profile"] = quantile_table(&analysis.quantiles, options.quantile_normalization);
        let mut text = serde_json::to_string_pretty(&json).expect("json");
        text.push('\n');
        fs::write(dir.join(REPORT), text).map_err(&io)?;
        Ok(analysis.report)
    })
}

fn quantile_table(q: &crate::analytics::QuantileProfile, mode: QuantileNormalization) -> serde_json::Value {
    let mut table = serde_json::Map::new();
    for step in crate::annotate::DsStep::ALL {
        let values: Vec<f64> = (0..crate::analytics::QUANTILES)
            .map(|b| match mode {
                QuantileNormalization::BinShare => q.bin_share(b, step),
                QuantileNormalization::StepShare => q.step_share(b, step),
            })
            .collect();
        table.insert(step.as_str().to_string(), serde_json::to_value(values).expect("json"));
    }
    serde_json::Value::Object(table)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub input_sha256: String,
    pub normalize: NormalizeSummary,
    pub snapshots: usize,
    pub transitions: usize,
    /// sha256 of every artifact, by file name.
    pub artifacts: BTreeMap<String, String>,
}

fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Artifacts that do not depend on external services.
pub const DETERMINISTIC_ARTIFACTS: [&str; 16] = [
    LOG_JSONL, LOG_CSV, REJECTS, SNAPSHOTS_JSONL, SNAPSHOTS_CSV, TRANSITIONS, CHAINS, EDIT_DISTANCE, OUTPUT_KINDS,
    ANNOTATIONS, SELF_MATRIX, INTER_MATRIX, QUANTILES, TIME_STATS, OBJECT_SERIES, REPORT,
];

pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    // everything that can be validated is checked before any work starts
    let client = if config.backend.enabled { Some(backend_client(&config.backend)?) } else { None };
    if !config.input.is_file() {
        return Err(PipelineError::Validation(format!("{}: no such input file", config.input.display())));
    }
    if let Some(g) = &config.groups {
        if !g.is_file() {
            return Err(PipelineError::Validation(format!("{}: no such groups file", g.display())));
        }
    }
    let out = &config.output;
    fs::create_dir_all(out).map_err(|e| PipelineError::Validation(format!("{}: {e}", out.display())))?;
    let hash = config.hash();

    let normalize = stage_normalize(&config.input, out)?;
    let log_path = out.join(LOG_JSONL);
    let snapshots = stage_snapshots(&log_path, out, config.export_ipynb)?;
    let transitions = stage_transitions(&log_path, out)?;
    stage_annotate(
        &out.join(TRANSITIONS),
        out,
        client.as_deref().map(|c| (c, config.backend.max_in_flight)),
        Some((config.audit_sample, config.seed)),
    )?;
    stage_report(
        &out.join(ANNOTATIONS),
        &log_path,
        out,
        &ReportOptions {
            groups: config.groups.as_deref(),
            include_zero_distance: config.include_zero_distance,
            quantile_normalization: config.quantile_normalization,
            config_hash: &hash,
        },
    )?;

    let mut artifacts = BTreeMap::new();
    let optional = [BACKEND_ARCHIVE, AUDIT_SAMPLE];
    for name in DETERMINISTIC_ARTIFACTS.iter().chain(optional.iter()) {
        let path = out.join(name);
        if path.exists() {
            artifacts.insert(name.to_string(), file_sha256(&path).map_err(stage_err("manifest"))?);
        }
    }
    let manifest = Manifest {
        config_hash: hash,
        config: config.clone(),
        input_sha256: file_sha256(&config.input).map_err(stage_err("manifest"))?,
        normalize,
        snapshots,
        transitions,
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("json");
    text.push('\n');
    fs::write(out.join(MANIFEST), text).map_err(stage_err("manifest"))?;
    Ok(manifest)
}
