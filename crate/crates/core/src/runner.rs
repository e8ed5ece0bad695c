//! Command implementations: generate, summarize, evaluate, replay.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::concepts::{ChecklistItem, Lexicon};
use crate::config::{ConfigError, Flags, RunConfig};
use crate::dialogue::{
    generate_dialogue, render_utterances, CoverageReport, DialogueError, GenerationOutput,
    LoopConfig, PassCounters, Utterance,
};
use crate::gateway::{
    read_transcript, BackendKind, Gateway, GatewayError, GatewayStats, TranscriptWriter,
};
use crate::metrics::{evaluate_run, render_table, MetricsError};
use crate::note::{parse_note, CanonicalHeader};
use crate::section_writer::{
    classify_header, generate_section, ExemplarStore, SectionError, WriterConfig,
};
use crate::template::{Mode, PromptTemplateSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_REPLAY: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("data: {0}")]
    Data(String),
    #[error("replay diverged: {0}")]
    Replay(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Io(_) => EXIT_IO,
            Self::Data(_) => EXIT_DATA,
            Self::Replay(_) => EXIT_REPLAY,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "dploop", version, about = "Synthetic doctor-patient dialogues from clinical notes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate dialogues from notes
    Generate,
    /// Classify dialogue headers and write note sections
    Summarize,
    /// Score generated texts against references
    Evaluate,
    /// Re-run a recorded generation and check outputs are unchanged
    Replay,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli.command, &cli.flags) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, flags: &Flags) -> Result<(), RunError> {
    let config = RunConfig::resolve(flags)?;
    match command {
        Command::Generate => cmd_generate(&config),
        Command::Summarize => cmd_summarize(&config),
        Command::Evaluate => cmd_evaluate(&config),
        Command::Replay => cmd_replay(&config),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, RunError> {
    let p = path
        .as_deref()
        .ok_or_else(|| RunError::Config(format!("missing --{what}")))?;
    if what != "out" && what != "record" && !p.exists() {
        return Err(RunError::Config(format!("{what} path {} does not exist", p.display())));
    }
    Ok(p)
}

/// Writes `contents` to `path` through a temp file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(contents).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    // tempfile creates 0600; outputs should get ordinary permissions
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let _ = tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644));
    }
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("record serializes");
    out.push(b'\n');
    out
}

/// Reads JSON lines, skipping blank ones.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunError> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| RunError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

fn load_lexicon(path: &Path) -> Result<Lexicon, RunError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Lexicon::load(BufReader::new(file)).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

fn load_templates(config: &RunConfig) -> Result<PromptTemplateSet, RunError> {
    match &config.templates {
        Some(dir) => PromptTemplateSet::load_dir(dir, config.mode)
            .map_err(|e| RunError::Config(format!("{}: {e}", dir.display()))),
        None => Ok(PromptTemplateSet::defaults(config.mode)),
    }
}

fn build_gateway(config: &RunConfig, max_output_tokens: u32) -> Result<Gateway, RunError> {
    let gateway = Gateway::from_config(&config.backend, max_output_tokens).map_err(|e| match e {
        GatewayError::Io(io) => RunError::Config(format!("transcript: {io}")),
        other => RunError::Config(other.to_string()),
    })?;
    let gateway = gateway.with_seed(config.seed);
    match &config.record {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            let writer = TranscriptWriter::create(path).map_err(|e| io_err(path, e))?;
            Ok(gateway.with_recorder(writer))
        }
        None => Ok(gateway),
    }
}

/// Runs `work` over `items` on up to `parallelism` threads; results keep input order.
pub fn run_pool<T: Sync, R: Send>(
    items: &[T],
    parallelism: usize,
    work: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..parallelism.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = work(&items[i]);
                *slots[i].lock().expect("slot poisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot poisoned").expect("every item processed"))
        .collect()
}

/// Rewrites a recorded transcript grouped by stream (in `order`) and by seq,
/// so parallel runs record byte-identical transcripts.
fn sort_transcript(path: &Path, order: &[String]) -> Result<(), RunError> {
    let rank: HashMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut entries = read_transcript(path).map_err(|e| io_err(path, e))?;
    entries.sort_by_key(|e| (rank.get(e.stream.as_str()).copied().unwrap_or(usize::MAX), e.stream.clone(), e.seq));
    write_atomic(path, &to_jsonl(&entries))
}

// ---- generate ----

#[derive(Debug, Clone, Deserialize)]
pub struct NoteRecord {
    pub id: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub total_keywords: usize,
    pub covered: usize,
    pub uncovered: Vec<String>,
}

/// One line of `dialogues.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub mode: Mode,
    pub dialogue: Vec<Utterance>,
    pub coverage: CoverageSummary,
}

impl DialogueRecord {
    pub fn text(&self) -> String {
        render_utterances(&self.dialogue)
    }
}

/// Contents of `coverage/<id>.json`.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageFile<'a> {
    pub id: &'a str,
    pub items: &'a [ChecklistItem],
    pub report: &'a CoverageReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub mode: Mode,
    pub notes: usize,
    pub succeeded: usize,
    pub failures: Vec<FailureRecord>,
    pub keywords_total: usize,
    pub keywords_covered: usize,
    pub avg_utterances: Option<f64>,
    pub counters: PassCounters,
    pub gateway: GatewayStats,
}

#[derive(Debug)]
pub struct NoteFailure {
    pub error: String,
    /// Stream and seq of a transcript divergence, when that caused the failure.
    pub divergence: Option<(String, u64)>,
    pub report: Option<CoverageReport>,
}

#[derive(Debug)]
pub struct NoteResult {
    pub id: String,
    pub outcome: Result<GenerationOutput, NoteFailure>,
}

pub struct GenerateEnv<'a> {
    pub lexicon: &'a Lexicon,
    pub templates: &'a PromptTemplateSet,
    pub loop_config: &'a LoopConfig,
}

fn divergence(e: &DialogueError) -> Option<(String, u64)> {
    match e {
        DialogueError::Gateway(GatewayError::ScriptMismatch { stream, seq })
        | DialogueError::Gateway(GatewayError::ScriptExhausted { stream, seq }) => {
            Some((stream.clone(), *seq))
        }
        _ => None,
    }
}

/// Generates a dialogue per note, one gateway stream per note id.
pub fn generate_all(
    notes: &[NoteRecord],
    env: &GenerateEnv<'_>,
    gateway: &Gateway,
    parallelism: usize,
) -> Vec<NoteResult> {
    run_pool(notes, parallelism, |record| {
        let outcome = match parse_note(&record.id, &record.note) {
            Err(e) => Err(NoteFailure {
                error: format!("note parse: {e}"),
                divergence: None,
                report: None,
            }),
            Ok(note) => {
                let mut session = gateway.session(record.id.clone());
                generate_dialogue(&note, env.lexicon, env.templates, env.loop_config, &mut session)
                    .map_err(|f| NoteFailure {
                        divergence: divergence(&f.error),
                        error: f.error.to_string(),
                        report: Some(f.report),
                    })
            }
        };
        if let Err(f) = &outcome {
            log::warn!("note {}: {}", record.id, f.error);
        }
        NoteResult {
            id: record.id.clone(),
            outcome,
        }
    })
}

/// File name for a note id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// Writes dialogues.jsonl, coverage/<id>.json and summary.json under `out`.
pub fn write_generate_outputs(
    out: &Path,
    mode: Mode,
    results: &[NoteResult],
    stats: GatewayStats,
) -> Result<GenerateSummary, RunError> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut counters = PassCounters::default();
    let (mut total, mut covered, mut turns) = (0, 0, 0);
    for r in results {
        match &r.outcome {
            Ok(g) => {
                let report = &g.report;
                counters.add(&report.counters);
                total += report.total_keywords;
                covered += report.covered;
                turns += g.dialogue.utterances.len();
                records.push(DialogueRecord {
                    id: r.id.clone(),
                    mode,
                    dialogue: g.dialogue.utterances.clone(),
                    coverage: CoverageSummary {
                        total_keywords: report.total_keywords,
                        covered: report.covered,
                        uncovered: report.uncovered.iter().map(|i| i.display_term.clone()).collect(),
                    },
                });
                let file = CoverageFile {
                    id: &r.id,
                    items: &g.checklist.items,
                    report,
                };
                let path = out.join("coverage").join(format!("{}.json", safe_file_stem(&r.id)));
                write_atomic(&path, &pretty(&file))?;
            }
            Err(f) => {
                if let Some(report) = &f.report {
                    counters.add(&report.counters);
                }
                failures.push(FailureRecord {
                    id: r.id.clone(),
                    error: f.error.clone(),
                });
            }
        }
    }
    write_atomic(&out.join("dialogues.jsonl"), &to_jsonl(&records))?;
    let summary = GenerateSummary {
        mode,
        notes: results.len(),
        succeeded: records.len(),
        failures,
        keywords_total: total,
        keywords_covered: covered,
        avg_utterances: (!records.is_empty()).then(|| turns as f64 / records.len() as f64),
        counters,
        gateway: stats,
    };
    write_atomic(&out.join("summary.json"), &pretty(&summary))?;
    Ok(summary)
}

fn load_notes(path: &Path) -> Result<Vec<NoteRecord>, RunError> {
    let notes: Vec<NoteRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for n in &notes {
        if !seen.insert(n.id.as_str()) {
            return Err(RunError::Data(format!("duplicate note id {:?}", n.id)));
        }
    }
    Ok(notes)
}

struct GenerateRun {
    results: Vec<NoteResult>,
    order: Vec<String>,
    summary: GenerateSummary,
}

fn generate_into(config: &RunConfig, out: &Path) -> Result<GenerateRun, RunError> {
    let notes = load_notes(require(&config.notes, "notes")?)?;
    let lexicon = load_lexicon(require(&config.lexicon, "lexicon")?)?;
    let templates = load_templates(config)?;
    let gateway = build_gateway(config, config.loop_config.max_output_tokens())?;
    let env = GenerateEnv {
        lexicon: &lexicon,
        templates: &templates,
        loop_config: &config.loop_config,
    };
    let results = generate_all(&notes, &env, &gateway, config.parallelism);
    let stats = gateway.stats();
    drop(gateway);
    let order: Vec<String> = notes.iter().map(|n| n.id.clone()).collect();
    if let Some(path) = &config.record {
        sort_transcript(path, &order)?;
    }
    let summary = write_generate_outputs(out, config.mode, &results, stats)?;
    Ok(GenerateRun { results, order, summary })
}

pub fn cmd_generate(config: &RunConfig) -> Result<(), RunError> {
    let out = require(&config.out, "out")?;
    let run = generate_into(config, out)?;
    let s = &run.summary;
    eprintln!(
        "generated {}/{} dialogues ({} of {} keywords covered, {} gateway calls) -> {}",
        s.succeeded,
        s.notes,
        s.keywords_covered,
        s.keywords_total,
        s.gateway.calls,
        out.display()
    );
    for f in &s.failures {
        eprintln!("  failed {}: {}", f.id, f.error);
    }
    Ok(())
}

// ---- replay ----

fn read_dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            if let Ok(bytes) = std::fs::read(e.path()) {
                files.insert(e.file_name().to_string_lossy().into_owned(), bytes);
            }
        }
    }
    files
}

fn dialogue_lines(bytes: &[u8]) -> BTreeMap<String, String> {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter_map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).ok()?;
            Some((v.get("id")?.as_str()?.to_string(), l.to_string()))
        })
        .collect()
}

/// Names of outputs that differ between two generate runs.
pub fn diff_outputs(recorded: &Path, fresh: &Path) -> Vec<String> {
    let mut diffs = Vec::new();
    let read = |p: &Path| std::fs::read(p).unwrap_or_default();
    let (a, b) = (read(&recorded.join("dialogues.jsonl")), read(&fresh.join("dialogues.jsonl")));
    if a != b {
        let (la, lb) = (dialogue_lines(&a), dialogue_lines(&b));
        let ids: std::collections::BTreeSet<&String> = la.keys().chain(lb.keys()).collect();
        let changed: Vec<&str> = ids
            .into_iter()
            .filter(|id| la.get(*id) != lb.get(*id))
            .map(String::as_str)
            .collect();
        if changed.is_empty() {
            diffs.push("dialogues.jsonl".into());
        } else {
            diffs.push(format!("dialogue id(s) {}", changed.join(", ")));
        }
    }
    let (ca, cb) = (read_dir_files(&recorded.join("coverage")), read_dir_files(&fresh.join("coverage")));
    let names: std::collections::BTreeSet<&String> = ca.keys().chain(cb.keys()).collect();
    for name in names {
        if ca.get(name) != cb.get(name) {
            diffs.push(format!("coverage/{name}"));
        }
    }
    if read(&recorded.join("summary.json")) != read(&fresh.join("summary.json")) {
        diffs.push("summary.json".into());
    }
    diffs
}

pub fn cmd_replay(config: &RunConfig) -> Result<(), RunError> {
    let recorded = require(&config.out, "out")?;
    if !recorded.join("dialogues.jsonl").exists() {
        return Err(RunError::Config(format!(
            "{} holds no recorded dialogues.jsonl",
            recorded.display()
        )));
    }
    require(&config.backend.transcript_path, "transcript")?;
    let mut config = config.clone();
    config.backend.kind = BackendKind::Scripted;
    config.backend.verify = true;
    config.record = None;

    let scratch = tempfile::tempdir().map_err(|e| RunError::Io(e.to_string()))?;
    let run = generate_into(&config, scratch.path())?;
    let rank: HashMap<&str, usize> = run.order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let first = run
        .results
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().and_then(|f| f.divergence.clone()))
        .min_by_key(|(stream, seq)| (rank.get(stream.as_str()).copied().unwrap_or(usize::MAX), *seq));
    if let Some((stream, seq)) = first {
        return Err(RunError::Replay(format!(
            "first divergent call is seq {seq} of dialogue id {stream:?}"
        )));
    }
    let diffs = diff_outputs(recorded, scratch.path());
    if !diffs.is_empty() {
        return Err(RunError::Replay(format!("outputs differ: {}", diffs.join("; "))));
    }
    eprintln!("replay matches recorded outputs ({} notes)", run.summary.notes);
    Ok(())
}

// ---- summarize ----

#[derive(Debug, Clone)]
pub struct DialogueInput {
    pub id: String,
    pub dialogue: String,
}

/// Accepts `{"id","dialogue": "<text>"}` or generate's own output lines.
fn parse_dialogue_input(value: serde_json::Value, line: usize) -> Result<DialogueInput, RunError> {
    let bad = |m: &str| RunError::Data(format!("input line {line}: {m}"));
    let id = value
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| bad("missing string id"))?
        .to_string();
    let dialogue = match value.get("dialogue") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(v @ serde_json::Value::Array(_)) => {
            let utterances: Vec<Utterance> =
                serde_json::from_value(v.clone()).map_err(|e| bad(&e.to_string()))?;
            render_utterances(&utterances)
        }
        _ => return Err(bad("missing dialogue")),
    };
    Ok(DialogueInput { id, dialogue })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionRecord {
    pub id: String,
    pub header: CanonicalHeader,
    pub section_text: String,
}

#[derive(Debug, Clone, Deserialize)]
struct GoldRecord {
    id: String,
    header: CanonicalHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummarizeSummary {
    pub dialogues: usize,
    pub succeeded: usize,
    pub failures: Vec<FailureRecord>,
    /// Exact header matches over all inputs; failed dialogues count as misses.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub gateway: GatewayStats,
}

/// Classifies and writes a section for each dialogue, one stream per id.
pub fn summarize_all(
    inputs: &[DialogueInput],
    store: &ExemplarStore,
    templates: &PromptTemplateSet,
    writer: &WriterConfig,
    gateway: &Gateway,
    parallelism: usize,
) -> Vec<(String, Result<SectionRecord, SectionError>)> {
    run_pool(inputs, parallelism, |input| {
        let mut session = gateway.session(input.id.clone());
        let result = classify_header(&input.dialogue, &templates.heading, writer, &mut session).and_then(|header| {
            let text = generate_section(&input.dialogue, header, store, &templates.content, writer, &mut session)?;
            Ok(SectionRecord {
                id: input.id.clone(),
                header,
                section_text: text,
            })
        });
        (input.id.clone(), result)
    })
}

pub fn cmd_summarize(config: &RunConfig) -> Result<(), RunError> {
    let out = require(&config.out, "out")?;
    let input_path = require(&config.input, "input")?;
    let raw: Vec<serde_json::Value> = read_jsonl(input_path)?;
    let inputs = raw
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_dialogue_input(v, i + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = HashSet::new();
    for d in &inputs {
        if !seen.insert(d.id.as_str()) {
            return Err(RunError::Data(format!("duplicate dialogue id {:?}", d.id)));
        }
    }
    let store = match &config.exemplars {
        Some(path) => {
            let file = File::open(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            ExemplarStore::load(BufReader::new(file)).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?
        }
        None => ExemplarStore::new(),
    };
    let gold: Option<HashMap<String, CanonicalHeader>> = match &config.gold {
        Some(path) => {
            let records: Vec<GoldRecord> = read_jsonl(require(&Some(path.clone()), "gold")?)?;
            Some(records.into_iter().map(|g| (g.id, g.header)).collect())
        }
        None => None,
    };
    if let Some(gold) = &gold {
        if let Some(missing) = inputs.iter().find(|d| !gold.contains_key(&d.id)) {
            return Err(RunError::Data(format!("no gold header for id {:?}", missing.id)));
        }
    }

    let templates = load_templates(config)?;
    let max_out = config.writer.heading_max_tokens.max(config.writer.content_max_tokens);
    let gateway = build_gateway(config, max_out)?;
    let results = summarize_all(&inputs, &store, &templates, &config.writer, &gateway, config.parallelism);
    let stats = gateway.stats();
    drop(gateway);
    if let Some(path) = &config.record {
        let order: Vec<String> = inputs.iter().map(|d| d.id.clone()).collect();
        sort_transcript(path, &order)?;
    }

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(FailureRecord { id, error: e.to_string() }),
        }
    }
    let accuracy = gold.map(|gold| {
        if inputs.is_empty() {
            return 1.0;
        }
        let hits = records.iter().filter(|r| gold.get(&r.id) == Some(&r.header)).count();
        hits as f64 / inputs.len() as f64
    });
    write_atomic(&out.join("sections.jsonl"), &to_jsonl(&records))?;
    let summary = SummarizeSummary {
        dialogues: inputs.len(),
        succeeded: records.len(),
        failures,
        accuracy,
        gateway: stats,
    };
    write_atomic(&out.join("summarize_summary.json"), &pretty(&summary))?;
    eprintln!("summarized {}/{} dialogues -> {}", summary.succeeded, summary.dialogues, out.display());
    if let Some(a) = accuracy {
        eprintln!("header accuracy: {a:.3}");
    }
    Ok(())
}

// ---- evaluate ----

/// Reads `{"id","text"}` lines; generate's dialogue lines are accepted too.
pub fn read_texts(path: &Path) -> Result<Vec<(String, String)>, RunError> {
    let raw: Vec<serde_json::Value> = read_jsonl(path)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let bad = |m: &str| RunError::Data(format!("{}:{}: {m}", path.display(), i + 1));
            let id = v.get("id").and_then(|x| x.as_str()).ok_or_else(|| bad("missing string id"))?;
            let text = match (v.get("text"), v.get("dialogue")) {
                (Some(serde_json::Value::String(t)), _) => t.clone(),
                (None, Some(serde_json::Value::String(t))) => t.clone(),
                (None, Some(d @ serde_json::Value::Array(_))) => {
                    let u: Vec<Utterance> = serde_json::from_value(d.clone()).map_err(|e| bad(&e.to_string()))?;
                    render_utterances(&u)
                }
                _ => return Err(bad("missing text")),
            };
            Ok((id.to_string(), text))
        })
        .collect()
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<(), RunError> {
    let out = require(&config.out, "out")?;
    let generated = read_texts(require(&config.generated, "generated")?)?;
    let references = read_texts(require(&config.references, "references")?)?;
    let lexicon = load_lexicon(require(&config.lexicon, "lexicon")?)?;
    let report = evaluate_run(&generated, &references, &lexicon).map_err(|e| match e {
        MetricsError::MissingReference(_) | MetricsError::DuplicateId(_) => RunError::Data(e.to_string()),
        MetricsError::EmptyList => RunError::Data("no generated texts to evaluate".into()),
        other => RunError::Data(other.to_string()),
    })?;
    let name = config
        .generated
        .as_deref()
        .and_then(Path::file_stem)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let table = render_table(&[(name.as_str(), &report)]);
    write_atomic(&out.join("eval_report.json"), &pretty(&report))?;
    write_atomic(&out.join("eval_table.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}
