//! Run configuration: built-in defaults, overridden by a `key = value` file,
//! overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::Args;

use crate::dialogue::LoopConfig;
use crate::gateway::{BackendConfig, BackendKind};
use crate::section_writer::WriterConfig;
use crate::template::Mode;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Flags shared by every subcommand. Unset flags fall through to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Config file of `key = value` lines
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Notes JSONL (`{"id","note"}` per line)
    #[arg(long, global = true)]
    pub notes: Option<PathBuf>,
    /// Lexicon TSV
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    /// Directory of prompt template overrides
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
    /// Section exemplars JSONL
    #[arg(long, global = true)]
    pub exemplars: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// short | long
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// live | scripted
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Transcript to replay from (scripted backend)
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// Record every call to this transcript file
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Doctor/patient rounds per section
    #[arg(long, global = true)]
    pub max_rounds: Option<u32>,
    /// Extra hallucination check over the whole merged dialogue
    #[arg(long, global = true)]
    pub final_hallucination_pass: bool,
    /// Dialogues JSONL to summarize
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Gold headers JSONL (`{"id","header"}`) for summarize
    #[arg(long, global = true)]
    pub gold: Option<PathBuf>,
    /// Generated texts JSONL for evaluate
    #[arg(long, global = true)]
    pub generated: Option<PathBuf>,
    /// Reference texts JSONL for evaluate
    #[arg(long, global = true)]
    pub references: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub notes: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub generated: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub backend: BackendConfig,
    pub loop_config: LoopConfig,
    pub writer: WriterConfig,
    pub parallelism: usize,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn defaults(mode: Mode) -> Self {
        Self {
            mode,
            notes: None,
            lexicon: None,
            templates: None,
            exemplars: None,
            out: None,
            record: None,
            input: None,
            gold: None,
            generated: None,
            references: None,
            backend: BackendConfig {
                kind: BackendKind::Live,
                base_url: Some("https://api.openai.com/v1".into()),
                api_key_env: Some("OPENAI_API_KEY".into()),
                ..BackendConfig::default()
            },
            loop_config: LoopConfig::for_mode(mode),
            writer: WriterConfig::default(),
            parallelism: 1,
            seed: None,
        }
    }

    /// Merges defaults, the config file named by `--config` (if any) and flags.
    pub fn resolve(flags: &Flags) -> Result<Self, ConfigError> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Some((parse_config_file(&text)?, base))
            }
            None => None,
        };
        let (map, base) = match &file {
            Some((m, b)) => (m.clone(), b.clone()),
            None => (BTreeMap::new(), PathBuf::new()),
        };
        Self::resolve_with(flags, &map, &base)
    }

    /// `file` holds config file entries; relative paths in it resolve against `base`.
    pub fn resolve_with(
        flags: &Flags,
        file: &BTreeMap<String, String>,
        base: &Path,
    ) -> Result<Self, ConfigError> {
        for key in file.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return err(format!("unknown config key {key:?}"));
            }
        }
        let mode = match &flags.mode {
            Some(m) => m.parse().map_err(ConfigError)?,
            None => match file.get("mode") {
                Some(m) => m.parse().map_err(ConfigError)?,
                None => Mode::Short,
            },
        };
        let mut c = Self::defaults(mode);
        c.apply_file(file, base)?;
        c.apply_flags(flags)?;
        c.validate()?;
        Ok(c)
    }

    fn apply_file(&mut self, file: &BTreeMap<String, String>, base: &Path) -> Result<(), ConfigError> {
        let path = |v: &String| {
            let p = PathBuf::from(v);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        for (key, value) in file {
            match key.as_str() {
                "mode" => {}
                "notes" => self.notes = Some(path(value)),
                "lexicon" => self.lexicon = Some(path(value)),
                "templates" => self.templates = Some(path(value)),
                "exemplars" => self.exemplars = Some(path(value)),
                "out" => self.out = Some(path(value)),
                "record" => self.record = Some(path(value)),
                "input" => self.input = Some(path(value)),
                "gold" => self.gold = Some(path(value)),
                "generated" => self.generated = Some(path(value)),
                "references" => self.references = Some(path(value)),
                "transcript" => self.backend.transcript_path = Some(path(value)),
                "backend" => self.backend.kind = parse_backend(value)?,
                "base_url" => self.backend.base_url = Some(value.clone()),
                "api_key_env" => self.backend.api_key_env = Some(value.clone()),
                "timeout_secs" => self.backend.timeout = Duration::from_secs_f64(num(key, value)?),
                "max_retries" => self.backend.max_retries = num(key, value)?,
                "retry_base_ms" => self.backend.retry_base = Duration::from_millis(num(key, value)?),
                "max_in_flight" => self.backend.max_in_flight = num(key, value)?,
                "context_token_budget" => self.backend.context_token_budget = num(key, value)?,
                "parallelism" => self.parallelism = num(key, value)?,
                "seed" => self.seed = Some(num(key, value)?),
                "max_rounds" => self.loop_config.max_rounds_per_section = num(key, value)?,
                "keywords_per_question" => self.loop_config.keywords_per_question = num(key, value)?,
                "final_hallucination_pass" => self.loop_config.final_hallucination_pass = boolean(key, value)?,
                "polish" => self.loop_config.enable_polish = boolean(key, value)?,
                "hallucination_check" => self.loop_config.enable_hallucination_check = boolean(key, value)?,
                "include_global_uncovered" => {
                    self.loop_config.include_global_uncovered = boolean(key, value)?
                }
                "dialogue_temperature" => self.loop_config.dialogue_temperature = num(key, value)?,
                "rewrite_temperature" => self.loop_config.rewrite_temperature = num(key, value)?,
                "turn_max_tokens" => self.loop_config.turn_max_tokens = num(key, value)?,
                "rewrite_max_tokens" => self.loop_config.rewrite_max_tokens = num(key, value)?,
                "model" => {
                    self.loop_config.model = value.clone();
                    self.writer.model = value.clone();
                }
                "exemplars_per_header" => self.writer.exemplars_per_header = num(key, value)?,
                "summary_temperature" => self.writer.temperature = num(key, value)?,
                _ => unreachable!("checked against KNOWN_KEYS"),
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) -> Result<(), ConfigError> {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut self.notes, &f.notes);
        set(&mut self.lexicon, &f.lexicon);
        set(&mut self.templates, &f.templates);
        set(&mut self.exemplars, &f.exemplars);
        set(&mut self.out, &f.out);
        set(&mut self.record, &f.record);
        set(&mut self.input, &f.input);
        set(&mut self.gold, &f.gold);
        set(&mut self.generated, &f.generated);
        set(&mut self.references, &f.references);
        set(&mut self.backend.transcript_path, &f.transcript);
        if let Some(b) = &f.backend {
            self.backend.kind = parse_backend(b)?;
        }
        if let Some(p) = f.parallelism {
            self.parallelism = p;
        }
        if f.seed.is_some() {
            self.seed = f.seed;
        }
        if let Some(r) = f.max_rounds {
            self.loop_config.max_rounds_per_section = r;
        }
        if f.final_hallucination_pass {
            self.loop_config.final_hallucination_pass = true;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return err("parallelism must be positive");
        }
        if self.parallelism > self.backend.max_in_flight {
            return err(format!(
                "parallelism ({}) exceeds max_in_flight ({})",
                self.parallelism, self.backend.max_in_flight
            ));
        }
        self.loop_config.validate().map_err(ConfigError)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "notes",
    "lexicon",
    "templates",
    "exemplars",
    "out",
    "record",
    "input",
    "gold",
    "generated",
    "references",
    "transcript",
    "backend",
    "base_url",
    "api_key_env",
    "timeout_secs",
    "max_retries",
    "retry_base_ms",
    "max_in_flight",
    "context_token_budget",
    "parallelism",
    "seed",
    "max_rounds",
    "keywords_per_question",
    "final_hallucination_pass",
    "polish",
    "hallucination_check",
    "include_global_uncovered",
    "dialogue_temperature",
    "rewrite_temperature",
    "turn_max_tokens",
    "rewrite_max_tokens",
    "model",
    "exemplars_per_header",
    "summary_temperature",
];

fn parse_backend(v: &str) -> Result<BackendKind, ConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "live" => Ok(BackendKind::Live),
        "scripted" => Ok(BackendKind::Scripted),
        other => err(format!("unknown backend {other:?} (expected live|scripted)")),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => err(format!("{key}: expected true or false, got {v:?}")),
    }
}

/// Parses `key = value` lines. `#` starts a comment line; values may be
/// wrapped in double quotes. Later duplicates are rejected.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("config line {}: expected key = value", i + 1));
        };
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return err(format!("config line {}: empty key", i + 1));
        }
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if map.insert(key.clone(), value.to_string()).is_some() {
            return err(format!("config line {}: duplicate key {key:?}", i + 1));
        }
    }
    Ok(map)
}
