//! `{{placeholder}}` prompt templates and the default prompt set.
//!
//! A line of the form `Label: {{slot}}` or `{{slot}}` (label without a
//! period) is dropped when the slot renders empty. Runs of blank lines are
//! collapsed after rendering.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: placeholder {{{{{name}}}}} is not bound")]
    Unbound { template: String, name: String },
    #[error("template {template}: unterminated placeholder")]
    Unterminated { template: String },
    #[error("template {template}: slot {name} must not be empty")]
    EmptySlot { template: String, name: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    // one entry per source line
    lines: Vec<Vec<Piece>>,
}

impl Template {
    /// Parses `source`, rejecting placeholders outside `schema`.
    pub fn parse(name: &str, source: &str, schema: &[&str]) -> Result<Self, TemplateError> {
        let mut lines = Vec::new();
        for line in source.trim_end().split('\n') {
            let mut pieces = Vec::new();
            let mut rest = line;
            while let Some(open) = rest.find("{{") {
                if open > 0 {
                    pieces.push(Piece::Text(rest[..open].to_string()));
                }
                let after = &rest[open + 2..];
                let close = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
                    template: name.to_string(),
                })?;
                let slot = after[..close].trim().to_string();
                if !schema.contains(&slot.as_str()) {
                    return Err(TemplateError::UnknownPlaceholder {
                        template: name.to_string(),
                        name: slot,
                    });
                }
                pieces.push(Piece::Slot(slot));
                rest = &after[close + 2..];
            }
            if !rest.is_empty() {
                pieces.push(Piece::Text(rest.to_string()));
            }
            lines.push(pieces);
        }
        Ok(Self {
            name: name.to_string(),
            lines,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.lines
            .iter()
            .flatten()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    fn is_label_line(pieces: &[Piece]) -> Option<&str> {
        match pieces {
            [Piece::Slot(s)] => Some(s),
            [Piece::Text(label), Piece::Slot(s)]
                if !label.contains('.') && label.trim_end().ends_with(':') =>
            {
                Some(s)
            }
            _ => None,
        }
    }

    pub fn render(&self, values: &HashMap<&str, String>) -> Result<String, TemplateError> {
        let mut out: Vec<String> = Vec::new();
        for pieces in &self.lines {
            if let Some(slot) = Self::is_label_line(pieces) {
                if values.get(slot).is_some_and(|v| v.trim().is_empty()) {
                    continue;
                }
            }
            let mut line = String::new();
            for piece in pieces {
                match piece {
                    Piece::Text(t) => line.push_str(t),
                    Piece::Slot(s) => {
                        let v = values.get(s.as_str()).ok_or_else(|| TemplateError::Unbound {
                            template: self.name.clone(),
                            name: s.clone(),
                        })?;
                        line.push_str(v);
                    }
                }
            }
            out.push(line.trim_end().to_string());
        }

        let mut rendered = String::new();
        let mut blank_run = false;
        for line in out.iter().flat_map(|l| l.split('\n')) {
            let blank = line.trim().is_empty();
            if blank && (blank_run || rendered.is_empty()) {
                continue;
            }
            blank_run = blank;
            rendered.push_str(line.trim_end());
            rendered.push('\n');
        }
        Ok(rendered.trim_end().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Short,
    Long,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "short" => Ok(Self::Short),
            "long" => Ok(Self::Long),
            other => Err(format!("unknown mode {other:?} (expected short|long)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Short => "short",
            Self::Long => "long",
        })
    }
}

pub const DOCTOR_SLOTS: &[&str] = &["note", "conversation", "keywords"];
pub const PATIENT_SLOTS: &[&str] = &["note", "conversation"];
pub const POLISH_SLOTS: &[&str] = &["note", "conversation", "keywords"];
pub const HALLUCINATION_SLOTS: &[&str] = &["note", "conversation", "keywords"];
pub const POSTEDIT_SLOTS: &[&str] = &["conversation_a", "conversation_b", "keywords"];
pub const HEADING_SLOTS: &[&str] = &["dialogue"];
pub const CONTENT_SLOTS: &[&str] = &["dialogue", "header", "examples"];

pub const DEFAULT_DOCTOR: &str = "\
Clinical Note: {{note}}

{{conversation}}

Please role-play as a doctor and further ask a question based on the above dialogue to follow up the history conversation. The treatment plan, medication, and dosage you give to the patient must also be consistent with the clinical note. Your question should be around these keywords, and you cannot modify these keywords or use synonyms.

Key Words: {{keywords}}
";

/// Long-mode doctor variant: one key word per question, so sections unfold over more turns.
pub const DEFAULT_DOCTOR_LONG: &str = "\
Clinical Note: {{note}}

{{conversation}}

Please role-play as a doctor and further ask a question based on the above dialogue to follow up the history conversation. The treatment plan, medication, and dosage you give to the patient must also be consistent with the clinical note. Your question should be around these keywords, and you cannot modify these keywords or use synonyms. Ask about only one key word at a time and let the patient explain it in detail.

Key Words: {{keywords}}
";

pub const DEFAULT_PATIENT: &str = "\
Clinical Note: {{note}}

{{conversation}}

Please act as a patient and answer my question or follow up on the conversation. Your answer must be consistent with the clinical note and cannot include information that is not in the clinical note. Your responses should be more colloquial.
";

pub const DEFAULT_POLISH: &str = "\
Please rewrite all the conversations based on the notes to become fluence and more colloquial, like a normal conversation between the doctor and patient based on the clinical notes. Now you should rewrite the following conversations, and your conversation should include all the information and all the keywords. The keywords must be used directly instead of using synonyms when using them in the conversation

Key Words: {{keywords}}
The conversation: \"{{conversation}}\"

Clinical Note: {{note}}

The conversation between the doctor and the patient should involve multiple rounds, with each question and answer being relatively short. You should try to ensure that the dialogue is smooth.
";

pub const DEFAULT_HALLUCINATION: &str = "\
Check whether the information of the conversation is consistent with the clinical note. If there is some information that you cannot find on the clinical note, please eliminate it. You also should delete the duplicate part. The conversation should include all the key words: {{keywords}}

Clinical Note: {{note}}
Conversation: {{conversation}}
";

pub const DEFAULT_POSTEDIT: &str = "\
History Conversation:
{{conversation_a}}

Generated Conversation:
{{conversation_b}}

The above two paragraphs were extracted from a complete conversation. Please concatenate the two dialogues together. It means that your generation should include all the information such as the dosage of the medication which is mentioned in the clinical note. You should try to ensure that the dialogue is smooth. The conversation must include these key words: {{keywords}} and you should also eliminate the repeat parts.
";

pub const DEFAULT_HEADING: &str = "\
Dialogue: {{dialogue}}

Given the dialogue above, select a section of the medical note from the options below.
Options: history of present illness; review of systems; past medical history; medications; chief complaint; past surgical history; disposition; diagnosis; emergency department course; plan; labs; assessment; allergy; gynecologic history; exam; other history; procedures; imaging; immunizations; family history social history.
";

pub const DEFAULT_CONTENT: &str = "\
{{examples}}

Dialogue: {{dialogue}}

Generate the {{header}} section of the medical note from the dialogue.
";

/// Every prompt the pipeline issues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    pub doctor: Template,
    pub patient: Template,
    pub polish: Template,
    pub hallucination: Template,
    pub postedit: Template,
    pub heading: Template,
    pub content: Template,
}

struct Slot {
    name: &'static str,
    short: &'static str,
    long: &'static str,
    schema: &'static [&'static str],
}

const SLOTS: [Slot; 7] = [
    Slot { name: "doctor", short: DEFAULT_DOCTOR, long: DEFAULT_DOCTOR_LONG, schema: DOCTOR_SLOTS },
    Slot { name: "patient", short: DEFAULT_PATIENT, long: DEFAULT_PATIENT, schema: PATIENT_SLOTS },
    Slot { name: "polish", short: DEFAULT_POLISH, long: DEFAULT_POLISH, schema: POLISH_SLOTS },
    Slot {
        name: "hallucination",
        short: DEFAULT_HALLUCINATION,
        long: DEFAULT_HALLUCINATION,
        schema: HALLUCINATION_SLOTS,
    },
    Slot { name: "postedit", short: DEFAULT_POSTEDIT, long: DEFAULT_POSTEDIT, schema: POSTEDIT_SLOTS },
    Slot { name: "heading", short: DEFAULT_HEADING, long: DEFAULT_HEADING, schema: HEADING_SLOTS },
    Slot { name: "content", short: DEFAULT_CONTENT, long: DEFAULT_CONTENT, schema: CONTENT_SLOTS },
];

impl PromptTemplateSet {
    pub fn defaults(mode: Mode) -> Self {
        Self::build(mode, |_| Ok(None)).expect("built-in templates parse")
    }

    /// Loads `<name>.txt` overrides from `dir`; in long mode `<name>.long.txt`
    /// takes precedence. Missing files fall back to the built-in text.
    pub fn load_dir(dir: &Path, mode: Mode) -> Result<Self, TemplateError> {
        Self::build(mode, |name| {
            let mut candidates = Vec::new();
            if mode == Mode::Long {
                candidates.push(dir.join(format!("{name}.long.txt")));
            }
            candidates.push(dir.join(format!("{name}.txt")));
            for path in candidates {
                if path.exists() {
                    return std::fs::read_to_string(&path).map(Some).map_err(|e| {
                        TemplateError::Io {
                            path: path.display().to_string(),
                            message: e.to_string(),
                        }
                    });
                }
            }
            Ok(None)
        })
    }

    fn build(
        mode: Mode,
        mut source_for: impl FnMut(&str) -> Result<Option<String>, TemplateError>,
    ) -> Result<Self, TemplateError> {
        let mut parsed = Vec::with_capacity(SLOTS.len());
        for slot in &SLOTS {
            let builtin = if mode == Mode::Long { slot.long } else { slot.short };
            let source = source_for(slot.name)?.unwrap_or_else(|| builtin.to_string());
            parsed.push(Template::parse(slot.name, &source, slot.schema)?);
        }
        let mut it = parsed.into_iter();
        let mut next = || it.next().expect("seven templates");
        Ok(Self {
            doctor: next(),
            patient: next(),
            polish: next(),
            hallucination: next(),
            postedit: next(),
            heading: next(),
            content: next(),
        })
    }
}
