//! Doctor/patient dialogue types, text parsing, and the generation loop.

mod pipeline;
mod prompts;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::note::CanonicalHeader;
use crate::template::{Mode, TemplateError};

pub use pipeline::{
    generate_dialogue, hallucination_check, polish, postedit_merge, run_section_loop,
    CoverageReport, GenerationFailure, GenerationOutput, HistoryWindow, LoopConfig, MergeState,
    PassCounters, PassOutcome, SectionLoopOutput, SectionRounds,
};
pub use prompts::{
    build_doctor_prompt, build_hallucination_prompt, build_patient_prompt, build_polish_prompt,
    build_postedit_prompt, select_keywords,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Doctor,
    Patient,
}

impl Speaker {
    pub fn label(self) -> &'static str {
        match self {
            Self::Doctor => "Doctor",
            Self::Patient => "Patient",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Loop,
    Polish,
    Hallucination,
    Postedit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub section: CanonicalHeader,
    pub pass: Pass,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(skip)]
    pub provenance: Option<Provenance>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            speaker,
            text: text.into(),
            provenance: Some(provenance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub note_id: String,
    pub utterances: Vec<Utterance>,
    pub mode: Mode,
}

impl Dialogue {
    pub fn text(&self) -> String {
        render_utterances(&self.utterances)
    }
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("no Doctor:/Patient: lines could be recovered ({context})")]
    ParseFailure { context: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Result of [`parse_dialogue_text`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDialogue {
    pub turns: Vec<(Speaker, String)>,
    /// Non-empty lines dropped before the first role line.
    pub dropped_prefix_lines: usize,
}

fn strip_markup(s: &str) -> &str {
    s.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace())
}

/// Recognizes `Doctor:` / `Patient:` role lines, tolerating case and
/// markdown emphasis such as `**Doctor:**`.
fn role_line(line: &str) -> Option<(Speaker, &str)> {
    let s = line.trim_start_matches(|c: char| {
        c.is_whitespace() || matches!(c, '*' | '_' | '#' | '>' | '-')
    });
    for speaker in [Speaker::Doctor, Speaker::Patient] {
        let word = speaker.label();
        if s.len() >= word.len() && s[..word.len()].eq_ignore_ascii_case(word) {
            let rest = s[word.len()..].trim_start_matches(['*', '_']);
            if let Some(content) = rest.strip_prefix(':') {
                return Some((speaker, strip_markup(content)));
            }
        }
    }
    None
}

/// Splits model output into speaker turns. Continuation lines are joined to
/// the previous turn with a single space.
pub fn parse_dialogue_text(raw: &str) -> Result<ParsedDialogue, DialogueError> {
    let mut turns: Vec<(Speaker, String)> = Vec::new();
    let mut dropped = 0;
    for line in raw.lines() {
        if let Some((speaker, content)) = role_line(line) {
            turns.push((speaker, content.to_string()));
            continue;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match turns.last_mut() {
            Some((_, current)) => {
                if !current.is_empty() {
                    current.push(' ');
                }
                current.push_str(text);
            }
            None => dropped += 1,
        }
    }
    turns.retain(|(_, t)| !t.trim().is_empty());
    if turns.is_empty() {
        return Err(DialogueError::ParseFailure {
            context: "response has no role lines".into(),
        });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} line(s) preceding the first role line");
    }
    Ok(ParsedDialogue {
        turns,
        dropped_prefix_lines: dropped,
    })
}

/// Joins consecutive same-speaker utterances into one.
pub fn merge_consecutive_speakers(utterances: Vec<Utterance>) -> Vec<Utterance> {
    let mut out: Vec<Utterance> = Vec::with_capacity(utterances.len());
    for u in utterances {
        match out.last_mut() {
            Some(prev) if prev.speaker == u.speaker => {
                prev.text.push(' ');
                prev.text.push_str(&u.text);
            }
            _ => out.push(u),
        }
    }
    out
}

/// `Doctor: ...` / `Patient: ...` lines.
pub fn render_utterances(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .map(|u| format!("{}: {}", u.speaker.label(), u.text))
        .collect::<Vec<_>>()
        .join("\n")
}
