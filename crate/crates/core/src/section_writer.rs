//! Dialogue-to-note: pick a section header for a dialogue, then write that
//! section from header-matched examples.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatClient, ChatRequest, GatewayError};
use crate::note::{normalize_header, CanonicalHeader, MatchMode};
use crate::template::{Template, TemplateError};

pub const DEFAULT_EXEMPLARS_PER_HEADER: usize = 2;

#[derive(Debug, Error)]
pub enum SectionError {
    #[error("dialogue is empty")]
    EmptyDialogue,
    #[error("prediction and gold lists differ in length ({predicted} vs {gold})")]
    LengthMismatch { predicted: usize, gold: usize },
    #[error("exemplar line {line}: {message}")]
    BadExemplar { line: usize, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub header: CanonicalHeader,
    pub dialogue: String,
    pub section_text: String,
}

/// Example (dialogue, section) pairs grouped by header, in load order.
#[derive(Debug, Clone, Default)]
pub struct ExemplarStore {
    by_header: HashMap<CanonicalHeader, Vec<Exemplar>>,
}

impl ExemplarStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, exemplar: Exemplar) -> Result<(), SectionError> {
        if exemplar.dialogue.trim().is_empty() || exemplar.section_text.trim().is_empty() {
            return Err(SectionError::BadExemplar {
                line: 0,
                message: "exemplar texts must be non-empty".into(),
            });
        }
        self.by_header.entry(exemplar.header).or_default().push(exemplar);
        Ok(())
    }

    /// Reads `{"header","dialogue","section_text"}` lines; blank lines are skipped.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, SectionError> {
        let mut store = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| SectionError::BadExemplar { line: i + 1, message };
            let exemplar: Exemplar = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            store.insert(exemplar).map_err(|e| match e {
                SectionError::BadExemplar { message, .. } => bad(message),
                other => other,
            })?;
        }
        Ok(store)
    }

    pub fn for_header(&self, header: CanonicalHeader) -> &[Exemplar] {
        self.by_header.get(&header).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_header.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Task-A request settings.
#[derive(Debug, Clone, PartialEq)]
pub struct WriterConfig {
    pub model: String,
    pub temperature: f64,
    pub heading_max_tokens: u32,
    pub content_max_tokens: u32,
    pub exemplars_per_header: usize,
}

impl Default for WriterConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            heading_max_tokens: 16,
            content_max_tokens: 512,
            exemplars_per_header: DEFAULT_EXEMPLARS_PER_HEADER,
        }
    }
}

/// Reduces a free-form heading reply to the text worth matching: whatever
/// follows the last colon, minus trailing punctuation.
pub fn heading_candidate(response: &str) -> &str {
    let tail = match response.rfind(':') {
        Some(i) if !response[i + 1..].trim().is_empty() => &response[i + 1..],
        _ => response,
    };
    tail.trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
}

/// Maps a heading reply to the nearest canonical header.
pub fn header_from_response(response: &str) -> CanonicalHeader {
    let candidate = heading_candidate(response);
    let candidate = if candidate.is_empty() { response } else { candidate };
    match normalize_header(candidate, 0.0, MatchMode::NearestAlways) {
        Ok(Some(m)) => m.header,
        // nothing alphanumeric to match on
        _ => CanonicalHeader::ALL[0],
    }
}

pub fn build_heading_prompt(template: &Template, dialogue: &str) -> Result<String, SectionError> {
    if dialogue.trim().is_empty() {
        return Err(SectionError::EmptyDialogue);
    }
    Ok(template.render(&HashMap::from([("dialogue", dialogue.to_string())]))?)
}

fn render_examples(header: CanonicalHeader, exemplars: &[Exemplar]) -> String {
    exemplars
        .iter()
        .map(|e| {
            format!(
                "Example Dialogue: {}\nExample {} section: {}",
                e.dialogue.trim(),
                header.label(),
                e.section_text.trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_content_prompt(
    template: &Template,
    dialogue: &str,
    header: CanonicalHeader,
    store: &ExemplarStore,
    k: usize,
) -> Result<String, SectionError> {
    if dialogue.trim().is_empty() {
        return Err(SectionError::EmptyDialogue);
    }
    let shots = store.for_header(header);
    let shots = &shots[..k.min(shots.len())];
    Ok(template.render(&HashMap::from([
        ("dialogue", dialogue.to_string()),
        ("header", header.label().to_string()),
        ("examples", render_examples(header, shots)),
    ]))?)
}

pub fn classify_header(
    dialogue: &str,
    template: &Template,
    config: &WriterConfig,
    client: &mut dyn ChatClient,
) -> Result<CanonicalHeader, SectionError> {
    let prompt = build_heading_prompt(template, dialogue)?;
    let reply = client.complete(
        ChatRequest::single_user(&config.model, prompt, config.temperature, config.heading_max_tokens)
            .with_label("heading"),
    )?;
    Ok(header_from_response(&reply.content))
}

pub fn generate_section(
    dialogue: &str,
    header: CanonicalHeader,
    store: &ExemplarStore,
    template: &Template,
    config: &WriterConfig,
    client: &mut dyn ChatClient,
) -> Result<String, SectionError> {
    let prompt = build_content_prompt(template, dialogue, header, store, config.exemplars_per_header)?;
    let reply = client.complete(
        ChatRequest::single_user(&config.model, prompt, config.temperature, config.content_max_tokens)
            .with_label("content"),
    )?;
    Ok(reply.content.trim().to_string())
}

/// Fraction of exact matches. Two empty lists score 1.0.
pub fn classification_accuracy(
    predictions: &[CanonicalHeader],
    gold: &[CanonicalHeader],
) -> Result<f64, SectionError> {
    if predictions.len() != gold.len() {
        return Err(SectionError::LengthMismatch {
            predicted: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Ok(1.0);
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}
