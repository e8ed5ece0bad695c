//! Lexicon-driven clinical concept extraction and coverage tracking.
//!
//! Matching is case-insensitive, respects word boundaries, and is
//! leftmost-longest: at each boundary position the longest surface wins and
//! its span is consumed.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::note::{CanonicalHeader, ClinicalNote};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SemanticGroup {
    /// Disorders.
    Diso,
    /// Chemicals and drugs.
    Chem,
    /// Devices.
    Devi,
    /// Procedures.
    Proc,
    Other(String),
}

impl SemanticGroup {
    pub fn parse(tag: &str) -> Self {
        match tag.trim() {
            "DISO" => Self::Diso,
            "CHEM" => Self::Chem,
            "DEVI" => Self::Devi,
            "PROC" => Self::Proc,
            other => Self::Other(other.to_string()),
        }
    }

    pub fn is_clinical(&self) -> bool {
        !matches!(self, Self::Other(_))
    }
}

impl fmt::Display for SemanticGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Diso => f.write_str("DISO"),
            Self::Chem => f.write_str("CHEM"),
            Self::Devi => f.write_str("DEVI"),
            Self::Proc => f.write_str("PROC"),
            Self::Other(tag) => f.write_str(tag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub surface: String,
    pub concept_id: String,
    pub preferred_name: String,
    pub semantic_group: SemanticGroup,
}

impl LexiconEntry {
    pub fn key(&self) -> String {
        normalize_surface(&self.surface)
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {0}: expected 4 tab-separated fields")]
    MalformedLine(usize),
    #[error("line {0}: duplicate surface")]
    DuplicateSurface(usize),
    #[error("lexicon read failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercase, single-spaced match key.
pub fn normalize_surface(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// An immutable set of lexicon entries indexed for matching.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    keys: Vec<Vec<char>>,
    by_key: HashMap<String, usize>,
    // first key char -> entry indices, longest key first
    by_first: HashMap<char, Vec<usize>>,
}

impl Lexicon {
    pub fn from_entries(entries: Vec<LexiconEntry>) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (i, e) in entries.into_iter().enumerate() {
            lex.push(e, i + 1)?;
        }
        lex.reindex();
        Ok(lex)
    }

    /// Reads the tab-separated format `surface, concept_id, preferred_name, group`.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() < 4 || fields[0].trim().is_empty() || fields[1].trim().is_empty() {
                return Err(LexiconError::MalformedLine(line_no));
            }
            lex.push(
                LexiconEntry {
                    surface: fields[0].trim().to_string(),
                    concept_id: fields[1].trim().to_string(),
                    preferred_name: fields[2].trim().to_string(),
                    semantic_group: SemanticGroup::parse(fields[3]),
                },
                line_no,
            )?;
        }
        lex.reindex();
        Ok(lex)
    }

    fn push(&mut self, entry: LexiconEntry, line_no: usize) -> Result<(), LexiconError> {
        let key = entry.key();
        if key.is_empty() {
            return Err(LexiconError::MalformedLine(line_no));
        }
        if self.by_key.contains_key(&key) {
            return Err(LexiconError::DuplicateSurface(line_no));
        }
        self.by_key.insert(key.clone(), self.entries.len());
        self.keys.push(key.chars().collect());
        self.entries.push(entry);
        Ok(())
    }

    fn reindex(&mut self) {
        self.by_first.clear();
        for (i, key) in self.keys.iter().enumerate() {
            self.by_first.entry(key[0]).or_default().push(i);
        }
        let keys = &self.keys;
        for bucket in self.by_first.values_mut() {
            bucket.sort_by(|&a, &b| keys[b].len().cmp(&keys[a].len()).then(a.cmp(&b)));
        }
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, surface: &str) -> Option<&LexiconEntry> {
        self.by_key
            .get(&normalize_surface(surface))
            .map(|&i| &self.entries[i])
    }

    /// All surfaces sharing a concept id.
    pub fn synonyms<'a>(&'a self, concept_id: &'a str) -> impl Iterator<Item = &'a LexiconEntry> {
        self.entries.iter().filter(move |e| e.concept_id == concept_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMatch {
    pub concept_id: String,
    pub surface_found: String,
    /// Byte offsets `[start, end)` into the source text.
    pub span: (usize, usize),
    pub semantic_group: SemanticGroup,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Attempts to match `key` at byte offset `start`, returning the end offset.
/// A space in the key matches any run of whitespace in the text.
fn match_at(text: &str, start: usize, key: &[char]) -> Option<usize> {
    let mut chars = text[start..].char_indices().peekable();
    let mut k = 0;
    while k < key.len() {
        if key[k] == ' ' {
            let mut consumed = false;
            while let Some(&(_, c)) = chars.peek() {
                if c.is_whitespace() {
                    chars.next();
                    consumed = true;
                } else {
                    break;
                }
            }
            if !consumed {
                return None;
            }
            k += 1;
            continue;
        }
        let (_, c) = chars.next()?;
        for lc in c.to_lowercase() {
            if k >= key.len() || key[k] != lc {
                return None;
            }
            k += 1;
        }
    }
    Some(match chars.peek() {
        Some(&(offset, _)) => start + offset,
        None => text.len(),
    })
}

fn boundary_before(text: &str, pos: usize) -> bool {
    let Some(first) = text[pos..].chars().next() else {
        return false;
    };
    match text[..pos].chars().next_back() {
        None => true,
        Some(prev) => is_word_char(prev) != is_word_char(first),
    }
}

fn boundary_after(text: &str, end: usize) -> bool {
    let Some(last) = text[..end].chars().next_back() else {
        return false;
    };
    match text[end..].chars().next() {
        None => true,
        Some(next) => is_word_char(last) != is_word_char(next),
    }
}

/// Leftmost-longest lexicon matching over word boundaries.
pub fn extract_concepts(text: &str, lexicon: &Lexicon) -> Vec<ConceptMatch> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let c = text[pos..].chars().next().expect("pos on char boundary");
        let mut best: Option<(usize, usize)> = None;
        if boundary_before(text, pos) {
            for lc in c.to_lowercase().take(1) {
                let Some(bucket) = lexicon.by_first.get(&lc) else {
                    continue;
                };
                for &idx in bucket {
                    if let Some(end) = match_at(text, pos, &lexicon.keys[idx]) {
                        if boundary_after(text, end) && best.is_none_or(|(_, e)| end > e) {
                            best = Some((idx, end));
                        }
                    }
                }
            }
        }
        match best {
            Some((idx, end)) => {
                let entry = &lexicon.entries[idx];
                out.push(ConceptMatch {
                    concept_id: entry.concept_id.clone(),
                    surface_found: text[pos..end].to_string(),
                    span: (pos, end),
                    semantic_group: entry.semantic_group.clone(),
                });
                pos = end;
            }
            None => pos += c.len_utf8(),
        }
    }
    out
}

/// Keeps disorders, drugs, devices and procedures.
pub fn filter_clinical(matches: Vec<ConceptMatch>) -> Vec<ConceptMatch> {
    matches
        .into_iter()
        .filter(|m| m.semantic_group.is_clinical())
        .collect()
}

/// Distinct clinically relevant concept ids mentioned in `text`.
pub fn clinical_concept_ids(text: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    filter_clinical(extract_concepts(text, lexicon))
        .into_iter()
        .map(|m| m.concept_id)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub concept_id: String,
    #[serde(rename = "term")]
    pub display_term: String,
    pub covered: bool,
    #[serde(rename = "section")]
    pub source_section: CanonicalHeader,
    /// Position of the originating section within the note.
    #[serde(skip)]
    pub section_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptChecklist {
    pub items: Vec<ChecklistItem>,
}

impl ConceptChecklist {
    pub fn covered_count(&self) -> usize {
        self.items.iter().filter(|i| i.covered).count()
    }

    pub fn uncovered(&self) -> impl Iterator<Item = &ChecklistItem> {
        self.items.iter().filter(|i| !i.covered)
    }

    pub fn is_covered(&self, concept_id: &str) -> bool {
        self.items
            .iter()
            .any(|i| i.concept_id == concept_id && i.covered)
    }

    /// Items extracted from the section at `section_index`.
    pub fn for_section(&self, section_index: usize) -> impl Iterator<Item = &ChecklistItem> {
        self.items
            .iter()
            .filter(move |i| i.section_index == section_index)
    }
}

pub fn build_checklist(note: &ClinicalNote, lexicon: &Lexicon) -> ConceptChecklist {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for section in &note.sections {
        for m in filter_clinical(extract_concepts(&section.body, lexicon)) {
            if seen.insert(m.concept_id.clone()) {
                items.push(ChecklistItem {
                    concept_id: m.concept_id,
                    display_term: normalize_whitespace(&m.surface_found),
                    covered: false,
                    source_section: section.header,
                    section_index: section.order_index,
                });
            }
        }
    }
    ConceptChecklist { items }
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Marks items whose concept (through any synonym) appears in `dialogue_text`.
/// Covered flags are never cleared.
pub fn mark_covered(
    checklist: &ConceptChecklist,
    dialogue_text: &str,
    lexicon: &Lexicon,
) -> ConceptChecklist {
    let found: HashSet<String> = extract_concepts(dialogue_text, lexicon)
        .into_iter()
        .map(|m| m.concept_id)
        .collect();
    let mut next = checklist.clone();
    for item in &mut next.items {
        if found.contains(&item.concept_id) {
            item.covered = true;
        }
    }
    next
}

/// `|G ∩ R| / |R|` over distinct clinical concept ids; 1.0 when R is empty.
pub fn concept_recall(generated: &str, reference: &str, lexicon: &Lexicon) -> f64 {
    let reference_ids = clinical_concept_ids(reference, lexicon);
    if reference_ids.is_empty() {
        return 1.0;
    }
    let generated_ids = clinical_concept_ids(generated, lexicon);
    let hit = reference_ids.intersection(&generated_ids).count();
    hit as f64 / reference_ids.len() as f64
}
