//! Clinical notes, section segmentation, and header normalization.
//!
//! A note is split into sections at header lines. Header text is mapped onto
//! the fixed 20-label section taxonomy by normalized Levenshtein similarity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the 20 canonical clinical note section headers.
///
/// The discriminant is the header's ordinal and is stable across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CanonicalHeader {
    HistoryOfPresentIllness = 0,
    ReviewOfSystems,
    PastMedicalHistory,
    Medications,
    ChiefComplaint,
    PastSurgicalHistory,
    Disposition,
    Diagnosis,
    EmergencyDepartmentCourse,
    Plan,
    Labs,
    Assessment,
    Allergy,
    GynecologicHistory,
    Exam,
    OtherHistory,
    Procedures,
    Imaging,
    Immunizations,
    FamilyHistorySocialHistory,
}

impl CanonicalHeader {
    pub const ALL: [CanonicalHeader; 20] = [
        CanonicalHeader::HistoryOfPresentIllness,
        CanonicalHeader::ReviewOfSystems,
        CanonicalHeader::PastMedicalHistory,
        CanonicalHeader::Medications,
        CanonicalHeader::ChiefComplaint,
        CanonicalHeader::PastSurgicalHistory,
        CanonicalHeader::Disposition,
        CanonicalHeader::Diagnosis,
        CanonicalHeader::EmergencyDepartmentCourse,
        CanonicalHeader::Plan,
        CanonicalHeader::Labs,
        CanonicalHeader::Assessment,
        CanonicalHeader::Allergy,
        CanonicalHeader::GynecologicHistory,
        CanonicalHeader::Exam,
        CanonicalHeader::OtherHistory,
        CanonicalHeader::Procedures,
        CanonicalHeader::Imaging,
        CanonicalHeader::Immunizations,
        CanonicalHeader::FamilyHistorySocialHistory,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Self> {
        Self::ALL.get(ordinal).copied()
    }

    /// Lowercase display label, also the serialized form.
    pub fn label(self) -> &'static str {
        match self {
            Self::HistoryOfPresentIllness => "history of present illness",
            Self::ReviewOfSystems => "review of systems",
            Self::PastMedicalHistory => "past medical history",
            Self::Medications => "medications",
            Self::ChiefComplaint => "chief complaint",
            Self::PastSurgicalHistory => "past surgical history",
            Self::Disposition => "disposition",
            Self::Diagnosis => "diagnosis",
            Self::EmergencyDepartmentCourse => "emergency department course",
            Self::Plan => "plan",
            Self::Labs => "labs",
            Self::Assessment => "assessment",
            Self::Allergy => "allergy",
            Self::GynecologicHistory => "gynecologic history",
            Self::Exam => "exam",
            Self::OtherHistory => "other history",
            Self::Procedures => "procedures",
            Self::Imaging => "imaging",
            Self::Immunizations => "immunizations",
            Self::FamilyHistorySocialHistory => "family history/social history",
        }
    }

    /// Key used for fuzzy matching: the label passed through [`normalize_text`].
    pub fn key(self) -> String {
        normalize_text(self.label())
    }
}

impl fmt::Display for CanonicalHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CanonicalHeader {
    type Err = NoteError;

    /// Exact lookup by label (modulo normalization); no fuzzy matching.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_text(s);
        Self::ALL
            .iter()
            .copied()
            .find(|h| h.key() == key)
            .ok_or_else(|| NoteError::UnknownHeader(s.to_string()))
    }
}

impl Serialize for CanonicalHeader {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for CanonicalHeader {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NoteError {
    #[error("note is empty")]
    EmptyNote,
    #[error("no section headers found in note")]
    NoSectionsFound,
    #[error("header text is empty")]
    EmptyHeader,
    #[error("unknown section header {0:?}")]
    UnknownHeader(String),
}

/// Lowercases, turns punctuation into spaces, and collapses whitespace.
pub fn normalize_text(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `1 - levenshtein(a, b) / max(len(a), len(b))` over chars; 1.0 for two empty strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Always return the most similar header.
    NearestAlways,
    /// Return no match when the best similarity falls below the threshold.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeaderMatch {
    pub header: CanonicalHeader,
    pub similarity: f64,
}

/// Maps free header text onto a canonical header.
///
/// Returns `Ok(None)` only in threshold mode when nothing reaches `threshold`.
/// Ties go to the smallest ordinal.
pub fn normalize_header(
    raw: &str,
    threshold: f64,
    mode: MatchMode,
) -> Result<Option<HeaderMatch>, NoteError> {
    if raw.trim().is_empty() {
        return Err(NoteError::EmptyHeader);
    }
    let key = normalize_text(raw);
    let mut best = HeaderMatch {
        header: CanonicalHeader::ALL[0],
        similarity: f64::NEG_INFINITY,
    };
    for header in CanonicalHeader::ALL {
        let sim = similarity(&key, &header.key());
        if sim > best.similarity {
            best = HeaderMatch { header, similarity: sim };
        }
    }
    match mode {
        MatchMode::NearestAlways => Ok(Some(best)),
        MatchMode::Threshold if best.similarity >= threshold => Ok(Some(best)),
        MatchMode::Threshold => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteSection {
    pub header: CanonicalHeader,
    pub raw_header: String,
    pub body: String,
    pub order_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub id: String,
    pub full_text: String,
    pub sections: Vec<NoteSection>,
}

/// Header-line detection rules used by [`parse_note_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeaderRules {
    /// Lines ending in `:` are header candidates.
    pub colon_terminated: bool,
    /// Lines made only of uppercase letters, digits, spaces and slashes are candidates.
    pub all_caps: bool,
    /// Minimum similarity for a candidate to be accepted as a header.
    pub threshold: f64,
    /// Treat a note without any header as a single "other history" section.
    pub whole_note_fallback: bool,
}

impl Default for HeaderRules {
    fn default() -> Self {
        Self {
            colon_terminated: true,
            all_caps: true,
            threshold: 0.6,
            whole_note_fallback: false,
        }
    }
}

impl HeaderRules {
    fn is_candidate(&self, line: &str) -> bool {
        if line.is_empty() {
            return false;
        }
        if self.colon_terminated && line.ends_with(':') {
            return true;
        }
        self.all_caps
            && line.chars().any(|c| c.is_ascii_uppercase())
            && line
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == ' ' || c == '/')
    }

    fn accept(&self, line: &str) -> Option<CanonicalHeader> {
        let line = line.trim();
        if !self.is_candidate(line) {
            return None;
        }
        let text = line.trim_end_matches(':');
        if text.trim().is_empty() {
            return None;
        }
        normalize_header(text, self.threshold, MatchMode::Threshold)
            .ok()
            .flatten()
            .map(|m| m.header)
    }
}

pub fn parse_note(id: &str, full_text: &str) -> Result<ClinicalNote, NoteError> {
    parse_note_with(id, full_text, &HeaderRules::default())
}

/// Splits a note into sections at accepted header lines.
///
/// Text before the first header becomes an "other history" section with an
/// empty raw header. Headers followed by no text are dropped.
pub fn parse_note_with(
    id: &str,
    full_text: &str,
    rules: &HeaderRules,
) -> Result<ClinicalNote, NoteError> {
    if full_text.trim().is_empty() {
        return Err(NoteError::EmptyNote);
    }

    struct Pending {
        header: CanonicalHeader,
        raw_header: String,
        lines: Vec<String>,
    }

    let mut pending: Vec<Pending> = Vec::new();
    let mut preamble: Vec<String> = Vec::new();
    let mut saw_header = false;

    for line in full_text.lines() {
        if let Some(header) = rules.accept(line) {
            saw_header = true;
            pending.push(Pending {
                header,
                raw_header: line.trim().to_string(),
                lines: Vec::new(),
            });
        } else if let Some(current) = pending.last_mut() {
            current.lines.push(line.to_string());
        } else {
            preamble.push(line.to_string());
        }
    }

    if !saw_header {
        if rules.whole_note_fallback {
            return Ok(ClinicalNote {
                id: id.to_string(),
                full_text: full_text.to_string(),
                sections: vec![NoteSection {
                    header: CanonicalHeader::OtherHistory,
                    raw_header: String::new(),
                    body: full_text.trim().to_string(),
                    order_index: 0,
                }],
            });
        }
        return Err(NoteError::NoSectionsFound);
    }

    let mut sections = Vec::new();
    let preamble = preamble.join("\n");
    if !preamble.trim().is_empty() {
        sections.push(NoteSection {
            header: CanonicalHeader::OtherHistory,
            raw_header: String::new(),
            body: preamble.trim().to_string(),
            order_index: 0,
        });
    }
    for p in pending {
        let body = p.lines.join("\n");
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        sections.push(NoteSection {
            header: p.header,
            raw_header: p.raw_header,
            body: body.to_string(),
            order_index: sections.len(),
        });
    }
    if sections.is_empty() {
        return Err(NoteError::NoSectionsFound);
    }

    Ok(ClinicalNote {
        id: id.to_string(),
        full_text: full_text.to_string(),
        sections,
    })
}

impl ClinicalNote {
    /// Raw headers and bodies joined in section order.
    pub fn reserialize(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if !s.raw_header.is_empty() {
                out.push_str(&s.raw_header);
                out.push('\n');
            }
            out.push_str(&s.body);
            out.push('\n');
        }
        out
    }
}
