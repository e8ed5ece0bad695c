#![allow(dead_code)]

pub mod clinician;
pub mod oracle;

use std::path::PathBuf;

use dploop::concepts::Lexicon;
use dploop::runner::NoteRecord;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn lexicon() -> Lexicon {
    let f = std::fs::File::open(fixtures().join("lexicon.tsv")).expect("lexicon fixture");
    Lexicon::load(std::io::BufReader::new(f)).expect("lexicon parses")
}

pub fn notes() -> Vec<NoteRecord> {
    dploop::runner::read_jsonl(&fixtures().join("notes.jsonl")).expect("notes fixture")
}

/// Golden run directory for a mode name ("short" or "long").
pub fn golden(mode: &str) -> PathBuf {
    fixtures().join("golden").join(mode)
}
