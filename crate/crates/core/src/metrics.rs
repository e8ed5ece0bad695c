//! ROUGE, BLEU, Self-BLEU, concept recall and dialogue length.
//!
//! Scores are in [0, 1]; [`render_table`] scales them by 100 for display.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::concepts::{concept_recall, Lexicon};
use crate::dialogue::{parse_dialogue_text, Dialogue};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("candidate and reference lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("self-BLEU needs at least 2 documents, got {0}")]
    CorpusTooSmall(usize),
    #[error("empty input list")]
    EmptyList,
    #[error("no reference for id {0:?}")]
    MissingReference(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sentences split at newlines and at `.`, `!` or `?` followed by whitespace.
/// Sentences without tokens are dropped.
pub fn split_sentences(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = match c {
            '\n' => Some(i),
            '.' | '!' | '?' if chars.peek().is_some_and(|(_, n)| n.is_whitespace()) => Some(i + 1),
            _ => None,
        };
        if let Some(end) = end {
            sentences.push(tokenize(&text[start..end]));
            start = end;
        }
    }
    sentences.push(tokenize(&text[start..]));
    sentences.retain(|s| !s.is_empty());
    sentences
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    pub fn from_counts(matches: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |d: usize| if d == 0 { 0.0 } else { matches as f64 / d as f64 };
        let precision = ratio(candidate_total);
        let recall = ratio(reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    fn mean(items: &[ScoreTriple]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        Self {
            precision: items.iter().map(|s| s.precision).sum::<f64>() / n,
            recall: items.iter().map(|s| s.recall).sum::<f64>() / n,
            f1: items.iter().map(|s| s.f1).sum::<f64>() / n,
        }
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    counts
}

pub fn rouge_n_tokens<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> ScoreTriple {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    ScoreTriple::from_counts(matches, cand.values().sum(), refc.values().sum())
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<ScoreTriple, MetricsError> {
    if n == 0 {
        return Err(MetricsError::InvalidOrder);
    }
    Ok(rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n))
}

fn lcs_table<T: AsRef<str>>(a: &[T], b: &[T]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1].as_ref() == b[j - 1].as_ref() {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

pub fn rouge_l_tokens<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> ScoreTriple {
    let lcs = lcs_table(reference, candidate)[reference.len()][candidate.len()];
    ScoreTriple::from_counts(lcs, candidate.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> ScoreTriple {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

/// Reference positions on one LCS path, walking back from the table corner.
fn lcs_positions<T: AsRef<str>>(reference: &[T], candidate: &[T]) -> Vec<usize> {
    let t = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut hits = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1].as_ref() == candidate[j - 1].as_ref() {
            hits.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] > t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    hits.reverse();
    hits
}

fn token_counts<T: AsRef<str>>(sentences: &[Vec<T>]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in sentences.iter().flatten() {
        *m.entry(t.as_ref()).or_insert(0) += 1;
    }
    m
}

/// Summary-level LCS over pre-split sentences. Union hits are clipped by
/// token counts on both sides so the score stays within [0, 1].
pub fn rouge_lsum_sentences<T: AsRef<str>>(candidate: &[Vec<T>], reference: &[Vec<T>]) -> ScoreTriple {
    let mut cand_left = token_counts(candidate);
    let mut ref_left = token_counts(reference);
    let cand_total: usize = candidate.iter().map(Vec::len).sum();
    let ref_total: usize = reference.iter().map(Vec::len).sum();

    let mut matches = 0;
    for r in reference {
        let mut union: Vec<usize> = candidate
            .iter()
            .flat_map(|c| lcs_positions(r, c))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        union.sort_unstable();
        for pos in union {
            let tok = r[pos].as_ref();
            let (Some(c), Some(rc)) = (cand_left.get_mut(tok), ref_left.get_mut(tok)) else {
                continue;
            };
            if *c > 0 && *rc > 0 {
                *c -= 1;
                *rc -= 1;
                matches += 1;
            }
        }
    }
    ScoreTriple::from_counts(matches, cand_total, ref_total)
}

pub fn rouge_lsum(candidate: &str, reference: &str) -> ScoreTriple {
    rouge_lsum_sentences(&split_sentences(candidate), &split_sentences(reference))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    None,
    /// Zero match counts become epsilon.
    AddEpsilon(f64),
}

pub const DEFAULT_EPSILON: f64 = 0.1;

/// Corpus BLEU over tokenized input. `references[i]` is the reference set
/// for `candidates[i]`.
pub fn corpus_bleu_tokens<T: AsRef<str>>(
    candidates: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch(candidates.len(), references.len()));
    }
    if max_n == 0 {
        return Err(MetricsError::InvalidOrder);
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;

    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        // closest reference length, shorter on ties
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let cand_counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &cand_counts {
                matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }

    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = match smoothing {
            Smoothing::None => {
                if matches[n] == 0 {
                    return Ok(0.0);
                }
                matches[n] as f64 / totals[n] as f64
            }
            Smoothing::AddEpsilon(eps) => {
                let m = if matches[n] == 0 { eps } else { matches[n] as f64 };
                if totals[n] == 0 {
                    eps
                } else {
                    m / totals[n] as f64
                }
            }
        };
        log_sum += p.ln();
    }
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

pub fn corpus_bleu(
    candidates: &[String],
    references: &[Vec<String>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricsError> {
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(c)).collect();
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|set| set.iter().map(|r| tokenize(r)).collect())
        .collect();
    corpus_bleu_tokens(&cands, &refs, max_n, smoothing)
}

/// Mean BLEU of each document against all the others.
pub fn self_bleu(corpus: &[String], max_n: usize, smoothing: Smoothing) -> Result<f64, MetricsError> {
    if corpus.len() < 2 {
        return Err(MetricsError::CorpusTooSmall(corpus.len()));
    }
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| tokenize(d)).collect();
    let mut total = 0.0;
    for (i, doc) in docs.iter().enumerate() {
        let others: Vec<Vec<String>> = docs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, d)| d.clone())
            .collect();
        total += corpus_bleu_tokens(std::slice::from_ref(doc), &[others], max_n, smoothing)?;
    }
    Ok(total / docs.len() as f64)
}

pub fn avg_utterances(dialogues: &[Dialogue]) -> Result<f64, MetricsError> {
    if dialogues.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    Ok(dialogues.iter().map(|d| d.utterances.len()).sum::<usize>() as f64 / dialogues.len() as f64)
}

/// Number of speaker turns in dialogue text; 0 when no role lines parse.
pub fn utterance_count(text: &str) -> usize {
    parse_dialogue_text(text).map(|p| p.turns.len()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rouge1: ScoreTriple,
    pub rouge2: ScoreTriple,
    #[serde(rename = "rougeL")]
    pub rouge_l: ScoreTriple,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: ScoreTriple,
    pub bleu: f64,
    /// `None` for fewer than two generated texts.
    pub self_bleu: Option<f64>,
    pub concept_recall: f64,
    pub avg_utterances: f64,
    pub n_pairs: usize,
}

fn check_unique(items: &[(String, String)]) -> Result<HashMap<&str, &str>, MetricsError> {
    let mut map = HashMap::new();
    for (id, text) in items {
        if map.insert(id.as_str(), text.as_str()).is_some() {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    Ok(map)
}

/// Pairs generated and reference texts by id and scores the run. ROUGE and
/// concept recall are macro averages; BLEU is corpus-level.
pub fn evaluate_run(
    generated: &[(String, String)],
    references: &[(String, String)],
    lexicon: &Lexicon,
) -> Result<EvalReport, MetricsError> {
    if generated.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    check_unique(generated)?;
    let refs = check_unique(references)?;
    let mut pairs = Vec::with_capacity(generated.len());
    for (id, text) in generated {
        let r = refs.get(id.as_str()).ok_or_else(|| MetricsError::MissingReference(id.clone()))?;
        pairs.push((text.as_str(), *r));
    }

    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut rl = Vec::new();
    let mut rls = Vec::new();
    let mut recall = 0.0;
    let mut turns = 0usize;
    for (g, r) in &pairs {
        let (gt, rt) = (tokenize(g), tokenize(r));
        r1.push(rouge_n_tokens(&gt, &rt, 1));
        r2.push(rouge_n_tokens(&gt, &rt, 2));
        rl.push(rouge_l_tokens(&gt, &rt));
        rls.push(rouge_lsum(g, r));
        recall += concept_recall(g, r, lexicon);
        turns += utterance_count(g);
    }
    let n = pairs.len();
    let cands: Vec<String> = pairs.iter().map(|(g, _)| g.to_string()).collect();
    let ref_sets: Vec<Vec<String>> = pairs.iter().map(|(_, r)| vec![r.to_string()]).collect();
    let bleu = corpus_bleu(&cands, &ref_sets, 4, Smoothing::None)?;
    let self_bleu = match self_bleu(&cands, 4, Smoothing::AddEpsilon(DEFAULT_EPSILON)) {
        Ok(v) => Some(v),
        Err(MetricsError::CorpusTooSmall(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        rouge1: ScoreTriple::mean(&r1),
        rouge2: ScoreTriple::mean(&r2),
        rouge_l: ScoreTriple::mean(&rl),
        rouge_lsum: ScoreTriple::mean(&rls),
        bleu,
        self_bleu,
        concept_recall: recall / n as f64,
        avg_utterances: turns as f64 / n as f64,
        n_pairs: n,
    })
}

/// Fixed-width table of F1 scores and BLEU values scaled by 100.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}", "Run");
    for col in ["R-1", "R-2", "R-L", "R-L-Sum", "C-R", "BLEU", "SBLEU", "Len"] {
        let _ = write!(out, " {col:>8}");
    }
    out.push('\n');
    for (name, r) in rows {
        let _ = write!(out, "{name:<width$}");
        for v in [r.rouge1.f1, r.rouge2.f1, r.rouge_l.f1, r.rouge_lsum.f1, r.concept_recall, r.bleu] {
            let _ = write!(out, " {:>8.2}", v * 100.0);
        }
        match r.self_bleu {
            Some(v) => {
                let _ = write!(out, " {:>8.2}", v * 100.0);
            }
            None => {
                let _ = write!(out, " {:>8}", "-");
            }
        }
        let _ = writeln!(out, " {:>8.1}", r.avg_utterances);
    }
    out
}
