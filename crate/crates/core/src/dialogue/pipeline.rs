//! Per-note generation: the doctor/patient loop for each section, followed by
//! polish, hallucination check and post-edit merge passes.
//!
//! Every rewrite pass is guarded: if its output loses a keyword that was
//! present in its input, or does not parse into a doctor-first dialogue, the
//! input is kept and the pass's fallback counter is incremented.

use std::collections::BTreeSet;

use serde::Serialize;

use super::prompts::{
    build_doctor_prompt, build_hallucination_prompt, build_patient_prompt, build_polish_prompt,
    build_postedit_prompt, select_keywords,
};
use super::{
    merge_consecutive_speakers, parse_dialogue_text, render_utterances, Dialogue, DialogueError,
    Pass, Provenance, Speaker, Utterance,
};
use crate::concepts::{
    build_checklist, extract_concepts, mark_covered, ChecklistItem, ConceptChecklist, Lexicon,
};
use crate::gateway::{estimate_tokens, ChatClient, ChatRequest, ChatResponse, GatewayError};
use crate::note::{CanonicalHeader, ClinicalNote, NoteSection};
use crate::template::{Mode, PromptTemplateSet, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryWindow {
    All,
    PreviousSegmentOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub mode: Mode,
    pub max_rounds_per_section: u32,
    pub keywords_per_question: usize,
    pub history_window: HistoryWindow,
    pub enable_polish: bool,
    pub enable_hallucination_check: bool,
    /// Run one more hallucination check over the whole merged dialogue.
    pub final_hallucination_pass: bool,
    /// Let a section's doctor also ask about uncovered keywords from other sections.
    pub include_global_uncovered: bool,
    pub model: String,
    pub dialogue_temperature: f64,
    pub rewrite_temperature: f64,
    pub turn_max_tokens: u32,
    pub rewrite_max_tokens: u32,
}

impl LoopConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            max_rounds_per_section: match mode {
                Mode::Short => 6,
                Mode::Long => 10,
            },
            keywords_per_question: 4,
            history_window: match mode {
                Mode::Short => HistoryWindow::All,
                Mode::Long => HistoryWindow::PreviousSegmentOnly,
            },
            enable_polish: true,
            enable_hallucination_check: true,
            final_hallucination_pass: false,
            include_global_uncovered: false,
            model: "gpt-3.5-turbo".to_string(),
            dialogue_temperature: 0.7,
            rewrite_temperature: 0.2,
            turn_max_tokens: 256,
            rewrite_max_tokens: 1024,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds_per_section == 0 {
            return Err("max_rounds_per_section must be at least 1".into());
        }
        if self.keywords_per_question == 0 {
            return Err("keywords_per_question must be at least 1".into());
        }
        if self.dialogue_temperature < 0.0 || self.rewrite_temperature < 0.0 {
            return Err("temperatures must be non-negative".into());
        }
        Ok(())
    }

    /// Long mode always merges against the previous segment only.
    pub fn effective_window(&self) -> HistoryWindow {
        match self.mode {
            Mode::Long => HistoryWindow::PreviousSegmentOnly,
            Mode::Short => self.history_window,
        }
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.turn_max_tokens.max(self.rewrite_max_tokens)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PassCounters {
    pub polish_fallbacks: u32,
    pub hallucination_fallbacks: u32,
    pub merge_fallbacks: u32,
    pub dropped_prefix_lines: u32,
    pub history_trims: u32,
}

impl PassCounters {
    pub fn add(&mut self, other: &PassCounters) {
        self.polish_fallbacks += other.polish_fallbacks;
        self.hallucination_fallbacks += other.hallucination_fallbacks;
        self.merge_fallbacks += other.merge_fallbacks;
        self.dropped_prefix_lines += other.dropped_prefix_lines;
        self.history_trims += other.history_trims;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SectionRounds {
    pub section: CanonicalHeader,
    pub index: usize,
    pub rounds: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub total_keywords: usize,
    pub covered: usize,
    pub uncovered: Vec<ChecklistItem>,
    pub rounds_per_section: Vec<SectionRounds>,
    pub counters: PassCounters,
    pub gateway_calls: u64,
}

impl CoverageReport {
    fn from_checklist(
        checklist: &ConceptChecklist,
        rounds: Vec<SectionRounds>,
        counters: PassCounters,
        gateway_calls: u64,
    ) -> Self {
        Self {
            total_keywords: checklist.items.len(),
            covered: checklist.covered_count(),
            uncovered: checklist.uncovered().cloned().collect(),
            rounds_per_section: rounds,
            counters,
            gateway_calls,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub dialogue: Dialogue,
    pub checklist: ConceptChecklist,
    pub report: CoverageReport,
}

#[derive(Debug)]
pub struct GenerationFailure {
    pub error: DialogueError,
    pub report: CoverageReport,
}

/// What a guarded pass did with its input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PassOutcome {
    Adopted,
    Skipped,
    /// Input kept; the string says why.
    Fallback(String),
}

impl PassOutcome {
    pub fn is_fallback(&self) -> bool {
        matches!(self, Self::Fallback(_))
    }
}

/// Counts calls made through it, and remembers a replay divergence even when
/// a guarded pass swallows the error.
struct Counting<'a> {
    inner: &'a mut dyn ChatClient,
    calls: u64,
    diverged: Option<GatewayError>,
}

impl ChatClient for Counting<'_> {
    fn complete(&mut self, request: ChatRequest) -> Result<ChatResponse, GatewayError> {
        let result = self.inner.complete(request);
        if self.diverged.is_none() {
            self.diverged = match &result {
                Err(GatewayError::ScriptMismatch { stream, seq }) => Some(GatewayError::ScriptMismatch {
                    stream: stream.clone(),
                    seq: *seq,
                }),
                Err(GatewayError::ScriptExhausted { stream, seq }) => Some(GatewayError::ScriptExhausted {
                    stream: stream.clone(),
                    seq: *seq,
                }),
                _ => None,
            };
        }
        if !matches!(
            result,
            Err(GatewayError::BudgetExceeded { .. }) | Err(GatewayError::InvalidRequest(_))
        ) {
            self.calls += 1;
        }
        result
    }

    fn token_budget(&self) -> Option<usize> {
        self.inner.token_budget()
    }
}

fn keyword_ids(keywords: &[String], lexicon: &Lexicon) -> BTreeSet<String> {
    keywords
        .iter()
        .flat_map(|k| extract_concepts(k, lexicon))
        .map(|m| m.concept_id)
        .collect()
}

fn present_ids(text: &str, tracked: &BTreeSet<String>, lexicon: &Lexicon) -> BTreeSet<String> {
    extract_concepts(text, lexicon)
        .into_iter()
        .map(|m| m.concept_id)
        .filter(|id| tracked.contains(id))
        .collect()
}

/// Picks the expected speaker's turn out of an agent reply. A reply with no
/// role line at all is taken whole as that speaker's turn.
fn agent_turn(raw: &str, expected: Speaker, counters: &mut PassCounters) -> Result<String, DialogueError> {
    match parse_dialogue_text(raw) {
        Ok(parsed) => {
            counters.dropped_prefix_lines += parsed.dropped_prefix_lines as u32;
            parsed
                .turns
                .into_iter()
                .find(|(s, _)| *s == expected)
                .map(|(_, t)| t)
                .ok_or_else(|| DialogueError::ParseFailure {
                    context: format!("reply has no {expected}: line"),
                })
        }
        Err(_) => {
            let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
            if text.is_empty() {
                Err(DialogueError::ParseFailure {
                    context: format!("empty {expected} reply"),
                })
            } else {
                Ok(text)
            }
        }
    }
}

/// Renders a prompt around as much trailing history as fits the budget.
fn fit_history(
    history: &[Utterance],
    max_output_tokens: u32,
    budget: Option<usize>,
    counters: &mut PassCounters,
    build: impl Fn(&str) -> Result<String, TemplateError>,
) -> Result<String, TemplateError> {
    let mut start = 0;
    loop {
        let prompt = build(&render_utterances(&history[start..]))?;
        let fits = budget.is_none_or(|b| {
            estimate_tokens(&prompt) + max_output_tokens as usize <= b
        });
        if fits || start >= history.len() {
            return Ok(prompt);
        }
        start += 1;
        counters.history_trims += 1;
    }
}

/// Result of one section's doctor/patient loop.
#[derive(Debug, Clone)]
pub struct SectionLoopOutput {
    pub fragment: Vec<Utterance>,
    pub checklist: ConceptChecklist,
    pub rounds: u32,
}

/// Alternates doctor and patient turns for one section until its keywords
/// are covered or the round limit is hit. Always runs at least one round.
#[allow(clippy::too_many_arguments)]
pub fn run_section_loop(
    section: &NoteSection,
    checklist: &ConceptChecklist,
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
    config: &LoopConfig,
    client: &mut dyn ChatClient,
    counters: &mut PassCounters,
) -> Result<SectionLoopOutput, DialogueError> {
    let mut checklist = checklist.clone();
    let mut history: Vec<Utterance> = Vec::new();
    let budget = client.token_budget();
    let mut round = 0u32;

    loop {
        let focus = ConceptChecklist {
            items: checklist
                .items
                .iter()
                .filter(|i| {
                    i.section_index == section.order_index
                        || (config.include_global_uncovered && !i.covered)
                })
                .cloned()
                .collect(),
        };
        let keywords = select_keywords(&focus, config.keywords_per_question);
        if round > 0 && keywords.is_empty() {
            break;
        }
        if round == config.max_rounds_per_section {
            break;
        }
        let provenance = Provenance {
            section: section.header,
            pass: Pass::Loop,
            round,
        };

        let prompt = fit_history(&history, config.turn_max_tokens, budget, counters, |h| {
            build_doctor_prompt(&templates.doctor, &section.body, h, &keywords)
        })?;
        let reply = client.complete(
            ChatRequest::single_user(&config.model, prompt, config.dialogue_temperature, config.turn_max_tokens)
                .with_label(format!("doctor/{}/{}", section.order_index, round)),
        )?;
        let question = agent_turn(&reply.content, Speaker::Doctor, counters)?;
        history.push(Utterance::new(Speaker::Doctor, question, provenance));

        let prompt = fit_history(&history, config.turn_max_tokens, budget, counters, |h| {
            build_patient_prompt(&templates.patient, &section.body, h)
        })?;
        let reply = client.complete(
            ChatRequest::single_user(&config.model, prompt, config.dialogue_temperature, config.turn_max_tokens)
                .with_label(format!("patient/{}/{}", section.order_index, round)),
        )?;
        let answer = agent_turn(&reply.content, Speaker::Patient, counters)?;
        history.push(Utterance::new(Speaker::Patient, answer, provenance));

        let exchange = render_utterances(&history[history.len() - 2..]);
        checklist = mark_covered(&checklist, &exchange, lexicon);
        round += 1;
    }

    Ok(SectionLoopOutput {
        fragment: history,
        checklist,
        rounds: round,
    })
}

struct Rewrite<'a> {
    pass: Pass,
    section: CanonicalHeader,
    label: String,
    prompt: Result<String, TemplateError>,
    /// Text whose tracked keywords the output must keep.
    guard_source: &'a str,
    tracked: BTreeSet<String>,
}

fn run_rewrite(
    rewrite: Rewrite<'_>,
    lexicon: &Lexicon,
    config: &LoopConfig,
    client: &mut dyn ChatClient,
    counters: &mut PassCounters,
) -> Result<Vec<Utterance>, String> {
    let prompt = rewrite.prompt.map_err(|e| e.to_string())?;
    let reply = client
        .complete(
            ChatRequest::single_user(&config.model, prompt, config.rewrite_temperature, config.rewrite_max_tokens)
                .with_label(rewrite.label),
        )
        .map_err(|e| e.to_string())?;
    let parsed = parse_dialogue_text(&reply.content).map_err(|e| e.to_string())?;
    counters.dropped_prefix_lines += parsed.dropped_prefix_lines as u32;
    let provenance = Provenance {
        section: rewrite.section,
        pass: rewrite.pass,
        round: 0,
    };
    let utterances = merge_consecutive_speakers(
        parsed
            .turns
            .into_iter()
            .map(|(s, t)| Utterance::new(s, t, provenance))
            .collect(),
    );
    if utterances.first().map(|u| u.speaker) != Some(Speaker::Doctor) {
        return Err("rewrite does not open with the doctor".into());
    }
    let before = present_ids(rewrite.guard_source, &rewrite.tracked, lexicon);
    let after = present_ids(&render_utterances(&utterances), &rewrite.tracked, lexicon);
    let lost: Vec<_> = before.difference(&after).cloned().collect();
    if !lost.is_empty() {
        return Err(format!("rewrite drops keyword concept(s) {}", lost.join(", ")));
    }
    Ok(utterances)
}

fn guarded_pass(
    pass: Pass,
    fragment: &[Utterance],
    section: &NoteSection,
    keywords: &[String],
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
    config: &LoopConfig,
    client: &mut dyn ChatClient,
    counters: &mut PassCounters,
) -> (Vec<Utterance>, PassOutcome) {
    let conversation = render_utterances(fragment);
    let (prompt, label) = match pass {
        Pass::Polish => (
            build_polish_prompt(&templates.polish, &section.body, &conversation, keywords),
            format!("polish/{}", section.order_index),
        ),
        _ => (
            build_hallucination_prompt(&templates.hallucination, &section.body, &conversation, keywords),
            format!("hallucination/{}", section.order_index),
        ),
    };
    let rewrite = Rewrite {
        pass,
        section: section.header,
        label,
        prompt,
        guard_source: &conversation,
        tracked: keyword_ids(keywords, lexicon),
    };
    match run_rewrite(rewrite, lexicon, config, client, counters) {
        Ok(utterances) => (utterances, PassOutcome::Adopted),
        Err(reason) => {
            log::info!("{pass:?} pass for section {} kept its input: {reason}", section.order_index);
            match pass {
                Pass::Polish => counters.polish_fallbacks += 1,
                _ => counters.hallucination_fallbacks += 1,
            }
            (fragment.to_vec(), PassOutcome::Fallback(reason))
        }
    }
}

/// Rewrites a section fragment for fluency. Keeps the input when disabled,
/// on any failure, or when a keyword would be lost.
#[allow(clippy::too_many_arguments)]
pub fn polish(
    fragment: &[Utterance],
    section: &NoteSection,
    keywords: &[String],
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
    config: &LoopConfig,
    client: &mut dyn ChatClient,
    counters: &mut PassCounters,
) -> (Vec<Utterance>, PassOutcome) {
    if !config.enable_polish || fragment.is_empty() {
        return (fragment.to_vec(), PassOutcome::Skipped);
    }
    guarded_pass(Pass::Polish, fragment, section, keywords, lexicon, templates, config, client, counters)
}

/// Removes content unsupported by the note, under the same guard as [`polish`].
#[allow(clippy::too_many_arguments)]
pub fn hallucination_check(
    fragment: &[Utterance],
    section: &NoteSection,
    keywords: &[String],
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
    config: &LoopConfig,
    client: &mut dyn ChatClient,
    counters: &mut PassCounters,
) -> (Vec<Utterance>, PassOutcome) {
    if !config.enable_hallucination_check || fragment.is_empty() {
        return (fragment.to_vec(), PassOutcome::Skipped);
    }
    guarded_pass(
        Pass::Hallucination,
        fragment,
        section,
        keywords,
        lexicon,
        templates,
        config,
        client,
        counters,
    )
}

/// Joins two dialogues through the post-edit prompt. Falls back to plain
/// concatenation when the call fails or a keyword of either side is lost.
#[allow(clippy::too_many_arguments)]
pub fn postedit_merge(
    conv_a: &[Utterance],
    conv_b: &[Utterance],
    keywords: &[String],
    section: CanonicalHeader,
    label: String,
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
    config: &LoopConfig,
    client: &mut dyn ChatClient,
    counters: &mut PassCounters,
) -> (Vec<Utterance>, PassOutcome) {
    let text_a = render_utterances(conv_a);
    let text_b = render_utterances(conv_b);
    let both = format!("{text_a}\n{text_b}");
    let rewrite = Rewrite {
        pass: Pass::Postedit,
        section,
        label,
        prompt: build_postedit_prompt(&templates.postedit, &text_a, &text_b, keywords),
        guard_source: &both,
        tracked: keyword_ids(keywords, lexicon),
    };
    match run_rewrite(rewrite, lexicon, config, client, counters) {
        Ok(merged) => (merged, PassOutcome::Adopted),
        Err(reason) => {
            log::info!("merge fell back to concatenation: {reason}");
            counters.merge_fallbacks += 1;
            let mut joined = conv_a.to_vec();
            joined.extend_from_slice(conv_b);
            (joined, PassOutcome::Fallback(reason))
        }
    }
}

/// Running dialogue during generation: a frozen prefix plus the tail that
/// the next merge may rewrite.
#[derive(Debug, Clone)]
pub struct MergeState {
    window: HistoryWindow,
    prefix: Vec<Utterance>,
    tail: Vec<Utterance>,
}

impl MergeState {
    pub fn new(window: HistoryWindow) -> Self {
        Self {
            window,
            prefix: Vec::new(),
            tail: Vec::new(),
        }
    }

    /// The part of the dialogue the next merge prompt will see.
    pub fn window_text(&self) -> &[Utterance] {
        &self.tail
    }

    pub fn utterances(&self) -> Vec<Utterance> {
        let mut all = self.prefix.clone();
        all.extend_from_slice(&self.tail);
        all
    }

    /// Folds a new section fragment into the running dialogue.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        fragment: Vec<Utterance>,
        checklist: &ConceptChecklist,
        section: &NoteSection,
        lexicon: &Lexicon,
        templates: &PromptTemplateSet,
        config: &LoopConfig,
        client: &mut dyn ChatClient,
        counters: &mut PassCounters,
    ) -> PassOutcome {
        if fragment.is_empty() {
            return PassOutcome::Skipped;
        }
        if self.tail.is_empty() {
            self.tail = fragment;
            return PassOutcome::Skipped;
        }
        // keywords covered on either side of the join
        let joined_text = format!(
            "{}\n{}",
            render_utterances(&self.tail),
            render_utterances(&fragment)
        );
        let tracked: BTreeSet<String> = checklist
            .items
            .iter()
            .filter(|i| i.covered)
            .map(|i| i.concept_id.clone())
            .collect();
        let present = present_ids(&joined_text, &tracked, lexicon);
        let keywords: Vec<String> = checklist
            .items
            .iter()
            .filter(|i| present.contains(&i.concept_id))
            .map(|i| i.display_term.clone())
            .collect();

        let (merged, outcome) = postedit_merge(
            &self.tail,
            &fragment,
            &keywords,
            section.header,
            format!("postedit/{}", section.order_index),
            lexicon,
            templates,
            config,
            client,
            counters,
        );
        match self.window {
            HistoryWindow::All => {
                self.tail = merged;
            }
            HistoryWindow::PreviousSegmentOnly => {
                if outcome.is_fallback() {
                    self.prefix.append(&mut self.tail);
                    self.tail = fragment;
                } else {
                    let split = merged.len().saturating_sub(fragment.len());
                    let mut merged = merged;
                    let tail = merged.split_off(split);
                    self.prefix.extend(merged);
                    self.tail = tail;
                }
            }
        }
        outcome
    }
}

fn section_terms(checklist: &ConceptChecklist, section_index: usize) -> Vec<String> {
    checklist
        .for_section(section_index)
        .map(|i| i.display_term.clone())
        .collect()
}

/// Generates the full dialogue for one note.
pub fn generate_dialogue(
    note: &ClinicalNote,
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
    config: &LoopConfig,
    client: &mut dyn ChatClient,
) -> Result<GenerationOutput, GenerationFailure> {
    let mut client = Counting {
        inner: client,
        calls: 0,
        diverged: None,
    };
    let mut checklist = build_checklist(note, lexicon);
    let mut counters = PassCounters::default();
    let mut rounds = Vec::new();
    let mut state = MergeState::new(config.effective_window());

    macro_rules! fail {
        ($err:expr) => {
            return Err(GenerationFailure {
                error: $err.into(),
                report: CoverageReport::from_checklist(&checklist, rounds, counters, client.calls),
            })
        };
    }

    // a recorded transcript no longer matches: the rest of the run is meaningless
    macro_rules! check_divergence {
        () => {
            if let Some(e) = client.diverged.take() {
                fail!(DialogueError::Gateway(e));
            }
        };
    }

    if note.sections.is_empty() {
        fail!(DialogueError::ParseFailure {
            context: format!("note {} has no sections", note.id),
        });
    }
    if let Err(e) = config.validate() {
        fail!(DialogueError::Template(TemplateError::Io {
            path: "loop config".into(),
            message: e,
        }));
    }

    for section in &note.sections {
        let out = match run_section_loop(
            section,
            &checklist,
            lexicon,
            templates,
            config,
            &mut client,
            &mut counters,
        ) {
            Ok(out) => out,
            Err(e) => fail!(e),
        };
        checklist = out.checklist;
        rounds.push(SectionRounds {
            section: section.header,
            index: section.order_index,
            rounds: out.rounds,
        });

        let keywords = section_terms(&checklist, section.order_index);
        let (fragment, _) = polish(
            &out.fragment,
            section,
            &keywords,
            lexicon,
            templates,
            config,
            &mut client,
            &mut counters,
        );
        check_divergence!();
        let (fragment, _) = hallucination_check(
            &fragment,
            section,
            &keywords,
            lexicon,
            templates,
            config,
            &mut client,
            &mut counters,
        );
        check_divergence!();
        state.push(
            fragment,
            &checklist,
            section,
            lexicon,
            templates,
            config,
            &mut client,
            &mut counters,
        );
        check_divergence!();
    }

    let mut utterances = state.utterances();
    if config.final_hallucination_pass && !utterances.is_empty() {
        let whole = NoteSection {
            header: CanonicalHeader::OtherHistory,
            raw_header: String::new(),
            body: note
                .sections
                .iter()
                .map(|s| s.body.as_str())
                .collect::<Vec<_>>()
                .join("\n"),
            order_index: note.sections.len(),
        };
        let keywords: Vec<String> = checklist
            .items
            .iter()
            .filter(|i| i.covered)
            .map(|i| i.display_term.clone())
            .collect();
        let forced = LoopConfig {
            enable_hallucination_check: true,
            ..config.clone()
        };
        let (checked, _) = hallucination_check(
            &utterances,
            &whole,
            &keywords,
            lexicon,
            templates,
            &forced,
            &mut client,
            &mut counters,
        );
        check_divergence!();
        utterances = checked;
    }

    let utterances = merge_consecutive_speakers(utterances);
    let dialogue = Dialogue {
        note_id: note.id.clone(),
        utterances,
        mode: config.mode,
    };
    let checklist = mark_covered(&checklist, &dialogue.text(), lexicon);
    let report = CoverageReport::from_checklist(&checklist, rounds, counters, client.calls);
    Ok(GenerationOutput {
        dialogue,
        checklist,
        report,
    })
}
