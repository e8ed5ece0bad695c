use std::collections::HashMap;

use crate::concepts::ConceptChecklist;
use crate::template::{Template, TemplateError};

/// First `k` uncovered checklist terms, in checklist order.
pub fn select_keywords(checklist: &ConceptChecklist, k: usize) -> Vec<String> {
    checklist
        .uncovered()
        .take(k)
        .map(|i| i.display_term.clone())
        .collect()
}

fn require_nonempty(template: &Template, name: &str, value: &str) -> Result<(), TemplateError> {
    if value.trim().is_empty() {
        return Err(TemplateError::EmptySlot {
            template: template.name().to_string(),
            name: name.to_string(),
        });
    }
    Ok(())
}

pub fn build_doctor_prompt(
    template: &Template,
    note_section: &str,
    history: &str,
    keywords: &[String],
) -> Result<String, TemplateError> {
    require_nonempty(template, "note", note_section)?;
    let values = HashMap::from([
        ("note", note_section.to_string()),
        ("conversation", history.to_string()),
        ("keywords", keywords.join(", ")),
    ]);
    template.render(&values)
}

pub fn build_patient_prompt(
    template: &Template,
    note_section: &str,
    history: &str,
) -> Result<String, TemplateError> {
    require_nonempty(template, "note", note_section)?;
    let values = HashMap::from([
        ("note", note_section.to_string()),
        ("conversation", history.to_string()),
    ]);
    template.render(&values)
}

pub fn build_polish_prompt(
    template: &Template,
    note_section: &str,
    conversation: &str,
    keywords: &[String],
) -> Result<String, TemplateError> {
    require_nonempty(template, "note", note_section)?;
    require_nonempty(template, "conversation", conversation)?;
    let values = HashMap::from([
        ("note", note_section.to_string()),
        ("conversation", conversation.to_string()),
        ("keywords", keywords.join(", ")),
    ]);
    template.render(&values)
}

pub fn build_hallucination_prompt(
    template: &Template,
    note_section: &str,
    conversation: &str,
    keywords: &[String],
) -> Result<String, TemplateError> {
    build_polish_prompt(template, note_section, conversation, keywords)
}

pub fn build_postedit_prompt(
    template: &Template,
    conversation_a: &str,
    conversation_b: &str,
    keywords: &[String],
) -> Result<String, TemplateError> {
    require_nonempty(template, "conversation_a", conversation_a)?;
    require_nonempty(template, "conversation_b", conversation_b)?;
    let values = HashMap::from([
        ("conversation_a", conversation_a.to_string()),
        ("conversation_b", conversation_b.to_string()),
        ("keywords", keywords.join(", ")),
    ]);
    template.render(&values)
}
