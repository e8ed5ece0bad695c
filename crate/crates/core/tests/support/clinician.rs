//! Deterministic stand-in for the chat model. It recognizes each prompt by
//! its instruction text and answers the way a cooperative model would:
//! the doctor asks about the listed key words, the patient quotes the note,
//! rewrites keep every line, and merges concatenate.

use dploop::gateway::{Backend, CallKey, ChatRequest, ChatResponse, FinishReason, GatewayError, Usage};

pub struct SimulatedClinician;

const DOCTOR_MARK: &str = "Please role-play as a doctor";
const PATIENT_MARK: &str = "Please act as a patient";
const POLISH_MARK: &str = "Please rewrite all the conversations";
const HALLUCINATION_MARK: &str = "Check whether the information of the conversation";
const MERGE_MARK: &str = "Please concatenate the two dialogues together";
const ONE_AT_A_TIME: &str = "Ask about only one key word at a time";

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let rest = &s[from..];
    let to = rest.find(end).unwrap_or(rest.len());
    Some(&rest[..to])
}

fn note_of(prompt: &str) -> &str {
    between(prompt, "Clinical Note: ", "\n\n").unwrap_or("").trim()
}

/// Conversation text between the note and the instruction paragraph.
fn history_of<'a>(prompt: &'a str, mark: &str) -> &'a str {
    let Some(note_start) = prompt.find("Clinical Note: ") else { return "" };
    let after_note = &prompt[note_start..];
    let Some(gap) = after_note.find("\n\n") else { return "" };
    let rest = &after_note[gap..];
    let end = rest.find(mark).unwrap_or(rest.len());
    rest[..end].trim()
}

fn sentences(note: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = note.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let boundary = c == '\n' || (c == '.' && chars.get(i + 1).is_none_or(|n| n.is_whitespace()));
        if boundary {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn doctor(prompt: &str) -> String {
    let note = note_of(prompt);
    let keywords: Vec<&str> = prompt
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Key Words: "))
        .map(|k| k.split(", ").collect())
        .unwrap_or_default();
    let take = if prompt.contains(ONE_AT_A_TIME) { 1 } else { 2 };
    if keywords.is_empty() {
        let opening: Vec<&str> = note.split_whitespace().take(6).collect();
        return format!("Doctor: Is there anything else you want to share about \"{}\"?", opening.join(" "));
    }
    let asked: Vec<&str> = keywords.into_iter().take(take).collect();
    format!("Doctor: What can you tell me about {}?", asked.join(" and "))
}

fn patient(prompt: &str) -> String {
    let note = note_of(prompt);
    let history = history_of(prompt, PATIENT_MARK);
    let question = history
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Doctor: "))
        .unwrap_or("");
    let sents = sentences(note);
    if let Some(topic) = question
        .strip_prefix("What can you tell me about ")
        .and_then(|q| q.strip_suffix('?'))
    {
        let mut quoted: Vec<&str> = Vec::new();
        for kw in topic.split(" and ") {
            let kw_l = kw.to_lowercase();
            if let Some(s) = sents.iter().find(|s| s.to_lowercase().contains(&kw_l)) {
                if !quoted.contains(&s.as_str()) {
                    quoted.push(s);
                }
            }
        }
        if quoted.is_empty() {
            return format!("Patient: I am not sure what to say about {topic}.");
        }
        return format!("Patient: About {topic}, {}", quoted.join(" "));
    }
    let first = sents.first().map(String::as_str).unwrap_or("Nothing comes to mind.");
    format!("Patient: Well, {first}")
}

fn polish(prompt: &str) -> String {
    let conv = between(prompt, "The conversation: \"", "\"\n\nClinical Note:").unwrap_or("");
    conv.lines()
        .map(|l| match l.strip_prefix("Doctor: ") {
            Some(rest) if !rest.starts_with("Okay. ") => format!("Doctor: Okay. {rest}"),
            _ => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn hallucination(prompt: &str) -> String {
    prompt
        .rfind("\nConversation: ")
        .map(|i| prompt[i + "\nConversation: ".len()..].trim().to_string())
        .unwrap_or_default()
}

fn merge(prompt: &str) -> String {
    let a = between(prompt, "History Conversation:\n", "\n\nGenerated Conversation:\n").unwrap_or("");
    let b = between(prompt, "Generated Conversation:\n", "\n\nThe above two paragraphs").unwrap_or("");
    format!("{}\n{}", a.trim(), b.trim())
}

/// Reply text for a prompt, by prompt kind.
pub fn reply_for(prompt: &str) -> String {
    if prompt.contains(DOCTOR_MARK) {
        doctor(prompt)
    } else if prompt.contains(PATIENT_MARK) {
        patient(prompt)
    } else if prompt.contains(POLISH_MARK) {
        polish(prompt)
    } else if prompt.contains(HALLUCINATION_MARK) {
        hallucination(prompt)
    } else if prompt.contains(MERGE_MARK) {
        merge(prompt)
    } else {
        String::from("Doctor: Could you say that again?")
    }
}

impl Backend for SimulatedClinician {
    fn call(&self, _key: &CallKey, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let content = reply_for(request.prompt());
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: dploop::gateway::estimate_tokens(request.prompt()) as u64,
                completion_tokens: dploop::gateway::estimate_tokens(&content) as u64,
                total_tokens: (dploop::gateway::estimate_tokens(request.prompt())
                    + dploop::gateway::estimate_tokens(&content)) as u64,
            },
            content,
            finish_reason: FinishReason::Stop,
        })
    }
}
