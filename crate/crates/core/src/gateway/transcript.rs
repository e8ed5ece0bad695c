use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CallKey, ChatMessage, ChatRequest, ChatResponse, FinishReason, GatewayError, Usage};

/// One recorded call, serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default)]
    pub stream: String,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<ChatRequest>,
    pub response_content: String,
    #[serde(default)]
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl TranscriptEntry {
    pub fn new(key: &CallKey, request: &ChatRequest, response: &ChatResponse) -> Self {
        Self {
            stream: key.stream.clone(),
            seq: key.seq,
            prompt_sha256: Some(prompt_sha256(&request.messages)),
            request: Some(request.clone()),
            response_content: response.content.clone(),
            finish_reason: response.finish_reason,
            usage: response.usage,
        }
    }
}

/// SHA-256 (hex) of the JSON encoding of the message list.
pub fn prompt_sha256(messages: &[ChatMessage]) -> String {
    let json = serde_json::to_string(messages).expect("messages serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, GatewayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| {
            GatewayError::Config(format!("{}:{}: bad transcript line: {e}", path.display(), i + 1))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Single-writer JSONL appender shared across workers.
#[derive(Debug)]
pub struct TranscriptWriter {
    file: Mutex<File>,
}

impl TranscriptWriter {
    /// Truncates `path` and starts a new transcript.
    pub fn create(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, entry: &TranscriptEntry) -> Result<(), GatewayError> {
        let mut line = serde_json::to_string(entry).expect("entry serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("transcript writer poisoned");
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }
}
