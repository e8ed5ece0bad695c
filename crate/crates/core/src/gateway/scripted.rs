use std::collections::HashMap;
use std::path::Path;

use super::transcript::{prompt_sha256, read_transcript, TranscriptEntry};
use super::{Backend, CallKey, ChatRequest, ChatResponse, GatewayError};

/// Replays recorded responses keyed by `(stream, seq)`.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    entries: HashMap<(String, u64), TranscriptEntry>,
    verify: bool,
}

impl ScriptedBackend {
    pub fn from_entries(entries: Vec<TranscriptEntry>, verify: bool) -> Self {
        let entries = entries
            .into_iter()
            .map(|e| ((e.stream.clone(), e.seq), e))
            .collect();
        Self { entries, verify }
    }

    pub fn from_path(path: &Path, verify: bool) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(read_transcript(path)?, verify))
    }

    /// Responses for stream `stream`, numbered from 0 in order.
    pub fn from_responses<S: Into<String>>(stream: &str, responses: impl IntoIterator<Item = S>) -> Self {
        let entries = responses
            .into_iter()
            .enumerate()
            .map(|(i, content)| TranscriptEntry {
                stream: stream.to_string(),
                seq: i as u64,
                prompt_sha256: None,
                request: None,
                response_content: content.into(),
                finish_reason: Default::default(),
                usage: Default::default(),
            })
            .collect();
        Self::from_entries(entries, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn call(&self, key: &CallKey, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let entry = self
            .entries
            .get(&(key.stream.clone(), key.seq))
            .ok_or_else(|| GatewayError::ScriptExhausted {
                stream: key.stream.clone(),
                seq: key.seq,
            })?;
        if self.verify {
            let issued = prompt_sha256(&request.messages);
            let recorded_hash_ok = entry.prompt_sha256.as_deref() == Some(issued.as_str());
            let recorded_request_ok = entry
                .request
                .as_ref()
                .is_none_or(|r| prompt_sha256(&r.messages) == issued);
            if !recorded_hash_ok || !recorded_request_ok {
                return Err(GatewayError::ScriptMismatch {
                    stream: key.stream.clone(),
                    seq: key.seq,
                });
            }
        }
        Ok(ChatResponse {
            content: entry.response_content.clone(),
            finish_reason: entry.finish_reason,
            usage: entry.usage,
        })
    }
}
