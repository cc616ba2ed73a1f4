use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub key_hash: String,
    pub response_text: String,
}

/// Replays scripted responses keyed by [`ChatRequest::script_key`]. An
/// unscripted request is an error, never a default answer.
#[derive(Debug, Default, Clone)]
pub struct StubProvider {
    responses: HashMap<String, String>,
    label: String,
}

impl StubProvider {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self { responses: entries.into_iter().map(|e| (e.key_hash, e.response_text)).collect(), label: "stub".into() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::Script { line: i + 1, message: e.to_string() })?;
            entries.push(e);
        }
        let mut stub = Self::new(entries);
        stub.label = format!("stub:{}", path.display());
        Ok(stub)
    }

    /// Script a response for an exact request.
    pub fn insert(&mut self, request: &ChatRequest, response: impl Into<String>) {
        self.responses.insert(request.script_key(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatProvider for StubProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let key = request.script_key();
        self.responses.get(&key).cloned().ok_or(ProviderError::ScriptMiss { key })
    }

    fn identity(&self) -> String {
        self.label.clone()
    }
}

/// Wraps a provider and records every (key, response) pair so the run can
/// later be replayed by a [`StubProvider`].
pub struct RecordingProvider<P> {
    inner: P,
    log: Mutex<BTreeMap<String, String>>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, log: Mutex::new(BTreeMap::new()) }
    }

    /// Recorded entries sorted by key.
    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .map(|(k, v)| ScriptEntry { key_hash: k.clone(), response_text: v.clone() })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries().iter().map(|e| serde_json::to_string(e).expect("script entry serializes") + "\n").collect()
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let out = self.inner.complete(request)?;
        self.log.lock().unwrap_or_else(|e| e.into_inner()).insert(request.script_key(), out.clone());
        Ok(out)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ChatMessage;

    struct Echo;

    impl ChatProvider for Echo {
        fn complete(&self, r: &ChatRequest) -> Result<String, ProviderError> {
            Ok(r.messages.last().unwrap().text.to_uppercase())
        }

        fn identity(&self) -> String {
            "echo".into()
        }
    }

    #[test]
    fn stub_is_deterministic_and_never_defaults() {
        let req = ChatRequest::new("s", vec![ChatMessage::user("q")], 1);
        let mut stub = StubProvider::default();
        stub.insert(&req, "answer");
        assert_eq!(stub.complete(&req).unwrap(), "answer");
        assert_eq!(stub.complete(&req).unwrap(), "answer");
        let other = ChatRequest::new("s", vec![ChatMessage::user("q2")], 1);
        assert!(matches!(stub.complete(&other), Err(ProviderError::ScriptMiss { .. })));
    }

    #[test]
    fn record_then_replay() {
        let rec = RecordingProvider::new(Echo);
        let reqs: Vec<_> =
            ["a", "b", "c"].iter().map(|t| ChatRequest::new("s", vec![ChatMessage::user(*t)], 0)).collect();
        for r in &reqs {
            rec.complete(r).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(&path, rec.to_jsonl()).unwrap();
        let stub = StubProvider::load(&path).unwrap();
        assert_eq!(stub.len(), 3);
        for r in &reqs {
            assert_eq!(stub.complete(r).unwrap(), Echo.complete(r).unwrap());
        }
    }

    #[test]
    fn bad_script_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        std::fs::write(&path, "{\"key_hash\":\"a\",\"response_text\":\"b\"}\nnope\n").unwrap();
        assert!(matches!(StubProvider::load(&path), Err(ProviderError::Script { line: 2, .. })));
    }
}
