//! Chat-completion and text-embedding backends.
//!
//! Everything above this module talks to a [`ChatProvider`] and an
//! [`Embedder`]. Remote implementations speak the common chat-completions
//! wire shape; local implementations are deterministic test doubles.

mod embed;
mod remote;
mod stub;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{cosine, Embedder, EmbeddingVector, LocalEmbedder, LOCAL_DIMENSION};
pub use remote::{RemoteChat, RemoteConfig, RemoteEmbedder, RetryPolicy};
pub use stub::{RecordingProvider, ScriptEntry, StubProvider};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider failed after {attempts} attempt(s): {message}")]
    Failure { attempts: u32, message: String },
    #[error("stub has no scripted response for key {key}")]
    ScriptMiss { key: String },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("script file line {line}: {message}")]
    Script { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl ChatRequest {
    pub fn new(system_text: impl Into<String>, messages: Vec<ChatMessage>, seed: u64) -> Self {
        Self {
            system_text: system_text.into(),
            messages,
            model: String::new(),
            temperature: 0.0,
            max_tokens: 1024,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }

    /// Replay key: SHA-256 over (system text, messages, seed). Model name and
    /// sampling settings are not part of the key.
    pub fn script_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_text.as_bytes());
        h.update([0u8]);
        for m in &self.messages {
            h.update(m.role.as_str().as_bytes());
            h.update([0u8]);
            h.update(m.text.as_bytes());
            h.update([0u8]);
        }
        h.update(self.seed.to_le_bytes());
        hex::encode(h.finalize())
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    /// Short description recorded in run manifests.
    fn identity(&self) -> String;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

/// Counting semaphore capping in-flight remote requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn script_key_depends_on_content_and_seed() {
        let a = ChatRequest::new("sys", vec![ChatMessage::user("hi")], 7);
        let mut b = a.clone();
        assert_eq!(a.script_key(), b.script_key());
        b.model = "other".into();
        assert_eq!(a.script_key(), b.script_key());
        b.seed = 8;
        assert_ne!(a.script_key(), b.script_key());
        let c = ChatRequest::new("sys", vec![ChatMessage::assistant("hi")], 7);
        assert_ne!(a.script_key(), c.script_key());
        assert_eq!(a.script_key().len(), 64);
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new("s", vec![], 0).validate().is_err());
        let mut r = ChatRequest::new("s", vec![ChatMessage::user("x")], 0);
        r.temperature = -1.0;
        assert!(r.validate().is_err());
        r.temperature = f64::NAN;
        assert!(r.validate().is_err());
    }

    #[test]
    fn semaphore_caps_concurrency() {
        let sem = Arc::new(Semaphore::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (sem, live, peak) = (sem.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = sem.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
