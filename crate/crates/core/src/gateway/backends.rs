//! Deterministic backends for tests and offline runs.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendReply, CompletionRequest, Usage};
use crate::prompt::PromptText;

type Responder = dyn Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync;

fn answer_json(answer: &str) -> String {
    serde_json::json!({ "answer": answer, "reasoning": "scripted" }).to_string()
}

/// Backend answering through a closure. Clones share the call counter.
#[derive(Clone)]
pub struct MockBackend {
    respond: Arc<Responder>,
    calls: Arc<AtomicU64>,
    context_limit: Option<u64>,
    usage: Option<Usage>,
}

impl MockBackend {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        MockBackend {
            respond: Arc::new(f),
            calls: Arc::new(AtomicU64::new(0)),
            context_limit: None,
            usage: None,
        }
    }

    /// Always returns `raw`.
    pub fn constant(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        Self::from_fn(move |_| Ok(raw.clone()))
    }

    /// Answers `{"answer": f(prompt), ...}`.
    pub fn answering<F>(f: F) -> Self
    where
        F: Fn(&PromptText) -> String + Send + Sync + 'static,
    {
        Self::from_fn(move |req| Ok(answer_json(&f(&req.prompt))))
    }

    pub fn with_context_limit(mut self, limit: u64) -> Self {
        self.context_limit = Some(limit);
        self
    }

    /// Reports a fixed usage instead of leaving it to estimation.
    pub fn with_usage(mut self, usage: Usage) -> Self {
        self.usage = Some(usage);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(req).map(|text| BackendReply {
            text,
            usage: self.usage,
        })
    }

    fn context_limit(&self) -> Option<u64> {
        self.context_limit
    }
}

/// Returns a fixed sequence of raw outputs, one per call, and keeps every
/// prompt it was sent. Clones share state.
#[derive(Clone, Default)]
pub struct ScriptedBackend {
    script: Arc<Mutex<VecDeque<String>>>,
    seen: Arc<Mutex<Vec<PromptText>>>,
}

impl ScriptedBackend {
    /// Scripts raw model outputs verbatim.
    pub fn raw<I, S>(outputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            script: Arc::new(Mutex::new(outputs.into_iter().map(Into::into).collect())),
            seen: Arc::default(),
        }
    }

    /// Scripts well-formed JSON answers naming the given classes.
    pub fn answers<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::raw(answers.into_iter().map(|a| answer_json(a.as_ref())))
    }

    pub fn prompts(&self) -> Vec<PromptText> {
        self.seen.lock().expect("scripted lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("scripted lock").len()
    }
}

impl Backend for ScriptedBackend {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError> {
        self.seen
            .lock()
            .expect("scripted lock")
            .push(req.prompt.clone());
        let next = self.script.lock().expect("scripted lock").pop_front();
        match next {
            Some(text) => Ok(BackendReply { text, usage: None }),
            None => Err(BackendError::Fatal {
                message: "script exhausted".into(),
            }),
        }
    }
}

/// One recorded model response, keyed by model and prompt hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub model_id: String,
    pub prompt_sha256: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Serves recorded responses; unknown prompts are a hard error.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    records: HashMap<(String, String), ReplayRecord>,
}

impl ReplayBackend {
    pub fn from_records(
        records: impl IntoIterator<Item = ReplayRecord>,
    ) -> Result<Self, BackendError> {
        let mut map: HashMap<(String, String), ReplayRecord> = HashMap::new();
        for r in records {
            let key = (r.model_id.clone(), r.prompt_sha256.clone());
            if let Some(existing) = map.get(&key) {
                if *existing != r {
                    return Err(BackendError::Fatal {
                        message: format!(
                            "conflicting replay fixtures for model `{}` prompt {}",
                            key.0, key.1
                        ),
                    });
                }
                continue;
            }
            map.insert(key, r);
        }
        Ok(ReplayBackend { records: map })
    }

    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| BackendError::Fatal {
            message: format!("cannot open replay fixtures {}: {e}", path.display()),
        })?;
        let mut records = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Fatal {
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ReplayRecord = serde_json::from_str(&line).map_err(|e| BackendError::Fatal {
                message: format!("{}:{}: {e}", path.display(), i + 1),
            })?;
            records.push(r);
        }
        Self::from_records(records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError> {
        let sha = req.prompt.sha256();
        match self.records.get(&(req.model_id.clone(), sha.clone())) {
            Some(r) => Ok(BackendReply {
                text: r.raw_text.clone(),
                usage: r.usage,
            }),
            None => Err(BackendError::FixtureMissing {
                model_id: req.model_id.clone(),
                prompt_sha256: sha,
            }),
        }
    }
}

/// Wraps a backend and records every successful response as a replay
/// fixture.
pub struct RecordingBackend<B> {
    inner: B,
    records: Mutex<BTreeMap<(String, String), ReplayRecord>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded fixtures sorted by (model, prompt hash).
    pub fn records(&self) -> Vec<ReplayRecord> {
        self.records
            .lock()
            .expect("recorder lock")
            .values()
            .cloned()
            .collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in self.records() {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError> {
        let reply = self.inner.send(req)?;
        let record = ReplayRecord {
            model_id: req.model_id.clone(),
            prompt_sha256: req.prompt.sha256(),
            raw_text: reply.text.clone(),
            usage: reply.usage,
        };
        self.records
            .lock()
            .expect("recorder lock")
            .insert((record.model_id.clone(), record.prompt_sha256.clone()), record);
        Ok(reply)
    }

    fn context_limit(&self) -> Option<u64> {
        self.inner.context_limit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Stage;

    fn req(model: &str, text: &str) -> CompletionRequest {
        CompletionRequest::new(
            model,
            PromptText {
                text: text.into(),
                class_names: vec!["abuse".into()],
                stage: Stage::L1,
            },
        )
    }

    #[test]
    fn scripted_returns_in_order() {
        let b = ScriptedBackend::answers(["abuse", "extortion", "sextortion"]);
        let outs: Vec<String> = (0..3).map(|_| b.send(&req("m", "p")).unwrap().text).collect();
        assert!(outs[0].contains("\"abuse\""));
        assert!(outs[1].contains("\"extortion\""));
        assert!(outs[2].contains("\"sextortion\""));
        assert!(b.send(&req("m", "p")).is_err());
        assert_eq!(b.prompts().len(), 4);
    }

    #[test]
    fn replay_is_keyed_by_model_and_prompt_hash() {
        let recorder = RecordingBackend::new(MockBackend::constant("A").with_usage(Usage::new(3, 1)));
        recorder.send(&req("m1", "hello")).unwrap();
        let replay = ReplayBackend::from_records(recorder.records()).unwrap();
        let r = replay.send(&req("m1", "hello")).unwrap();
        assert_eq!(r.text, "A");
        assert_eq!(r.usage, Some(Usage::new(3, 1)));
        assert_eq!(replay.send(&req("m1", "hello")).unwrap(), r);
        assert!(matches!(
            replay.send(&req("m2", "hello")),
            Err(BackendError::FixtureMissing { .. })
        ));
        assert!(replay.send(&req("m1", "hello!")).is_err());
    }

    #[test]
    fn replay_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        let recorder = RecordingBackend::new(MockBackend::constant("B"));
        recorder.send(&req("m", "one")).unwrap();
        recorder.send(&req("m", "two")).unwrap();
        recorder.write_jsonl(&path).unwrap();
        let replay = ReplayBackend::from_jsonl(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.send(&req("m", "two")).unwrap().usage, None);
    }

    #[test]
    fn conflicting_fixtures_rejected() {
        let a = ReplayRecord {
            model_id: "m".into(),
            prompt_sha256: "h".into(),
            raw_text: "x".into(),
            usage: None,
        };
        let mut b = a.clone();
        b.raw_text = "y".into();
        assert!(ReplayBackend::from_records([a.clone(), a.clone()]).is_ok());
        assert!(ReplayBackend::from_records([a, b]).is_err());
    }
}
