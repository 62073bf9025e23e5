//! External annotation backends for change purposes.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::purpose::{rule_purposes_with_context, PurposeLabel};
use super::PurposeSource;
use crate::transition::OutputKind;

pub const SYSTEM_PROMPT: &str = include_str!("../../prompts/purpose_system.v1.txt");
pub const USER_PROMPT: &str = include_str!("../../prompts/purpose_user.v1.txt");

pub const URL_ENV: &str = "NOTEFLOW_BACKEND_URL";
pub const TOKEN_ENV: &str = "NOTEFLOW_BACKEND_TOKEN";

/// sha256 over both prompt templates; stored with every backend label.
pub fn prompt_hash() -> String {
    let mut h = Sha256::new();
    h.update(SYSTEM_PROMPT.as_bytes());
    h.update([0u8]);
    h.update(USER_PROMPT.as_bytes());
    hex::encode(h.finalize())
}

pub fn render_user_prompt(before: &str, after: &str, previous_output: OutputKind) -> String {
    USER_PROMPT
        .replace("{{previous_output}}", previous_output.as_str())
        .replace("{{before}}", before)
        .replace("{{after}}", after)
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("{} is not set", TOKEN_ENV)]
    MissingToken,
    #[error("{} is not set", URL_ENV)]
    MissingUrl,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend answered with status {status}")]
    Status { status: u16 },
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip)]
    pub token: String,
    pub timeout_secs: u64,
}

impl BackendConfig {
    /// Reads URL and token from the environment. Fails before any network use.
    pub fn from_env(model: &str, timeout_secs: u64) -> Result<BackendConfig, BackendError> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()).ok_or(BackendError::MissingToken)?;
        let base_url = std::env::var(URL_ENV).ok().filter(|u| !u.is_empty()).ok_or(BackendError::MissingUrl)?;
        Ok(BackendConfig { base_url, model: model.to_string(), token, timeout_secs })
    }
}

pub trait AnnotationClient: Sync {
    /// One chat completion; returns the raw assistant text.
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError>;
}

/// OpenAI-compatible chat completions client.
pub struct HttpClient {
    agent: ureq::Agent,
    config: BackendConfig,
}

impl HttpClient {
    pub fn new(config: BackendConfig) -> HttpClient {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient { agent, config }
    }
}

impl AnnotationClient for HttpClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.config.token))
            .send_json(&body)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 || status == 408 {
            return Err(BackendError::Unavailable(format!("status {status}")));
        }
        if status >= 400 {
            return Err(BackendError::Status { status });
        }
        let value: Value = resp.body_mut().read_json().map_err(|e| BackendError::Malformed(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("no choices[0].message.content".into()))
    }
}

/// Serves responses from an archive and forwards misses to the inner client.
pub struct CachedClient<C> {
    inner: Option<C>,
    entries: Mutex<HashMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivedResponse {
    pub key: String,
    pub transition_id: String,
    pub prompt_hash: String,
    pub response: String,
}

pub fn request_key(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    hex::encode(h.finalize())
}

impl<C: AnnotationClient> CachedClient<C> {
    pub fn new(inner: Option<C>) -> CachedClient<C> {
        CachedClient { inner, entries: Mutex::new(HashMap::new()) }
    }

    pub fn load(inner: Option<C>, archive: &Path) -> std::io::Result<CachedClient<C>> {
        let client = CachedClient::new(inner);
        let file = std::fs::File::open(archive)?;
        let mut entries = client.entries.lock().expect("poisoned");
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if let Ok(entry) = serde_json::from_str::<ArchivedResponse>(&line) {
                entries.insert(entry.key, entry.response);
            }
        }
        drop(entries);
        Ok(client)
    }
}

impl<C: AnnotationClient> AnnotationClient for CachedClient<C> {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError> {
        let key = request_key(system, user);
        if let Some(hit) = self.entries.lock().expect("poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let inner = self.inner.as_ref().ok_or_else(|| BackendError::Unavailable("cache miss, no live client".into()))?;
        let response = inner.complete(system, user)?;
        self.entries.lock().expect("poisoned").insert(key, response.clone());
        Ok(response)
    }
}

impl AnnotationClient for Box<dyn AnnotationClient> {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError> {
        (**self).complete(system, user)
    }
}

pub fn write_archive(path: &Path, entries: &[ArchivedResponse]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        writeln!(out, "{}", serde_json::to_string(e).expect("serializable"))?;
    }
    out.flush()
}

/// Labels from a backend answer: a JSON object with `labels`, a JSON array,
/// or a comma/newline separated list. `None` when nothing usable is found.
pub fn parse_labels(response: &str) -> Option<BTreeSet<PurposeLabel>> {
    let trimmed = response.trim().trim_start_matches("```json").trim_start_matches("```").trim_end_matches("```").trim();
    let from_json = serde_json::from_str::<Value>(trimmed).ok().and_then(|v| {
        let list = match &v {
            Value::Array(items) => items.clone(),
            Value::Object(map) => map.get("labels").and_then(Value::as_array).cloned()?,
            _ => return None,
        };
        Some(list.iter().filter_map(Value::as_str).filter_map(PurposeLabel::parse_lenient).collect::<BTreeSet<_>>())
    });
    let labels = from_json.unwrap_or_else(|| {
        trimmed.split([',', '\n', ';']).filter_map(PurposeLabel::parse_lenient).collect()
    });
    (!labels.is_empty()).then_some(labels)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendOutcome {
    pub labels: BTreeSet<PurposeLabel>,
    pub source: PurposeSource,
    pub raw_responses: Vec<String>,
    pub flags: Vec<String>,
    /// Whether the backend's raw labels matched the rules on the mechanical labels.
    pub mechanical_agreement: Option<bool>,
}

pub const FLAG_BACKEND_UNAVAILABLE: &str = "backend_unavailable";
pub const FLAG_BACKEND_UNPARSABLE: &str = "backend_unparsable";
pub const FLAG_NO_CHANGE_OVERRIDDEN: &str = "no_change_overridden";
pub const FLAG_MECHANICAL_DISAGREEMENT: &str = "mechanical_disagreement";

/// Ask the backend, retrying once on an unparsable answer, and reconcile
/// against the rules. String equality decides `no_change` regardless of
/// what the backend says.
pub fn backend_purposes(
    before: &str,
    after: &str,
    previous_output: OutputKind,
    client: &dyn AnnotationClient,
) -> BackendOutcome {
    let rules = rule_purposes_with_context(before, after, Some(previous_output));
    let user = render_user_prompt(before, after, previous_output);
    let mut raw_responses = Vec::new();
    let mut parsed = None;
    let mut failure = None;
    for _ in 0..2 {
        match client.complete(SYSTEM_PROMPT, &user) {
            Ok(text) => {
                parsed = parse_labels(&text);
                raw_responses.push(text);
                if parsed.is_some() {
                    break;
                }
                failure = Some(FLAG_BACKEND_UNPARSABLE);
            }
            Err(_) => {
                failure = Some(FLAG_BACKEND_UNAVAILABLE);
                break;
            }
        }
    }
    let Some(backend) = parsed else {
        let mut flags = rules.flags;
        flags.extend(failure.map(str::to_string));
        return BackendOutcome { labels: rules.labels, source: PurposeSource::Rule, raw_responses, flags, mechanical_agreement: None };
    };

    let mechanical = |set: &BTreeSet<PurposeLabel>| set.iter().filter(|l| l.is_mechanical()).cloned().collect::<BTreeSet<_>>();
    let agreement = mechanical(&rules.labels) == mechanical(&backend);
    let mut flags = Vec::new();
    if !agreement {
        flags.push(FLAG_MECHANICAL_DISAGREEMENT.to_string());
    }
    let identical = before == after;
    let mut labels = backend.clone();
    if identical {
        labels = BTreeSet::from([PurposeLabel::NoChange]);
    } else {
        labels.remove(&PurposeLabel::NoChange);
        if labels.is_empty() {
            labels = rules.labels.clone();
        }
    }
    let source = if labels == backend {
        PurposeSource::Backend
    } else {
        flags.push(FLAG_NO_CHANGE_OVERRIDDEN.to_string());
        PurposeSource::Reconciled
    };
    BackendOutcome { labels, source, raw_responses, flags, mechanical_agreement: Some(agreement) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        answers: Vec<Result<String, ()>>,
        calls: AtomicUsize,
    }

    impl AnnotationClient for Scripted {
        fn complete(&self, _system: &str, _user: &str) -> Result<String, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            match self.answers.get(i).cloned().unwrap_or(Err(())) {
                Ok(s) => Ok(s),
                Err(()) => Err(BackendError::Unavailable("down".into())),
            }
        }
    }

    fn scripted(answers: Vec<Result<&str, ()>>) -> Scripted {
        Scripted { answers: answers.into_iter().map(|a| a.map(str::to_string)).collect(), calls: AtomicUsize::new(0) }
    }

    #[test]
    fn prompts_are_hashed_and_rendered() {
        assert_eq!(prompt_hash().len(), 64);
        for label in PurposeLabel::CORE {
            assert!(SYSTEM_PROMPT.contains(&format!("{label}:")), "{label}");
        }
        let user = render_user_prompt("a", "b", OutputKind::Error);
        assert!(user.contains("error") && !user.contains("{{"));
    }

    #[test]
    fn parses_several_formats() {
        let want = BTreeSet::from([PurposeLabel::Fix, PurposeLabel::EditCode]);
        assert_eq!(parse_labels(r#"{"labels": ["fix", "edit code"]}"#), Some(want.clone()));
        assert_eq!(parse_labels("```json\n[\"fix\",\"edit_code\"]\n```"), Some(want.clone()));
        assert_eq!(parse_labels("fix, Edit-Code"), Some(want));
        assert_eq!(parse_labels("I cannot tell!"), None);
        assert_eq!(parse_labels(""), None);
    }

    #[test]
    fn string_equality_wins() {
        let client = scripted(vec![Ok(r#"{"labels":["improve_readability"]}"#)]);
        let out = backend_purposes("x=1", "x=1", OutputKind::Empty, &client);
        assert_eq!(out.labels, BTreeSet::from([PurposeLabel::NoChange]));
        assert_eq!(out.source, PurposeSource::Reconciled);
        assert_eq!(out.mechanical_agreement, Some(false));

        let client = scripted(vec![Ok(r#"["no_change"]"#)]);
        let out = backend_purposes("x=1", "x = 1", OutputKind::Empty, &client);
        assert!(!out.labels.contains(&PurposeLabel::NoChange));
        assert_eq!(out.source, PurposeSource::Reconciled);
    }

    #[test]
    fn falls_back_to_rules() {
        let out = backend_purposes("x=1\ny=2", "x=1", OutputKind::Empty, &scripted(vec![Err(())]));
        assert_eq!(out.source, PurposeSource::Rule);
        assert_eq!(out.labels, BTreeSet::from([PurposeLabel::CleanCode]));
        assert!(out.flags.contains(&FLAG_BACKEND_UNAVAILABLE.to_string()));

        let client = scripted(vec![Ok("???"), Ok("!!!"), Ok(r#"["fix"]"#)]);
        let out = backend_purposes("x=1", "x=2", OutputKind::Empty, &client);
        assert_eq!(client.calls.load(Ordering::SeqCst), 2);
        assert_eq!(out.source, PurposeSource::Rule);
        assert_eq!(out.raw_responses.len(), 2);

        let client = scripted(vec![Ok("???"), Ok(r#"["remove debugging code"]"#)]);
        let out = backend_purposes("x=1\nprint(x)", "x=1", OutputKind::Empty, &client);
        assert_eq!(out.source, PurposeSource::Backend);
        assert_eq!(out.labels, BTreeSet::from([PurposeLabel::Other("remove_debugging_code".into())]));
        assert!(out.flags.contains(&FLAG_MECHANICAL_DISAGREEMENT.to_string()));
    }

    #[test]
    fn cache_serves_archived_answers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        let user = render_user_prompt("a", "b", OutputKind::Empty);
        let entry = ArchivedResponse {
            key: request_key(SYSTEM_PROMPT, &user),
            transition_id: "t1".into(),
            prompt_hash: prompt_hash(),
            response: r#"["edit_code"]"#.into(),
        };
        write_archive(&path, &[entry]).unwrap();
        let cached = CachedClient::<HttpClient>::load(None, &path).unwrap();
        let out = backend_purposes("a", "b", OutputKind::Empty, &cached);
        assert_eq!(out.source, PurposeSource::Backend);
        let miss = backend_purposes("a", "c", OutputKind::Empty, &cached);
        assert_eq!(miss.source, PurposeSource::Rule);
    }
}
