//! Prompt-based keyword extraction against a chat-completion endpoint, with
//! a content-addressed response cache.
//!
//! A cached (model, prompt, text) triple is answered from disk without
//! touching the transport, so warm-cache runs are offline and deterministic.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{normalize_keyword, ExtractionError, Keyword, KeywordSource};
use crate::util::{sha256_hex, write_atomic};

/// Default system prompt.
pub const DEFAULT_PROMPT: &str = "Extract keywords including sensational, emotional, metaphoric, and usage examples from the corresponding texts below.";

/// Longest item (in words) accepted from a plain-text response.
const MAX_PHRASE_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub cache_dir: PathBuf,
    /// Environment variable holding the API key. Unset or empty means no
    /// Authorization header.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            prompt: DEFAULT_PROMPT.into(),
            temperature: 0.0,
            cache_dir: PathBuf::from("llm-cache"),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(config: &LlmConfig, text: &str) -> Self {
        Self {
            model: config.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: config.prompt.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: text.to_string(),
                },
            ],
            temperature: config.temperature,
        }
    }
}

/// Sends a chat request and returns the first choice's message text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, endpoint: &str, request: &ChatRequest) -> Result<String, ExtractionError>;
}

/// Blocking HTTP transport for OpenAI-compatible endpoints.
pub struct HttpTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            api_key: api_key.filter(|k| !k.is_empty()),
        }
    }

    /// Reads the key from the variable named in the config.
    pub fn from_config(config: &LlmConfig) -> Self {
        let key = std::env::var(&config.api_key_env).ok();
        Self::new(key, Duration::from_secs(config.timeout_secs))
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, endpoint: &str, request: &ChatRequest) -> Result<String, ExtractionError> {
        let mut req = self.agent.post(endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(request)
            .map_err(|e| ExtractionError::Transport(e.to_string()))?;
        let body: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ExtractionError::Transport(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| ExtractionError::Unparseable {
                raw: body.to_string(),
                reason: "missing choices[0].message.content".into(),
            })
    }
}

/// On-disk cache record, one JSON file per key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub model: String,
    pub prompt: String,
    pub text: String,
    pub raw_response: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(model: &str, prompt: &str, text: &str) -> String {
        let mut bytes = Vec::with_capacity(model.len() + prompt.len() + text.len() + 2);
        for part in [model, prompt, text] {
            bytes.extend_from_slice(part.as_bytes());
            bytes.push(0);
        }
        sha256_hex(&bytes)
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, ExtractionError> {
        let path = self.path(key);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| ExtractionError::Cache {
                    path,
                    message: e.to_string(),
                }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ExtractionError::Cache {
                path,
                message: e.to_string(),
            }),
        }
    }

    /// Atomic write; concurrent writers of one key store identical content.
    pub fn put(&self, key: &str, entry: &CacheEntry) -> Result<(), ExtractionError> {
        let path = self.path(key);
        let mut bytes = serde_json::to_vec_pretty(entry).expect("serializable cache entry");
        bytes.push(b'\n');
        write_atomic(&path, &bytes).map_err(|e| ExtractionError::Cache {
            path,
            message: e.to_string(),
        })
    }
}

/// Splits a model reply into keyword surfaces.
///
/// Accepts a JSON array of strings, a JSON object whose values are strings
/// or string arrays, or free text with one item per line and/or comma
/// separated items. Bullets, numbering and short `Label:` prefixes are
/// removed.
pub fn parse_keyword_response(raw: &str) -> Result<Vec<String>, ExtractionError> {
    let unparseable = |reason: &str| ExtractionError::Unparseable {
        raw: raw.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(unparseable("empty response"));
    }
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        let value: serde_json::Value =
            serde_json::from_str(trimmed).map_err(|e| unparseable(&format!("invalid JSON: {e}")))?;
        let mut out = Vec::new();
        collect_json_strings(&value, &mut out).map_err(|m| unparseable(&m))?;
        return Ok(out
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect());
    }

    let mut out = Vec::new();
    for line in trimmed.lines() {
        let mut line = strip_list_marker(line.trim());
        if let Some((label, rest)) = line.split_once(':') {
            if label.split_whitespace().count() <= 4 {
                line = rest.trim();
            }
        }
        for item in line.split([',', ';']) {
            let item = item
                .trim()
                .trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '`')
                .trim();
            let item = item.strip_prefix("and ").unwrap_or(item).trim();
            let lower = item.to_lowercase();
            if item.is_empty() || matches!(lower.trim_end_matches('.'), "none" | "n/a" | "na") {
                continue;
            }
            if item.split_whitespace().count() > MAX_PHRASE_WORDS {
                return Err(unparseable("item is too long to be a keyword"));
            }
            out.push(item.to_string());
        }
    }
    Ok(out)
}

fn collect_json_strings(value: &serde_json::Value, out: &mut Vec<String>) -> Result<(), String> {
    match value {
        serde_json::Value::String(s) => out.push(s.clone()),
        serde_json::Value::Array(items) => {
            for item in items {
                collect_json_strings(item, out)?;
            }
        }
        serde_json::Value::Object(map) => {
            for v in map.values() {
                collect_json_strings(v, out)?;
            }
        }
        serde_json::Value::Null => {}
        other => return Err(format!("unexpected JSON value {other}")),
    }
    Ok(())
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start_matches(['-', '*', '•', '–']).trim_start();
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return rest.trim_start();
        }
    }
    line
}

/// Extracts keywords with an LLM, consulting the cache first.
pub struct LlmExtractor {
    config: LlmConfig,
    cache: ResponseCache,
    transport: Box<dyn ChatTransport>,
}

impl LlmExtractor {
    pub fn new(config: LlmConfig, transport: Box<dyn ChatTransport>) -> Self {
        let cache = ResponseCache::new(config.cache_dir.clone());
        Self {
            config,
            cache,
            transport,
        }
    }

    /// Extractor using the HTTP transport.
    pub fn http(config: LlmConfig) -> Self {
        let transport = HttpTransport::from_config(&config);
        Self::new(config, Box::new(transport))
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn into_transport(self) -> Box<dyn ChatTransport> {
        self.transport
    }

    pub fn extract(&self, text: &str) -> Result<Vec<Keyword>, ExtractionError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let key = ResponseCache::key(&self.config.model, &self.config.prompt, text);
        let surfaces = match self.cache.get(&key)? {
            Some(entry) => entry.keywords,
            None => {
                let request = ChatRequest::new(&self.config, text);
                let raw = self.transport.complete(&self.config.endpoint, &request)?;
                let keywords = parse_keyword_response(&raw)?;
                self.cache.put(
                    &key,
                    &CacheEntry {
                        model: self.config.model.clone(),
                        prompt: self.config.prompt.clone(),
                        text: text.to_string(),
                        raw_response: raw,
                        keywords: keywords.clone(),
                    },
                )?;
                keywords
            }
        };
        Ok(surfaces
            .into_iter()
            .filter_map(|surface| {
                let normalized = normalize_keyword(&surface);
                (!normalized.is_empty()).then_some(Keyword {
                    surface,
                    normalized,
                    source: KeywordSource::Llm,
                })
            })
            .collect())
    }
}

/// Runs the LLM extractor over one transcript text.
pub fn llm_extract(text: &str, extractor: &LlmExtractor) -> Result<Vec<Keyword>, ExtractionError> {
    extractor.extract(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Canned {
        reply: String,
        calls: Arc<AtomicUsize>,
    }

    impl ChatTransport for Canned {
        fn complete(&self, _: &str, request: &ChatRequest) -> Result<String, ExtractionError> {
            assert_eq!(request.messages[0].role, "system");
            assert_eq!(request.messages[1].role, "user");
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
    }

    struct Offline;

    impl ChatTransport for Offline {
        fn complete(&self, _: &str, _: &ChatRequest) -> Result<String, ExtractionError> {
            Err(ExtractionError::Transport("network disabled".into()))
        }
    }

    const EXAMPLE: &str =
        "it feels fairly soft, like sliding your hand over sand. I do not feel calm. Honestly, it's annoying.";
    const REPLY: &str = "Sensational: soft\nMetaphoric: sand\nEmotional: not, calm, annoying";

    fn config(dir: &Path) -> LlmConfig {
        LlmConfig {
            cache_dir: dir.to_path_buf(),
            ..LlmConfig::default()
        }
    }

    fn normalized(kws: &[Keyword]) -> Vec<&str> {
        kws.iter().map(|k| k.normalized.as_str()).collect()
    }

    #[test]
    fn default_prompt_is_used() {
        assert_eq!(LlmConfig::default().prompt, DEFAULT_PROMPT);
        let req = ChatRequest::new(&LlmConfig::default(), "hi");
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(json["messages"][0]["content"], DEFAULT_PROMPT);
        assert_eq!(json["messages"][1]["content"], "hi");
        assert_eq!(json["temperature"], 0.0);
    }

    #[test]
    fn extracts_and_then_replays_from_cache() {
        let dir = tempfile::TempDir::new().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let live = LlmExtractor::new(
            config(dir.path()),
            Box::new(Canned {
                reply: REPLY.into(),
                calls: calls.clone(),
            }),
        );
        let first = live.extract(EXAMPLE).unwrap();
        for w in ["soft", "sand", "not", "calm", "annoying"] {
            assert!(normalized(&first).contains(&w), "{w}");
        }
        assert!(first.iter().all(|k| k.source == KeywordSource::Llm));
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let offline = LlmExtractor::new(config(dir.path()), Box::new(Offline));
        assert_eq!(offline.extract(EXAMPLE).unwrap(), first);

        let key = ResponseCache::key("gpt-3.5-turbo", DEFAULT_PROMPT, EXAMPLE);
        let entry = ResponseCache::new(dir.path()).get(&key).unwrap().unwrap();
        assert_eq!(entry.raw_response, REPLY);
    }

    #[test]
    fn cold_cache_without_network_fails() {
        let dir = tempfile::TempDir::new().unwrap();
        let offline = LlmExtractor::new(config(dir.path()), Box::new(Offline));
        assert!(matches!(
            offline.extract("it buzzes"),
            Err(ExtractionError::Transport(_))
        ));
    }

    #[test]
    fn empty_transcript_skips_transport() {
        let dir = tempfile::TempDir::new().unwrap();
        let offline = LlmExtractor::new(config(dir.path()), Box::new(Offline));
        assert!(offline.extract("  \n").unwrap().is_empty());
    }

    #[test]
    fn cache_key_depends_on_each_part() {
        let k = ResponseCache::key("m", "p", "t");
        assert_ne!(k, ResponseCache::key("m2", "p", "t"));
        assert_ne!(k, ResponseCache::key("m", "p2", "t"));
        assert_ne!(k, ResponseCache::key("m", "p", "t2"));
        assert_ne!(ResponseCache::key("ab", "c", "t"), ResponseCache::key("a", "bc", "t"));
    }

    #[test]
    fn response_formats() {
        assert_eq!(
            parse_keyword_response("[\"smooth\", \"water\"]").unwrap(),
            ["smooth", "water"]
        );
        assert_eq!(
            parse_keyword_response("{\"sensational\": [\"smooth\"], \"emotional\": \"boring\"}").unwrap(),
            ["boring", "smooth"]
        );
        assert_eq!(
            parse_keyword_response("1. smooth\n2) water\n- not excited\n* boring").unwrap(),
            ["smooth", "water", "not excited", "boring"]
        );
        assert_eq!(
            parse_keyword_response("Keywords:\nSensational: smooth, soft and calm\nUsage examples: none").unwrap(),
            ["smooth", "soft and calm"]
        );
        assert!(parse_keyword_response("Usage examples: N/A").unwrap().is_empty());
    }

    #[test]
    fn unparseable_responses_carry_raw_text() {
        for raw in [
            "",
            "   ",
            "[1, 2",
            "[1, 2]",
            "I am sorry but I cannot extract keywords from this text because it is empty",
        ] {
            match parse_keyword_response(raw) {
                Err(ExtractionError::Unparseable { raw: r, .. }) => assert_eq!(r, raw),
                other => panic!("{raw:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn unparseable_reply_is_not_cached() {
        let dir = tempfile::TempDir::new().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let ex = LlmExtractor::new(
            config(dir.path()),
            Box::new(Canned {
                reply: "".into(),
                calls,
            }),
        );
        assert!(matches!(ex.extract("soft"), Err(ExtractionError::Unparseable { .. })));
        assert_eq!(std::fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
    }
}
