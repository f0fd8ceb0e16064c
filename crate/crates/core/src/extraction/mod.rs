//! Keyword extraction from transcripts: rule templates, POS tagging and an
//! LLM prompt, plus scoring against gold annotations.

mod llm;
mod normalize;
mod pos;
mod rules;
mod score;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use llm::{
    llm_extract, parse_keyword_response, CacheEntry, ChatMessage, ChatRequest, ChatTransport, HttpTransport, LlmConfig,
    LlmExtractor, ResponseCache, DEFAULT_PROMPT,
};
pub use normalize::{normalize_keyword, normalize_keyword_with, strip_plural, Vocabulary};
pub use pos::{pos_based_extract, PosTagger, Tag, DEFAULT_NOUN_CATEGORIES};
pub use rules::{rule_based_extract, RulePatterns};
pub use score::{score_extraction, ExtractionScore, TranscriptCounts};

use crate::corpus::{to_json_lines, Transcript, TranscriptKey};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("pattern file line {line}: {message}")]
    Pattern { line: usize, message: String },
    #[error("LLM transport failed: {0}")]
    Transport(String),
    #[error("unparseable LLM response ({reason}): {raw:?}")]
    Unparseable { raw: String, reason: String },
    #[error("LLM cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("prediction for unknown transcript {}/{}", .0.signal_id, .0.participant_id)]
    UnknownTranscript(TranscriptKey),
    #[error("no prediction for gold transcript {}/{}", .0.signal_id, .0.participant_id)]
    MissingPrediction(TranscriptKey),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordSource {
    Rule,
    Pos,
    Llm,
    Gold,
}

/// An extracted term. Rule and POS keywords are single tokens; LLM and
/// gold keywords may be phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub surface: String,
    pub normalized: String,
    pub source: KeywordSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMethod {
    Rule,
    Pos,
    Llm,
}

impl std::str::FromStr for ExtractionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rule" => Ok(Self::Rule),
            "pos" => Ok(Self::Pos),
            "llm" => Ok(Self::Llm),
            other => Err(format!("unknown extraction method {other:?} (rule, pos, llm)")),
        }
    }
}

impl ExtractionMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rule => "rule",
            Self::Pos => "pos",
            Self::Llm => "llm",
        }
    }
}

pub enum Extractor {
    Rule(RulePatterns),
    Pos(PosTagger),
    Llm(LlmExtractor),
}

impl Extractor {
    pub fn method(&self) -> ExtractionMethod {
        match self {
            Self::Rule(_) => ExtractionMethod::Rule,
            Self::Pos(_) => ExtractionMethod::Pos,
            Self::Llm(_) => ExtractionMethod::Llm,
        }
    }

    pub fn extract(&self, text: &str) -> Result<Vec<Keyword>, ExtractionError> {
        match self {
            Self::Rule(p) => Ok(rule_based_extract(text, p)),
            Self::Pos(t) => Ok(pos_based_extract(text, t)),
            Self::Llm(l) => llm_extract(text, l),
        }
    }
}

/// Keywords for one transcript record, in the `keywords.jsonl` stage file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRecord {
    pub signal_id: String,
    pub participant_id: String,
    pub method: ExtractionMethod,
    pub keywords: Vec<Keyword>,
}

impl KeywordRecord {
    pub fn key(&self) -> TranscriptKey {
        TranscriptKey::new(&self.signal_id, &self.participant_id)
    }
}

/// Extracts keywords for every transcript, preserving order. Rule and POS
/// extraction run in parallel; LLM requests are issued one at a time.
pub fn extract_transcripts(
    transcripts: &[Transcript],
    extractor: &Extractor,
) -> Result<Vec<KeywordRecord>, ExtractionError> {
    let method = extractor.method();
    let run = |t: &Transcript| {
        extractor.extract(&t.text).map(|keywords| KeywordRecord {
            signal_id: t.signal_id.clone(),
            participant_id: t.participant_id.clone(),
            method,
            keywords,
        })
    };
    match extractor {
        Extractor::Llm(_) => transcripts.iter().map(run).collect(),
        _ => transcripts.par_iter().map(run).collect(),
    }
}

pub fn write_keyword_records(path: &Path, records: &[KeywordRecord]) -> std::io::Result<()> {
    crate::util::write_atomic(path, to_json_lines(records).as_bytes())
}

pub fn read_keyword_records(path: &Path) -> Result<Vec<KeywordRecord>, ExtractionError> {
    let file_err = |message: String| ExtractionError::File {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| file_err(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Merges records sharing a transcript key into one normalized keyword set.
pub fn predictions_by_transcript(records: &[KeywordRecord]) -> BTreeMap<TranscriptKey, BTreeSet<String>> {
    let mut out: BTreeMap<TranscriptKey, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        out.entry(r.key())
            .or_default()
            .extend(r.keywords.iter().map(|k| k.normalized.clone()));
    }
    out
}

/// Re-derives every normalized form from its surface with a vocabulary
/// guiding lemmatization. Keywords that normalize to nothing are dropped.
pub fn apply_vocabulary(records: &mut [KeywordRecord], vocabulary: &dyn Vocabulary) {
    for record in records {
        for keyword in &mut record.keywords {
            keyword.normalized = normalize_keyword_with(&keyword.surface, Some(vocabulary));
        }
        record.keywords.retain(|k| !k.normalized.is_empty());
    }
}

/// Keyword occurrences per signal, concatenating every transcript of the
/// signal. Order within a signal follows the records.
pub fn keywords_by_signal(records: &[KeywordRecord]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in records {
        out.entry(r.signal_id.clone())
            .or_default()
            .extend(r.keywords.iter().map(|k| k.normalized.clone()));
    }
    out
}
