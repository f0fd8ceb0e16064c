//! Regex-template keyword extraction driven by an editable pattern file.

use std::collections::HashSet;

use regex::{Regex, RegexBuilder};

use super::{normalize_keyword, ExtractionError, Keyword, KeywordSource};

const DEFAULT_PATTERNS: &str = include_str!("../../data/default_patterns.txt");

#[derive(Debug, Clone)]
enum Slot {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone)]
struct Rule {
    regex: Regex,
    slot: Slot,
}

/// A compiled pattern file.
#[derive(Debug, Clone)]
pub struct RulePatterns {
    rules: Vec<Rule>,
    stop_words: HashSet<String>,
}

impl Default for RulePatterns {
    fn default() -> Self {
        Self::parse(DEFAULT_PATTERNS).expect("shipped pattern file is valid")
    }
}

impl RulePatterns {
    /// Text of the shipped default pattern file.
    pub fn default_source() -> &'static str {
        DEFAULT_PATTERNS
    }

    pub fn parse(text: &str) -> Result<Self, ExtractionError> {
        let mut rules = Vec::new();
        let mut stop_words = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| ExtractionError::Pattern { line: idx + 1, message };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(words) = line.strip_prefix("stop:") {
                stop_words.extend(words.split_whitespace().map(|w| w.to_lowercase()));
                continue;
            }
            let (pattern, slot) = line
                .rsplit_once("->")
                .or_else(|| line.rsplit_once('→'))
                .ok_or_else(|| err("expected '<regex> -> <slot>'".into()))?;
            let pattern = pattern.trim();
            let slot = slot.trim();
            if pattern.is_empty() || slot.is_empty() {
                return Err(err("empty regex or slot".into()));
            }
            let regex = RegexBuilder::new(pattern)
                .case_insensitive(true)
                .build()
                .map_err(|e| err(e.to_string()))?;
            let slot = match slot.parse::<usize>() {
                Ok(i) if i == 0 || i >= regex.captures_len() => {
                    return Err(err(format!("capture group {i} does not exist")))
                }
                Ok(i) => Slot::Index(i),
                Err(_) if regex.capture_names().flatten().any(|n| n == slot) => Slot::Name(slot.to_string()),
                Err(_) => return Err(err(format!("no capture group named {slot:?}"))),
            };
            rules.push(Rule { regex, slot });
        }
        if rules.is_empty() {
            return Err(ExtractionError::Pattern {
                line: 0,
                message: "pattern file contains no rules".into(),
            });
        }
        Ok(Self { rules, stop_words })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Single-token keywords in text order. A span captured by several
    /// rules is emitted once; repeated words at different positions are all
    /// kept.
    pub fn extract(&self, text: &str) -> Vec<Keyword> {
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for rule in &self.rules {
            for caps in rule.regex.captures_iter(text) {
                let m = match &rule.slot {
                    Slot::Index(i) => caps.get(*i),
                    Slot::Name(n) => caps.name(n),
                };
                if let Some(m) = m {
                    spans.push((m.start(), m.end()));
                }
            }
        }
        spans.sort_unstable();
        spans.dedup();

        let mut out = Vec::new();
        for (start, end) in spans {
            for token in text[start..end].split_whitespace() {
                let normalized = normalize_keyword(token);
                if normalized.is_empty() || self.stop_words.contains(&normalized) {
                    continue;
                }
                out.push(Keyword {
                    surface: token.to_string(),
                    normalized,
                    source: KeywordSource::Rule,
                });
            }
        }
        out
    }
}

/// Runs the rule extractor over one transcript text.
pub fn rule_based_extract(text: &str, patterns: &RulePatterns) -> Vec<Keyword> {
    patterns.extract(text)
}
