//! Lexicon-backed part-of-speech tagging with suffix fallbacks.

use std::collections::{BTreeSet, HashMap};

use super::{normalize_keyword, ExtractionError, Keyword, KeywordSource};

const EMBEDDED_LEXICON: &str = include_str!("../../data/pos_lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    Adj,
    Adv,
    Verb,
    Aux,
    Det,
    Pron,
    Prep,
    Conj,
    Part,
    Num,
    Intj,
    Noun(String),
}

impl Tag {
    fn parse(s: &str) -> Option<Tag> {
        Some(match s {
            "ADJ" => Tag::Adj,
            "ADV" => Tag::Adv,
            "VERB" => Tag::Verb,
            "AUX" => Tag::Aux,
            "DET" => Tag::Det,
            "PRON" => Tag::Pron,
            "PREP" => Tag::Prep,
            "CONJ" => Tag::Conj,
            "PART" => Tag::Part,
            "NUM" => Tag::Num,
            "INTJ" => Tag::Intj,
            "NOUN" => Tag::Noun("other".into()),
            _ => Tag::Noun(s.strip_prefix("NOUN:")?.to_string()),
        })
    }
}

/// Noun categories extracted by default alongside adjectives.
pub const DEFAULT_NOUN_CATEGORIES: &[&str] = &["sensation", "material", "nature", "animal", "object"];

#[derive(Debug, Clone)]
pub struct PosTagger {
    lexicon: HashMap<String, Tag>,
    noun_categories: BTreeSet<String>,
}

impl Default for PosTagger {
    fn default() -> Self {
        Self::from_lexicon(EMBEDDED_LEXICON, DEFAULT_NOUN_CATEGORIES.iter().map(|s| s.to_string()))
            .expect("embedded lexicon is valid")
    }
}

impl PosTagger {
    /// Text of the embedded lexicon (`word<TAB>TAG` rows).
    pub fn embedded_lexicon() -> &'static str {
        EMBEDDED_LEXICON
    }

    pub fn from_lexicon(
        text: &str,
        noun_categories: impl IntoIterator<Item = String>,
    ) -> Result<Self, ExtractionError> {
        let mut lexicon = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or_else(|| ExtractionError::Pattern {
                line: idx + 1,
                message: "expected word<TAB>tag".into(),
            })?;
            let tag = Tag::parse(tag.trim()).ok_or_else(|| ExtractionError::Pattern {
                line: idx + 1,
                message: format!("unknown tag {tag:?}"),
            })?;
            lexicon.insert(word.trim().to_lowercase(), tag);
        }
        Ok(Self {
            lexicon,
            noun_categories: noun_categories.into_iter().collect(),
        })
    }

    pub fn with_noun_categories(mut self, categories: impl IntoIterator<Item = String>) -> Self {
        self.noun_categories = categories.into_iter().collect();
        self
    }

    pub fn tag(&self, token: &str) -> Tag {
        let token = token.to_lowercase();
        if let Some(tag) = self.lexicon.get(&token) {
            return tag.clone();
        }
        guess_by_suffix(&token)
    }

    pub fn extract(&self, text: &str) -> Vec<Keyword> {
        tokenize(text)
            .filter(|token| match self.tag(token) {
                Tag::Adj => true,
                Tag::Noun(category) => self.noun_categories.contains(&category),
                _ => false,
            })
            .filter_map(|token| {
                let normalized = normalize_keyword(token);
                (!normalized.is_empty()).then(|| Keyword {
                    surface: token.to_string(),
                    normalized,
                    source: KeywordSource::Pos,
                })
            })
            .collect()
    }
}

fn guess_by_suffix(token: &str) -> Tag {
    if token.chars().any(|c| c.is_ascii_digit()) {
        return Tag::Num;
    }
    let n = token.len();
    const ADJ: &[&str] = &[
        "ous", "ful", "ive", "able", "ible", "ic", "ical", "less", "ish", "ary", "ant", "ent",
    ];
    if n > 4 && ADJ.iter().any(|s| token.ends_with(s)) {
        return Tag::Adj;
    }
    if n > 4 && token.ends_with("ly") {
        return Tag::Adv;
    }
    if n > 4 && token.ends_with('y') && !token.ends_with("ey") && !token.ends_with("ay") {
        return Tag::Adj;
    }
    if n > 5
        && ["ness", "tion", "ment", "ity", "ance", "ence"]
            .iter()
            .any(|s| token.ends_with(s))
    {
        return Tag::Noun("abstract".into());
    }
    if n > 4 && (token.ends_with("ing") || token.ends_with("ed")) {
        return Tag::Verb;
    }
    Tag::Noun("other".into())
}

fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’'))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '’'))
        .filter(|t| !t.is_empty())
}

/// Runs the POS extractor over one transcript text.
pub fn pos_based_extract(text: &str, tagger: &PosTagger) -> Vec<Keyword> {
    tagger.extract(text)
}
