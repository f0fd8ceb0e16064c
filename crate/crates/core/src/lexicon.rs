//! Positive/negative keyword routing with an NRC-style emotion lexicon.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{cosine_distance, embed_keyword, EmbeddingTable};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: lexicon has no positive or negative entries")]
    Empty { path: PathBuf },
    #[error("nearest-neighbor policy requires a loaded embedding table")]
    MissingEmbeddings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
}

impl Sentiment {
    pub const BOTH: [Sentiment; 2] = [Sentiment::Positive, Sentiment::Negative];

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
        }
    }

    /// Cluster id prefix.
    pub fn prefix(self) -> char {
        match self {
            Sentiment::Positive => 'P',
            Sentiment::Negative => 'N',
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Words flagged positive and/or negative. A word may carry both flags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentimentLexicon {
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
}

impl SentimentLexicon {
    pub fn contains(&self, word: &str) -> bool {
        self.positive.contains(word) || self.negative.contains(word)
    }
}

/// Reads `word<TAB>affect<TAB>flag` rows. Only the `positive` and
/// `negative` affects are kept; flags must be 0 or 1.
pub fn load_nrc(path: &Path) -> Result<SentimentLexicon, LexiconError> {
    let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_nrc(&text, path)
}

pub fn parse_nrc(text: &str, path: &Path) -> Result<SentimentLexicon, LexiconError> {
    let mut lexicon = SentimentLexicon::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| LexiconError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        let [word, affect, flag] = fields.as_slice() else {
            return Err(malformed(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        };
        let word = word.trim().to_lowercase();
        if word.is_empty() {
            return Err(malformed("empty word".into()));
        }
        let set = match flag.trim() {
            "0" => continue,
            "1" => match affect.trim() {
                "positive" => &mut lexicon.positive,
                "negative" => &mut lexicon.negative,
                _ => continue,
            },
            other => return Err(malformed(format!("flag must be 0 or 1, found {other:?}"))),
        };
        set.insert(word);
    }
    if lexicon.positive.is_empty() && lexicon.negative.is_empty() {
        return Err(LexiconError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(lexicon)
}

/// What happens to keywords missing from the lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutOfLexiconPolicy {
    #[default]
    Drop,
    Both,
    NearestNeighbor,
}

impl std::str::FromStr for OutOfLexiconPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(Self::Drop),
            "both" => Ok(Self::Both),
            "nearest-neighbor" => Ok(Self::NearestNeighbor),
            other => Err(format!("unknown policy {other:?} (drop, both, nearest-neighbor)")),
        }
    }
}

/// keyword -> signal id -> occurrences
pub type KeywordCounts = BTreeMap<String, BTreeMap<String, usize>>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentimentedKeywords {
    pub positive: KeywordCounts,
    pub negative: KeywordCounts,
    pub unassigned: KeywordCounts,
}

impl SentimentedKeywords {
    pub fn get(&self, sentiment: Sentiment) -> &KeywordCounts {
        match sentiment {
            Sentiment::Positive => &self.positive,
            Sentiment::Negative => &self.negative,
        }
    }

    /// Sum of all occurrences in one group.
    pub fn total(counts: &KeywordCounts) -> usize {
        counts.values().flat_map(|m| m.values()).sum()
    }

    /// Total occurrences of each keyword across signals.
    pub fn frequencies(counts: &KeywordCounts) -> BTreeMap<String, usize> {
        counts
            .iter()
            .map(|(k, per_signal)| (k.clone(), per_signal.values().sum()))
            .collect()
    }

    /// Expands a group back into per-signal keyword lists.
    pub fn as_signal_keywords(counts: &KeywordCounts) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (keyword, per_signal) in counts {
            for (signal, n) in per_signal {
                out.entry(signal.clone())
                    .or_default()
                    .extend(std::iter::repeat_n(keyword.clone(), *n));
            }
        }
        out
    }

    /// Flat `sentiment,keyword,signal_id,count` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sentiment,keyword,signal_id,count\n");
        for (name, group) in [
            ("positive", &self.positive),
            ("negative", &self.negative),
            ("unassigned", &self.unassigned),
        ] {
            for (keyword, per_signal) in group {
                for (signal, n) in per_signal {
                    out.push_str(&format!("{name},{},{signal},{n}\n", csv_field(keyword)));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut out = Self::default();
        let mut lines = text.lines();
        if lines.next() != Some("sentiment,keyword,signal_id,count") {
            return Err("unexpected header".into());
        }
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields = split_csv_line(line);
            let [sentiment, keyword, signal, count] = fields.as_slice() else {
                return Err(format!("line {}: expected 4 fields", i + 2));
            };
            let count: usize = count.parse().map_err(|_| format!("line {}: bad count", i + 2))?;
            let group = match sentiment.as_str() {
                "positive" => &mut out.positive,
                "negative" => &mut out.negative,
                "unassigned" => &mut out.unassigned,
                other => return Err(format!("line {}: unknown sentiment {other:?}", i + 2)),
            };
            *group
                .entry(keyword.clone())
                .or_default()
                .entry(signal.clone())
                .or_default() += count;
        }
        Ok(out)
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                current.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    fields.push(current);
    fields
}

/// Routes every keyword occurrence to the positive and/or negative group.
///
/// `keywords` maps a signal id to its keyword occurrences (normalized).
/// Lexicon members go to each group they are flagged for. Non-members are
/// handled by `policy`; `NearestNeighbor` takes the majority polarity among
/// the `neighbors` closest embeddable lexicon words (cosine distance, ties
/// by word), and leaves the keyword unassigned on a tied vote or when it
/// cannot be embedded.
pub fn split_sentiment(
    keywords: &BTreeMap<String, Vec<String>>,
    lexicon: &SentimentLexicon,
    policy: OutOfLexiconPolicy,
    embeddings: Option<&EmbeddingTable>,
    neighbors: usize,
) -> Result<SentimentedKeywords, LexiconError> {
    let neighbor_index = match policy {
        OutOfLexiconPolicy::NearestNeighbor => {
            let table = embeddings.ok_or(LexiconError::MissingEmbeddings)?;
            Some(NeighborIndex::new(lexicon, table))
        }
        _ => None,
    };

    let mut routes: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    let mut out = SentimentedKeywords::default();
    for (signal, words) in keywords {
        for word in words {
            let (pos, neg) = *routes.entry(word.as_str()).or_insert_with(|| {
                let (pos, neg) = (lexicon.positive.contains(word), lexicon.negative.contains(word));
                if pos || neg {
                    return (pos, neg);
                }
                match policy {
                    OutOfLexiconPolicy::Drop => (false, false),
                    OutOfLexiconPolicy::Both => (true, true),
                    OutOfLexiconPolicy::NearestNeighbor => neighbor_index
                        .as_ref()
                        .expect("index built for this policy")
                        .vote(word, neighbors),
                }
            });
            let bump = |group: &mut KeywordCounts| {
                *group
                    .entry(word.clone())
                    .or_default()
                    .entry(signal.clone())
                    .or_default() += 1;
            };
            if pos {
                bump(&mut out.positive);
            }
            if neg {
                bump(&mut out.negative);
            }
            if !pos && !neg {
                bump(&mut out.unassigned);
            }
        }
    }
    Ok(out)
}

struct NeighborIndex<'a> {
    table: &'a EmbeddingTable,
    entries: Vec<(&'a str, &'a [f64], bool, bool)>,
}

impl<'a> NeighborIndex<'a> {
    fn new(lexicon: &'a SentimentLexicon, table: &'a EmbeddingTable) -> Self {
        let words: BTreeSet<&String> = lexicon.positive.union(&lexicon.negative).collect();
        let entries = words
            .into_iter()
            .filter_map(|w| {
                let v = table.get(w)?;
                v.iter().any(|x| *x != 0.0).then(|| {
                    (
                        w.as_str(),
                        v,
                        lexicon.positive.contains(w),
                        lexicon.negative.contains(w),
                    )
                })
            })
            .collect();
        Self { table, entries }
    }

    fn vote(&self, word: &str, k: usize) -> (bool, bool) {
        let Some(kv) = embed_keyword(word, self.table) else {
            log::debug!("cannot embed out-of-lexicon keyword {word:?}");
            return (false, false);
        };
        let mut scored: Vec<(f64, &str, bool, bool)> = self
            .entries
            .iter()
            .filter_map(|(w, v, p, n)| cosine_distance(&kv.vector, v).ok().map(|d| (d, *w, *p, *n)))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let (mut pos, mut neg) = (0usize, 0usize);
        for (_, _, p, n) in scored.into_iter().take(k) {
            pos += p as usize;
            neg += n as usize;
        }
        match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => (true, false),
            std::cmp::Ordering::Less => (false, true),
            std::cmp::Ordering::Equal => (false, false),
        }
    }
}
