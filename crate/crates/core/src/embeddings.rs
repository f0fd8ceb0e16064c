//! Static word-embedding tables in text formats and cosine geometry.
//!
//! Supported layouts:
//!
//! * `text`: GloVe style, one `word v1 v2 ... vn` row per line.
//! * `word2vec-text`: the same rows preceded by a `count dim` header, as
//!   written by word2vec and fastText text exports.
//! * `gzip-text`: gzip-compressed header format (Numberbatch releases).
//!
//! Keys are lowercased. Numberbatch URIs lose their `/c/en/` prefix and
//! underscores become spaces; other languages are skipped.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::Vocabulary;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: no embeddings found")]
    Empty { path: PathBuf },
    #[error("vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
}

type Result<T> = std::result::Result<T, EmbeddingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingFormat {
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "word2vec-text")]
    TextWithHeader,
    #[serde(rename = "gzip-text")]
    GzipText,
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "word2vec-text" => Ok(Self::TextWithHeader),
            "gzip-text" => Ok(Self::GzipText),
            other => Err(format!("unknown embedding format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Word2vec,
    Glove,
    Fasttext,
    Numberbatch,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
    source: EmbeddingSource,
}

impl EmbeddingTable {
    /// Builds a table from in-memory vectors. Keys are normalized the same
    /// way as file keys.
    pub fn from_entries(
        source: EmbeddingSource,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut dimension = None;
        let mut map = BTreeMap::new();
        for (key, vector) in entries {
            let dim = *dimension.get_or_insert(vector.len());
            if vector.len() != dim {
                return Err(EmbeddingError::DimensionMismatch(dim, vector.len()));
            }
            if let Some(key) = normalize_key(&key) {
                map.entry(key).or_insert(vector);
            }
        }
        match dimension {
            Some(dimension) if dimension > 0 => Ok(Self {
                dimension,
                entries: map,
                source,
            }),
            _ => Err(EmbeddingError::Empty {
                path: PathBuf::from("<memory>"),
            }),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Writes the header text format. Spaces in keys are written as
    /// underscores so that reloading restores them.
    pub fn write_text_with_header<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.entries.len(), self.dimension)?;
        for (key, vector) in &self.entries {
            write!(out, "{}", key.replace(' ', "_"))?;
            for v in vector {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

impl Vocabulary for EmbeddingTable {
    fn contains_word(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }
}

fn normalize_key(raw: &str) -> Option<String> {
    let key = if let Some(rest) = raw.strip_prefix("/c/") {
        let rest = rest.strip_prefix("en/")?;
        // drop any trailing part-of-speech segment, e.g. "/c/en/run/v"
        rest.split('/').next().unwrap_or(rest)
    } else {
        raw
    };
    let key = key.replace('_', " ").to_lowercase();
    let key = key.split_whitespace().collect::<Vec<_>>().join(" ");
    (!key.is_empty()).then_some(key)
}

/// Vocabulary needed to embed `keywords`: every phrase plus its tokens.
pub fn vocabulary_filter<'a>(keywords: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    let mut out = HashSet::new();
    for k in keywords {
        out.insert(k.to_string());
        out.extend(k.split_whitespace().map(str::to_string));
    }
    out
}

/// Streams an embedding file, keeping only keys in `filter` when given.
pub fn load_embeddings(
    path: &Path,
    format: EmbeddingFormat,
    source: EmbeddingSource,
    filter: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| EmbeddingError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let reader: Box<dyn Read> = match format {
        EmbeddingFormat::GzipText => Box::new(flate2::read::MultiGzDecoder::new(file)),
        _ => Box::new(file),
    };
    let has_header = format != EmbeddingFormat::Text;
    read_embeddings(BufReader::new(reader), path, has_header, source, filter)
}

fn read_embeddings<R: BufRead>(
    reader: R,
    path: &Path,
    has_header: bool,
    source: EmbeddingSource,
    filter: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let parse_err = |line: usize, message: String| EmbeddingError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dimension: Option<usize> = None;
    let mut entries = BTreeMap::new();
    let mut rows = 0usize;
    let mut lines = reader.lines().enumerate();

    if has_header {
        let (idx, line) = loop {
            match lines.next() {
                Some((idx, line)) => {
                    let line = line.map_err(|e| EmbeddingError::Io {
                        path: path.to_path_buf(),
                        source: e,
                    })?;
                    if !line.trim().is_empty() {
                        break (idx, line);
                    }
                }
                None => {
                    return Err(EmbeddingError::Empty {
                        path: path.to_path_buf(),
                    })
                }
            }
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match fields.as_slice() {
            [n, d] => n.parse().ok().zip(d.parse().ok()),
            _ => None,
        };
        let (_, dim) =
            parsed.ok_or_else(|| parse_err(idx + 1, format!("expected a 'count dim' header, found {line:?}")))?;
        if dim == 0 {
            return Err(parse_err(idx + 1, "zero dimension".into()));
        }
        dimension = Some(dim);
    }

    for (idx, line) in lines {
        let line = line.map_err(|e| EmbeddingError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        let dim = *dimension.get_or_insert(values.len());
        if dim == 0 {
            return Err(parse_err(idx + 1, "row has no vector components".into()));
        }
        if values.len() != dim {
            return Err(parse_err(
                idx + 1,
                format!("expected {dim} components, found {}", values.len()),
            ));
        }
        rows += 1;
        let Some(key) = normalize_key(word) else { continue };
        if filter.is_some_and(|f| !f.contains(&key)) || entries.contains_key(&key) {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(idx + 1, e.to_string()))?;
        entries.insert(key, vector);
    }

    match dimension {
        Some(dimension) if rows > 0 => Ok(EmbeddingTable {
            dimension,
            entries,
            source,
        }),
        _ => Err(EmbeddingError::Empty {
            path: path.to_path_buf(),
        }),
    }
}

/// A keyword mapped into embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordVector {
    pub keyword: String,
    pub vector: Vec<f64>,
    /// Fraction of tokens found in the table; 1 for exact phrase hits.
    pub coverage: f64,
}

/// Exact lookup first (phrase tables such as Numberbatch store many
/// multiword concepts), then the mean of the tokens that are present.
pub fn embed_keyword(keyword: &str, table: &EmbeddingTable) -> Option<KeywordVector> {
    if let Some(v) = table.get(keyword) {
        return Some(KeywordVector {
            keyword: keyword.to_string(),
            vector: v.to_vec(),
            coverage: 1.0,
        });
    }
    let tokens: Vec<&str> = keyword.split_whitespace().collect();
    if tokens.len() < 2 {
        return None;
    }
    let found: Vec<&[f64]> = tokens.iter().filter_map(|t| table.get(t)).collect();
    if found.is_empty() {
        return None;
    }
    let mut mean = vec![0.0; table.dimension()];
    for v in &found {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let n = found.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Some(KeywordVector {
        keyword: keyword.to_string(),
        vector: mean,
        coverage: found.len() as f64 / tokens.len() as f64,
    })
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0))
}
