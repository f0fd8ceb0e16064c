//! Declarative run configuration (TOML) with dotted-key overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterParams;
use crate::embeddings::{EmbeddingFormat, EmbeddingSource};
use crate::extraction::{
    ChatTransport, ExtractionError, ExtractionMethod, Extractor, LlmConfig, LlmExtractor, PosTagger, RulePatterns,
    DEFAULT_NOUN_CATEGORIES,
};
use crate::features::FeatureParams;
use crate::lexicon::OutOfLexiconPolicy;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Signal directory or manifest file.
    pub signals: PathBuf,
    pub transcripts: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub method: ExtractionMethod,
    /// Custom rule pattern file; the shipped patterns when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patterns: Option<PathBuf>,
    /// `word<TAB>TAG` lexicon for the POS tagger; the shipped one when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos_lexicon: Option<PathBuf>,
    pub noun_categories: Vec<String>,
    /// Word list (one per line) guiding lemmatization of -ing/-ed forms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma_vocabulary: Option<PathBuf>,
    pub llm: LlmConfig,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            method: ExtractionMethod::Rule,
            patterns: None,
            pos_lexicon: None,
            noun_categories: DEFAULT_NOUN_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            lemma_vocabulary: None,
            llm: LlmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconConfig {
    /// NRC-style `word<TAB>affect<TAB>flag` file.
    pub path: PathBuf,
    #[serde(default)]
    pub policy: OutOfLexiconPolicy,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
}

fn default_neighbors() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub path: PathBuf,
    pub format: EmbeddingFormat,
    #[serde(default)]
    pub source: EmbeddingSource,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub positive: ClusterParams,
    pub negative: ClusterParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifestConfig {
    /// Record wall-clock stage times. Off keeps reruns byte-identical.
    pub timestamps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    pub lexicon: LexiconConfig,
    pub embeddings: EmbeddingConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub features: FeatureParams,
    #[serde(default)]
    pub manifest: ManifestConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// Reads a TOML file, applies `key=value` overrides (dotted keys, values
    /// in TOML syntax or bare strings) and validates the result.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base, overrides)
    }

    pub fn from_toml(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| PipelineError::Validation(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut config: PipelineConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Validation(format!("config: {e}")))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Checks referenced files and numeric settings before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        let mut require = |label: &str, path: Option<&PathBuf>| {
            if let Some(p) = path {
                let resolved = self.resolve(p);
                if !resolved.exists() {
                    problems.push(format!("{label}: {} does not exist", resolved.display()));
                }
            }
        };
        require("corpus.signals", Some(&self.corpus.signals));
        require("corpus.transcripts", Some(&self.corpus.transcripts));
        require("corpus.gold", self.corpus.gold.as_ref());
        require("extraction.patterns", self.extraction.patterns.as_ref());
        require("extraction.pos_lexicon", self.extraction.pos_lexicon.as_ref());
        require("extraction.lemma_vocabulary", self.extraction.lemma_vocabulary.as_ref());
        require("lexicon.path", Some(&self.lexicon.path));
        require("embeddings.path", Some(&self.embeddings.path));

        if self.lexicon.neighbors == 0 {
            problems.push("lexicon.neighbors must be at least 1".into());
        }
        for (name, p) in [
            ("positive", &self.clustering.positive),
            ("negative", &self.clustering.negative),
        ] {
            if let Some(k) = p.k {
                if k < 2 {
                    problems.push(format!("clustering.{name}.k must be at least 2, got {k}"));
                }
            }
            if p.k_min < 2 || p.k_max < p.k_min {
                problems.push(format!(
                    "clustering.{name}: need 2 <= k_min <= k_max, got {}..={}",
                    p.k_min, p.k_max
                ));
            }
        }
        if let Err(e) = self.features.validate() {
            problems.push(format!("features: {e}"));
        }
        if self.extraction.method == ExtractionMethod::Llm && self.extraction.llm.endpoint.trim().is_empty() {
            problems.push("extraction.llm.endpoint is empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(problems.join("; ")))
        }
    }

    /// Serializable view without `output_dir`, so runs into different
    /// directories record identical snapshots.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        value
    }

    /// LLM settings with the cache directory resolved.
    pub fn llm_config(&self) -> LlmConfig {
        self.extraction.llm_config(&self.base_dir)
    }

    /// Builds the configured extractor. `transport` replaces the HTTP client
    /// for the LLM method.
    pub fn build_extractor(&self, transport: Option<Box<dyn ChatTransport>>) -> Result<Extractor, ExtractionError> {
        self.extraction.build_extractor(&self.base_dir, transport)
    }

    pub fn lemma_vocabulary(&self) -> std::io::Result<Option<BTreeSet<String>>> {
        self.extraction.lemma_vocabulary(&self.base_dir)
    }
}

impl ExtractionConfig {
    /// LLM settings with the cache directory resolved against `base_dir`.
    pub fn llm_config(&self, base_dir: &Path) -> LlmConfig {
        let mut llm = self.llm.clone();
        llm.cache_dir = base_dir.join(&llm.cache_dir);
        llm
    }

    /// Builds the extractor; relative files resolve against `base_dir`.
    pub fn build_extractor(
        &self,
        base_dir: &Path,
        transport: Option<Box<dyn ChatTransport>>,
    ) -> Result<Extractor, ExtractionError> {
        let read = |p: &PathBuf| {
            let path = base_dir.join(p);
            std::fs::read_to_string(&path).map_err(|e| ExtractionError::File {
                path,
                message: e.to_string(),
            })
        };
        Ok(match self.method {
            ExtractionMethod::Rule => Extractor::Rule(match &self.patterns {
                Some(p) => RulePatterns::parse(&read(p)?)?,
                None => RulePatterns::default(),
            }),
            ExtractionMethod::Pos => {
                let categories = self.noun_categories.iter().cloned();
                Extractor::Pos(match &self.pos_lexicon {
                    Some(p) => PosTagger::from_lexicon(&read(p)?, categories)?,
                    None => PosTagger::default().with_noun_categories(categories),
                })
            }
            ExtractionMethod::Llm => {
                let config = self.llm_config(base_dir);
                Extractor::Llm(match transport {
                    Some(t) => LlmExtractor::new(config, t),
                    None => LlmExtractor::http(config),
                })
            }
        })
    }

    /// The lemmatization word list, one word per line, if configured.
    pub fn lemma_vocabulary(&self, base_dir: &Path) -> std::io::Result<Option<BTreeSet<String>>> {
        self.lemma_vocabulary
            .as_ref()
            .map(|p| {
                let text = std::fs::read_to_string(base_dir.join(p))?;
                Ok(text
                    .lines()
                    .map(|l| l.trim().to_lowercase())
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .collect())
            })
            .transpose()
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let invalid = |m: &str| PipelineError::Validation(format!("override {assignment:?}: {m}"));
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid("expected key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid("empty key segment"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, path) = parts.split_last().expect("non-empty key");
    let mut current = table;
    for part in path {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| invalid(&format!("{part} is not a table")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
[corpus]
signals = "signals"
transcripts = "t.jsonl"
[lexicon]
path = "lex.tsv"
[embeddings]
path = "emb.txt"
format = "word2vec-text"
"#;

    fn workspace() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("signals")).unwrap();
        for f in ["t.jsonl", "lex.tsv", "emb.txt"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        dir
    }

    #[test]
    fn defaults_and_overrides() {
        let dir = workspace();
        let c = PipelineConfig::from_toml(MINIMAL, dir.path(), &[]).unwrap();
        assert_eq!(c.extraction.method, ExtractionMethod::Rule);
        assert_eq!(c.lexicon.policy, OutOfLexiconPolicy::Drop);
        assert_eq!(c.lexicon.neighbors, 5);
        assert_eq!(c.clustering.positive.k, None);
        assert_eq!(c.output_dir(), dir.path().join("out"));

        let c = PipelineConfig::from_toml(
            MINIMAL,
            dir.path(),
            &[
                "clustering.positive.k=14".into(),
                "lexicon.policy=both".into(),
                "features.threshold_ratio = 0.2".into(),
                "extraction.method=pos".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.clustering.positive.k, Some(14));
        assert_eq!(c.lexicon.policy, OutOfLexiconPolicy::Both);
        assert_eq!(c.features.threshold_ratio, 0.2);
        assert_eq!(c.extraction.method, ExtractionMethod::Pos);
        assert!(c.snapshot().get("output_dir").is_none());
    }

    #[test]
    fn validation_failures() {
        let dir = workspace();
        std::fs::remove_file(dir.path().join("emb.txt")).unwrap();
        match PipelineConfig::from_toml(MINIMAL, dir.path(), &[]) {
            Err(PipelineError::Validation(m)) => assert!(m.contains("embeddings.path")),
            other => panic!("{other:?}"),
        }
        let dir = workspace();
        for bad in [
            "clustering.negative.k=1",
            "lexicon.neighbors=0",
            "nokey",
            "features.onset_hop=0",
            "bogus=1",
        ] {
            assert!(
                matches!(
                    PipelineConfig::from_toml(MINIMAL, dir.path(), &[bad.into()]),
                    Err(PipelineError::Validation(_))
                ),
                "{bad}"
            );
        }
    }
}
