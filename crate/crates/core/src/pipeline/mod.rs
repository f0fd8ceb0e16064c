//! Stage-wise orchestration of extraction, sentiment split, clustering,
//! feature extraction, correlation and reporting.
//!
//! Stages talk only through files in the output directory. Each stage's
//! fingerprint hashes its parameters and the content of its inputs; a stage
//! whose fingerprint and outputs match the previous manifest is skipped.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    ClusteringConfig, CorpusConfig, EmbeddingConfig, ExtractionConfig, LexiconConfig, ManifestConfig, PipelineConfig,
};

use crate::clustering::{cluster_group, ClusterSet};
use crate::corpus::Corpus;
use crate::correlation::{
    build_count_matrix, correlate_all, largest_report, CorrelationMatrix, LargestCorrelationReport,
};
use crate::embeddings::{load_embeddings, vocabulary_filter, EmbeddingTable};
use crate::extraction::{
    apply_vocabulary, extract_transcripts, keywords_by_signal, read_keyword_records, write_keyword_records,
    ChatTransport,
};
use crate::features::{extract_all, metadata_json, normalize_features, FeatureMatrix};
use crate::lexicon::{load_nrc, split_sentiment, OutOfLexiconPolicy, Sentiment, SentimentedKeywords};
use crate::util::{sha256_file, sha256_hex, write_atomic};

pub const KEYWORDS_FILE: &str = "keywords.jsonl";
pub const SENTIMENT_FILE: &str = "sentiment.csv";
pub const FEATURES_RAW_FILE: &str = "features_raw.csv";
pub const FEATURES_NORMALIZED_FILE: &str = "features_normalized.csv";
pub const FEATURES_META_FILE: &str = "features_meta.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn clusters_file(s: Sentiment) -> String {
    format!("clusters_{s}.csv")
}
pub fn labels_file(s: Sentiment) -> String {
    format!("labels_{s}.csv")
}
pub fn projection_file(s: Sentiment) -> String {
    format!("projection_{s}.csv")
}
pub fn dendrogram_file(s: Sentiment) -> String {
    format!("dendrogram_{s}.csv")
}
pub fn counts_file(s: Sentiment) -> String {
    format!("counts_{s}.csv")
}
pub fn correlation_file(s: Sentiment) -> String {
    format!("correlation_{s}.csv")
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extract,
    Split,
    Cluster,
    Features,
    Correlate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Extract,
        Stage::Split,
        Stage::Cluster,
        Stage::Features,
        Stage::Correlate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Split => "split",
            Stage::Cluster => "cluster",
            Stage::Features => "features",
            Stage::Correlate => "correlate",
            Stage::Report => "report",
        }
    }

    /// Files the stage writes, relative to the output directory.
    pub fn outputs(self) -> Vec<String> {
        let per_sentiment = |f: fn(Sentiment) -> String| Sentiment::BOTH.map(f).to_vec();
        match self {
            Stage::Extract => vec![KEYWORDS_FILE.into()],
            Stage::Split => vec![SENTIMENT_FILE.into()],
            Stage::Cluster => [clusters_file, labels_file, projection_file, dendrogram_file]
                .into_iter()
                .flat_map(per_sentiment)
                .collect(),
            Stage::Features => vec![
                FEATURES_RAW_FILE.into(),
                FEATURES_NORMALIZED_FILE.into(),
                FEATURES_META_FILE.into(),
            ],
            Stage::Correlate => [counts_file, correlation_file]
                .into_iter()
                .flat_map(per_sentiment)
                .collect(),
            Stage::Report => vec![REPORT_JSON_FILE.into(), REPORT_TEXT_FILE.into()],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?} (extract, split, cluster, features, correlate, report)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub fingerprint: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn upsert(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.stage != record.stage);
        self.stages.push(record);
        self.stages.sort_by_key(|r| r.stage);
    }
}

/// Which stages ran and which were satisfied by the previous manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub output_dir: PathBuf,
}

/// Runs stages against one configuration.
pub struct Pipeline {
    config: PipelineConfig,
    transport: Option<Box<dyn ChatTransport>>,
    corpus: Option<Corpus>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            config,
            transport: None,
            corpus: None,
        }
    }

    /// Replaces the HTTP client used by the LLM extractor.
    pub fn with_transport(mut self, transport: Box<dyn ChatTransport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Runs every stage in order, skipping those already up to date.
    pub fn run(&mut self) -> Result<RunSummary, PipelineError> {
        self.run_stages(&Stage::ALL, false)
    }

    /// Runs one stage unconditionally; its inputs must already exist.
    pub fn run_stage(&mut self, stage: Stage) -> Result<RunSummary, PipelineError> {
        self.run_stages(&[stage], true)
    }

    fn run_stages(&mut self, stages: &[Stage], force: bool) -> Result<RunSummary, PipelineError> {
        let out = self.config.output_dir();
        std::fs::create_dir_all(&out).map_err(|e| PipelineError::Stage {
            stage: stages[0],
            source: format!("cannot create {}: {e}", out.display()).into(),
        })?;
        let manifest_path = out.join(MANIFEST_FILE);
        let snapshot = self.config.snapshot();
        // stage records survive config edits; their fingerprints decide reuse
        let mut manifest = match RunManifest::read(&manifest_path) {
            Some(m) if m.version == env!("CARGO_PKG_VERSION") => RunManifest { config: snapshot, ..m },
            _ => RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: snapshot,
                stages: Vec::new(),
            },
        };

        let mut summary = RunSummary {
            output_dir: out.clone(),
            ..Default::default()
        };
        for &stage in stages {
            let fail = |source: BoxError| PipelineError::Stage { stage, source };
            let inputs = self.stage_inputs(stage, &out).map_err(fail)?;
            let fingerprint = fingerprint(stage, &inputs);
            if !force {
                if let Some(previous) = manifest.record(stage) {
                    if previous.fingerprint == fingerprint && outputs_match(&out, &previous.outputs) {
                        log::info!("stage {stage}: up to date, skipped");
                        summary.skipped.push(stage);
                        continue;
                    }
                }
            }
            log::info!("stage {stage}: running");
            let started = self.config.manifest.timestamps.then(unix_now);
            self.execute(stage, &out).map_err(fail)?;
            let outputs = stage
                .outputs()
                .into_iter()
                .map(|f| {
                    let hash = sha256_file(&out.join(&f))?;
                    Ok((f, hash))
                })
                .collect::<std::io::Result<BTreeMap<_, _>>>()
                .map_err(|e| fail(e.into()))?;
            manifest.upsert(StageRecord {
                stage,
                fingerprint,
                inputs,
                outputs,
                started_unix: started,
                finished_unix: self.config.manifest.timestamps.then(unix_now),
            });
            write_manifest(&manifest_path, &manifest).map_err(|e| fail(e.into()))?;
            summary.executed.push(stage);
        }
        write_manifest(&manifest_path, &manifest).map_err(|e| PipelineError::Stage {
            stage: *stages.last().unwrap(),
            source: e.into(),
        })?;
        Ok(summary)
    }

    fn corpus(&mut self) -> Result<&Corpus, BoxError> {
        if self.corpus.is_none() {
            let c = &self.config.corpus;
            let gold = c.gold.as_ref().map(|g| self.config.resolve(g));
            let corpus = Corpus::load(
                &self.config.resolve(&c.signals),
                &self.config.resolve(&c.transcripts),
                gold.as_deref(),
            )?;
            self.corpus = Some(corpus);
        }
        Ok(self.corpus.as_ref().unwrap())
    }

    /// Content hashes of everything a stage reads, plus its parameters.
    fn stage_inputs(&mut self, stage: Stage, out: &Path) -> Result<BTreeMap<String, String>, BoxError> {
        let cfg = self.config.clone();
        let mut inputs = BTreeMap::new();
        let mut file = |name: &str, path: &Path| -> Result<(), BoxError> {
            let hash = sha256_file(path)
                .map_err(|e| -> BoxError { format!("cannot read input {}: {e}", path.display()).into() })?;
            inputs.insert(name.to_string(), hash);
            Ok(())
        };
        let upstream = |f: &str| out.join(f);
        let params = |value: serde_json::Value| sha256_hex(value.to_string().as_bytes());

        match stage {
            Stage::Extract => {
                file("transcripts", &cfg.resolve(&cfg.corpus.transcripts))?;
                if let Some(p) = &cfg.extraction.patterns {
                    file("patterns", &cfg.resolve(p))?;
                }
                if let Some(p) = &cfg.extraction.pos_lexicon {
                    file("pos_lexicon", &cfg.resolve(p))?;
                }
                if let Some(p) = &cfg.extraction.lemma_vocabulary {
                    file("lemma_vocabulary", &cfg.resolve(p))?;
                }
                let mut extraction = serde_json::to_value(&cfg.extraction)?;
                if let Some(llm) = extraction.get_mut("llm").and_then(|v| v.as_object_mut()) {
                    llm.remove("cache_dir");
                    llm.remove("timeout_secs");
                }
                inputs.insert("params".into(), params(extraction));
            }
            Stage::Split => {
                file(KEYWORDS_FILE, &upstream(KEYWORDS_FILE))?;
                file("lexicon", &cfg.resolve(&cfg.lexicon.path))?;
                if cfg.lexicon.policy == OutOfLexiconPolicy::NearestNeighbor {
                    file("embeddings", &cfg.resolve(&cfg.embeddings.path))?;
                }
                inputs.insert(
                    "params".into(),
                    params(serde_json::json!({ "lexicon": cfg.lexicon, "embeddings": cfg.embeddings })),
                );
            }
            Stage::Cluster => {
                file(SENTIMENT_FILE, &upstream(SENTIMENT_FILE))?;
                file("embeddings", &cfg.resolve(&cfg.embeddings.path))?;
                inputs.insert(
                    "params".into(),
                    params(serde_json::json!({ "clustering": cfg.clustering, "embeddings": cfg.embeddings })),
                );
            }
            Stage::Features => {
                let corpus = self.corpus()?;
                let mut hasher = Sha256::new();
                for s in corpus.signals().values() {
                    hasher.update(s.id.as_bytes());
                    hasher.update([0]);
                    hasher.update(s.sample_rate.to_le_bytes());
                    for x in &s.samples {
                        hasher.update(x.to_le_bytes());
                    }
                }
                inputs.insert("signals".into(), hex::encode(hasher.finalize()));
                inputs.insert("params".into(), params(serde_json::to_value(&cfg.features)?));
            }
            Stage::Correlate => {
                file(SENTIMENT_FILE, &upstream(SENTIMENT_FILE))?;
                file(FEATURES_NORMALIZED_FILE, &upstream(FEATURES_NORMALIZED_FILE))?;
                for s in Sentiment::BOTH {
                    file(&clusters_file(s), &upstream(&clusters_file(s)))?;
                }
            }
            Stage::Report => {
                for s in Sentiment::BOTH {
                    file(&clusters_file(s), &upstream(&clusters_file(s)))?;
                    file(&correlation_file(s), &upstream(&correlation_file(s)))?;
                }
            }
        }
        Ok(inputs)
    }

    fn execute(&mut self, stage: Stage, out: &Path) -> Result<(), BoxError> {
        match stage {
            Stage::Extract => self.extract(out),
            Stage::Split => self.split(out),
            Stage::Cluster => self.cluster(out),
            Stage::Features => self.features(out),
            Stage::Correlate => correlate(out),
            Stage::Report => report(out),
        }
    }

    fn extract(&mut self, out: &Path) -> Result<(), BoxError> {
        let vocabulary = self.config.lemma_vocabulary()?;
        let extractor = self.config.build_extractor(self.transport.take())?;
        let result = {
            let corpus = self.corpus()?;
            extract_transcripts(corpus.transcripts(), &extractor)
        };
        if let crate::extraction::Extractor::Llm(llm) = extractor {
            self.transport = Some(llm.into_transport());
        }
        let mut records = result?;
        if let Some(vocab) = &vocabulary {
            apply_vocabulary(&mut records, vocab);
        }
        write_keyword_records(&out.join(KEYWORDS_FILE), &records)?;
        Ok(())
    }

    fn split(&mut self, out: &Path) -> Result<(), BoxError> {
        let cfg = &self.config;
        let records = read_keyword_records(&out.join(KEYWORDS_FILE))?;
        let by_signal = keywords_by_signal(&records);
        let lexicon = load_nrc(&cfg.resolve(&cfg.lexicon.path))?;
        let table = if cfg.lexicon.policy == OutOfLexiconPolicy::NearestNeighbor {
            let words = by_signal
                .values()
                .flatten()
                .map(String::as_str)
                .chain(lexicon.positive.iter().map(String::as_str))
                .chain(lexicon.negative.iter().map(String::as_str));
            Some(load_table(cfg, vocabulary_filter(words))?)
        } else {
            None
        };
        let split = split_sentiment(
            &by_signal,
            &lexicon,
            cfg.lexicon.policy,
            table.as_ref(),
            cfg.lexicon.neighbors,
        )?;
        log::info!(
            "sentiment split: {} positive, {} negative, {} unassigned occurrences",
            SentimentedKeywords::total(&split.positive),
            SentimentedKeywords::total(&split.negative),
            SentimentedKeywords::total(&split.unassigned)
        );
        write_atomic(&out.join(SENTIMENT_FILE), split.to_csv().as_bytes())?;
        Ok(())
    }

    fn cluster(&mut self, out: &Path) -> Result<(), BoxError> {
        let cfg = &self.config;
        let split = read_sentiment(out)?;
        let table = load_table(
            cfg,
            vocabulary_filter(split.positive.keys().chain(split.negative.keys()).map(String::as_str)),
        )?;
        for sentiment in Sentiment::BOTH {
            let params = match sentiment {
                Sentiment::Positive => &cfg.clustering.positive,
                Sentiment::Negative => &cfg.clustering.negative,
            };
            let outcome = cluster_group(split.get(sentiment), sentiment, &table, params)?;
            log::info!(
                "{sentiment}: {} cluster(s) over {} keyword(s)",
                outcome.set.clusters.len(),
                outcome.projection.points.len()
            );
            let dendrogram = outcome
                .dendrogram
                .as_ref()
                .map(|d| d.to_csv())
                .unwrap_or_else(|| "step,left,right,distance,size\n".into());
            write_atomic(&out.join(clusters_file(sentiment)), outcome.set.to_csv().as_bytes())?;
            write_atomic(&out.join(labels_file(sentiment)), outcome.set.labels_csv().as_bytes())?;
            write_atomic(
                &out.join(projection_file(sentiment)),
                outcome.projection.to_csv().as_bytes(),
            )?;
            write_atomic(&out.join(dendrogram_file(sentiment)), dendrogram.as_bytes())?;
        }
        Ok(())
    }

    fn features(&mut self, out: &Path) -> Result<(), BoxError> {
        let params = self.config.features.clone();
        let raw = extract_all(self.corpus()?, &params)?;
        let normalized = normalize_features(&raw);
        raw.write_csv(&out.join(FEATURES_RAW_FILE))?;
        normalized.write_csv(&out.join(FEATURES_NORMALIZED_FILE))?;
        write_atomic(
            &out.join(FEATURES_META_FILE),
            metadata_json(&params, &normalized).as_bytes(),
        )?;
        Ok(())
    }
}

fn correlate(out: &Path) -> Result<(), BoxError> {
    let features = FeatureMatrix::from_csv(&read(&out.join(FEATURES_NORMALIZED_FILE))?, true)?;
    let split = read_sentiment(out)?;
    for sentiment in Sentiment::BOTH {
        let clusters = read_clusters(out, sentiment)?;
        let by_signal = SentimentedKeywords::as_signal_keywords(split.get(sentiment));
        let counts = build_count_matrix(&features.signal_ids, &by_signal, &clusters)?;
        let corr = correlate_all(&features, &counts)?;
        write_atomic(&out.join(counts_file(sentiment)), counts.to_csv().as_bytes())?;
        write_atomic(&out.join(correlation_file(sentiment)), corr.to_csv().as_bytes())?;
    }
    Ok(())
}

fn report(out: &Path) -> Result<(), BoxError> {
    let mut report = LargestCorrelationReport::default();
    for sentiment in Sentiment::BOTH {
        let clusters = read_clusters(out, sentiment)?;
        let corr = CorrelationMatrix::from_csv(&read(&out.join(correlation_file(sentiment)))?, sentiment)?;
        report.extend(largest_report(&corr, &clusters));
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_atomic(&out.join(REPORT_JSON_FILE), report.to_json().as_bytes())?;
    write_atomic(&out.join(REPORT_TEXT_FILE), report.to_text().as_bytes())?;
    Ok(())
}

fn read(path: &Path) -> Result<String, BoxError> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()).into())
}

fn read_sentiment(out: &Path) -> Result<SentimentedKeywords, BoxError> {
    let path = out.join(SENTIMENT_FILE);
    SentimentedKeywords::from_csv(&read(&path)?).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_clusters(out: &Path, sentiment: Sentiment) -> Result<ClusterSet, BoxError> {
    Ok(ClusterSet::from_csv(
        &read(&out.join(clusters_file(sentiment)))?,
        sentiment,
    )?)
}

fn load_table(cfg: &PipelineConfig, filter: std::collections::HashSet<String>) -> Result<EmbeddingTable, BoxError> {
    Ok(load_embeddings(
        &cfg.resolve(&cfg.embeddings.path),
        cfg.embeddings.format,
        cfg.embeddings.source,
        Some(&filter),
    )?)
}

fn fingerprint(stage: Stage, inputs: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(stage.name().as_bytes());
    for (k, v) in inputs {
        hasher.update([0]);
        hasher.update(k.as_bytes());
        hasher.update([0]);
        hasher.update(v.as_bytes());
    }
    hex::encode(hasher.finalize())
}

fn outputs_match(out: &Path, outputs: &BTreeMap<String, String>) -> bool {
    outputs
        .iter()
        .all(|(f, hash)| sha256_file(&out.join(f)).is_ok_and(|h| &h == hash))
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
