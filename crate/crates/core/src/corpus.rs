//! Signals, transcripts and gold keyword annotations.
//!
//! Signals come from mono PCM WAV files or single-column CSV files listed in
//! a TOML manifest. Transcripts and gold annotations are JSON lines files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::normalize_keyword;
use crate::util::write_atomic;

/// File name looked up when `load_signals` is given a directory.
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: empty signal")]
    EmptySignal { path: PathBuf },
    #[error("{path}: expected a mono WAV file, found {channels} channels")]
    MultiChannel { path: PathBuf, channels: u16 },
    #[error("{path}: unsupported WAV encoding ({detail})")]
    UnsupportedWav { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: line {line}, cell {cell}: non-numeric value {value:?}")]
    BadCell {
        path: PathBuf,
        line: usize,
        cell: usize,
        value: String,
    },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: CSV signal {id:?} needs a sample_rate in the manifest")]
    MissingSampleRate { path: PathBuf, id: String },
    #[error("signal {id:?}: sample rate must be at least 1 Hz")]
    BadSampleRate { id: String },
    #[error("duplicate signal id {0:?}")]
    DuplicateSignal(String),
    #[error("{path}: line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate gold annotation for signal {signal_id:?}, participant {participant_id:?}")]
    DuplicateGold { signal_id: String, participant_id: String },
    #[error("transcript from participant {participant_id:?} references unknown signal {signal_id:?}")]
    DanglingSignal { signal_id: String, participant_id: String },
    #[error("corpus has no signals")]
    NoSignals,
}

type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A mono waveform with amplitudes roughly in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let id = id.into();
        if sample_rate == 0 {
            return Err(CorpusError::BadSampleRate { id });
        }
        if samples.is_empty() {
            return Err(CorpusError::EmptySignal {
                path: PathBuf::from(id),
            });
        }
        Ok(Self {
            id,
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub signal_id: String,
    pub participant_id: String,
    pub text: String,
}

impl Transcript {
    pub fn key(&self) -> TranscriptKey {
        TranscriptKey::new(&self.signal_id, &self.participant_id)
    }
}

/// Identifies the description one participant gave for one signal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TranscriptKey {
    pub signal_id: String,
    pub participant_id: String,
}

impl TranscriptKey {
    pub fn new(signal_id: &str, participant_id: &str) -> Self {
        Self {
            signal_id: signal_id.to_string(),
            participant_id: participant_id.to_string(),
        }
    }
}

/// Manually extracted keywords for one transcript key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub signal_id: String,
    pub participant_id: String,
    pub keywords: BTreeSet<String>,
}

impl GoldAnnotation {
    pub fn key(&self) -> TranscriptKey {
        TranscriptKey::new(&self.signal_id, &self.participant_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    signals: BTreeMap<String, Signal>,
    transcripts: Vec<Transcript>,
    gold: Option<Vec<GoldAnnotation>>,
}

impl Corpus {
    /// Validates references between the parts and builds the corpus.
    pub fn assemble(
        signals: BTreeMap<String, Signal>,
        transcripts: Vec<Transcript>,
        gold: Option<Vec<GoldAnnotation>>,
    ) -> Result<Self> {
        if signals.is_empty() {
            return Err(CorpusError::NoSignals);
        }
        let dangling = transcripts
            .iter()
            .map(|t| (&t.signal_id, &t.participant_id))
            .chain(gold.iter().flatten().map(|g| (&g.signal_id, &g.participant_id)))
            .find(|(s, _)| !signals.contains_key(*s));
        if let Some((signal_id, participant_id)) = dangling {
            return Err(CorpusError::DanglingSignal {
                signal_id: signal_id.clone(),
                participant_id: participant_id.clone(),
            });
        }
        Ok(Self {
            signals,
            transcripts,
            gold,
        })
    }

    pub fn load(signals: &Path, transcripts: &Path, gold: Option<&Path>) -> Result<Self> {
        let signals = load_signals(signals)?;
        let transcripts = load_transcripts(transcripts)?;
        let gold = gold.map(load_gold).transpose()?;
        Self::assemble(signals, transcripts, gold)
    }

    pub fn signals(&self) -> &BTreeMap<String, Signal> {
        &self.signals
    }

    /// Signal ids in corpus order (sorted).
    pub fn signal_ids(&self) -> Vec<String> {
        self.signals.keys().cloned().collect()
    }

    pub fn transcripts(&self) -> &[Transcript] {
        &self.transcripts
    }

    pub fn gold(&self) -> Option<&[GoldAnnotation]> {
        self.gold.as_deref()
    }

    /// Writes the corpus as a manifest with one CSV per signal plus
    /// transcript and gold line files. `Corpus::load` on the written paths
    /// restores an identical corpus.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let signal_dir = dir.join("signals");
        fs::create_dir_all(&signal_dir).map_err(io_err(&signal_dir))?;
        let mut entries = Vec::with_capacity(self.signals.len());
        for signal in self.signals.values() {
            let file = format!("{}.csv", signal.id);
            let path = signal_dir.join(&file);
            write_atomic(&path, signal_to_csv(&signal.samples).as_bytes()).map_err(io_err(&path))?;
            entries.push(ManifestEntry {
                id: Some(signal.id.clone()),
                file: PathBuf::from(file),
                sample_rate: Some(signal.sample_rate),
            });
        }
        let manifest = Manifest { signals: entries };
        let manifest_path = signal_dir.join(MANIFEST_FILE);
        let text = toml::to_string(&manifest).map_err(|e| CorpusError::Manifest {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
        write_atomic(&manifest_path, text.as_bytes()).map_err(io_err(&manifest_path))?;

        let path = dir.join("transcripts.jsonl");
        write_atomic(&path, to_json_lines(&self.transcripts).as_bytes()).map_err(io_err(&path))?;
        if let Some(gold) = &self.gold {
            let path = dir.join("gold.jsonl");
            write_atomic(&path, to_json_lines(gold).as_bytes()).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

pub(crate) fn to_json_lines<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for record in records {
        // serialization of plain structs cannot fail
        out.push_str(&serde_json::to_string(record).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// One sample per line, shortest representation that round-trips.
pub fn signal_to_csv(samples: &[f64]) -> String {
    let mut out = String::with_capacity(samples.len() * 12);
    for s in samples {
        let _ = writeln!(out, "{s:?}");
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    signals: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_rate: Option<u32>,
}

/// Loads every signal named by a manifest file, or by a directory.
///
/// A directory containing `manifest.toml` is read through the manifest.
/// Otherwise its `.wav` files are loaded directly; CSV files need a manifest
/// because they carry no sample rate.
pub fn load_signals(path: &Path) -> Result<BTreeMap<String, Signal>> {
    let metadata = fs::metadata(path).map_err(io_err(path))?;
    let entries: Vec<(String, PathBuf, Option<u32>)> = if metadata.is_dir() {
        let manifest = path.join(MANIFEST_FILE);
        if manifest.is_file() {
            read_manifest(&manifest)?
        } else {
            scan_directory(path)?
        }
    } else {
        read_manifest(path)?
    };

    let loaded: Vec<Signal> = entries
        .par_iter()
        .map(|(id, file, rate)| load_signal_file(id, file, *rate))
        .collect::<Result<_>>()?;

    let mut signals = BTreeMap::new();
    for signal in loaded {
        if signals.contains_key(&signal.id) {
            return Err(CorpusError::DuplicateSignal(signal.id));
        }
        signals.insert(signal.id.clone(), signal);
    }
    if signals.is_empty() {
        return Err(CorpusError::NoSignals);
    }
    Ok(signals)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_manifest(path: &Path) -> Result<Vec<(String, PathBuf, Option<u32>)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(manifest
        .signals
        .into_iter()
        .map(|entry| {
            let file = base.join(&entry.file);
            let id = entry.id.unwrap_or_else(|| file_stem(&entry.file));
            (id, file, entry.sample_rate)
        })
        .collect())
}

fn scan_directory(dir: &Path) -> Result<Vec<(String, PathBuf, Option<u32>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        match extension(&path).as_deref() {
            Some("wav") => files.push((file_stem(&path), path, None)),
            Some("csv") => {
                return Err(CorpusError::MissingSampleRate {
                    id: file_stem(&path),
                    path,
                })
            }
            _ => {}
        }
    }
    files.sort();
    Ok(files)
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

fn load_signal_file(id: &str, path: &Path, rate: Option<u32>) -> Result<Signal> {
    let (samples, sample_rate) = if extension(path).as_deref() == Some("wav") {
        let (samples, header_rate) = read_wav(path)?;
        (samples, rate.unwrap_or(header_rate))
    } else {
        let rate = rate.ok_or_else(|| CorpusError::MissingSampleRate {
            path: path.to_path_buf(),
            id: id.to_string(),
        })?;
        (read_csv_samples(path)?, rate)
    };
    if samples.is_empty() {
        return Err(CorpusError::EmptySignal {
            path: path.to_path_buf(),
        });
    }
    if sample_rate == 0 {
        return Err(CorpusError::BadSampleRate { id: id.to_string() });
    }
    Ok(Signal {
        id: id.to_string(),
        samples,
        sample_rate,
    })
}

/// Reads a mono PCM WAV file, scaling integer samples by `2^(bits-1)`.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let wav_err = |source| CorpusError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CorpusError::MultiChannel {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Int => {
            if !matches!(spec.bits_per_sample, 8 | 16 | 24 | 32) {
                return Err(CorpusError::UnsupportedWav {
                    path: path.to_path_buf(),
                    detail: format!("{} bits per sample", spec.bits_per_sample),
                });
            }
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(wav_err)?
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
    };
    Ok((samples, spec.sample_rate))
}

/// Writes a 16-bit mono PCM WAV. Samples are clamped to `[-1, 1)`.
pub fn write_wav16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let wav_err = |source| CorpusError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Parses floats separated by commas, whitespace or newlines.
pub fn read_csv_samples(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut samples = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for (cell_no, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let value = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CorpusError::BadCell {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    cell: cell_no + 1,
                    value: cell.to_string(),
                })?;
            samples.push(value);
        }
    }
    if samples.is_empty() {
        return Err(CorpusError::EmptySignal {
            path: path.to_path_buf(),
        });
    }
    Ok(samples)
}

#[derive(Deserialize)]
struct TranscriptRecord {
    signal_id: String,
    participant_id: String,
    text: String,
}

#[derive(Deserialize)]
struct GoldRecord {
    signal_id: String,
    participant_id: String,
    keywords: Vec<String>,
}

fn for_each_record<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = fs::File::open(path).map_err(io_err(path))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<T>(&line).map_err(|e| CorpusError::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        f(idx + 1, record)?;
    }
    Ok(())
}

/// Reads transcripts in file order. Several records may share a
/// (signal, participant) pair.
pub fn load_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    let mut out = Vec::new();
    for_each_record(path, |line, r: TranscriptRecord| {
        if r.text.trim().is_empty() {
            return Err(CorpusError::Record {
                path: path.to_path_buf(),
                line,
                message: "empty text".into(),
            });
        }
        out.push(Transcript {
            signal_id: r.signal_id,
            participant_id: r.participant_id,
            text: r.text,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Reads gold annotations, normalizing every keyword.
pub fn load_gold(path: &Path) -> Result<Vec<GoldAnnotation>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for_each_record(path, |_, r: GoldRecord| {
        let key = TranscriptKey::new(&r.signal_id, &r.participant_id);
        if !seen.insert(key) {
            return Err(CorpusError::DuplicateGold {
                signal_id: r.signal_id,
                participant_id: r.participant_id,
            });
        }
        let keywords = r
            .keywords
            .iter()
            .map(|k| normalize_keyword(k))
            .filter(|k| !k.is_empty())
            .collect();
        out.push(GoldAnnotation {
            signal_id: r.signal_id,
            participant_id: r.participant_id,
            keywords,
        });
        Ok(())
    })?;
    Ok(out)
}
