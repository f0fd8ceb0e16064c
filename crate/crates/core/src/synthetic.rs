//! Deterministic fixture corpus for demos, tests and benchmarks.
//!
//! Signal `i` carries `1 + i / 2` tone bursts, so 32 signals span pulse
//! counts 1 to 16. Occurrences of [`DESIGNATED_GROUP`] in each signal's
//! transcripts equal its pulse count plus 0 or 1; every other keyword group
//! appears a random 0 to 3 times. Embeddings place each group around its
//! own axis.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{signal_to_csv, to_json_lines, write_wav16, GoldAnnotation, Transcript};
use crate::embeddings::{EmbeddingSource, EmbeddingTable};
use crate::util::write_atomic;

/// Positive keywords whose counts rise with pulse count.
pub const DESIGNATED_GROUP: [&str; 4] = ["lively", "energetic", "bouncy", "rhythmic"];

struct Group {
    words: [&'static str; 4],
    positive: bool,
}

const GROUPS: [Group; 5] = [
    Group {
        words: DESIGNATED_GROUP,
        positive: true,
    },
    Group {
        words: ["calm", "gentle", "soothing", "peaceful"],
        positive: true,
    },
    Group {
        words: ["smooth", "soft", "silky", "velvety"],
        positive: true,
    },
    Group {
        words: ["harsh", "rough", "grating", "scratchy"],
        positive: false,
    },
    Group {
        words: ["annoying", "irritating", "boring", "tiresome"],
        positive: false,
    },
];

/// Words outside the lexicon; dropped by the default policy.
const NEUTRAL: [&str; 3] = ["water", "sand", "metal"];

/// Lexicon entries that never occur in transcripts.
const LEXICON_ONLY: [(&str, bool); 4] = [("happy", true), ("pleasant", true), ("sad", false), ("nasty", false)];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub signals: usize,
    pub participants: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            signals: 32,
            participants: 3,
            sample_rate: 8000,
            seed: 2024,
        }
    }
}

/// Paths of a written fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFixture {
    pub root: PathBuf,
    pub config: PathBuf,
    pub signals: PathBuf,
    pub transcripts: PathBuf,
    pub gold: PathBuf,
    pub lexicon: PathBuf,
    pub embeddings: PathBuf,
}

/// Number of bursts in fixture signal `index`.
pub fn pulses_for(index: usize) -> usize {
    1 + index / 2
}

/// `pulses` evenly spaced sine bursts of `burst` seconds within `duration`.
pub fn burst_signal(pulses: usize, sample_rate: u32, duration: f64, burst: f64, freq: f64, amplitude: f64) -> Vec<f64> {
    let rate = sample_rate as f64;
    let n = (duration * rate).round() as usize;
    let burst_len = (burst * rate).round() as usize;
    let mut out = vec![0.0; n];
    for p in 0..pulses {
        let start = ((p as f64 + 0.25) * duration / pulses as f64 * rate).round() as usize;
        for k in 0..burst_len {
            if let Some(slot) = out.get_mut(start + k) {
                // quarter-period phase offset keeps the burst edges loud
                *slot = amplitude * (2.0 * PI * freq * k as f64 / rate + PI / 2.0).sin();
            }
        }
    }
    out
}

/// Embedding table for every fixture word: group `g` clusters around axis
/// `g`, neutral words get their own axes.
pub fn fixture_embeddings(seed: u64, dimension: usize) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut entries = Vec::new();
    let mut push = |word: &str, axis: usize, rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..dimension).map(|_| rng.random_range(-0.08..0.08)).collect();
        v[axis % dimension] += 1.0;
        entries.push((word.to_string(), v));
    };
    for (g, group) in GROUPS.iter().enumerate() {
        for w in group.words {
            push(w, g, &mut rng);
        }
    }
    for (i, w) in NEUTRAL.iter().enumerate() {
        push(w, GROUPS.len() + i, &mut rng);
    }
    for (w, positive) in LEXICON_ONLY {
        // near the calm and harsh groups respectively
        push(w, if positive { 1 } else { 3 }, &mut rng);
    }
    EmbeddingTable::from_entries(EmbeddingSource::Other, entries).expect("fixture vectors are consistent")
}

/// NRC-style rows for the fixture vocabulary.
pub fn fixture_lexicon() -> String {
    let mut out = String::new();
    let words = GROUPS
        .iter()
        .flat_map(|g| g.words.iter().map(move |w| (*w, g.positive)))
        .chain(LEXICON_ONLY);
    for (w, positive) in words {
        let (p, n, emotion) = if positive { (1, 0, "joy") } else { (0, 1, "anger") };
        writeln!(out, "{w}\t{emotion}\t1\n{w}\tnegative\t{n}\n{w}\tpositive\t{p}").unwrap();
    }
    out
}

/// Writes the fixture under `dir` and returns its paths.
pub fn write_fixture(dir: &Path, options: &SyntheticOptions) -> io::Result<SyntheticFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let signal_dir = dir.join("signals");
    std::fs::create_dir_all(&signal_dir)?;

    let mut manifest = String::new();
    for i in 0..options.signals {
        let id = format!("s{:02}", i + 1);
        let freq = 150.0 + 10.0 * i as f64;
        let amplitude = rng.random_range(0.4..0.9);
        let samples = burst_signal(pulses_for(i), options.sample_rate, 1.0, 0.015, freq, amplitude);
        // alternate storage formats so both loaders are exercised
        if i % 2 == 0 {
            let file = format!("{id}.csv");
            write_atomic(&signal_dir.join(&file), signal_to_csv(&samples).as_bytes())?;
            writeln!(
                manifest,
                "[[signals]]\nid = \"{id}\"\nfile = \"{file}\"\nsample_rate = {}\n",
                options.sample_rate
            )
            .unwrap();
        } else {
            let file = format!("{id}.wav");
            write_wav16(&signal_dir.join(&file), &samples, options.sample_rate).map_err(io::Error::other)?;
            writeln!(manifest, "[[signals]]\nid = \"{id}\"\nfile = \"{file}\"\n").unwrap();
        }
    }
    write_atomic(&signal_dir.join("manifest.toml"), manifest.as_bytes())?;

    let (transcripts, gold) = fixture_transcripts(options, &mut rng);
    let fixture = SyntheticFixture {
        root: dir.to_path_buf(),
        config: dir.join("pipeline.toml"),
        signals: signal_dir,
        transcripts: dir.join("transcripts.jsonl"),
        gold: dir.join("gold.jsonl"),
        lexicon: dir.join("lexicon.tsv"),
        embeddings: dir.join("embeddings.txt"),
    };
    write_atomic(&fixture.transcripts, to_json_lines(&transcripts).as_bytes())?;
    write_atomic(&fixture.gold, to_json_lines(&gold).as_bytes())?;
    write_atomic(&fixture.lexicon, fixture_lexicon().as_bytes())?;
    let mut embeddings = Vec::new();
    fixture_embeddings(options.seed, 12).write_text_with_header(&mut embeddings)?;
    write_atomic(&fixture.embeddings, &embeddings)?;
    write_atomic(&fixture.config, FIXTURE_CONFIG.as_bytes())?;
    Ok(fixture)
}

const FIXTURE_CONFIG: &str = r#"# Pipeline configuration for the synthetic fixture corpus.
output_dir = "out"

[corpus]
signals = "signals"
transcripts = "transcripts.jsonl"
gold = "gold.jsonl"

[extraction]
method = "rule"

[extraction.llm]
cache_dir = "llm-cache"

[lexicon]
path = "lexicon.tsv"
policy = "drop"
neighbors = 5

[embeddings]
path = "embeddings.txt"
format = "word2vec-text"

[clustering.positive]
linkage = "average"
k_min = 2
k_max = 6

[clustering.negative]
linkage = "average"
k_min = 2
k_max = 6

[features]
threshold_ratio = 0.1
min_gap = 0.01
"#;

fn fixture_transcripts(options: &SyntheticOptions, rng: &mut ChaCha8Rng) -> (Vec<Transcript>, Vec<GoldAnnotation>) {
    let participants = options.participants.max(1);
    let mut transcripts = Vec::new();
    let mut gold = Vec::new();
    for i in 0..options.signals {
        let signal_id = format!("s{:02}", i + 1);
        let mut sentences: Vec<(String, Vec<&str>)> = Vec::new();
        let designated = pulses_for(i) + rng.random_range(0..=1);
        for k in 0..designated {
            let w = DESIGNATED_GROUP[(k + i) % DESIGNATED_GROUP.len()];
            sentences.push((format!("It feels {w}."), vec![w]));
        }
        for group in &GROUPS[1..] {
            for _ in 0..rng.random_range(0..=3) {
                let w = group.words[rng.random_range(0..group.words.len())];
                if !group.positive && rng.random_bool(0.2) {
                    sentences.push((format!("It is not {w}."), vec!["not", w]));
                } else {
                    sentences.push((format!("It seems quite {w}."), vec![w]));
                }
            }
        }
        if rng.random_bool(0.5) {
            let w = NEUTRAL[rng.random_range(0..NEUTRAL.len())];
            sentences.push((format!("It feels like {w}."), vec![w]));
        }
        sentences.shuffle(rng);

        let mut per_participant: Vec<(Vec<String>, BTreeSet<String>)> = vec![Default::default(); participants];
        for (n, (sentence, words)) in sentences.into_iter().enumerate() {
            let slot = &mut per_participant[n % participants];
            slot.0.push(sentence);
            slot.1.extend(words.into_iter().map(str::to_string));
        }
        for (p, (sentences, keywords)) in per_participant.into_iter().enumerate() {
            let participant_id = format!("p{:02}", p + 1);
            let text = if sentences.is_empty() {
                "Okay.".to_string()
            } else {
                sentences.join(" ")
            };
            transcripts.push(Transcript {
                signal_id: signal_id.clone(),
                participant_id: participant_id.clone(),
                text,
            });
            gold.push(GoldAnnotation {
                signal_id: signal_id.clone(),
                participant_id,
                keywords,
            });
        }
    }
    (transcripts, gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::features::{pulse_count, FeatureParams};

    #[test]
    fn fixture_loads_with_planted_pulses() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_fixture(dir.path(), &SyntheticOptions::default()).unwrap();
        let corpus = Corpus::load(&f.signals, &f.transcripts, Some(&f.gold)).unwrap();
        assert_eq!(corpus.signals().len(), 32);
        assert_eq!(corpus.transcripts().len(), 96);
        let params = FeatureParams::default();
        for (i, signal) in corpus.signals().values().enumerate() {
            assert_eq!(
                pulse_count(&signal.samples, signal.sample_rate, &params).unwrap(),
                pulses_for(i)
            );
        }
    }

    #[test]
    fn deterministic_output() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_fixture(a.path(), &SyntheticOptions::default()).unwrap();
        write_fixture(b.path(), &SyntheticOptions::default()).unwrap();
        for f in [
            "transcripts.jsonl",
            "gold.jsonl",
            "lexicon.tsv",
            "embeddings.txt",
            "signals/s02.wav",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
