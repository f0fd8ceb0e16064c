//! The seven statistical waveform features and their corpus-level
//! normalization.
//!
//! Every function is pure. Amplitude-relative thresholds make the pulse
//! features invariant to positive gain.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Signal};
use crate::util::{fmt_sig9, mean_std};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty signal")]
    EmptySignal,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("feature table: {0}")]
    Table(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, FeatureError>;

/// The seven features, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    MeanAmplitude,
    Rms,
    PulseCount,
    StdPulseDistance,
    ZeroCount,
    MeanOnsetStrength,
    SpectralCentroid,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::MeanAmplitude,
        Feature::Rms,
        Feature::PulseCount,
        Feature::StdPulseDistance,
        Feature::ZeroCount,
        Feature::MeanOnsetStrength,
        Feature::SpectralCentroid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name used in stage files.
    pub fn name(self) -> &'static str {
        match self {
            Feature::MeanAmplitude => "mean_amplitude",
            Feature::Rms => "rms",
            Feature::PulseCount => "pulse_count",
            Feature::StdPulseDistance => "std_pulse_distance",
            Feature::ZeroCount => "zero_count",
            Feature::MeanOnsetStrength => "mean_onset_strength",
            Feature::SpectralCentroid => "spectral_centroid",
        }
    }

    /// Human readable label used in the text report.
    pub fn label(self) -> &'static str {
        match self {
            Feature::MeanAmplitude => "Mean Amplitude",
            Feature::Rms => "RMS",
            Feature::PulseCount => "Pulse Count",
            Feature::StdPulseDistance => "Std Pulse Distance",
            Feature::ZeroCount => "Zero Count",
            Feature::MeanOnsetStrength => "Mean Onset Strength",
            Feature::SpectralCentroid => "Spectral Centroid",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Tunable DSP parameters. Defaults: pulses above 10 % of the peak with
/// silences shorter than 10 ms merged; 1024-sample frames with a 512 hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub threshold_ratio: f64,
    /// Seconds.
    pub min_gap: f64,
    pub onset_frame: usize,
    pub onset_hop: usize,
    pub centroid_frame: usize,
    pub centroid_hop: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            threshold_ratio: 0.1,
            min_gap: 0.010,
            onset_frame: 1024,
            onset_hop: 512,
            centroid_frame: 1024,
            centroid_hop: 512,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold_ratio)?;
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return Err(FeatureError::InvalidParameter(format!(
                "min_gap must be a non-negative number of seconds, got {}",
                self.min_gap
            )));
        }
        check_framing(self.onset_frame, self.onset_hop)?;
        check_framing(self.centroid_frame, self.centroid_hop)?;
        if !self.centroid_frame.is_power_of_two() {
            return Err(FeatureError::InvalidParameter(format!(
                "centroid frame must be a power of two, got {}",
                self.centroid_frame
            )));
        }
        Ok(())
    }
}

fn check_threshold(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(FeatureError::InvalidParameter(format!(
            "threshold ratio must lie in (0, 1), got {ratio}"
        )))
    }
}

fn check_framing(frame: usize, hop: usize) -> Result<()> {
    if frame < 2 || hop < 1 || hop > frame {
        return Err(FeatureError::InvalidParameter(format!(
            "need frame >= 2 and 1 <= hop <= frame, got frame {frame}, hop {hop}"
        )));
    }
    Ok(())
}

/// Mean of the rectified samples.
pub fn mean_amplitude(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(FeatureError::EmptySignal);
    }
    Ok(samples.iter().map(|s| s.abs()).sum::<f64>() / samples.len() as f64)
}

pub fn rms(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(FeatureError::EmptySignal);
    }
    Ok((samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt())
}

/// An above-threshold burst. `end` is exclusive: the time just after the
/// last loud sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub start: f64,
    pub end: f64,
}

/// Finds maximal runs with `|x| >= threshold_ratio * max|x|`, merging runs
/// separated by less than `min_gap` seconds of silence.
pub fn detect_pulses(samples: &[f64], sample_rate: u32, threshold_ratio: f64, min_gap: f64) -> Result<Vec<Pulse>> {
    check_threshold(threshold_ratio)?;
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    let threshold = threshold_ratio * peak;
    let rate = sample_rate as f64;

    // half-open sample ranges
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        let loud = s.abs() >= threshold;
        match (loud, current) {
            (true, None) => current = Some(i),
            (false, Some(start)) => {
                runs.push((start, i));
                current = None;
            }
            _ => {}
        }
    }
    if let Some(start) = current {
        runs.push((start, samples.len()));
    }

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for run in runs {
        match merged.last_mut() {
            Some(last) if ((run.0 - last.1) as f64 / rate) < min_gap => last.1 = run.1,
            _ => merged.push(run),
        }
    }
    Ok(merged
        .into_iter()
        .map(|(a, b)| Pulse {
            start: a as f64 / rate,
            end: b as f64 / rate,
        })
        .collect())
}

pub fn pulse_count(samples: &[f64], sample_rate: u32, params: &FeatureParams) -> Result<usize> {
    Ok(detect_pulses(samples, sample_rate, params.threshold_ratio, params.min_gap)?.len())
}

/// Population standard deviation of the silences between consecutive
/// pulses, in seconds. Zero with fewer than two pulses.
pub fn std_pulse_distance(pulses: &[Pulse]) -> f64 {
    if pulses.len() < 2 {
        return 0.0;
    }
    let gaps: Vec<f64> = pulses.windows(2).map(|w| w[1].start - w[0].end).collect();
    mean_std(&gaps).1
}

/// Number of sign changes between consecutive samples. Zeros keep the
/// sign of the last non-zero sample.
pub fn zero_count(samples: &[f64]) -> usize {
    let mut previous: Option<bool> = None;
    let mut count = 0;
    for &s in samples {
        if s == 0.0 {
            continue;
        }
        let positive = s > 0.0;
        if previous.is_some_and(|p| p != positive) {
            count += 1;
        }
        previous = Some(positive);
    }
    count
}

/// Frame start offsets; a signal shorter than one frame yields a single
/// zero-padded frame at offset 0.
fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    let last = len.saturating_sub(frame);
    (0..=last).step_by(hop)
}

fn frame_slice(samples: &[f64], start: usize, frame: usize) -> &[f64] {
    &samples[start..(start + frame).min(samples.len())]
}

/// Mean of the half-wave rectified first difference of the frame-RMS
/// envelope.
pub fn mean_onset_strength(samples: &[f64], frame: usize, hop: usize) -> Result<f64> {
    check_framing(frame, hop)?;
    let envelope: Vec<f64> = frame_starts(samples.len(), frame, hop)
        .map(|start| {
            let chunk = frame_slice(samples, start, frame);
            // zero padding: divide by the full frame length
            (chunk.iter().map(|s| s * s).sum::<f64>() / frame as f64).sqrt()
        })
        .collect();
    if envelope.len() < 2 {
        return Ok(0.0);
    }
    let total: f64 = envelope.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum();
    Ok(total / (envelope.len() - 1) as f64)
}

/// Periodic Hann window.
pub fn hann(frame: usize) -> Vec<f64> {
    (0..frame)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame as f64).cos())
        .collect()
}

struct CentroidAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    frame: usize,
    hop: usize,
}

impl CentroidAnalyzer {
    fn new(frame: usize, hop: usize) -> Result<Self> {
        check_framing(frame, hop)?;
        if !frame.is_power_of_two() {
            return Err(FeatureError::InvalidParameter(format!(
                "centroid frame must be a power of two, got {frame}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(frame);
        Ok(Self {
            fft,
            window: hann(frame),
            frame,
            hop,
        })
    }

    fn centroid(&self, samples: &[f64], sample_rate: u32) -> f64 {
        let bin_hz = sample_rate as f64 / self.frame as f64;
        let mut buffer = vec![Complex::new(0.0, 0.0); self.frame];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut sum = 0.0;
        let mut frames = 0usize;
        for start in frame_starts(samples.len(), self.frame, self.hop) {
            let chunk = frame_slice(samples, start, self.frame);
            for (i, slot) in buffer.iter_mut().enumerate() {
                let x = chunk.get(i).copied().unwrap_or(0.0);
                *slot = Complex::new(x * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buffer, &mut scratch);
            let (mut weighted, mut total) = (0.0, 0.0);
            for (k, x) in buffer[..=self.frame / 2].iter().enumerate() {
                let mag = x.norm();
                weighted += k as f64 * bin_hz * mag;
                total += mag;
            }
            if total > 0.0 {
                sum += weighted / total;
            }
            frames += 1;
        }
        sum / frames as f64
    }
}

/// Mean over Hann-windowed frames of the magnitude-weighted mean frequency
/// (Hz) of the non-negative frequency bins.
pub fn spectral_centroid(samples: &[f64], sample_rate: u32, frame: usize, hop: usize) -> Result<f64> {
    Ok(CentroidAnalyzer::new(frame, hop)?.centroid(samples, sample_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_amplitude: f64,
    pub rms: f64,
    pub pulse_count: usize,
    /// Seconds.
    pub std_pulse_distance: f64,
    pub zero_count: usize,
    pub mean_onset_strength: f64,
    /// Hz.
    pub spectral_centroid: f64,
}

impl FeatureVector {
    pub fn extract(signal: &Signal, params: &FeatureParams) -> Result<Self> {
        params.validate()?;
        let analyzer = CentroidAnalyzer::new(params.centroid_frame, params.centroid_hop)?;
        Self::extract_with(signal, params, &analyzer)
    }

    fn extract_with(signal: &Signal, params: &FeatureParams, analyzer: &CentroidAnalyzer) -> Result<Self> {
        let samples = &signal.samples;
        let pulses = detect_pulses(samples, signal.sample_rate, params.threshold_ratio, params.min_gap)?;
        Ok(Self {
            mean_amplitude: mean_amplitude(samples)?,
            rms: rms(samples)?,
            pulse_count: pulses.len(),
            std_pulse_distance: std_pulse_distance(&pulses),
            zero_count: zero_count(samples),
            mean_onset_strength: mean_onset_strength(samples, params.onset_frame, params.onset_hop)?,
            spectral_centroid: analyzer.centroid(samples, signal.sample_rate),
        })
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.mean_amplitude,
            self.rms,
            self.pulse_count as f64,
            self.std_pulse_distance,
            self.zero_count as f64,
            self.mean_onset_strength,
            self.spectral_centroid,
        ]
    }
}

/// Signals × seven features, rows in corpus id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub signal_ids: Vec<String>,
    pub values: Vec<[f64; 7]>,
    pub normalized: bool,
    /// Populated by normalization for constant columns.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FeatureMatrix {
    pub fn column(&self, feature: Feature) -> Vec<f64> {
        self.values.iter().map(|row| row[feature.index()]).collect()
    }

    pub fn len(&self) -> usize {
        self.signal_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal_ids.is_empty()
    }

    /// CSV with a `signal_id` column followed by the seven features at
    /// nine significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("signal_id");
        for f in Feature::ALL {
            out.push(',');
            out.push_str(f.name());
        }
        out.push('\n');
        for (id, row) in self.signal_ids.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                out.push(',');
                out.push_str(&fmt_sig9(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, normalized: bool) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| FeatureError::Table("empty file".into()))?;
        let expected: Vec<&str> = std::iter::once("signal_id")
            .chain(Feature::ALL.iter().map(|f| f.name()))
            .collect();
        if header.split(',').map(str::trim).collect::<Vec<_>>() != expected {
            return Err(FeatureError::Table(format!("unexpected header {header:?}")));
        }
        let mut signal_ids = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 8 {
                return Err(FeatureError::Table(format!("line {}: expected 8 cells", n + 2)));
            }
            let mut row = [0.0; 7];
            for (slot, cell) in row.iter_mut().zip(&cells[1..]) {
                *slot = cell
                    .trim()
                    .parse()
                    .map_err(|_| FeatureError::Table(format!("line {}: bad number {cell:?}", n + 2)))?;
            }
            signal_ids.push(cells[0].to_string());
            values.push(row);
        }
        Ok(Self {
            signal_ids,
            values,
            normalized,
            warnings: Vec::new(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, self.to_csv().as_bytes()).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Sidecar record written next to the feature CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetadata {
    pub params: FeatureParams,
    pub normalization: String,
    pub warnings: Vec<String>,
}

/// Extracts one feature row per signal in corpus order.
pub fn extract_all(corpus: &Corpus, params: &FeatureParams) -> Result<FeatureMatrix> {
    extract_signals(corpus.signals().values(), params)
}

pub fn extract_signals<'a, I>(signals: I, params: &FeatureParams) -> Result<FeatureMatrix>
where
    I: IntoIterator<Item = &'a Signal>,
{
    params.validate()?;
    let signals: Vec<&Signal> = signals.into_iter().collect();
    let analyzer = CentroidAnalyzer::new(params.centroid_frame, params.centroid_hop)?;
    let values = signals
        .par_iter()
        .map(|s| FeatureVector::extract_with(s, params, &analyzer).map(|v| v.to_array()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        signal_ids: signals.iter().map(|s| s.id.clone()).collect(),
        values,
        normalized: false,
        warnings: Vec::new(),
    })
}

/// Per-column z-score with the population standard deviation. Constant
/// columns become all zeros and are reported in `warnings`.
pub fn normalize_features(matrix: &FeatureMatrix) -> FeatureMatrix {
    let mut values = matrix.values.clone();
    let mut warnings = Vec::new();
    for feature in Feature::ALL {
        let column = matrix.column(feature);
        let j = feature.index();
        let constant = column.windows(2).all(|w| w[0] == w[1]);
        if constant {
            if !column.is_empty() {
                log::warn!("feature {} is constant across signals", feature.name());
                warnings.push(format!("constant column: {}", feature.name()));
            }
            values.iter_mut().for_each(|row| row[j] = 0.0);
            continue;
        }
        let (mean, std) = mean_std(&column);
        for row in values.iter_mut() {
            row[j] = (row[j] - mean) / std;
        }
    }
    FeatureMatrix {
        signal_ids: matrix.signal_ids.clone(),
        values,
        normalized: true,
        warnings,
    }
}

/// Renders the metadata sidecar as pretty JSON.
pub fn metadata_json(params: &FeatureParams, normalized: &FeatureMatrix) -> String {
    let meta = FeatureMetadata {
        params: params.clone(),
        normalization: "z-score (population std)".into(),
        warnings: normalized.warnings.clone(),
    };
    let mut s = serde_json::to_string_pretty(&meta).expect("serializable metadata");
    let _ = writeln!(s);
    s
}
