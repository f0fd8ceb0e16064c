//! Signal × cluster keyword counts, feature/cluster Pearson correlations,
//! and the largest-correlation summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterSet;
use crate::features::{Feature, FeatureMatrix};
use crate::lexicon::{split_csv_line, Sentiment};
use crate::util::fmt_fixed6;

/// Clusters whose |r| is within this of the maximum are reported alongside it.
pub const TIE_WINDOW: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("keyword {keyword:?} attributed to unknown signal {signal:?}")]
    UnknownSignal { signal: String, keyword: String },
    #[error("feature rows {features:?} do not match count rows {counts:?}")]
    RowOrderMismatch { features: Vec<String>, counts: Vec<String> },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

type Result<T> = std::result::Result<T, CorrelationError>;

/// Rows are signals, columns are clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub sentiment: Sentiment,
    pub signal_ids: Vec<String>,
    pub cluster_ids: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl CountMatrix {
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.counts.iter().map(|row| row[c] as f64).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("signal_id");
        for id in &self.cluster_ids {
            write!(out, ",{id}").unwrap();
        }
        out.push('\n');
        for (id, row) in self.signal_ids.iter().zip(&self.counts) {
            out.push_str(id);
            for n in row {
                write!(out, ",{n}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, sentiment: Sentiment) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let mut columns = header.split(',');
        if columns.next() != Some("signal_id") {
            return Err(CorrelationError::Parse {
                line: 1,
                message: "header must start with signal_id".into(),
            });
        }
        let cluster_ids: Vec<String> = columns.map(str::to_string).collect();
        let mut signal_ids = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let err = |message: String| CorrelationError::Parse { line: i + 2, message };
            let mut cells = line.split(',');
            signal_ids.push(cells.next().unwrap_or_default().to_string());
            let row: Vec<u64> = cells
                .map(|c| c.parse().map_err(|_| err(format!("bad count {c:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != cluster_ids.len() {
                return Err(err(format!(
                    "expected {} counts, found {}",
                    cluster_ids.len(),
                    row.len()
                )));
            }
            counts.push(row);
        }
        Ok(Self {
            sentiment,
            signal_ids,
            cluster_ids,
            counts,
        })
    }
}

/// Cell `(s, c)` is the number of occurrences, across all of signal `s`'s
/// transcripts, of keywords belonging to cluster `c`. Keywords outside the
/// clusters are ignored; every signal in `signal_ids` gets a row.
pub fn build_count_matrix(
    signal_ids: &[String],
    keywords_by_signal: &BTreeMap<String, Vec<String>>,
    clusters: &ClusterSet,
) -> Result<CountMatrix> {
    let row_of: BTreeMap<&str, usize> = signal_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let column_of = clusters.assignment();
    let mut counts = vec![vec![0u64; clusters.clusters.len()]; signal_ids.len()];
    for (signal, keywords) in keywords_by_signal {
        let Some(&row) = row_of.get(signal.as_str()) else {
            if let Some(keyword) = keywords.first() {
                return Err(CorrelationError::UnknownSignal {
                    signal: signal.clone(),
                    keyword: keyword.clone(),
                });
            }
            continue;
        };
        for keyword in keywords {
            if let Some(&c) = column_of.get(keyword.as_str()) {
                counts[row][c] += 1;
            }
        }
    }
    Ok(CountMatrix {
        sentiment: clusters.sentiment,
        signal_ids: signal_ids.to_vec(),
        cluster_ids: clusters.ids(),
        counts,
    })
}

/// Pearson's r, or `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CorrelationError::TooShort(x.len()));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Seven feature rows × cluster columns; `None` marks an undefined cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub sentiment: Sentiment,
    pub cluster_ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, feature: Feature, cluster: usize) -> Option<f64> {
        self.values[feature.index()][cluster]
    }

    /// Header `feature,<cluster ids>`; six decimals; empty cell when undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for id in &self.cluster_ids {
            write!(out, ",{id}").unwrap();
        }
        out.push('\n');
        for feature in Feature::ALL {
            out.push_str(feature.name());
            for cell in &self.values[feature.index()] {
                out.push(',');
                if let Some(r) = cell {
                    out.push_str(&fmt_fixed6(*r));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, sentiment: Sentiment) -> Result<Self> {
        let mut lines = text.lines();
        let header = split_csv_line(lines.next().unwrap_or_default());
        if header.first().map(String::as_str) != Some("feature") {
            return Err(CorrelationError::Parse {
                line: 1,
                message: "header must start with feature".into(),
            });
        }
        let cluster_ids = header[1..].to_vec();
        let mut values = vec![Vec::new(); Feature::ALL.len()];
        let mut seen = 0;
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let err = |message: String| CorrelationError::Parse { line: i + 2, message };
            let cells = split_csv_line(line);
            let feature =
                Feature::from_name(&cells[0]).ok_or_else(|| err(format!("unknown feature {:?}", cells[0])))?;
            if cells.len() != cluster_ids.len() + 1 {
                return Err(err("wrong number of cells".into()));
            }
            values[feature.index()] = cells[1..]
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some).map_err(|_| err(format!("bad value {c:?}")))
                    }
                })
                .collect::<Result<_>>()?;
            seen += 1;
        }
        if seen != Feature::ALL.len() {
            return Err(CorrelationError::Parse {
                line: 0,
                message: format!("expected {} feature rows, found {seen}", Feature::ALL.len()),
            });
        }
        Ok(Self {
            sentiment,
            cluster_ids,
            values,
        })
    }
}

/// Correlates every feature column with every cluster column. Both inputs
/// must list the same signals in the same order.
pub fn correlate_all(features: &FeatureMatrix, counts: &CountMatrix) -> Result<CorrelationMatrix> {
    if features.signal_ids != counts.signal_ids {
        return Err(CorrelationError::RowOrderMismatch {
            features: features.signal_ids.clone(),
            counts: counts.signal_ids.clone(),
        });
    }
    let columns: Vec<Vec<f64>> = (0..counts.cluster_ids.len()).map(|c| counts.column(c)).collect();
    let values = Feature::ALL
        .par_iter()
        .map(|&feature| {
            let x = features.column(feature);
            columns.iter().map(|y| pearson(&x, y)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationMatrix {
        sentiment: counts.sentiment,
        cluster_ids: counts.cluster_ids.clone(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub cluster_id: String,
    pub top_keyword: String,
    pub r: f64,
    pub sign: char,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub feature: Feature,
    pub sentiment: Sentiment,
    pub cells: Vec<ReportCell>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LargestCorrelationReport {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

/// Per feature, the cluster with the largest |r| plus every cluster within
/// [`TIE_WINDOW`] of it, ordered by |r| descending then column order.
pub fn largest_report(corr: &CorrelationMatrix, labels: &ClusterSet) -> LargestCorrelationReport {
    let top: BTreeMap<&str, &str> = labels
        .clusters
        .iter()
        .map(|c| (c.id.as_str(), c.top_keyword().unwrap_or("")))
        .collect();
    let mut report = LargestCorrelationReport::default();
    for feature in Feature::ALL {
        let defined: Vec<(usize, f64)> = corr.values[feature.index()]
            .iter()
            .enumerate()
            .filter_map(|(c, r)| r.map(|r| (c, r)))
            .collect();
        let Some(max) = defined.iter().map(|(_, r)| r.abs()).reduce(f64::max) else {
            report.warnings.push(format!(
                "{}: every {} cluster correlation is undefined",
                feature.name(),
                corr.sentiment
            ));
            report.rows.push(ReportRow {
                feature,
                sentiment: corr.sentiment,
                cells: Vec::new(),
            });
            continue;
        };
        // the epsilon keeps decimal boundaries such as 0.50 vs 0.48 inside the window
        let floor = max - TIE_WINDOW - 1e-12;
        let mut chosen: Vec<(usize, f64)> = defined.into_iter().filter(|(_, r)| r.abs() >= floor).collect();
        chosen.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        let cells = chosen
            .into_iter()
            .map(|(c, r)| {
                let cluster_id = corr.cluster_ids[c].clone();
                ReportCell {
                    top_keyword: top.get(cluster_id.as_str()).unwrap_or(&"").to_string(),
                    cluster_id,
                    r,
                    sign: if r < 0.0 { '-' } else { '+' },
                }
            })
            .collect();
        report.rows.push(ReportRow {
            feature,
            sentiment: corr.sentiment,
            cells,
        });
    }
    report
}

impl LargestCorrelationReport {
    pub fn extend(&mut self, other: LargestCorrelationReport) {
        self.rows.extend(other.rows);
        self.warnings.extend(other.warnings);
    }

    pub fn row(&self, feature: Feature, sentiment: Sentiment) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.feature == feature && r.sentiment == sentiment)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// One line per feature with a column per sentiment present, cells
    /// rendered as `+P3: smooth (0.812345)`.
    pub fn to_text(&self) -> String {
        let sentiments: Vec<Sentiment> = Sentiment::BOTH
            .into_iter()
            .filter(|s| self.rows.iter().any(|r| r.sentiment == *s))
            .collect();
        let mut table: Vec<Vec<String>> = vec![std::iter::once("Feature".to_string())
            .chain(sentiments.iter().map(|s| {
                let mut name = s.name().to_string();
                name[..1].make_ascii_uppercase();
                name
            }))
            .collect()];
        for feature in Feature::ALL {
            let mut line = vec![feature.label().to_string()];
            for &s in &sentiments {
                let cell = match self.row(feature, s) {
                    Some(row) if !row.cells.is_empty() => row
                        .cells
                        .iter()
                        .map(|c| format!("{}{}: {} ({})", c.sign, c.cluster_id, c.top_keyword, fmt_fixed6(c.r)))
                        .collect::<Vec<_>>()
                        .join("; "),
                    _ => "undefined".to_string(),
                };
                line.push(cell);
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in table.iter().enumerate() {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        for w in &self.warnings {
            writeln!(out, "warning: {w}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{Cluster, ClusterMember};
    use proptest::prelude::*;

    fn set(sentiment: Sentiment, clusters: &[(&str, &[(&str, usize)])]) -> ClusterSet {
        ClusterSet {
            sentiment,
            clusters: clusters
                .iter()
                .map(|(id, members)| Cluster {
                    id: id.to_string(),
                    members: members
                        .iter()
                        .map(|(k, f)| ClusterMember {
                            keyword: k.to_string(),
                            frequency: *f,
                        })
                        .collect(),
                    label: members.iter().take(3).map(|(k, _)| k.to_string()).collect(),
                })
                .collect(),
        }
    }

    fn matrix(values: &[Option<f64>]) -> CorrelationMatrix {
        let ids: Vec<String> = (1..=values.len()).map(|i| format!("P{i}")).collect();
        let mut rows = vec![vec![None; values.len()]; 7];
        rows[Feature::PulseCount.index()] = values.to_vec();
        CorrelationMatrix {
            sentiment: Sentiment::Positive,
            cluster_ids: ids,
            values: rows,
        }
    }

    fn ids(report: &LargestCorrelationReport, feature: Feature) -> Vec<String> {
        report
            .row(feature, Sentiment::Positive)
            .unwrap()
            .cells
            .iter()
            .map(|c| c.cluster_id.clone())
            .collect()
    }

    #[test]
    fn counts_are_occurrences() {
        let clusters = set(
            Sentiment::Positive,
            &[("P1", &[("urgent", 0), ("alert", 0)]), ("P2", &[("calm", 0)])],
        );
        let signals = vec!["s1".to_string(), "s2".to_string()];
        let kw: BTreeMap<String, Vec<String>> = [(
            "s1".to_string(),
            vec!["urgent".into(), "urgent".into(), "smooth".into()],
        )]
        .into();
        let m = build_count_matrix(&signals, &kw, &clusters).unwrap();
        assert_eq!(m.counts, [[2, 0], [0, 0]]);
        assert_eq!(CountMatrix::from_csv(&m.to_csv(), Sentiment::Positive).unwrap(), m);

        let bad: BTreeMap<String, Vec<String>> = [("s9".to_string(), vec!["urgent".into()])].into();
        assert!(matches!(
            build_count_matrix(&signals, &bad, &clusters),
            Err(CorrelationError::UnknownSignal { .. })
        ));
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[3.0; 4]).unwrap(), None);
        assert_eq!(pearson(&[0.1; 3], &x[..3]).unwrap(), None);
        assert_eq!(pearson(&x, &x[..3]), Err(CorrelationError::LengthMismatch(4, 3)));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(CorrelationError::TooShort(1)));
    }

    #[test]
    fn tie_window() {
        let labels = set(
            Sentiment::Positive,
            &[("P1", &[("smooth", 3)]), ("P2", &[("soft", 2)]), ("P3", &[("calm", 1)])],
        );
        let r = largest_report(&matrix(&[Some(0.50), Some(0.49), Some(0.30)]), &labels);
        assert_eq!(ids(&r, Feature::PulseCount), ["P1", "P2"]);
        let r = largest_report(&matrix(&[Some(0.50), Some(0.47), Some(0.30)]), &labels);
        assert_eq!(ids(&r, Feature::PulseCount), ["P1"]);
        let r = largest_report(&matrix(&[Some(0.50), Some(0.48), None]), &labels);
        assert_eq!(ids(&r, Feature::PulseCount), ["P1", "P2"]);

        let r = largest_report(&matrix(&[Some(-0.6), Some(0.3), None]), &labels);
        let cells = &r.row(Feature::PulseCount, Sentiment::Positive).unwrap().cells;
        assert_eq!(cells.len(), 1);
        assert_eq!((cells[0].sign, cells[0].top_keyword.as_str()), ('-', "smooth"));

        // rows with nothing defined produce an empty list and a warning
        assert!(ids(&r, Feature::Rms).is_empty());
        assert_eq!(r.warnings.len(), 6);
        assert!(r.to_text().contains("-P1: smooth (-0.600000)"));
        assert_eq!(LargestCorrelationReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = matrix(&[Some(0.123456), None, Some(-1.0)]);
        let text = m.to_csv();
        assert!(text.contains("pulse_count,0.123456,,-1.000000"));
        assert_eq!(CorrelationMatrix::from_csv(&text, Sentiment::Positive).unwrap(), m);
    }

    #[test]
    fn row_order_checked() {
        let features = FeatureMatrix {
            signal_ids: vec!["a".into(), "b".into()],
            values: vec![[0.0; 7], [1.0; 7]],
            normalized: false,
            warnings: vec![],
        };
        let counts = CountMatrix {
            sentiment: Sentiment::Negative,
            signal_ids: vec!["b".into(), "a".into()],
            cluster_ids: vec!["N1".into()],
            counts: vec![vec![1], vec![0]],
        };
        assert!(matches!(
            correlate_all(&features, &counts),
            Err(CorrelationError::RowOrderMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(x in prop::collection::vec(-1e3f64..1e3, 2..40), seed in 0u64..1000) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.37 + (i as f64 * seed as f64).sin()).collect();
            let a = pearson(&x, &y).unwrap();
            prop_assert_eq!(a, pearson(&y, &x).unwrap());
            if let Some(r) = a {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn column_permutation_equivariance(cols in prop::collection::vec(prop::collection::vec(0u64..6, 6), 1..6), rot in 0usize..6) {
            let features = FeatureMatrix {
                signal_ids: (0..6).map(|i| format!("s{i}")).collect(),
                values: (0..6).map(|i| [i as f64, (i * i) as f64, 1.0, (i % 2) as f64, 3.0 - i as f64, (i as f64).sqrt(), 2.0 * i as f64]).collect(),
                normalized: false,
                warnings: vec![],
            };
            let k = cols.len();
            let build = |order: &[usize]| CountMatrix {
                sentiment: Sentiment::Positive,
                signal_ids: features.signal_ids.clone(),
                cluster_ids: order.iter().map(|c| format!("P{c}")).collect(),
                counts: (0..6).map(|s| order.iter().map(|&c| cols[c][s]).collect()).collect(),
            };
            let identity: Vec<usize> = (0..k).collect();
            let rotated: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
            let a = correlate_all(&features, &build(&identity)).unwrap();
            let b = correlate_all(&features, &build(&rotated)).unwrap();
            for f in 0..7 {
                for (j, &c) in rotated.iter().enumerate() {
                    prop_assert_eq!(b.values[f][j], a.values[f][c]);
                }
            }
        }

        #[test]
        fn counts_conserved(words in prop::collection::vec((0usize..3, "[a-e]"), 0..30)) {
            let clusters = set(Sentiment::Positive, &[("P1", &[("a", 0), ("b", 0)]), ("P2", &[("c", 0)])]);
            let signals: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
            let mut kw: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for (s, w) in &words {
                kw.entry(format!("s{s}")).or_default().push(w.clone());
            }
            let m = build_count_matrix(&signals, &kw, &clusters).unwrap();
            let in_vocab = words.iter().filter(|(_, w)| ["a", "b", "c"].contains(&w.as_str())).count();
            prop_assert_eq!(m.total() as usize, in_vocab);
        }
    }
}
