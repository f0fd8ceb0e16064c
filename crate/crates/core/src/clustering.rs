//! Agglomerative clustering of keyword vectors into sentiment-specific concepts.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{cosine_distance, embed_keyword, EmbeddingError, EmbeddingTable};
use crate::lexicon::{csv_field, split_csv_line, KeywordCounts, Sentiment, SentimentedKeywords};
use crate::util::fmt_sig9;

/// Two linkage distances closer than this are treated as equal and the
/// lexicographic member rule decides.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("need at least 2 vectors to cluster, got {0}")]
    TooFewPoints(usize),
    #[error("duplicate keyword {0:?}")]
    DuplicateKeyword(String),
    #[error("keyword {keyword:?}: {source}")]
    Distance {
        keyword: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("k = {k} outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("invalid k range {lo}..={hi}: lower bound must be at least 2")]
    InvalidRange { lo: usize, hi: usize },
    #[error("cluster file line {line}: {message}")]
    Parse { line: usize, message: String },
}

type Result<T> = std::result::Result<T, ClusteringError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl Linkage {
    pub fn name(self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Single => "single",
        }
    }

    /// Lance-Williams update for the distance from cluster `k` to `i ∪ j`.
    fn combine(self, d_ki: f64, d_kj: f64, n_i: usize, n_j: usize) -> f64 {
        match self {
            Linkage::Average => (n_i as f64 * d_ki + n_j as f64 * d_kj) / (n_i + n_j) as f64,
            Linkage::Complete => d_ki.max(d_kj),
            Linkage::Single => d_ki.min(d_kj),
        }
    }
}

impl std::str::FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            other => Err(format!("unknown linkage {other:?} (average, complete, single)")),
        }
    }
}

/// Symmetric pairwise cosine distances, row-major `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vectors(points: &[(String, Vec<f64>)]) -> Result<Self> {
        let n = points.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            // still reject zero vectors on the diagonal
                            cosine_distance(&points[i].1, &points[i].1).map(|_| 0.0)
                        } else {
                            cosine_distance(&points[i].1, &points[j].1)
                        }
                        .map_err(|source| ClusteringError::Distance {
                            keyword: points[i].0.clone(),
                            source,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        // mirror the upper triangle so the matrix is exactly symmetric
        let values = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| if j < i { rows[j][i] } else { rows[i][j] })
            .collect();
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// One merge step. Leaves are nodes `0..n`; merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
}

impl Dendrogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,left,right,distance,size\n");
        for (i, m) in self.merges.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                self.node_name(m.left),
                self.node_name(m.right),
                fmt_sig9(m.distance),
                m.size
            ));
        }
        out
    }

    fn node_name(&self, node: usize) -> String {
        match self.leaves.get(node) {
            Some(leaf) => csv_field(leaf),
            None => format!("#{}", node - self.leaves.len() + 1),
        }
    }
}

struct Active {
    node: usize,
    size: usize,
    min_member: String,
}

/// Bottom-up merging over `points` with cosine distance.
pub fn agglomerate(points: &[(String, Vec<f64>)], linkage: Linkage) -> Result<Dendrogram> {
    let distances = DistanceMatrix::from_vectors(points)?;
    let leaves: Vec<String> = points.iter().map(|(k, _)| k.clone()).collect();
    agglomerate_distances(&leaves, &distances, linkage)
}

/// Merges the closest pair of active clusters until one remains. Among pairs
/// within [`TIE_TOLERANCE`] of the minimum, the pair whose smallest members
/// sort first (smaller pair minimum, then larger) wins.
pub fn agglomerate_distances(leaves: &[String], distances: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = leaves.len();
    if n < 2 {
        return Err(ClusteringError::TooFewPoints(n));
    }
    assert_eq!(distances.len(), n, "distance matrix does not match leaves");
    let mut seen = BTreeSet::new();
    for leaf in leaves {
        if !seen.insert(leaf) {
            return Err(ClusteringError::DuplicateKeyword(leaf.clone()));
        }
    }

    let mut d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| distances.get(i, j)).collect()).collect();
    let mut active: Vec<Option<Active>> = leaves
        .iter()
        .enumerate()
        .map(|(i, k)| {
            Some(Active {
                node: i,
                size: 1,
                min_member: k.clone(),
            })
        })
        .collect();
    let mut merges = Vec::with_capacity(n - 1);
    let mut previous = f64::NEG_INFINITY;

    for step in 0..n - 1 {
        let live: Vec<usize> = (0..n).filter(|&i| active[i].is_some()).collect();
        let mut min = f64::INFINITY;
        for (a, &i) in live.iter().enumerate() {
            for &j in &live[a + 1..] {
                min = min.min(d[i][j]);
            }
        }
        let mut best: Option<(usize, usize, (&str, &str))> = None;
        for (a, &i) in live.iter().enumerate() {
            for &j in &live[a + 1..] {
                if d[i][j] > min + TIE_TOLERANCE {
                    continue;
                }
                let (mi, mj) = (
                    active[i].as_ref().unwrap().min_member.as_str(),
                    active[j].as_ref().unwrap().min_member.as_str(),
                );
                let key = if mi <= mj { (mi, mj) } else { (mj, mi) };
                if best.is_none_or(|(_, _, k)| key < k) {
                    best = Some((i, j, key));
                }
            }
        }
        let (i, j, _) = best.expect("at least two active clusters");
        let distance = d[i][j];
        assert!(
            distance >= previous - 1e-9,
            "{} linkage produced a decreasing merge distance",
            linkage.name()
        );
        previous = distance;

        let ci = active[i].take().unwrap();
        let cj = active[j].take().unwrap();
        for &k in &live {
            if k != i && k != j {
                let updated = linkage.combine(d[k][i], d[k][j], ci.size, cj.size);
                d[k][i] = updated;
                d[i][k] = updated;
            }
        }
        let size = ci.size + cj.size;
        merges.push(Merge {
            left: ci.node.min(cj.node),
            right: ci.node.max(cj.node),
            distance,
            size,
        });
        active[i] = Some(Active {
            node: n + step,
            size,
            min_member: ci.min_member.min(cj.min_member),
        });
    }

    Ok(Dendrogram {
        leaves: leaves.to_vec(),
        merges,
        linkage,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub keyword: String,
    pub frequency: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub members: Vec<ClusterMember>,
    pub label: Vec<String>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, keyword: &str) -> bool {
        self.members.iter().any(|m| m.keyword == keyword)
    }

    /// Most frequent member, if labelled.
    pub fn top_keyword(&self) -> Option<&str> {
        self.label.first().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub sentiment: Sentiment,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn empty(sentiment: Sentiment) -> Self {
        Self {
            sentiment,
            clusters: Vec::new(),
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.id.clone()).collect()
    }

    /// keyword → cluster index
    pub fn assignment(&self) -> BTreeMap<&str, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.members.iter().map(move |m| (m.keyword.as_str(), i)))
            .collect()
    }

    /// Per-keyword records: `keyword,sentiment,cluster_id,frequency`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("keyword,sentiment,cluster_id,frequency\n");
        for cluster in &self.clusters {
            for m in &cluster.members {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    csv_field(&m.keyword),
                    self.sentiment,
                    cluster.id,
                    m.frequency
                ));
            }
        }
        out
    }

    /// Rebuilds a labelled set from [`ClusterSet::to_csv`] output. Cluster
    /// and member order follow the file.
    pub fn from_csv(text: &str, sentiment: Sentiment) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("keyword,sentiment,cluster_id,frequency") {
            return Err(ClusteringError::Parse {
                line: 1,
                message: "unexpected header".into(),
            });
        }
        let mut clusters: Vec<Cluster> = Vec::new();
        for (i, line) in lines.enumerate() {
            let err = |message: String| ClusteringError::Parse { line: i + 2, message };
            if line.is_empty() {
                continue;
            }
            let fields = split_csv_line(line);
            let [keyword, row_sentiment, id, frequency] = fields.as_slice() else {
                return Err(err("expected 4 fields".into()));
            };
            if row_sentiment != sentiment.name() {
                return Err(err(format!("sentiment {row_sentiment:?}, expected {sentiment}")));
            }
            let frequency = frequency
                .parse()
                .map_err(|_| err(format!("bad frequency {frequency:?}")))?;
            if clusters.last().is_none_or(|c| &c.id != id) {
                if clusters.iter().any(|c| &c.id == id) {
                    return Err(err(format!("cluster {id} is not contiguous")));
                }
                clusters.push(Cluster {
                    id: id.clone(),
                    members: Vec::new(),
                    label: Vec::new(),
                });
            }
            clusters.last_mut().unwrap().members.push(ClusterMember {
                keyword: keyword.clone(),
                frequency,
            });
        }
        for c in &mut clusters {
            c.label = c.members.iter().take(3).map(|m| m.keyword.clone()).collect();
        }
        Ok(Self { sentiment, clusters })
    }

    /// Summary: `cluster_id,size,label`.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("cluster_id,size,label\n");
        for c in &self.clusters {
            out.push_str(&format!("{},{},{}\n", c.id, c.len(), csv_field(&c.label.join(", "))));
        }
        out
    }
}

/// Undoes the last `k − 1` merges. Ids run `P1, P2, …` (or `N…`) by
/// descending size, ties by smallest member. Members are alphabetical and
/// carry no frequencies or labels yet.
pub fn cut_to_k(dendrogram: &Dendrogram, k: usize, sentiment: Sentiment) -> Result<ClusterSet> {
    let n = dendrogram.leaves.len();
    if k == 0 || k > n {
        return Err(ClusteringError::InvalidK { k, n });
    }
    let mut groups: Vec<Option<BTreeSet<usize>>> = (0..n).map(|i| Some(BTreeSet::from([i]))).collect();
    for m in &dendrogram.merges[..n - k] {
        let mut left = groups[m.left].take().expect("node merged once");
        let right = groups[m.right].take().expect("node merged once");
        left.extend(right);
        groups.push(Some(left));
    }
    let mut clusters: Vec<Vec<String>> = groups
        .into_iter()
        .flatten()
        .map(|g| {
            let mut names: Vec<String> = g.into_iter().map(|i| dendrogram.leaves[i].clone()).collect();
            names.sort();
            names
        })
        .collect();
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
    Ok(ClusterSet {
        sentiment,
        clusters: clusters
            .into_iter()
            .enumerate()
            .map(|(i, members)| Cluster {
                id: format!("{}{}", sentiment.prefix(), i + 1),
                members: members
                    .into_iter()
                    .map(|keyword| ClusterMember { keyword, frequency: 0 })
                    .collect(),
                label: Vec::new(),
            })
            .collect(),
    })
}

/// Cluster index per leaf for a cut at `k`.
fn leaf_assignment(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let set = cut_to_k(dendrogram, k, Sentiment::Positive)?;
    let index = set.assignment();
    Ok(dendrogram.leaves.iter().map(|l| index[l.as_str()]).collect())
}

/// Mean silhouette coefficient; singleton clusters contribute 0.
pub fn silhouette(distances: &DistanceMatrix, assignment: &[usize]) -> f64 {
    let n = assignment.len();
    if n == 0 {
        return 0.0;
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let own = assignment[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[assignment[j]] += distances.get(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .sum();
    total / n as f64
}

/// The `k` in `range` (clipped to the leaf count) with the highest mean
/// silhouette; the smallest such `k` on ties.
pub fn choose_k(dendrogram: &Dendrogram, distances: &DistanceMatrix, range: RangeInclusive<usize>) -> Result<usize> {
    let (lo, hi) = (*range.start(), *range.end());
    if lo < 2 || hi < lo {
        return Err(ClusteringError::InvalidRange { lo, hi });
    }
    let n = dendrogram.leaves.len();
    let (lo, hi) = (lo.min(n), hi.min(n));
    let mut best = (lo, f64::NEG_INFINITY);
    for k in lo..=hi {
        let score = silhouette(distances, &leaf_assignment(dendrogram, k)?);
        log::debug!("k = {k}: silhouette {score:.6}");
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

/// Sorts members by frequency (desc, then alphabetical) and takes the top
/// three as the label. Keywords missing from `frequencies` count as 0.
pub fn label_clusters(mut set: ClusterSet, frequencies: &BTreeMap<String, usize>) -> ClusterSet {
    for cluster in &mut set.clusters {
        for m in &mut cluster.members {
            m.frequency = frequencies.get(&m.keyword).copied().unwrap_or(0);
        }
        cluster
            .members
            .sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.keyword.cmp(&b.keyword)));
        cluster.label = cluster.members.iter().take(3).map(|m| m.keyword.clone()).collect();
    }
    set
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub keyword: String,
    pub x: f64,
    pub y: f64,
    pub cluster_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<ProjectedPoint>,
}

impl Projection2D {
    /// Attaches cluster ids to projected coordinates.
    pub fn new(coordinates: Vec<(String, f64, f64)>, clusters: &ClusterSet) -> Self {
        let index = clusters.assignment();
        let points = coordinates
            .into_iter()
            .map(|(keyword, x, y)| {
                let cluster_id = index
                    .get(keyword.as_str())
                    .map(|&i| clusters.clusters[i].id.clone())
                    .unwrap_or_default();
                ProjectedPoint {
                    keyword,
                    x,
                    y,
                    cluster_id,
                }
            })
            .collect();
        Self { points }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("keyword,x,y,cluster_id\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&p.keyword),
                fmt_sig9(p.x),
                fmt_sig9(p.y),
                p.cluster_id
            ));
        }
        out
    }
}

/// Coordinates on the top two principal components of the mean-centred
/// vectors. Each component's largest-magnitude loading is positive
/// (first index wins on equal magnitude). Directions with no variance map
/// to 0.
pub fn project_2d(points: &[(String, Vec<f64>)]) -> Vec<(String, f64, f64)> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = points[0].1.len();
    let mut x = DMatrix::<f64>::zeros(n, dim);
    for (i, (_, v)) in points.iter().enumerate() {
        for (j, value) in v.iter().enumerate() {
            x[(i, j)] = *value;
        }
    }
    for j in 0..dim {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let covariance = x.transpose() * &x;
    let eigen = SymmetricEigen::new(covariance);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let scale = eigen.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut axes: Vec<Option<Vec<f64>>> = Vec::with_capacity(2);
    for &c in order.iter().take(2) {
        if eigen.eigenvalues[c] <= scale * 1e-12 || scale == 0.0 {
            axes.push(None);
            continue;
        }
        let mut axis: Vec<f64> = eigen.eigenvectors.column(c).iter().copied().collect();
        let pivot = axis
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > axis[best].abs() { i } else { best });
        if axis[pivot] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(Some(axis));
    }
    axes.resize(2, None);

    let coordinate = |row: usize, axis: &Option<Vec<f64>>| -> f64 {
        axis.as_ref()
            .map_or(0.0, |a| a.iter().enumerate().map(|(j, w)| w * x[(row, j)]).sum())
    };
    points
        .iter()
        .enumerate()
        .map(|(i, (k, _))| (k.clone(), coordinate(i, &axes[0]), coordinate(i, &axes[1])))
        .collect()
}

/// Settings for clustering one sentiment group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub linkage: Linkage,
    /// Fixed cluster count; silhouette selection when absent.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            linkage: Linkage::Average,
            k: None,
            k_min: 2,
            k_max: 20,
        }
    }
}

/// Everything produced for one sentiment group.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub set: ClusterSet,
    pub dendrogram: Option<Dendrogram>,
    pub projection: Projection2D,
    /// Keywords that could not be embedded and were left out.
    pub out_of_vocabulary: Vec<String>,
    pub k: usize,
}

/// Embeds, clusters, labels and projects the keywords of one group.
/// Zero keywords yield an empty set; a single keyword yields one cluster.
pub fn cluster_group(
    counts: &KeywordCounts,
    sentiment: Sentiment,
    table: &EmbeddingTable,
    params: &ClusterParams,
) -> Result<ClusterOutcome> {
    let frequencies = SentimentedKeywords::frequencies(counts);
    let mut points = Vec::new();
    let mut out_of_vocabulary = Vec::new();
    for keyword in counts.keys() {
        match embed_keyword(keyword, table) {
            Some(kv) if kv.vector.iter().any(|v| *v != 0.0) => points.push((keyword.clone(), kv.vector)),
            _ => out_of_vocabulary.push(keyword.clone()),
        }
    }
    if !out_of_vocabulary.is_empty() {
        log::info!(
            "{sentiment}: {} keyword(s) without embeddings: {}",
            out_of_vocabulary.len(),
            out_of_vocabulary.join(", ")
        );
    }

    let (set, dendrogram, k) = match points.len() {
        0 => (ClusterSet::empty(sentiment), None, 0),
        1 => {
            let set = ClusterSet {
                sentiment,
                clusters: vec![Cluster {
                    id: format!("{}1", sentiment.prefix()),
                    members: vec![ClusterMember {
                        keyword: points[0].0.clone(),
                        frequency: 0,
                    }],
                    label: Vec::new(),
                }],
            };
            (set, None, 1)
        }
        n => {
            let distances = DistanceMatrix::from_vectors(&points)?;
            let leaves: Vec<String> = points.iter().map(|(k, _)| k.clone()).collect();
            let dendrogram = agglomerate_distances(&leaves, &distances, params.linkage)?;
            let k = match params.k {
                Some(k) if k > n => {
                    log::warn!("{sentiment}: k = {k} exceeds {n} clusterable keywords; using {n}");
                    n
                }
                Some(k) => k,
                None => choose_k(&dendrogram, &distances, params.k_min..=params.k_max)?,
            };
            (cut_to_k(&dendrogram, k, sentiment)?, Some(dendrogram), k)
        }
    };
    let set = label_clusters(set, &frequencies);
    let projection = Projection2D::new(project_2d(&points), &set);
    Ok(ClusterOutcome {
        set,
        dendrogram,
        projection,
        out_of_vocabulary,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(raw: &[(&str, &[f64])]) -> Vec<(String, Vec<f64>)> {
        raw.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()
    }

    type Points = Vec<(String, Vec<f64>)>;

    /// Three tight groups around orthogonal axes.
    fn planted() -> (Points, Vec<BTreeSet<String>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points = Vec::new();
        let mut groups = vec![BTreeSet::new(); 3];
        for g in 0..3 {
            for m in 0..5 {
                let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(-0.05..0.05)).collect();
                v[g] += 1.0;
                let name = format!("{}{}", ["alpha", "beta", "gamma"][g], m);
                groups[g].insert(name.clone());
                points.push((name, v));
            }
        }
        (points, groups)
    }

    /// Recomputes every cluster-pair linkage from leaf distances each step.
    fn brute_force(points: &[(String, Vec<f64>)], linkage: Linkage) -> Vec<(BTreeSet<String>, BTreeSet<String>, f64)> {
        let d = |a: &str, b: &str| {
            let va = &points.iter().find(|p| p.0 == a).unwrap().1;
            let vb = &points.iter().find(|p| p.0 == b).unwrap().1;
            cosine_distance(va, vb).unwrap()
        };
        let mut clusters: Vec<BTreeSet<String>> = points.iter().map(|p| BTreeSet::from([p.0.clone()])).collect();
        let mut out = Vec::new();
        while clusters.len() > 1 {
            let mut cands = Vec::new();
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let all: Vec<f64> = clusters[i]
                        .iter()
                        .flat_map(|a| clusters[j].iter().map(move |b| (a, b)))
                        .map(|(a, b)| d(a, b))
                        .collect();
                    let dist = match linkage {
                        Linkage::Average => all.iter().sum::<f64>() / all.len() as f64,
                        Linkage::Complete => all.iter().cloned().fold(f64::MIN, f64::max),
                        Linkage::Single => all.iter().cloned().fold(f64::MAX, f64::min),
                    };
                    cands.push((i, j, dist));
                }
            }
            let min = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
            let (i, j, dist) = cands
                .into_iter()
                .filter(|c| c.2 <= min + TIE_TOLERANCE)
                .min_by_key(|&(i, j, _)| {
                    let (a, b) = (
                        clusters[i].first().unwrap().clone(),
                        clusters[j].first().unwrap().clone(),
                    );
                    if a <= b {
                        (a, b)
                    } else {
                        (b, a)
                    }
                })
                .unwrap();
            let (cj, ci) = (clusters.remove(j), clusters.remove(i));
            out.push((ci.clone(), cj.clone(), dist));
            clusters.push(ci.union(&cj).cloned().collect());
        }
        out
    }

    fn merge_sets(d: &Dendrogram) -> Vec<(BTreeSet<String>, BTreeSet<String>, f64)> {
        let mut nodes: Vec<BTreeSet<String>> = d.leaves.iter().map(|l| BTreeSet::from([l.clone()])).collect();
        let mut out = Vec::new();
        for m in &d.merges {
            let (l, r) = (nodes[m.left].clone(), nodes[m.right].clone());
            nodes.push(l.union(&r).cloned().collect());
            out.push((l, r, m.distance));
        }
        out
    }

    fn unordered(v: Vec<(BTreeSet<String>, BTreeSet<String>, f64)>) -> Vec<(BTreeSet<BTreeSet<String>>, f64)> {
        v.into_iter().map(|(a, b, d)| (BTreeSet::from([a, b]), d)).collect()
    }

    #[test]
    fn two_points_single_merge() {
        let d = agglomerate(&pts(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]), Linkage::Average).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert_eq!(d.merges[0].distance, 1.0);
        assert_eq!(d.merges[0].size, 2);
        assert!(matches!(
            agglomerate(&pts(&[("a", &[1.0])]), Linkage::Average),
            Err(ClusteringError::TooFewPoints(1))
        ));
    }

    #[test]
    fn nearest_pair_first() {
        let d = agglomerate(
            &pts(&[("c", &[0.0, 1.0]), ("a", &[1.0, 0.05]), ("b", &[1.0, 0.0])]),
            Linkage::Average,
        )
        .unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (1, 2));
    }

    #[test]
    fn ties_prefer_smallest_members() {
        // all pairwise distances equal: a,b first, then {a,b} with c
        let d = agglomerate(
            &pts(&[
                ("c", &[0.0, 0.0, 1.0]),
                ("b", &[0.0, 1.0, 0.0]),
                ("a", &[1.0, 0.0, 0.0]),
            ]),
            Linkage::Average,
        )
        .unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (1, 2));
        assert_eq!((d.merges[1].left, d.merges[1].right), (0, 3));
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let n = 2 + trial % 7;
            let points: Vec<(String, Vec<f64>)> = (0..n)
                .map(|i| {
                    let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (format!("w{i}"), v)
                })
                .collect();
            for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
                let d = agglomerate(&points, linkage).unwrap();
                let got = unordered(merge_sets(&d));
                let want = unordered(brute_force(&points, linkage));
                assert_eq!(got.len(), want.len());
                for ((gs, gd), (ws, wd)) in got.iter().zip(&want) {
                    assert_eq!(gs, ws, "trial {trial} {linkage:?}");
                    assert!((gd - wd).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn planted_groups() {
        let (points, groups) = planted();
        let d = agglomerate(&points, Linkage::Average).unwrap();
        let last = &d.merges[d.merges.len() - 2..];
        let earlier = d.merges[..d.merges.len() - 2]
            .iter()
            .map(|m| m.distance)
            .fold(0.0, f64::max);
        assert!(last.iter().all(|m| m.distance > 10.0 * earlier));

        let set = cut_to_k(&d, 3, Sentiment::Positive).unwrap();
        let found: BTreeSet<BTreeSet<String>> = set
            .clusters
            .iter()
            .map(|c| c.members.iter().map(|m| m.keyword.clone()).collect())
            .collect();
        assert_eq!(found, groups.into_iter().collect());
        assert_eq!(set.ids(), ["P1", "P2", "P3"]);
        assert!(set.clusters[0].contains("alpha0"));

        let dist = DistanceMatrix::from_vectors(&points).unwrap();
        assert_eq!(choose_k(&d, &dist, 2..=6).unwrap(), 3);
    }

    #[test]
    fn cut_extremes() {
        let (points, _) = planted();
        let d = agglomerate(&points, Linkage::Average).unwrap();
        let all = cut_to_k(&d, 15, Sentiment::Negative).unwrap();
        assert_eq!(all.clusters.len(), 15);
        assert_eq!(all.clusters[0].id, "N1");
        assert_eq!(all.clusters[0].members[0].keyword, "alpha0");
        let one = cut_to_k(&d, 1, Sentiment::Negative).unwrap();
        assert_eq!(one.clusters[0].len(), 15);
        assert!(cut_to_k(&d, 0, Sentiment::Negative).is_err());
        assert!(cut_to_k(&d, 16, Sentiment::Negative).is_err());
    }

    #[test]
    fn choose_k_forced_range() {
        let points = pts(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let d = agglomerate(&points, Linkage::Average).unwrap();
        let dist = DistanceMatrix::from_vectors(&points).unwrap();
        assert_eq!(choose_k(&d, &dist, 2..=2).unwrap(), 2);
        assert!(choose_k(&d, &dist, 1..=3).is_err());
    }

    #[test]
    fn labels_follow_frequency() {
        let set = ClusterSet {
            sentiment: Sentiment::Positive,
            clusters: vec![Cluster {
                id: "P1".into(),
                members: ["alert", "important", "notification", "urgent"]
                    .map(|k| ClusterMember {
                        keyword: k.into(),
                        frequency: 0,
                    })
                    .to_vec(),
                label: vec![],
            }],
        };
        let freq: BTreeMap<String, usize> = [("urgent", 7), ("important", 5), ("notification", 4), ("alert", 1)]
            .map(|(k, v)| (k.to_string(), v))
            .into();
        let labelled = label_clusters(set.clone(), &freq);
        assert_eq!(labelled.clusters[0].label, ["urgent", "important", "notification"]);

        let tied: BTreeMap<String, usize> = [("urgent", 2), ("important", 2)]
            .map(|(k, v)| (k.to_string(), v))
            .into();
        let labelled = label_clusters(set, &tied);
        assert_eq!(labelled.clusters[0].label, ["important", "urgent", "alert"]);
    }

    #[test]
    fn csv_round_trip() {
        let (points, _) = planted();
        let d = agglomerate(&points, Linkage::Average).unwrap();
        let freq: BTreeMap<String, usize> = points.iter().enumerate().map(|(i, p)| (p.0.clone(), i % 4)).collect();
        let set = label_clusters(cut_to_k(&d, 3, Sentiment::Negative).unwrap(), &freq);
        assert_eq!(ClusterSet::from_csv(&set.to_csv(), Sentiment::Negative).unwrap(), set);
        assert!(ClusterSet::from_csv(&set.to_csv(), Sentiment::Positive).is_err());
        assert!(set.labels_csv().starts_with("cluster_id,size,label\nN1,5,\""));
    }

    #[test]
    fn projection_planar_and_degenerate() {
        // points in the plane spanned by two orthonormal 4-d directions
        let (u, v) = ([0.5, 0.5, 0.5, 0.5], [0.5, -0.5, 0.5, -0.5]);
        let coords = [(0.0, 0.0), (3.0, 1.0), (-2.0, 4.0), (1.0, -1.5), (0.5, 2.5)];
        let points: Vec<(String, Vec<f64>)> = coords
            .iter()
            .enumerate()
            .map(|(i, (a, b))| (format!("p{i}"), (0..4).map(|j| a * u[j] + b * v[j] + 1.0).collect()))
            .collect();
        let proj = project_2d(&points);
        for i in 0..points.len() {
            for j in 0..points.len() {
                let orig: f64 = points[i]
                    .1
                    .iter()
                    .zip(&points[j].1)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let got = ((proj[i].1 - proj[j].1).powi(2) + (proj[i].2 - proj[j].2).powi(2)).sqrt();
                assert!((orig - got).abs() < 1e-9);
            }
        }
        let same = pts(&[("a", &[1.0, 2.0]), ("b", &[1.0, 2.0]), ("c", &[1.0, 2.0])]);
        assert!(project_2d(&same).iter().all(|(_, x, y)| *x == 0.0 && *y == 0.0));
    }

    #[test]
    fn projection_separates_planted_groups() {
        let (points, groups) = planted();
        let proj = project_2d(&points);
        let as_points: Vec<(String, Vec<f64>)> = proj.iter().map(|(k, x, y)| (k.clone(), vec![*x, *y])).collect();
        let assignment: Vec<usize> = as_points
            .iter()
            .map(|(k, _)| groups.iter().position(|g| g.contains(k)).unwrap())
            .collect();
        // Euclidean silhouette on the projected plane
        let n = as_points.len();
        let mut values = Vec::with_capacity(n * n);
        for a in &as_points {
            for b in &as_points {
                values.push(((a.1[0] - b.1[0]).powi(2) + (a.1[1] - b.1[1]).powi(2)).sqrt());
            }
        }
        let dist = DistanceMatrix { n, values };
        assert!(silhouette(&dist, &assignment) > 0.5);
    }

    #[test]
    fn group_degenerate_sizes() {
        let table = EmbeddingTable::from_entries(
            crate::embeddings::EmbeddingSource::Other,
            [("smooth".to_string(), vec![1.0, 0.0])],
        )
        .unwrap();
        let empty = cluster_group(
            &KeywordCounts::new(),
            Sentiment::Positive,
            &table,
            &ClusterParams::default(),
        )
        .unwrap();
        assert!(empty.set.clusters.is_empty());
        let mut counts = KeywordCounts::new();
        counts.entry("smooth".into()).or_default().insert("s1".into(), 3);
        counts.entry("unknownword".into()).or_default().insert("s1".into(), 1);
        let one = cluster_group(&counts, Sentiment::Positive, &table, &ClusterParams::default()).unwrap();
        assert_eq!(one.set.clusters.len(), 1);
        assert_eq!(one.set.clusters[0].members[0].frequency, 3);
        assert_eq!(one.out_of_vocabulary, ["unknownword"]);
    }
}
