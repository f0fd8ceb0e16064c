//! Reference implementations written straight from the definitions. They
//! favour obviousness over speed and share no code with the library.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;

pub fn rms(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
    }
    (acc / x.len() as f64).sqrt()
}

pub fn mean_abs(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v.abs();
    }
    acc / x.len() as f64
}

/// Sign changes among the non-zero samples.
pub fn zero_crossings(x: &[f64]) -> usize {
    let signs: Vec<bool> = x.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Magnitudes of bins `0..=n/2` by the O(n²) DFT sum.
pub fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in frame.iter().enumerate() {
                // reduce the phase index first so large products stay exact
                let angle = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += x * angle.cos();
                im += x * angle.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Mean over periodic-Hann frames of the magnitude-weighted mean frequency.
/// A signal shorter than a frame is one zero-padded frame.
pub fn spectral_centroid(x: &[f64], rate: u32, frame: usize, hop: usize) -> f64 {
    let window: Vec<f64> = (0..frame)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / frame as f64).cos()))
        .collect();
    let mut starts = vec![0];
    while starts.last().unwrap() + hop + frame <= x.len() {
        starts.push(starts.last().unwrap() + hop);
    }
    let mut total = 0.0;
    for &s in &starts {
        let windowed: Vec<f64> = (0..frame)
            .map(|i| x.get(s + i).copied().unwrap_or(0.0) * window[i])
            .collect();
        let mags = dft_magnitudes(&windowed);
        let weight: f64 = mags.iter().sum();
        if weight > 0.0 {
            let hz = |k: usize| k as f64 * rate as f64 / frame as f64;
            total += mags.iter().enumerate().map(|(k, m)| hz(k) * m).sum::<f64>() / weight;
        }
    }
    total / starts.len() as f64
}

/// Textbook sample correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    1.0 - dot / (nu * nv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Single,
    Complete,
    Average,
}

/// One merge: node ids (leaves `0..n`, merge `i` creates `n + i`), the
/// linkage distance and the merged size.
#[derive(Debug, Clone, PartialEq)]
pub struct RefMerge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Agglomeration that recomputes every inter-cluster distance from the leaf
/// distances at each step. Pairs within `tol` of the minimum are ordered by
/// the (smaller, larger) of their clusters' smallest leaf labels.
pub fn brute_force_linkage(labels: &[String], d: &[Vec<f64>], link: Link, tol: f64) -> Vec<RefMerge> {
    let n = labels.len();
    let mut clusters: Vec<(usize, BTreeSet<usize>)> = (0..n).map(|i| (i, BTreeSet::from([i]))).collect();
    let mut merges = Vec::new();
    let linkage = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| {
        let pairs: Vec<f64> = a.iter().flat_map(|&i| b.iter().map(move |&j| d[i][j])).collect();
        match link {
            Link::Single => pairs.iter().cloned().fold(f64::INFINITY, f64::min),
            Link::Complete => pairs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Link::Average => pairs.iter().sum::<f64>() / pairs.len() as f64,
        }
    };
    let min_label = |c: &BTreeSet<usize>| c.iter().map(|&i| labels[i].clone()).min().unwrap();
    while clusters.len() > 1 {
        let mut candidates = Vec::new();
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                candidates.push((a, b, linkage(&clusters[a].1, &clusters[b].1)));
            }
        }
        let best = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        let (a, b, distance) = candidates
            .into_iter()
            .filter(|c| c.2 <= best + tol)
            .min_by_key(|&(a, b, _)| {
                let (x, y) = (min_label(&clusters[a].1), min_label(&clusters[b].1));
                if x <= y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .unwrap();
        let (nb, mb) = clusters.remove(b);
        let (na, ma) = clusters.remove(a);
        let members: BTreeSet<usize> = ma.union(&mb).copied().collect();
        merges.push(RefMerge {
            left: na.min(nb),
            right: na.max(nb),
            distance,
            size: members.len(),
        });
        clusters.push((n + merges.len() - 1, members));
    }
    merges
}

/// Mean silhouette from the definition; members of singleton clusters
/// score 0.
pub fn silhouette(d: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| d[i][j]).sum::<f64>() / own.len() as f64;
        let others: BTreeSet<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
        let b = others
            .iter()
            .map(|&c| {
                let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                members.iter().map(|&j| d[i][j]).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}
