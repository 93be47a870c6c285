//! Average-linkage agglomerative clustering over cosine distance, with
//! silhouette-guided selection of the cluster count.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::TaxonomyError;

/// Condensed symmetric distance matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    /// Cosine distances `1 - cos(u, v)`, clamped to [0, 2].
    pub fn cosine(vectors: &[Vec<f64>]) -> Result<Self, TaxonomyError> {
        let n = vectors.len();
        let dim = vectors.first().map_or(0, Vec::len);
        let mut unit = Vec::with_capacity(n);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(TaxonomyError::Embedding(format!(
                    "vector {i} has dimension {} but the first has {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TaxonomyError::Embedding(format!("vector {i} has non-finite entries")));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TaxonomyError::Embedding(format!("vector {i} is zero")));
            }
            unit.push(v.iter().map(|x| x / norm).collect::<Vec<f64>>());
        }
        let mut m = Self {
            n,
            data: vec![0.0; n * n.saturating_sub(1) / 2],
        };
        for i in 0..n {
            for j in i + 1..n {
                let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                m.set(i, j, (1.0 - dot).clamp(0.0, 2.0));
            }
        }
        Ok(m)
    }
}

/// One agglomeration step; `left`/`right` are representative point
/// indices (the smallest index in each merged cluster).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

/// Full average-linkage dendrogram via the nearest-neighbour chain with
/// Lance-Williams updates. Merges come back sorted by height; equal
/// distances resolve to the lowest index.
pub fn average_linkage(dist: &DistanceMatrix) -> Vec<Merge> {
    let n = dist.n;
    let mut d = dist.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::with_capacity(n);

    for _ in 1..n {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("two active clusters"));
        }
        let (a, b) = loop {
            let x = *chain.last().expect("non-empty chain");
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for y in 0..n {
                if y != x && active[y] && d.get(x, y) < best_d {
                    best = Some(y);
                    best_d = d.get(x, y);
                }
            }
            // The chain predecessor wins ties so the chain terminates.
            let y = match prev {
                Some(p) if d.get(x, p) <= best_d => p,
                _ => best.expect("another active cluster"),
            };
            if Some(y) == prev {
                chain.pop();
                chain.pop();
                break (x.min(y), x.max(y));
            }
            chain.push(y);
        };
        let height = d.get(a, b);
        merges.push(Merge {
            left: a,
            right: b,
            height,
        });
        // keep `a`, retire `b`
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (sa * d.get(a, k) + sb * d.get(b, k)) / (sa + sb);
                d.set(a, k, v);
            }
        }
        active[b] = false;
        size[a] += size[b];
    }
    // Stable: equal heights keep discovery order.
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    merges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Flat labels for a cut into `k` clusters. Cluster ids are assigned in
/// order of each cluster's smallest member.
pub fn cut(merges: &[Merge], n: usize, k: usize) -> Vec<usize> {
    let mut uf = UnionFind::new(n);
    for m in merges.iter().take(n.saturating_sub(k)) {
        uf.union(m.left, m.right);
    }
    let mut ids = vec![usize::MAX; n];
    let mut labels = vec![0; n];
    let mut next = 0;
    for i in 0..n {
        let root = uf.find(i);
        if ids[root] == usize::MAX {
            ids[root] = next;
            next += 1;
        }
        labels[i] = ids[root];
    }
    labels
}

/// Mean silhouette; points in singleton clusters score 0.
pub fn silhouette(dist: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist.get(i, j);
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub labels: Vec<usize>,
    pub silhouette: f64,
    /// `(k, silhouette)` for every scanned k.
    pub scores: Vec<(usize, f64)>,
}

impl Clustering {
    /// Member indices per cluster id.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Scans `k_range`, returning the cut with the highest mean silhouette
/// (smallest k on ties).
pub fn cluster_expressions(vectors: &[Vec<f64>], k_range: RangeInclusive<usize>) -> Result<Clustering, TaxonomyError> {
    let n = vectors.len();
    if n < 3 {
        return Err(TaxonomyError::Degenerate(format!(
            "need at least 3 expressions, got {n}"
        )));
    }
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi > n - 1 || lo > hi {
        return Err(TaxonomyError::Degenerate(format!(
            "k range {lo}..={hi} must lie within 2..={}",
            n - 1
        )));
    }
    let dist = DistanceMatrix::cosine(vectors)?;
    if dist.data.iter().all(|&d| d <= 1e-12) {
        return Err(TaxonomyError::Degenerate("all embeddings are identical".into()));
    }
    let merges = average_linkage(&dist);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    let mut scores = Vec::new();
    for k in lo..=hi {
        let labels = cut(&merges, n, k);
        let s = silhouette(&dist, &labels);
        log::debug!("k = {k}: silhouette {s:.4}");
        scores.push((k, s));
        if best.as_ref().is_none_or(|(_, bs, _)| s > *bs) {
            best = Some((k, s, labels));
        }
    }
    let (k, silhouette, labels) = best.expect("non-empty k range");
    Ok(Clustering {
        k,
        labels,
        silhouette,
        scores,
    })
}
