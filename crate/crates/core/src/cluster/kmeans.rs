use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{dist2, ClusterError, LabelMap, Result};
use crate::dimred::ScoreCube;
use crate::parallel::{chunk_ranges, PIXEL_CHUNK};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the largest centroid shift (Euclidean) falls below this.
    pub tol: f64,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: 300,
            tol: 1e-4,
            restarts: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansModel {
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_history: Vec<f64>,
    /// Times an empty cluster was refilled with the farthest point.
    pub empty_clusters_resolved: usize,
    /// Which restart produced this model.
    pub restart: usize,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim.max(1)
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

pub(crate) fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn count_distinct_up_to(scores: &ScoreCube, limit: usize) -> usize {
    let mut seen = HashSet::new();
    for p in 0..scores.pixels() {
        let key: Vec<u64> = scores.point(p).iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key);
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// k-means++ seeding: first centroid uniform, then proportional to squared
/// distance from the nearest chosen centroid.
pub fn kmeans_plus_plus(scores: &ScoreCube, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = scores.pixels();
    let d = scores.k();
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(scores.point(first));
    let mut nearest: Vec<f64> = (0..n).map(|p| dist2(scores.point(p), scores.point(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            sample_weighted(&nearest, rng.random::<f64>() * total)
        } else {
            rng.random_range(0..n)
        };
        let c = scores.point(pick).to_vec();
        for (p, w) in nearest.iter_mut().enumerate() {
            let d2 = dist2(scores.point(p), &c);
            if d2 < *w {
                *w = d2;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn sample_weighted(weights: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    let mut chosen = None;
    for (p, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        chosen = Some(p);
        if acc > target {
            break;
        }
    }
    chosen.expect("positive total implies a positive weight")
}

/// Nearest centroid per point (ties to the lowest index), squared distances,
/// and the total inertia summed chunk by chunk.
fn assign(scores: &ScoreCube, centroids: &[f64], k: usize) -> (Vec<u32>, Vec<f64>, f64) {
    let n = scores.pixels();
    let d = scores.k();
    let ranges = chunk_ranges(n, PIXEL_CHUNK);
    let parts: Vec<(Vec<u32>, Vec<f64>, f64)> = ranges
        .par_iter()
        .map(|r| {
            let mut labels = Vec::with_capacity(r.len());
            let mut dists = Vec::with_capacity(r.len());
            let mut sum = 0.0;
            for p in r.clone() {
                let x = scores.point(p);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let dc = dist2(x, &centroids[c * d..(c + 1) * d]);
                    if dc < best_d {
                        best_d = dc;
                        best = c;
                    }
                }
                labels.push(best as u32);
                dists.push(best_d);
                sum += best_d;
            }
            (labels, dists, sum)
        })
        .collect();
    let mut labels = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    let mut inertia = 0.0;
    for (l, ds, s) in parts {
        labels.extend(l);
        dists.extend(ds);
        inertia += s;
    }
    (labels, dists, inertia)
}

/// Per-cluster coordinate sums and counts.
fn accumulate(scores: &ScoreCube, labels: &[u32], k: usize) -> (Vec<f64>, Vec<usize>) {
    let d = scores.k();
    let ranges = chunk_ranges(scores.pixels(), PIXEL_CHUNK);
    let parts: Vec<(Vec<f64>, Vec<usize>)> = ranges
        .par_iter()
        .map(|r| {
            let mut sums = vec![0.0; k * d];
            let mut counts = vec![0usize; k];
            for p in r.clone() {
                let c = labels[p] as usize;
                counts[c] += 1;
                for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(scores.point(p)) {
                    *s += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (s, c) in parts {
        sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    (sums, counts)
}

fn lloyd(scores: &ScoreCube, seeds: Vec<f64>, config: &KMeansConfig) -> (KMeansModel, Vec<u32>) {
    let k = config.k;
    let d = scores.k();
    let mut centroids = seeds;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut resolved = 0;
    for _ in 0..config.max_iter {
        let (mut labels, mut dists, inertia) = assign(scores, &centroids, k);
        history.push(inertia);
        let (mut sums, mut counts) = accumulate(scores, &labels, k);

        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            // farthest point from its own centroid, taken from a cluster that keeps at least one member
            let mut far = None;
            let mut far_d = -1.0;
            for (p, &dp) in dists.iter().enumerate() {
                if counts[labels[p] as usize] > 1 && dp > far_d {
                    far_d = dp;
                    far = Some(p);
                }
            }
            let Some(p) = far else { break };
            let from = labels[p] as usize;
            let x = scores.point(p);
            counts[from] -= 1;
            for (s, v) in sums[from * d..(from + 1) * d].iter_mut().zip(x) {
                *s -= v;
            }
            counts[empty] = 1;
            sums[empty * d..(empty + 1) * d].copy_from_slice(x);
            labels[p] = empty as u32;
            dists[p] = 0.0;
            resolved += 1;
            log::debug!("k-means: refilled empty cluster {empty} with point {p}");
        }

        let mut shift: f64 = 0.0;
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for j in 0..d {
                next[c * d + j] = sums[c * d + j] * inv;
            }
            shift = shift.max(dist2(&next[c * d..(c + 1) * d], &centroids[c * d..(c + 1) * d]).sqrt());
        }
        centroids = next;
        iterations += 1;
        if shift < config.tol {
            break;
        }
    }
    let (labels, _, inertia) = assign(scores, &centroids, k);
    history.push(inertia);
    let model = KMeansModel {
        centroids,
        dim: d,
        inertia,
        iterations,
        inertia_history: history,
        empty_clusters_resolved: resolved,
        restart: 0,
    };
    (model, labels)
}

/// Lloyd's algorithm from seeded k-means++ starts.
pub fn kmeans_fit(scores: &ScoreCube, config: &KMeansConfig) -> Result<(KMeansModel, LabelMap)> {
    if config.k == 0 {
        return Err(ClusterError::InvalidParameter("k must be at least 1".to_string()));
    }
    if !(config.tol >= 0.0) {
        return Err(ClusterError::InvalidParameter(format!(
            "tol {} must be nonnegative",
            config.tol
        )));
    }
    let n = scores.pixels();
    let distinct = count_distinct_up_to(scores, config.k);
    if n == 0 || distinct < config.k {
        return Err(ClusterError::TooManyClusters {
            requested: config.k,
            distinct,
        });
    }
    let mut best: Option<(KMeansModel, Vec<u32>)> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = restart_rng(config.seed, restart);
        let seeds = kmeans_plus_plus(scores, config.k, &mut rng);
        let (mut model, labels) = lloyd(scores, seeds, config);
        model.restart = restart;
        if best.as_ref().is_none_or(|(b, _)| model.inertia < b.inertia) {
            best = Some((model, labels));
        }
    }
    let (model, labels) = best.expect("at least one restart");
    let map = LabelMap::new(scores.width(), scores.height(), config.k, labels)?;
    Ok((model, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores_from(points: &[[f64; 2]]) -> ScoreCube {
        ScoreCube::new(points.len(), 1, 2, points.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn separated_duplicates() {
        let mut pts = vec![[0.0, 0.0]; 10];
        pts.extend(vec![[10.0, 10.0]; 10]);
        let (m, labels) = kmeans_fit(&scores_from(&pts), &KMeansConfig::new(2, 3)).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut cs = vec![m.centroid(0).to_vec(), m.centroid(1).to_vec()];
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
        assert_ne!(labels.labels()[0], labels.labels()[10]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [[0.0, 1.0], [2.0, 3.0], [4.0, -1.0], [6.0, 1.0]];
        let (m, _) = kmeans_fit(&scores_from(&pts), &KMeansConfig::new(1, 0)).unwrap();
        assert!((m.centroid(0)[0] - 3.0).abs() < 1e-12);
        assert!((m.centroid(0)[1] - 1.0).abs() < 1e-12);
        // squared deviations: x: 9+1+1+9, y: 0+4+4+0
        assert!((m.inertia - 28.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters() {
        let pts = [[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        assert_eq!(
            kmeans_fit(&scores_from(&pts), &KMeansConfig::new(3, 0)).unwrap_err(),
            ClusterError::TooManyClusters {
                requested: 3,
                distinct: 2
            }
        );
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let (labels, _, _) = assign(&scores_from(&[[1.0, 0.0]]), &[0.0, 0.0, 2.0, 0.0], 2);
        assert_eq!(labels, vec![0]);
    }

    #[test]
    fn empty_cluster_takes_farthest_point() {
        // both seeds on the left group; the right group's far point must claim a cluster
        let pts = [[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [9.0, 0.0]];
        let s = scores_from(&pts);
        let config = KMeansConfig::new(3, 0);
        let (m, labels) = lloyd(&s, vec![0.0, 0.0, 0.0, 0.0, 0.1, 0.0], &config);
        assert!(m.empty_clusters_resolved >= 1);
        let counts = {
            let mut c = [0; 3];
            labels.iter().for_each(|&l| c[l as usize] += 1);
            c
        };
        assert!(counts.iter().all(|&c| c > 0));
        assert!(m.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn same_seed_same_result() {
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|i| [((i * 37) % 101) as f64, ((i * 53) % 89) as f64])
            .collect();
        let s = scores_from(&pts);
        let mut cfg = KMeansConfig::new(5, 11);
        cfg.restarts = 3;
        assert_eq!(kmeans_fit(&s, &cfg).unwrap(), kmeans_fit(&s, &cfg).unwrap());
    }
}
