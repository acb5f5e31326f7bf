//! Reference implementations used only to check the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strata_core::cube_io::{CubeHeader, SpectralCube};
use strata_core::dimred::ScoreCube;

/// Cyclic Jacobi rotations on a dense symmetric matrix. Returns eigenvalues
/// in descending order with matching unit eigenvectors.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (divisor `N-1`) of pixel spectra, computed naively.
pub fn naive_covariance(cube: &SpectralCube) -> Vec<f64> {
    let (n, b) = (cube.pixels(), cube.bands());
    let spectra: Vec<Vec<f64>> = (0..n).map(|p| cube.spectrum(p)).collect();
    let mean: Vec<f64> = (0..b)
        .map(|j| spectra.iter().map(|s| s[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0; b * b];
    for s in &spectra {
        for i in 0..b {
            for j in 0..b {
                cov[i * b + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    cov
}

/// Lowest inertia over every partition of `points` into exactly `k`
/// nonempty clusters.
pub fn kmeans_optimum(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            best = best.min(partition_inertia(points, &labels, k));
        }
        // odometer increment
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

pub fn partition_inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members
            .iter()
            .map(|p| p.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>();
    }
    total
}

/// Minimum total cost over all injective row→column assignments.
pub fn assignment_optimum(cost: &[Vec<i64>]) -> i64 {
    fn go(cost: &[Vec<i64>], row: usize, used: &mut Vec<bool>) -> i64 {
        if row == cost.len() {
            return 0;
        }
        let mut best = i64::MAX;
        for c in 0..cost[row].len() {
            if !used[c] {
                used[c] = true;
                let rest = go(cost, row + 1, used);
                if rest != i64::MAX {
                    best = best.min(cost[row][c] + rest);
                }
                used[c] = false;
            }
        }
        best
    }
    let cols = cost.first().map_or(0, |r| r.len());
    go(cost, 0, &mut vec![false; cols])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cube of uniform random reflectances.
pub fn random_cube(rng: &mut impl Rng, width: usize, height: usize, bands: usize) -> SpectralCube {
    let values = (0..width * height * bands).map(|_| rng.random::<f64>()).collect();
    SpectralCube::new(CubeHeader::new(width, height, bands, None).unwrap(), values).unwrap()
}

/// Single-row score cube from a list of points.
pub fn scores_from(points: &[Vec<f64>]) -> ScoreCube {
    let k = points[0].len();
    ScoreCube::new(points.len(), 1, k, points.concat()).unwrap()
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `per_blob` points around each of `blobs` random centers in `dim` dimensions.
pub fn gaussian_blobs(rng: &mut impl Rng, blobs: usize, per_blob: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..blobs)
        .map(|_| (0..dim).map(|_| rng.random::<f64>() * 10.0).collect())
        .collect();
    let mut points = Vec::with_capacity(blobs * per_blob);
    for c in &centers {
        for _ in 0..per_blob {
            points.push(c.iter().map(|&m| m + spread * standard_normal(rng)).collect());
        }
    }
    points
}
