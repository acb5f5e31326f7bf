use rayon::prelude::*;

use super::kmeans::{kmeans_plus_plus, restart_rng};
use super::{dist2, ClusterError, LabelMap, Result};
use crate::dimred::ScoreCube;
use crate::linalg::{cholesky, forward_substitute};
use crate::parallel::{chunk_ranges, PIXEL_CHUNK};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmConfig {
    pub k: usize,
    pub covariance: CovarianceKind,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the mean per-pixel log-likelihood improves by less than this.
    pub tol: f64,
    /// Ridge added to every covariance diagonal in the M-step.
    pub reg: f64,
    pub restarts: usize,
    /// Lloyd iterations refining the k-means++ seeds before EM starts.
    pub init_lloyd_iters: usize,
}

impl GmmConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        GmmConfig {
            k,
            covariance: CovarianceKind::Full,
            seed,
            max_iter: 300,
            tol: 1e-6,
            reg: 1e-6,
            restarts: 1,
            init_lloyd_iters: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub dim: usize,
    pub kind: CovarianceKind,
    pub weights: Vec<f64>,
    /// `k × dim`, row-major.
    pub means: Vec<f64>,
    /// Per component: `dim × dim` row-major (full) or the `dim` diagonal entries.
    pub covariances: Vec<Vec<f64>>,
    /// Mean per-pixel log-likelihood under the returned parameters.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Mean per-pixel log-likelihood at every E-step.
    pub log_likelihood_history: Vec<f64>,
    pub restart: usize,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    /// Dense `dim × dim` covariance of component `i`.
    pub fn covariance_matrix(&self, i: usize) -> Vec<f64> {
        match self.kind {
            CovarianceKind::Full => self.covariances[i].clone(),
            CovarianceKind::Diagonal => {
                let d = self.dim;
                let mut m = vec![0.0; d * d];
                for j in 0..d {
                    m[j * d + j] = self.covariances[i][j];
                }
                m
            }
        }
    }
}

/// Precomputed factorization of one component's Gaussian.
struct Density {
    log_norm: f64,
    mean: Vec<f64>,
    factor: Factor,
}

enum Factor {
    Full(Vec<f64>),
    Diagonal(Vec<f64>),
}

impl Density {
    fn new(model_kind: CovarianceKind, weight: f64, mean: &[f64], cov: &[f64], index: usize) -> Result<Density> {
        let d = mean.len();
        let (logdet, factor) = match model_kind {
            CovarianceKind::Full => {
                let l = cholesky(cov, d).ok_or(ClusterError::SingularCovariance(index))?;
                let logdet = 2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>();
                (logdet, Factor::Full(l))
            }
            CovarianceKind::Diagonal => {
                if cov.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(ClusterError::SingularCovariance(index));
                }
                let logdet = cov.iter().map(|v| v.ln()).sum::<f64>();
                (logdet, Factor::Diagonal(cov.iter().map(|v| 1.0 / v).collect()))
            }
        };
        Ok(Density {
            log_norm: weight.ln() - 0.5 * (d as f64 * LN_2PI + logdet),
            mean: mean.to_vec(),
            factor,
        })
    }

    /// log(weight) + log N(x | mean, cov)
    fn log_weighted(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let maha = match &self.factor {
            Factor::Full(l) => {
                for (s, (a, b)) in scratch.iter_mut().zip(x.iter().zip(&self.mean)) {
                    *s = a - b;
                }
                forward_substitute(l, self.mean.len(), scratch);
                scratch.iter().map(|v| v * v).sum::<f64>()
            }
            Factor::Diagonal(inv) => x
                .iter()
                .zip(&self.mean)
                .zip(inv)
                .map(|((a, b), w)| (a - b) * (a - b) * w)
                .sum(),
        };
        self.log_norm - 0.5 * maha
    }
}

fn densities(
    kind: CovarianceKind,
    weights: &[f64],
    means: &[f64],
    covs: &[Vec<f64>],
    d: usize,
) -> Result<Vec<Density>> {
    (0..weights.len())
        .map(|i| Density::new(kind, weights[i], &means[i * d..(i + 1) * d], &covs[i], i))
        .collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// E-step: responsibilities (`n × k`) and the summed log-likelihood.
fn expectation(scores: &ScoreCube, dens: &[Density]) -> (Vec<f64>, f64) {
    let k = dens.len();
    let d = scores.k();
    let ranges = chunk_ranges(scores.pixels(), PIXEL_CHUNK);
    let parts: Vec<(Vec<f64>, f64)> = ranges
        .par_iter()
        .map(|r| {
            let mut resp = vec![0.0; r.len() * k];
            let mut scratch = vec![0.0; d];
            let mut logp = vec![0.0; k];
            let mut ll = 0.0;
            for (i, p) in r.clone().enumerate() {
                let x = scores.point(p);
                for (c, den) in dens.iter().enumerate() {
                    logp[c] = den.log_weighted(x, &mut scratch);
                }
                let lse = log_sum_exp(&logp);
                ll += lse;
                for c in 0..k {
                    resp[i * k + c] = (logp[c] - lse).exp();
                }
            }
            (resp, ll)
        })
        .collect();
    let mut resp = Vec::with_capacity(scores.pixels() * k);
    let mut ll = 0.0;
    for (r, l) in parts {
        resp.extend(r);
        ll += l;
    }
    (resp, ll)
}

/// Weighted means and (co)variances for the given responsibilities.
fn maximization(
    scores: &ScoreCube,
    resp: &[f64],
    k: usize,
    kind: CovarianceKind,
    reg: f64,
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let d = scores.k();
    let n = scores.pixels();
    let ranges = chunk_ranges(n, PIXEL_CHUNK);

    let parts: Vec<(Vec<f64>, Vec<f64>)> = ranges
        .par_iter()
        .map(|r| {
            let mut nk = vec![0.0; k];
            let mut sums = vec![0.0; k * d];
            for p in r.clone() {
                let x = scores.point(p);
                for c in 0..k {
                    let w = resp[p * k + c];
                    nk[c] += w;
                    for j in 0..d {
                        sums[c * d + j] += w * x[j];
                    }
                }
            }
            (nk, sums)
        })
        .collect();
    let mut nk = vec![0.0; k];
    let mut means = vec![0.0; k * d];
    for (a, s) in parts {
        nk.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
        means.iter_mut().zip(&s).for_each(|(x, y)| *x += y);
    }
    for c in 0..k {
        if nk[c] > 0.0 {
            for j in 0..d {
                means[c * d + j] /= nk[c];
            }
        }
    }

    let width = match kind {
        CovarianceKind::Full => d * d,
        CovarianceKind::Diagonal => d,
    };
    let parts: Vec<Vec<f64>> = ranges
        .par_iter()
        .map(|r| {
            let mut acc = vec![0.0; k * width];
            let mut diff = vec![0.0; d];
            for p in r.clone() {
                let x = scores.point(p);
                for c in 0..k {
                    let w = resp[p * k + c];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        diff[j] = x[j] - means[c * d + j];
                    }
                    let block = &mut acc[c * width..(c + 1) * width];
                    match kind {
                        CovarianceKind::Full => {
                            for a in 0..d {
                                let wa = w * diff[a];
                                for b in 0..=a {
                                    block[a * d + b] += wa * diff[b];
                                }
                            }
                        }
                        CovarianceKind::Diagonal => {
                            for a in 0..d {
                                block[a] += w * diff[a] * diff[a];
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; k * width];
    for part in parts {
        acc.iter_mut().zip(&part).for_each(|(x, y)| *x += y);
    }

    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let inv = if nk[c] > 0.0 { 1.0 / nk[c] } else { 0.0 };
        let block = &acc[c * width..(c + 1) * width];
        let mut cov = vec![0.0; width];
        match kind {
            CovarianceKind::Full => {
                for a in 0..d {
                    for b in 0..=a {
                        let v = block[a * d + b] * inv;
                        cov[a * d + b] = v;
                        cov[b * d + a] = v;
                    }
                    cov[a * d + a] += reg;
                }
            }
            CovarianceKind::Diagonal => {
                for a in 0..d {
                    cov[a] = block[a] * inv + reg;
                }
            }
        }
        covs.push(cov);
    }
    let weights = nk.iter().map(|v| v / n as f64).collect();
    (weights, means, covs)
}

/// Covariance of all points around their mean (divisor N) plus the ridge.
fn pooled_covariance(scores: &ScoreCube, kind: CovarianceKind, reg: f64) -> Vec<f64> {
    let resp = vec![1.0; scores.pixels()];
    let (_, _, covs) = maximization(scores, &resp, 1, kind, reg);
    covs.into_iter().next().expect("one component")
}

fn em(scores: &ScoreCube, init_means: Vec<f64>, config: &GmmConfig) -> Result<GmmModel> {
    let k = config.k;
    let d = scores.k();
    let n = scores.pixels() as f64;
    let pooled = pooled_covariance(scores, config.covariance, config.reg);
    let mut weights = vec![1.0 / k as f64; k];
    let mut means = init_means;
    let mut covs = vec![pooled; k];
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        let dens = densities(config.covariance, &weights, &means, &covs, d)?;
        let (resp, ll_sum) = expectation(scores, &dens);
        let ll = ll_sum / n;
        let converged = history.last().is_some_and(|&prev| ll - prev < config.tol);
        history.push(ll);
        if converged || iterations >= config.max_iter {
            break;
        }
        let (w, m, c) = maximization(scores, &resp, k, config.covariance, config.reg);
        for (i, wi) in w.iter().enumerate() {
            if *wi <= 0.0 {
                log::warn!("GMM component {i} lost all responsibility");
            }
        }
        // a component with no responsibility keeps its previous mean and covariance
        for i in 0..k {
            if w[i] > 0.0 {
                means[i * d..(i + 1) * d].copy_from_slice(&m[i * d..(i + 1) * d]);
                covs[i] = c[i].clone();
            }
        }
        let floor = f64::MIN_POSITIVE;
        weights = w.iter().map(|v| v.max(floor)).collect();
        iterations += 1;
    }
    let log_likelihood = *history.last().expect("at least one E-step");
    Ok(GmmModel {
        dim: d,
        kind: config.covariance,
        weights,
        means,
        covariances: covs,
        log_likelihood,
        iterations,
        log_likelihood_history: history,
        restart: 0,
    })
}

fn refine_seeds(scores: &ScoreCube, mut centroids: Vec<f64>, k: usize, iters: usize) -> Vec<f64> {
    let d = scores.k();
    for _ in 0..iters {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for p in 0..scores.pixels() {
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
            counts[best] += 1;
            for j in 0..d {
                sums[best * d + j] += x[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    centroids
}

/// EM fit from k-means++ means, uniform weights and the pooled covariance.
pub fn gmm_fit(scores: &ScoreCube, config: &GmmConfig) -> Result<GmmModel> {
    if config.k == 0 {
        return Err(ClusterError::InvalidParameter("k must be at least 1".to_string()));
    }
    if !(config.reg >= 0.0) || !(config.tol >= 0.0) {
        return Err(ClusterError::InvalidParameter(
            "reg and tol must be nonnegative".to_string(),
        ));
    }
    if scores.pixels() <= config.k {
        return Err(ClusterError::TooFewPoints {
            points: scores.pixels(),
            k: config.k,
        });
    }
    let mut best: Option<GmmModel> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = restart_rng(config.seed, restart);
        let seeds = kmeans_plus_plus(scores, config.k, &mut rng);
        let seeds = refine_seeds(scores, seeds, config.k, config.init_lloyd_iters);
        let mut model = em(scores, seeds, config)?;
        model.restart = restart;
        if best.as_ref().is_none_or(|b| model.log_likelihood > b.log_likelihood) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Maximum-posterior component per pixel; ties go to the lowest index.
pub fn gmm_assign(scores: &ScoreCube, model: &GmmModel) -> Result<LabelMap> {
    if scores.k() != model.dim {
        return Err(ClusterError::DimensionMismatch {
            scores: scores.k(),
            model: model.dim,
        });
    }
    let d = model.dim;
    let dens = densities(model.kind, &model.weights, &model.means, &model.covariances, d)?;
    let labels: Vec<u32> = (0..scores.pixels())
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |scratch, p| {
                let x = scores.point(p);
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (c, den) in dens.iter().enumerate() {
                    let v = den.log_weighted(x, scratch);
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                best as u32
            },
        )
        .collect();
    LabelMap::new(scores.width(), scores.height(), model.k(), labels)
}
