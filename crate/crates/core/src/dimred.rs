//! Principal component analysis of pixel spectra.
//!
//! The covariance is the `B×B` sample covariance (divisor `N-1`) of all pixel
//! spectra, decomposed with [`crate::linalg::symmetric_eigen`]. Every component
//! is sign-normalized so its largest-magnitude entry is positive.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::cube_io::{CubeHeader, GrayImage, SpectralCube};
use crate::linalg::symmetric_eigen;
use crate::parallel::{chunk_ranges, PIXEL_CHUNK};

#[derive(Debug, Error, PartialEq)]
pub enum DimredError {
    #[error("PCA needs at least 2 pixels, got {0}")]
    DegenerateInput(usize),
    #[error("model has {model} bands but the cube has {cube}")]
    BandCountMismatch { model: usize, cube: usize },
    #[error("scores have {scores} components but the model has {model}")]
    ComponentCountMismatch { scores: usize, model: usize },
    #[error("invalid component selector: {0}")]
    InvalidSelector(String),
    #[error("invalid scores: {0}")]
    InvalidScores(String),
    #[error("malformed PCA model text: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, DimredError>;

/// How many principal components to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ComponentSelector {
    FixedK(usize),
    /// Smallest k whose cumulative explained ratio reaches the target.
    VarianceTarget(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Trace of the covariance matrix the model was fitted on.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        if self.total_variance > 0.0 {
            self.explained_variance
                .iter()
                .map(|v| v / self.total_variance)
                .collect()
        } else {
            vec![0.0; self.k()]
        }
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_ratio().iter().sum()
    }

    /// Keeps only the first `k` components.
    pub fn truncated(&self, k: usize) -> PcaModel {
        let k = k.min(self.k());
        PcaModel {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            explained_variance: self.explained_variance[..k].to_vec(),
            total_variance: self.total_variance,
        }
    }

    /// Text form: `bands`, `k`, `total_variance`, the mean row, one
    /// `component` row per axis and the eigenvalue row, 17 significant digits.
    pub fn to_text(&self) -> String {
        let row = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        let mut out = String::from("# strata pca model\n");
        let _ = writeln!(out, "bands = {}", self.bands());
        let _ = writeln!(out, "k = {}", self.k());
        let _ = writeln!(out, "total_variance = {:.16e}", self.total_variance);
        let _ = writeln!(out, "mean = {}", row(&self.mean));
        for c in &self.components {
            let _ = writeln!(out, "component = {}", row(c));
        }
        let _ = writeln!(out, "eigenvalues = {}", row(&self.explained_variance));
        out
    }

    pub fn from_text(text: &str) -> Result<PcaModel> {
        let bad = |m: String| DimredError::Parse(m);
        let mut bands = None;
        let mut k = None;
        let mut total = None;
        let mut mean = None;
        let mut components = Vec::new();
        let mut eigen = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("no `=` in `{line}`")))?;
            let value = value.trim();
            let floats = || -> Result<Vec<f64>> {
                value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
                    .collect()
            };
            match key.trim() {
                "bands" => bands = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "k" => k = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "total_variance" => total = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "mean" => mean = Some(floats()?),
                "component" => components.push(floats()?),
                "eigenvalues" => eigen = Some(floats()?),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let bands = bands.ok_or_else(|| bad("missing bands".into()))?;
        let k = k.ok_or_else(|| bad("missing k".into()))?;
        let mean = mean.ok_or_else(|| bad("missing mean".into()))?;
        let explained_variance = eigen.unwrap_or_default();
        if mean.len() != bands || components.len() != k || explained_variance.len() != k {
            return Err(bad("row lengths disagree with bands/k".into()));
        }
        if components.iter().any(|c| c.len() != bands) {
            return Err(bad("component row length differs from bands".into()));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            total_variance: total.ok_or_else(|| bad("missing total_variance".into()))?,
        })
    }
}

/// Per-pixel principal-component scores, pixel-major (`scores[p * k + c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCube {
    width: usize,
    height: usize,
    k: usize,
    scores: Vec<f64>,
}

impl ScoreCube {
    pub fn new(width: usize, height: usize, k: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != width * height * k {
            return Err(DimredError::InvalidScores(format!(
                "expected {} values, got {}",
                width * height * k,
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(DimredError::InvalidScores("non-finite score".to_string()));
        }
        Ok(ScoreCube {
            width,
            height,
            k,
            scores,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn point(&self, pixel: usize) -> &[f64] {
        &self.scores[pixel * self.k..(pixel + 1) * self.k]
    }

    pub fn scaled(&self, factor: f64) -> ScoreCube {
        ScoreCube {
            scores: self.scores.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Min-max scaled gray rendering of one component's scores.
pub fn render_component(scores: &ScoreCube, component: usize) -> Result<GrayImage> {
    if component >= scores.k {
        return Err(DimredError::ComponentCountMismatch {
            scores: component + 1,
            model: scores.k,
        });
    }
    let values: Vec<f64> = (0..scores.pixels()).map(|p| scores.point(p)[component]).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    let pixels = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0 + 0.5).floor() as u8
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(scores.width, scores.height, pixels).map_err(|e| DimredError::InvalidScores(e.to_string()))
}

/// Dot product with four interleaved accumulators; fixed summation order.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Mean spectrum and `B×B` sample covariance (row-major).
pub fn covariance(cube: &SpectralCube) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cube.pixels();
    if n < 2 {
        return Err(DimredError::DegenerateInput(n));
    }
    let b = cube.bands();
    let mean: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| cube.band(i).iter().sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| cube.band(i).iter().map(|v| v - mean[i]).collect())
        .collect();
    let denom = (n - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| dot4(&centered[i], &centered[j]) / denom).collect())
        .collect();
    let mut cov = vec![0.0; b * b];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            cov[i * b + j] = v;
            cov[j * b + i] = v;
        }
    }
    Ok((mean, cov))
}

pub fn fit_pca(cube: &SpectralCube, selector: ComponentSelector) -> Result<PcaModel> {
    let bands = cube.bands();
    match selector {
        ComponentSelector::FixedK(k) if k > bands => {
            return Err(DimredError::InvalidSelector(format!("k = {k} exceeds {bands} bands")));
        }
        ComponentSelector::VarianceTarget(r) if !(r > 0.0 && r <= 1.0) => {
            return Err(DimredError::InvalidSelector(format!(
                "variance target {r} outside (0, 1]"
            )));
        }
        _ => {}
    }
    let (mean, cov) = covariance(cube)?;
    let total_variance: f64 = (0..bands).map(|i| cov[i * bands + i]).sum();
    let eig = symmetric_eigen(&cov, bands);

    let k = match selector {
        ComponentSelector::FixedK(k) => k,
        ComponentSelector::VarianceTarget(r) => {
            if total_variance > 0.0 {
                let mut cumulative = 0.0;
                let mut chosen = bands;
                for (i, &lambda) in eig.values.iter().enumerate() {
                    cumulative += lambda.max(0.0) / total_variance;
                    if cumulative >= r {
                        chosen = i + 1;
                        break;
                    }
                }
                chosen
            } else {
                0
            }
        }
    };

    let components = eig.vectors[..k].iter().map(|v| sign_normalized(v)).collect();
    let explained_variance = eig.values[..k].iter().map(|v| v.max(0.0)).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

fn sign_normalized(v: &[f64]) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter().map(|x| -x).collect()
    } else {
        v.to_vec()
    }
}

/// `score = components · (spectrum - mean)` for every pixel.
pub fn project(cube: &SpectralCube, model: &PcaModel) -> Result<ScoreCube> {
    if cube.bands() != model.bands() {
        return Err(DimredError::BandCountMismatch {
            model: model.bands(),
            cube: cube.bands(),
        });
    }
    let n = cube.pixels();
    let k = model.k();
    let mut scores = vec![0.0; n * k];
    if k > 0 {
        let ranges = chunk_ranges(n, PIXEL_CHUNK);
        scores
            .par_chunks_mut(PIXEL_CHUNK * k)
            .zip(ranges.par_iter())
            .for_each(|(out, range)| {
                for b in 0..model.bands() {
                    let mu = model.mean[b];
                    let plane = &cube.band(b)[range.clone()];
                    for (p, &v) in plane.iter().enumerate() {
                        let centered = v - mu;
                        let row = &mut out[p * k..(p + 1) * k];
                        for (c, comp) in model.components.iter().enumerate() {
                            row[c] += comp[b] * centered;
                        }
                    }
                }
            });
    }
    ScoreCube::new(cube.samples(), cube.lines(), k, scores)
}

/// `spectrum = mean + Σ score_c · component_c`. The result is not clamped,
/// so it may contain small negative values.
pub fn reconstruct(scores: &ScoreCube, model: &PcaModel) -> Result<SpectralCube> {
    if scores.k() != model.k() {
        return Err(DimredError::ComponentCountMismatch {
            scores: scores.k(),
            model: model.k(),
        });
    }
    let n = scores.pixels();
    let bands = model.bands();
    let mut values = vec![0.0; bands * n];
    values.par_chunks_mut(n).enumerate().for_each(|(b, plane)| {
        for (p, out) in plane.iter_mut().enumerate() {
            let mut v = model.mean[b];
            for (c, comp) in model.components.iter().enumerate() {
                v += scores.point(p)[c] * comp[b];
            }
            *out = v;
        }
    });
    let header = CubeHeader::new(scores.width(), scores.height(), bands, None)
        .map_err(|e| DimredError::InvalidScores(e.to_string()))?;
    Ok(SpectralCube::from_parts_unchecked(header, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cube of `n` pixels in a single line from per-pixel spectra.
    fn cube_from_spectra(spectra: &[Vec<f64>]) -> SpectralCube {
        let n = spectra.len();
        let b = spectra[0].len();
        let mut values = vec![0.0; n * b];
        for (p, s) in spectra.iter().enumerate() {
            for (band, v) in s.iter().enumerate() {
                values[band * n + p] = *v;
            }
        }
        SpectralCube::new(CubeHeader::new(n, 1, b, None).unwrap(), values).unwrap()
    }

    fn rank_one() -> SpectralCube {
        cube_from_spectra(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 4.0]])
    }

    #[test]
    fn rank_one_line() {
        let m = fit_pca(&rank_one(), ComponentSelector::FixedK(1)).unwrap();
        assert!((m.explained_ratio()[0] - 1.0).abs() < 1e-12);
        let s5 = 5f64.sqrt();
        assert!((m.components()[0][0] - 1.0 / s5).abs() < 1e-12);
        assert!((m.components()[0][1] - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn isotropic_cross_has_equal_ratios() {
        // cross centered at (2, 2); PCA is translation invariant
        let cube = cube_from_spectra(&[vec![3.0, 2.0], vec![1.0, 2.0], vec![2.0, 3.0], vec![2.0, 1.0]]);
        let m = fit_pca(&cube, ComponentSelector::FixedK(2)).unwrap();
        for r in m.explained_ratio() {
            assert!((r - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_pixels() {
        let cube = cube_from_spectra(&[vec![1.0, 2.0]]);
        assert_eq!(
            fit_pca(&cube, ComponentSelector::FixedK(1)),
            Err(DimredError::DegenerateInput(1))
        );
    }

    #[test]
    fn selector_validation() {
        assert!(fit_pca(&rank_one(), ComponentSelector::FixedK(3)).is_err());
        assert!(fit_pca(&rank_one(), ComponentSelector::VarianceTarget(0.0)).is_err());
        assert!(fit_pca(&rank_one(), ComponentSelector::VarianceTarget(1.5)).is_err());
        let full = fit_pca(&rank_one(), ComponentSelector::VarianceTarget(1.0)).unwrap();
        assert!(full.k() >= 1);
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let m = fit_pca(&rank_one(), ComponentSelector::FixedK(2)).unwrap();
        let s = project(&cube_from_spectra(&[m.mean().to_vec()]), &m).unwrap();
        assert!(s.scores().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn projecting_mean_plus_axis() {
        let cube = cube_from_spectra(&[
            vec![1.0, 0.5, 3.0],
            vec![2.0, 1.0, 0.0],
            vec![0.0, 4.0, 1.0],
            vec![3.0, 3.0, 3.0],
        ]);
        let m = fit_pca(&cube, ComponentSelector::FixedK(3)).unwrap();
        let probe: Vec<f64> = m.mean().iter().zip(&m.components()[0]).map(|(a, b)| a + b).collect();
        let s = project(&cube_from_spectra(&[probe]), &m).unwrap();
        let expected = [1.0, 0.0, 0.0];
        for (a, e) in s.scores().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_variance_matches_eigenvalue() {
        let m = fit_pca(&rank_one(), ComponentSelector::FixedK(1)).unwrap();
        let s = project(&rank_one(), &m).unwrap();
        let mean = s.scores().iter().sum::<f64>() / 3.0;
        let var = s.scores().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        assert!((var - m.explained_variance()[0]).abs() < 1e-9);
    }

    #[test]
    fn full_rank_round_trip() {
        let cube = cube_from_spectra(&[
            vec![1.0, 0.5, 3.0],
            vec![2.0, 1.0, 0.0],
            vec![0.0, 4.0, 1.0],
            vec![3.0, 3.0, 3.0],
        ]);
        let m = fit_pca(&cube, ComponentSelector::FixedK(3)).unwrap();
        let back = reconstruct(&project(&cube, &m).unwrap(), &m).unwrap();
        for (a, b) in back.values().iter().zip(cube.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_components_reconstruct_to_mean() {
        let m = fit_pca(&rank_one(), ComponentSelector::FixedK(0)).unwrap();
        let s = project(&rank_one(), &m).unwrap();
        assert_eq!(s.k(), 0);
        let back = reconstruct(&s, &m).unwrap();
        for p in 0..3 {
            assert_eq!(back.spectrum(p), m.mean());
        }
    }

    #[test]
    fn rank_one_reconstruction_is_exact() {
        let m = fit_pca(&rank_one(), ComponentSelector::FixedK(1)).unwrap();
        let back = reconstruct(&project(&rank_one(), &m).unwrap(), &m).unwrap();
        for (a, b) in back.values().iter().zip(rank_one().values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatches_are_reported() {
        let m = fit_pca(&rank_one(), ComponentSelector::FixedK(1)).unwrap();
        let cube3 = cube_from_spectra(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 4.0]]);
        assert_eq!(
            project(&cube3, &m),
            Err(DimredError::BandCountMismatch { model: 2, cube: 3 })
        );
        let s = ScoreCube::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(
            reconstruct(&s, &m),
            Err(DimredError::ComponentCountMismatch { scores: 2, model: 1 })
        );
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let cube = cube_from_spectra(&[vec![3.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.2]]);
        let m = fit_pca(&cube, ComponentSelector::FixedK(2)).unwrap();
        for c in m.components() {
            let max = c
                .iter()
                .cloned()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let cube = cube_from_spectra(&[vec![1.0, 0.5, 3.0], vec![2.0, 1.0, 0.0], vec![0.0, 4.0, 1.0]]);
        let m = fit_pca(&cube, ComponentSelector::FixedK(2)).unwrap();
        let text = m.to_text();
        assert!(text.contains("bands = 3\nk = 2\n"));
        assert_eq!(PcaModel::from_text(&text).unwrap(), m);
        assert!(PcaModel::from_text("bands = 2\nk = 1\n").is_err());
    }
}
