//! White-reference channel normalization, band trimming and spectral binning.

use rayon::prelude::*;
use thiserror::Error;

use crate::cube_io::{CubeHeader, SpectralCube};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("band {band} of the white reference has non-positive mean {mean}")]
    ZeroBandMean { band: usize, mean: f64 },
    #[error("normalization factors cover {factors} bands but the cube has {bands}")]
    BandCountMismatch { factors: usize, bands: usize },
    #[error("cannot trim {leading}+{trailing} bands from a cube with {bands}")]
    TrimExceedsBands {
        leading: usize,
        trailing: usize,
        bands: usize,
    },
    #[error("{bands} bands are not divisible into bins of {bin}")]
    IndivisibleBands { bands: usize, bin: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Level the white surface is normalized to.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum WhiteTarget {
    /// Average of the per-band spatial means; preserves the overall signal scale.
    #[default]
    MeanOfMeans,
    Fixed(f64),
}

/// One multiplicative factor per band, fitted on a white-surface capture.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationFactors {
    factors: Vec<f64>,
    target: f64,
}

impl NormalizationFactors {
    pub fn new(factors: Vec<f64>, target: f64) -> Result<Self> {
        if !(target.is_finite() && target > 0.0) {
            return Err(PreprocessError::InvalidParameter(format!(
                "target {target} must be positive"
            )));
        }
        if let Some(f) = factors.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(PreprocessError::InvalidParameter(format!(
                "factor {f} must be positive"
            )));
        }
        Ok(NormalizationFactors { factors, target })
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn target(&self) -> f64 {
        self.target
    }
}

fn band_means(cube: &SpectralCube) -> Vec<f64> {
    let n = cube.pixels() as f64;
    (0..cube.bands())
        .into_par_iter()
        .map(|b| cube.band(b).iter().sum::<f64>() / n)
        .collect()
}

/// `factor[b] = target / mean(white band b)`.
pub fn compute_white_factors(white: &SpectralCube, target: WhiteTarget) -> Result<NormalizationFactors> {
    let means = band_means(white);
    if let Some((band, &mean)) = means.iter().enumerate().find(|(_, m)| !(**m > 0.0)) {
        return Err(PreprocessError::ZeroBandMean { band, mean });
    }
    let target = match target {
        // sequential sum over bands keeps the result independent of thread count
        WhiteTarget::MeanOfMeans => means.iter().sum::<f64>() / means.len() as f64,
        WhiteTarget::Fixed(t) => t,
    };
    let factors = means.iter().map(|m| target / m).collect();
    NormalizationFactors::new(factors, target)
}

pub fn apply_normalization(cube: &SpectralCube, factors: &NormalizationFactors) -> Result<SpectralCube> {
    if factors.factors.len() != cube.bands() {
        return Err(PreprocessError::BandCountMismatch {
            factors: factors.factors.len(),
            bands: cube.bands(),
        });
    }
    let n = cube.pixels();
    let mut values = cube.values().to_vec();
    values
        .par_chunks_mut(n)
        .zip(factors.factors.par_iter())
        .for_each(|(plane, &f)| plane.iter_mut().for_each(|v| *v *= f));
    Ok(SpectralCube::from_parts_unchecked(cube.header().clone(), values))
}

/// Drops `leading` bands from the start and `trailing` from the end.
pub fn trim_bands(cube: &SpectralCube, leading: usize, trailing: usize) -> Result<SpectralCube> {
    let bands = cube.bands();
    if leading + trailing >= bands {
        return Err(PreprocessError::TrimExceedsBands {
            leading,
            trailing,
            bands,
        });
    }
    let n = cube.pixels();
    let kept = bands - leading - trailing;
    let values = cube.values()[leading * n..(leading + kept) * n].to_vec();
    let wavelengths = cube.wavelengths().map(|w| w[leading..leading + kept].to_vec());
    let header = rebanded_header(cube.header(), kept, wavelengths);
    Ok(SpectralCube::from_parts_unchecked(header, values))
}

/// What to do with a final group of fewer than `bin` bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RemainderPolicy {
    #[default]
    Strict,
    DropTail,
}

/// Boxcar binning: output band `j` is the mean of input bands `[j*bin, (j+1)*bin)`.
pub fn bin_bands(cube: &SpectralCube, bin: usize) -> Result<SpectralCube> {
    bin_bands_with(cube, bin, RemainderPolicy::Strict)
}

pub fn bin_bands_with(cube: &SpectralCube, bin: usize, policy: RemainderPolicy) -> Result<SpectralCube> {
    if bin == 0 {
        return Err(PreprocessError::InvalidParameter("bin must be at least 1".to_string()));
    }
    let bands = cube.bands();
    if !bands.is_multiple_of(bin) && policy == RemainderPolicy::Strict {
        return Err(PreprocessError::IndivisibleBands { bands, bin });
    }
    let out_bands = bands / bin;
    if out_bands == 0 {
        return Err(PreprocessError::IndivisibleBands { bands, bin });
    }
    let n = cube.pixels();
    let scale = 1.0 / bin as f64;
    let mut values = vec![0.0; out_bands * n];
    values.par_chunks_mut(n).enumerate().for_each(|(j, plane)| {
        for b in j * bin..(j + 1) * bin {
            for (o, v) in plane.iter_mut().zip(cube.band(b)) {
                *o += v;
            }
        }
        plane.iter_mut().for_each(|o| *o *= scale);
    });
    let wavelengths = cube.wavelengths().map(|w| {
        (0..out_bands)
            .map(|j| w[j * bin..(j + 1) * bin].iter().sum::<f64>() * scale)
            .collect()
    });
    let header = rebanded_header(cube.header(), out_bands, wavelengths);
    Ok(SpectralCube::from_parts_unchecked(header, values))
}

fn rebanded_header(header: &CubeHeader, bands: usize, wavelengths: Option<Vec<f64>>) -> CubeHeader {
    let mut out = header.clone();
    out.bands = bands;
    out.wavelengths = wavelengths;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from_bands(samples: usize, lines: usize, bands: &[Vec<f64>]) -> SpectralCube {
        let header = CubeHeader::new(samples, lines, bands.len(), None).unwrap();
        SpectralCube::new(header, bands.concat()).unwrap()
    }

    fn constant_cube(bands: usize, value: f64) -> SpectralCube {
        let wl: Vec<f64> = (0..bands).map(|b| 400.0 + b as f64).collect();
        let header = CubeHeader::new(3, 2, bands, Some(wl)).unwrap();
        SpectralCube::new(header, vec![value; 6 * bands]).unwrap()
    }

    #[test]
    fn fixed_target_factors() {
        let white = cube_from_bands(2, 1, &[vec![1.0, 3.0], vec![4.0, 4.0]]);
        let f = compute_white_factors(&white, WhiteTarget::Fixed(2.0)).unwrap();
        assert_eq!(f.factors(), &[1.0, 0.5]);
    }

    #[test]
    fn equal_band_means_give_unit_factors() {
        let white = constant_cube(5, 0.9);
        let f = compute_white_factors(&white, WhiteTarget::MeanOfMeans).unwrap();
        assert!(f.factors().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn mean_of_means_two_step() {
        let white = cube_from_bands(1, 1, &[vec![1.0], vec![2.0], vec![3.0]]);
        let f = compute_white_factors(&white, WhiteTarget::MeanOfMeans).unwrap();
        assert_eq!(f.target(), 2.0);
        let expected = [2.0, 1.0, 2.0 / 3.0];
        for (a, e) in f.factors().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_band_mean_is_an_error() {
        let white = cube_from_bands(2, 1, &[vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(
            compute_white_factors(&white, WhiteTarget::MeanOfMeans),
            Err(PreprocessError::ZeroBandMean { band: 1, mean: 0.0 })
        );
    }

    #[test]
    fn unit_factors_are_identity() {
        let cube = cube_from_bands(2, 1, &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let f = NormalizationFactors::new(vec![1.0, 1.0], 1.0).unwrap();
        assert_eq!(apply_normalization(&cube, &f).unwrap(), cube);
    }

    #[test]
    fn single_multiplication() {
        let cube = cube_from_bands(1, 1, &[vec![1.0], vec![3.0]]);
        let f = NormalizationFactors::new(vec![1.0, 0.5], 1.0).unwrap();
        assert_eq!(apply_normalization(&cube, &f).unwrap().band(1), &[1.5]);
    }

    #[test]
    fn normalized_white_is_homogeneous() {
        let white = cube_from_bands(3, 1, &[vec![0.2, 0.3, 0.25], vec![0.9, 1.1, 1.0], vec![0.5, 0.55, 0.6]]);
        let f = compute_white_factors(&white, WhiteTarget::MeanOfMeans).unwrap();
        let out = apply_normalization(&white, &f).unwrap();
        for b in 0..3 {
            let mean = out.band(b).iter().sum::<f64>() / 3.0;
            assert!(((mean - f.target()) / f.target()).abs() < 1e-9);
        }
    }

    #[test]
    fn factor_length_mismatch() {
        let cube = cube_from_bands(1, 1, &[vec![1.0], vec![3.0]]);
        let f = NormalizationFactors::new(vec![1.0], 1.0).unwrap();
        assert!(matches!(
            apply_normalization(&cube, &f),
            Err(PreprocessError::BandCountMismatch { factors: 1, bands: 2 })
        ));
    }

    #[test]
    fn trim_counts_and_wavelengths() {
        let cube = constant_cube(1040, 0.5);
        let t = trim_bands(&cube, 4, 4).unwrap();
        assert_eq!(t.bands(), 1032);
        assert_eq!(t.wavelengths().unwrap()[0], 404.0);
        assert_eq!(*t.wavelengths().unwrap().last().unwrap(), 1435.0);
        assert_eq!(trim_bands(&cube, 0, 0).unwrap(), cube);
    }

    #[test]
    fn trim_too_many() {
        let cube = constant_cube(8, 0.5);
        assert_eq!(
            trim_bands(&cube, 5, 4),
            Err(PreprocessError::TrimExceedsBands {
                leading: 5,
                trailing: 4,
                bands: 8
            })
        );
        assert!(trim_bands(&cube, 4, 4).is_err());
    }

    #[test]
    fn bin_counts() {
        let cube = constant_cube(1032, 0.5);
        let b = bin_bands(&cube, 4).unwrap();
        assert_eq!(b.bands(), 258);
        assert!(b.values().iter().all(|&v| v == 0.5));
        assert_eq!(b.wavelengths().unwrap()[0], 401.5);
    }

    #[test]
    fn bin_single_pixel_mean() {
        let cube = cube_from_bands(1, 1, &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        assert_eq!(bin_bands(&cube, 4).unwrap().values(), &[2.5]);
    }

    #[test]
    fn bin_remainder_policy() {
        let cube = constant_cube(10, 1.0);
        assert_eq!(
            bin_bands(&cube, 4),
            Err(PreprocessError::IndivisibleBands { bands: 10, bin: 4 })
        );
        let b = bin_bands_with(&cube, 4, RemainderPolicy::DropTail).unwrap();
        assert_eq!(b.bands(), 2);
        assert_eq!(b.wavelengths().unwrap(), &[401.5, 405.5]);
        assert!(bin_bands(&cube, 0).is_err());
    }

    #[test]
    fn pipeline_count_law() {
        let cube = constant_cube(1040, 0.1);
        let out = bin_bands(&trim_bands(&cube, 4, 4).unwrap(), 4).unwrap();
        assert_eq!(out.bands(), 258);
    }
}
