//! Pixel clustering of PCA scores: Lloyd's K-means with k-means++ seeding and
//! EM-fitted Gaussian mixtures, plus label-map rendering and layer extraction.

mod gmm;
mod kmeans;

use thiserror::Error;

pub use gmm::{gmm_assign, gmm_fit, CovarianceKind, GmmConfig, GmmModel};
pub use kmeans::{kmeans_fit, kmeans_plus_plus, KMeansConfig, KMeansModel};

use crate::cube_io::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("requested {requested} clusters but only {distinct} distinct points exist")]
    TooManyClusters { requested: usize, distinct: usize },
    #[error("need more than {k} points for a {k}-component mixture, got {points}")]
    TooFewPoints { points: usize, k: usize },
    #[error("covariance of component {0} is not positive definite")]
    SingularCovariance(usize),
    #[error("score dimension {scores} does not match model dimension {model}")]
    DimensionMismatch { scores: usize, model: usize },
    #[error("cluster id {id} is not below {k}")]
    InvalidClusterId { id: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Per-pixel cluster indices in `[0, k)`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    k: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, k: usize, labels: Vec<u32>) -> Result<Self> {
        if k == 0 {
            return Err(ClusterError::InvalidParameter("k must be at least 1".to_string()));
        }
        if labels.len() != width * height {
            return Err(ClusterError::InvalidParameter(format!(
                "expected {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(&id) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(ClusterError::InvalidClusterId { id: id as usize, k });
        }
        Ok(LabelMap {
            width,
            height,
            k,
            labels,
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

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Relabels through `perm[old] = new`.
    pub fn permuted(&self, perm: &[u32]) -> Result<LabelMap> {
        LabelMap::new(
            self.width,
            self.height,
            self.k,
            self.labels.iter().map(|&l| perm[l as usize]).collect(),
        )
    }

    /// Recovers a label map from a rendered PGM: distinct gray levels, in
    /// ascending order, become clusters `0..k`.
    pub fn from_gray(image: &GrayImage, k: Option<usize>) -> Result<LabelMap> {
        let mut present = [false; 256];
        for &p in image.pixels() {
            present[p as usize] = true;
        }
        let (k, lut): (usize, Vec<u32>) = match k {
            Some(k) => {
                let lut = (0..256).map(|g| gray_to_cluster(g as u8, k)).collect();
                (k, lut)
            }
            None => {
                let mut lut = vec![0u32; 256];
                let mut next = 0u32;
                for g in 0..256 {
                    if present[g] {
                        lut[g] = next;
                        next += 1;
                    }
                }
                (next as usize, lut)
            }
        };
        let labels = image.pixels().iter().map(|&p| lut[p as usize]).collect();
        LabelMap::new(image.width(), image.height(), k, labels)
    }
}

/// Gray level for cluster `i` of `k`: `round(i * 255 / max(k - 1, 1))`.
pub fn cluster_gray_level(i: usize, k: usize) -> u8 {
    let denom = k.saturating_sub(1).max(1);
    ((2 * i * 255 + denom) / (2 * denom)) as u8
}

fn gray_to_cluster(level: u8, k: usize) -> u32 {
    let denom = k.saturating_sub(1).max(1);
    let i = (2 * level as usize * denom + 255) / 510;
    i.min(k - 1) as u32
}

pub fn render_label_map(labels: &LabelMap) -> GrayImage {
    let lut: Vec<u8> = (0..labels.k).map(|i| cluster_gray_level(i, labels.k)).collect();
    let pixels = labels.labels.iter().map(|&l| lut[l as usize]).collect();
    GrayImage::new(labels.width, labels.height, pixels).expect("label map dimensions are positive")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractMode {
    /// Selected clusters white, everything else black.
    Mask,
    /// Selected clusters black on white.
    Inverse,
}

pub fn extract_layer(labels: &LabelMap, cluster_ids: &[usize], mode: ExtractMode) -> Result<GrayImage> {
    let mut selected = vec![false; labels.k];
    for &id in cluster_ids {
        if id >= labels.k {
            return Err(ClusterError::InvalidClusterId { id, k: labels.k });
        }
        selected[id] = true;
    }
    let (on, off) = match mode {
        ExtractMode::Mask => (255, 0),
        ExtractMode::Inverse => (0, 255),
    };
    let pixels = labels
        .labels
        .iter()
        .map(|&l| if selected[l as usize] { on } else { off })
        .collect();
    Ok(GrayImage::new(labels.width, labels.height, pixels).expect("label map dimensions are positive"))
}

/// Squared Euclidean distance.
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_levels() {
        let k2: Vec<u8> = (0..2).map(|i| cluster_gray_level(i, 2)).collect();
        assert_eq!(k2, vec![0, 255]);
        let k4: Vec<u8> = (0..4).map(|i| cluster_gray_level(i, 4)).collect();
        assert_eq!(k4, vec![0, 85, 170, 255]);
        assert_eq!(cluster_gray_level(0, 1), 0);
        // round half up: 1 * 255 / 2 = 127.5
        assert_eq!(cluster_gray_level(1, 3), 128);
    }

    #[test]
    fn render_single_cluster_is_black() {
        let l = LabelMap::new(2, 2, 1, vec![0; 4]).unwrap();
        assert!(render_label_map(&l).pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn gray_round_trip() {
        for k in 1..=12 {
            let labels: Vec<u32> = (0..k as u32).collect();
            let l = LabelMap::new(k, 1, k, labels).unwrap();
            let img = render_label_map(&l);
            assert_eq!(LabelMap::from_gray(&img, Some(k)).unwrap(), l);
            assert_eq!(LabelMap::from_gray(&img, None).unwrap(), l);
        }
    }

    #[test]
    fn label_validation() {
        assert!(matches!(
            LabelMap::new(2, 1, 2, vec![0, 2]),
            Err(ClusterError::InvalidClusterId { id: 2, k: 2 })
        ));
        assert!(LabelMap::new(2, 1, 0, vec![0, 0]).is_err());
        assert!(LabelMap::new(2, 1, 2, vec![0]).is_err());
    }

    #[test]
    fn extract_all_and_inverse() {
        let l = LabelMap::new(2, 2, 1, vec![0; 4]).unwrap();
        assert!(extract_layer(&l, &[0], ExtractMode::Mask)
            .unwrap()
            .pixels()
            .iter()
            .all(|&p| p == 255));
        assert!(extract_layer(&l, &[0], ExtractMode::Inverse)
            .unwrap()
            .pixels()
            .iter()
            .all(|&p| p == 0));
        assert_eq!(
            extract_layer(&l, &[1], ExtractMode::Mask),
            Err(ClusterError::InvalidClusterId { id: 1, k: 1 })
        );
    }

    #[test]
    fn checkerboard_masks_are_complementary() {
        let labels: Vec<u32> = (0..16).map(|i| ((i % 4 + i / 4) % 2) as u32).collect();
        let l = LabelMap::new(4, 4, 2, labels).unwrap();
        let m0 = extract_layer(&l, &[0], ExtractMode::Mask).unwrap();
        let m1 = extract_layer(&l, &[1], ExtractMode::Mask).unwrap();
        for (a, b) in m0.pixels().iter().zip(m1.pixels()) {
            assert_eq!(*a, 255 - *b);
        }
    }
}
