//! Synthetic multispectral drawings with exact ground truth.
//!
//! Strokes are composited in order over paper (dry media alpha-blended, wet
//! media multiplied by their transmittance), then scaled by an illumination
//! field and perturbed by Gaussian noise drawn from a counter-based stream
//! keyed on `(seed, pixel, band)`.

pub mod materials;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use materials::{builtin_materials, iron_gall_ink, material, paper, MaterialSpectrum, Medium};

use crate::cube_io::{save_cube, CubeError, CubeHeader, GrayImage, Interleave, SpectralCube};
use crate::evaluate::LayerGroundTruth;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("ink dilution {0} outside (0, 1]")]
    UnknownDilution(f64),
    #[error("stroke {index} extends outside the {width}x{height} image")]
    GeometryOutOfBounds { index: usize, width: usize, height: usize },
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Illumination {
    #[default]
    Uniform,
    /// `1 + amplitude * (2t - 1)` with `t` running 0→1 along the axis.
    LinearGradient { axis: Axis, amplitude: f64 },
}

impl Illumination {
    fn field(&self, width: usize, height: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                out.push(match *self {
                    Illumination::Uniform => 1.0,
                    Illumination::LinearGradient { axis, amplitude } => {
                        let (pos, len) = match axis {
                            Axis::X => (x, width),
                            Axis::Y => (y, height),
                        };
                        let t = if len > 1 { pos as f64 / (len - 1) as f64 } else { 0.5 };
                        1.0 + amplitude * (2.0 * t - 1.0)
                    }
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Geometry {
    /// Polyline through `points` with the given stroke width (pixels).
    Line { points: Vec<[f64; 2]>, width: f64 },
    /// Filled polygon (even-odd rule), e.g. an ink wash.
    Polygon { points: Vec<[f64; 2]> },
}

impl Geometry {
    fn points(&self) -> &[[f64; 2]] {
        match self {
            Geometry::Line { points, .. } | Geometry::Polygon { points } => points,
        }
    }

    fn covers(&self, px: f64, py: f64) -> bool {
        match self {
            Geometry::Line { points, width } => {
                let r2 = (width / 2.0) * (width / 2.0);
                if points.len() == 1 {
                    let d = (px - points[0][0]).powi(2) + (py - points[0][1]).powi(2);
                    return d <= r2;
                }
                points.windows(2).any(|s| segment_dist2(px, py, s[0], s[1]) <= r2)
            }
            Geometry::Polygon { points } => {
                let mut inside = false;
                let n = points.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = (points[i][0], points[i][1]);
                    let (xj, yj) = (points[j][0], points[j][1]);
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }

    /// Pixels whose centers fall inside the shape.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<bool> {
        let mut mask = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                mask[y * width + x] = self.covers(x as f64 + 0.5, y as f64 + 0.5);
            }
        }
        mask
    }
}

fn segment_dist2(px: f64, py: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    (px - cx).powi(2) + (py - cy).powi(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    /// Ground-truth layer; consecutive strokes with the same layer form one step.
    pub layer: String,
    pub material: String,
    /// Only for wet media.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilution: Option<f64>,
    #[serde(flatten)]
    pub geometry: Geometry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    #[serde(default = "default_range")]
    pub wavelength_range: [f64; 2],
    #[serde(default)]
    pub illumination: Illumination,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strokes: Vec<Stroke>,
}

fn default_range() -> [f64; 2] {
    [materials::WAVELENGTH_MIN, materials::WAVELENGTH_MAX]
}

fn default_noise() -> f64 {
    0.01
}

fn line(layer: &str, material: &str, points: &[[f64; 2]], width: f64) -> Stroke {
    Stroke {
        layer: layer.to_string(),
        material: material.to_string(),
        dilution: None,
        geometry: Geometry::Line {
            points: points.to_vec(),
            width,
        },
    }
}

fn wash(layer: &str, dilution: f64, points: &[[f64; 2]]) -> Stroke {
    Stroke {
        layer: layer.to_string(),
        material: "iron_gall_ink".to_string(),
        dilution: Some(dilution),
        geometry: Geometry::Polygon {
            points: points.to_vec(),
        },
    }
}

impl PhantomSpec {
    pub fn blank(width: usize, height: usize, bands: usize) -> Self {
        PhantomSpec {
            width,
            height,
            bands,
            wavelength_range: default_range(),
            illumination: Illumination::Uniform,
            noise_sigma: default_noise(),
            seed: 0,
            strokes: Vec::new(),
        }
    }

    /// Three-layer sketch: graphite lines, a red-chalk underdrawing, then pen
    /// lines and a wash in iron-gall ink. Geometry scales with the image size.
    pub fn default_scene(width: usize, height: usize, bands: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let s = w.min(h) / 256.0;
        let p = |x: f64, y: f64| [x * w, y * h];
        let mut spec = PhantomSpec::blank(width, height, bands);
        spec.strokes = vec![
            line(
                "graphite",
                "graphite",
                &[p(0.08, 0.10), p(0.45, 0.14), p(0.62, 0.30)],
                4.0 * s,
            ),
            line("graphite", "graphite", &[p(0.10, 0.85), p(0.30, 0.60)], 4.0 * s),
            line(
                "red_chalk",
                "red_chalk",
                &[p(0.15, 0.35), p(0.55, 0.45), p(0.85, 0.40)],
                6.0 * s,
            ),
            line("red_chalk", "red_chalk", &[p(0.60, 0.62), p(0.80, 0.88)], 6.0 * s),
            line("ink", "iron_gall_ink", &[p(0.20, 0.20), p(0.90, 0.70)], 4.0 * s),
            wash(
                "ink",
                0.5,
                &[p(0.50, 0.55), p(0.92, 0.55), p(0.92, 0.95), p(0.50, 0.95)],
            ),
        ];
        spec.strokes[4].dilution = Some(1.0);
        spec
    }

    /// Red-chalk strokes entirely under an iron-gall wash, graphite outside
    /// it, and an ink-only part of the wash.
    pub fn concealed_chalk_scene(width: usize, height: usize, bands: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let s = w.min(h) / 256.0;
        let p = |x: f64, y: f64| [x * w, y * h];
        let mut spec = PhantomSpec::blank(width, height, bands);
        spec.strokes = vec![
            line("graphite", "graphite", &[p(0.06, 0.08), p(0.40, 0.12)], 5.0 * s),
            line("graphite", "graphite", &[p(0.06, 0.30), p(0.30, 0.18)], 5.0 * s),
            line(
                "red_chalk",
                "red_chalk",
                &[p(0.15, 0.50), p(0.45, 0.62), p(0.80, 0.52)],
                8.0 * s,
            ),
            line(
                "red_chalk",
                "red_chalk",
                &[p(0.20, 0.85), p(0.60, 0.70), p(0.85, 0.88)],
                8.0 * s,
            ),
            wash(
                "ink",
                0.5,
                &[p(0.05, 0.40), p(0.95, 0.40), p(0.95, 0.97), p(0.05, 0.97)],
            ),
        ];
        spec
    }

    /// Two materials under a left-to-right illumination gradient: red-chalk
    /// strokes and a dilute iron-gall wash that partly covers them.
    pub fn gradient_scene(width: usize, height: usize, bands: usize, amplitude: f64, dilution: f64) -> Self {
        let (w, h) = (width as f64, height as f64);
        let s = w.min(h) / 256.0;
        let p = |x: f64, y: f64| [x * w, y * h];
        let mut spec = PhantomSpec::blank(width, height, bands);
        spec.illumination = Illumination::LinearGradient {
            axis: Axis::X,
            amplitude,
        };
        spec.strokes = vec![
            line("red_chalk", "red_chalk", &[p(0.08, 0.15), p(0.92, 0.20)], 24.0 * s),
            line("red_chalk", "red_chalk", &[p(0.08, 0.70), p(0.92, 0.80)], 24.0 * s),
            wash(
                "ink",
                dilution,
                &[p(0.05, 0.55), p(0.95, 0.55), p(0.95, 0.95), p(0.05, 0.95)],
            ),
        ];
        spec
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        let [lo, hi] = self.wavelength_range;
        let step = (hi - lo) / self.bands as f64;
        (0..self.bands).map(|b| lo + (b as f64 + 0.5) * step).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PhantomError::InvalidSpec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("phantom spec serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(PhantomError::InvalidSpec(
                "width, height and bands must be positive".into(),
            ));
        }
        let [lo, hi] = self.wavelength_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(PhantomError::InvalidSpec(format!("bad wavelength range [{lo}, {hi}]")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(PhantomError::InvalidSpec(format!("noise_sigma {}", self.noise_sigma)));
        }
        if let Illumination::LinearGradient { amplitude, .. } = self.illumination {
            if !(0.0..=0.5).contains(&amplitude) {
                return Err(PhantomError::InvalidSpec(format!(
                    "gradient amplitude {amplitude} outside [0, 0.5]"
                )));
            }
        }
        let mut finished: Vec<&str> = Vec::new();
        for (i, stroke) in self.strokes.iter().enumerate() {
            let pts = stroke.geometry.points();
            let min_points = match stroke.geometry {
                Geometry::Line { width, .. } => {
                    if !(width > 0.0) {
                        return Err(PhantomError::InvalidSpec(format!("stroke {i} has width {width}")));
                    }
                    1
                }
                Geometry::Polygon { .. } => 3,
            };
            if pts.len() < min_points {
                return Err(PhantomError::InvalidSpec(format!("stroke {i} has too few points")));
            }
            let (w, h) = (self.width as f64, self.height as f64);
            if pts
                .iter()
                .any(|p| !(p[0] >= 0.0 && p[0] <= w && p[1] >= 0.0 && p[1] <= h))
            {
                return Err(PhantomError::GeometryOutOfBounds {
                    index: i,
                    width: self.width,
                    height: self.height,
                });
            }
            let prev = if i > 0 {
                Some(self.strokes[i - 1].layer.as_str())
            } else {
                None
            };
            if prev != Some(stroke.layer.as_str()) {
                if finished.contains(&stroke.layer.as_str()) {
                    return Err(PhantomError::InvalidSpec(format!(
                        "layer `{}` is not contiguous in the stroke list",
                        stroke.layer
                    )));
                }
                if let Some(p) = prev {
                    finished.push(p);
                }
            }
        }
        Ok(())
    }

    fn resolve_materials(&self) -> Result<Vec<MaterialSpectrum>> {
        self.strokes
            .iter()
            .map(|s| {
                let base = material(&s.material).ok_or_else(|| PhantomError::UnknownMaterial(s.material.clone()))?;
                match (s.dilution, &base.medium) {
                    (Some(d), _) => base.with_dilution(d),
                    (None, _) => Ok(base),
                }
            })
            .collect()
    }
}

/// Everything a phantom run produces.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub cube: SpectralCube,
    pub white: SpectralCube,
    pub truth: LayerGroundTruth,
    /// Luminance scans: blank paper, then one after each layer.
    pub step_scans: Vec<GrayImage>,
}

/// Visible-range sample wavelengths used for luminance scans.
fn scan_wavelengths() -> Vec<f64> {
    (0..=30).map(|i| 400.0 + 10.0 * i as f64).collect()
}

fn composite(order: &[usize], materials: &[MaterialSpectrum], wavelengths: &[f64]) -> Vec<f64> {
    let base = paper();
    wavelengths
        .iter()
        .map(|&wl| order.iter().fold(base.response(wl), |r, &s| materials[s].apply(r, wl)))
        .collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal sample determined only by `(seed, stream, pixel, band)`.
/// Bands are paired; the pair shares one Box–Muller draw.
pub(crate) fn counter_normal(seed: u64, stream: u64, pixel: u64, band: u64) -> f64 {
    let key = splitmix64(seed ^ splitmix64(stream ^ splitmix64(pixel ^ splitmix64(band / 2))));
    let a = splitmix64(key);
    let b = splitmix64(key ^ 0xD1B5_4A32_D192_ED03);
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    if band.is_multiple_of(2) {
        r * theta.cos()
    } else {
        r * theta.sin()
    }
}

const CUBE_STREAM: u64 = 1;
const WHITE_STREAM: u64 = 2;

fn noisy_cube(
    header: CubeHeader,
    spectra: &[Vec<f64>],
    signature: &[usize],
    field: &[f64],
    sigma: f64,
    seed: u64,
    stream: u64,
) -> SpectralCube {
    let n = header.pixels();
    let mut values = vec![0.0; header.len()];
    values.par_chunks_mut(n).enumerate().for_each(|(b, plane)| {
        for (p, out) in plane.iter_mut().enumerate() {
            let clean = spectra[signature[p]][b] * field[p];
            let noise = if sigma > 0.0 {
                sigma * counter_normal(seed, stream, p as u64, b as u64)
            } else {
                0.0
            };
            *out = (clean + noise).max(0.0);
        }
    });
    SpectralCube::new(header, values).expect("phantom values are finite and nonnegative")
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let materials = spec.resolve_materials()?;
    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let rasters: Vec<Vec<bool>> = spec.strokes.iter().map(|s| s.geometry.rasterize(w, h)).collect();

    // pixels covered by the same strokes share one composite spectrum
    let mut signature_ids: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut signatures: Vec<Vec<usize>> = Vec::new();
    let mut signature = vec![0usize; n];
    for (p, sig) in signature.iter_mut().enumerate() {
        let covering: Vec<usize> = (0..rasters.len()).filter(|&s| rasters[s][p]).collect();
        *sig = *signature_ids.entry(covering.clone()).or_insert_with(|| {
            signatures.push(covering);
            signatures.len() - 1
        });
    }

    let wavelengths = spec.wavelengths();
    let spectra: Vec<Vec<f64>> = signatures
        .iter()
        .map(|s| composite(s, &materials, &wavelengths))
        .collect();
    let field = spec.illumination.field(w, h);
    let header = CubeHeader::new(w, h, spec.bands, Some(wavelengths))?;
    let cube = noisy_cube(
        header.clone(),
        &spectra,
        &signature,
        &field,
        spec.noise_sigma,
        spec.seed,
        CUBE_STREAM,
    );
    let white_spectra = vec![vec![materials::WHITE_REFERENCE; spec.bands]];
    let zeros = vec![0usize; n];
    let white = noisy_cube(
        header,
        &white_spectra,
        &zeros,
        &field,
        spec.noise_sigma,
        spec.seed,
        WHITE_STREAM,
    );

    // layers in order of first appearance, with the index of their last stroke
    let mut layers: Vec<(String, Vec<bool>, usize)> = Vec::new();
    for (i, stroke) in spec.strokes.iter().enumerate() {
        match layers.last_mut() {
            Some((name, mask, last)) if *name == stroke.layer => {
                mask.iter_mut().zip(&rasters[i]).for_each(|(m, r)| *m |= r);
                *last = i;
            }
            _ => layers.push((stroke.layer.clone(), rasters[i].clone(), i)),
        }
    }

    let scan_wl = scan_wavelengths();
    let mut step_scans = Vec::with_capacity(layers.len() + 1);
    let mut cut = 0usize;
    for step in 0..=layers.len() {
        if step > 0 {
            cut = layers[step - 1].2 + 1;
        }
        let mut cache: HashMap<usize, u8> = HashMap::new();
        let pixels = signature
            .iter()
            .map(|&sig| {
                *cache.entry(sig).or_insert_with(|| {
                    let visible: Vec<usize> = signatures[sig].iter().copied().filter(|&s| s < cut).collect();
                    let spectrum = composite(&visible, &materials, &scan_wl);
                    let lum = spectrum.iter().sum::<f64>() / spectrum.len() as f64;
                    (lum.clamp(0.0, 1.0) * 255.0).round() as u8
                })
            })
            .collect();
        step_scans.push(GrayImage::new(w, h, pixels)?);
    }

    let truth = LayerGroundTruth::new(w, h, layers.into_iter().map(|(name, mask, _)| (name, mask)).collect())
        .map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
    Ok(Phantom {
        cube,
        white,
        truth,
        step_scans,
    })
}

impl Phantom {
    /// Writes `cube.hdr/.raw`, `white.hdr/.raw`, truth masks, step scans and
    /// `manifest.txt` into `dir`.
    pub fn save(&self, spec: &PhantomSpec, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_cube(&self.cube, &dir.join("cube.hdr"), Interleave::Bsq)?;
        save_cube(&self.white, &dir.join("white.hdr"), Interleave::Bsq)?;
        self.truth
            .save_masks(dir)
            .map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
        for (i, scan) in self.step_scans.iter().enumerate() {
            scan.save_pgm(&dir.join(format!("scan_{i:02}.pgm")))?;
        }
        let mut manifest = String::new();
        let _ = writeln!(manifest, "tool = strata {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(manifest, "cube = cube.hdr");
        let _ = writeln!(manifest, "white = white.hdr");
        for (i, name) in self.truth.names().iter().enumerate() {
            let _ = writeln!(manifest, "mask.{i} = mask_{i:02}_{name}.pgm");
        }
        for i in 0..self.step_scans.len() {
            let _ = writeln!(manifest, "scan.{i} = scan_{i:02}.pgm");
        }
        manifest.push_str("# spec\n");
        for line in spec.to_toml().lines() {
            let _ = writeln!(manifest, "# {line}");
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }
}

/// Smooth random texture for registration tests: bilinear value noise over
/// three octaves, scaled to the full gray range.
pub fn textured_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let octaves = [(4.0, 1.0), (8.0, 0.5), (16.0, 0.25)];
    let mut acc = vec![0.0; width * height];
    for (o, &(cell, amp)) in octaves.iter().enumerate() {
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let lattice = |gx: usize, gy: usize| {
            let h = splitmix64(seed ^ splitmix64((o as u64) << 40 | (gy * gw + gx) as u64));
            (h >> 11) as f64 / (1u64 << 53) as f64
        };
        for y in 0..height {
            for x in 0..width {
                let fx = x as f64 / cell;
                let fy = y as f64 / cell;
                let (gx, gy) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (fx - gx as f64, fy - gy as f64);
                let v = lattice(gx, gy) * (1.0 - tx) * (1.0 - ty)
                    + lattice(gx + 1, gy) * tx * (1.0 - ty)
                    + lattice(gx, gy + 1) * (1.0 - tx) * ty
                    + lattice(gx + 1, gy + 1) * tx * ty;
                acc[y * width + x] += amp * v;
            }
        }
    }
    let (lo, hi) = acc
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let pixels = acc
        .iter()
        .map(|v| (20.0 + 215.0 * (v - lo) / span).round() as u8)
        .collect();
    GrayImage::new(width, height, pixels).expect("positive dimensions")
}

/// A reference window and a copy displaced by `(dx, dy)` (content moves by
/// the shift, so `moving(x + dx, y + dy) = reference(x, y)` before noise),
/// both cropped from one larger texture. Gaussian noise with `sigma` gray
/// levels is added to the moving image.
pub fn shifted_pair(size: usize, dx: i64, dy: i64, max_shift: usize, sigma: f64, seed: u64) -> (GrayImage, GrayImage) {
    let pad = max_shift as i64;
    let big = size + 2 * max_shift;
    let texture = textured_image(big, big, seed);
    let crop = |ox: i64, oy: i64, noisy: bool| {
        let mut px = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let v = texture.get((x as i64 + ox) as usize, (y as i64 + oy) as usize) as f64;
                let n = if noisy && sigma > 0.0 {
                    sigma * counter_normal(seed, 3, (y * size + x) as u64, 0)
                } else {
                    0.0
                };
                px.push((v + n).round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage::new(size, size, px).expect("positive dimensions")
    };
    (crop(pad, pad, false), crop(pad - dx, pad - dy, true))
}
