//! Piecewise-linear material curves over 400–1000 nm.
//!
//! These are design constants shaped by qualitative behaviour, not measured
//! pigment data: paper is bright and flat with a mild blue falloff; red chalk
//! is dark below ~580 nm and climbs to paper-like reflectance in the near
//! infrared; iron-gall ink transmits more and more light toward the infrared.

use super::PhantomError;

pub const WAVELENGTH_MIN: f64 = 400.0;
pub const WAVELENGTH_MAX: f64 = 1000.0;

/// Reflectance of the white calibration surface.
pub const WHITE_REFERENCE: f64 = 0.95;

const PAPER: &[(f64, f64)] = &[
    (400.0, 0.78),
    (440.0, 0.84),
    (480.0, 0.87),
    (550.0, 0.89),
    (700.0, 0.90),
    (1000.0, 0.91),
];

const RED_CHALK: &[(f64, f64)] = &[
    (400.0, 0.18),
    (560.0, 0.20),
    (580.0, 0.24),
    (620.0, 0.55),
    (660.0, 0.75),
    (700.0, 0.82),
    (800.0, 0.87),
    (900.0, 0.895),
    (1000.0, 0.905),
];

const GRAPHITE: &[(f64, f64)] = &[(400.0, 0.25), (1000.0, 0.25)];

const BLACK_CHALK: &[(f64, f64)] = &[(400.0, 0.09), (700.0, 0.10), (1000.0, 0.12)];

const WHITE_CHALK: &[(f64, f64)] = &[(400.0, 0.86), (450.0, 0.92), (1000.0, 0.93)];

const CHARCOAL: &[(f64, f64)] = &[(400.0, 0.06), (1000.0, 0.07)];

/// Transmittance of undiluted iron-gall ink; a dilution `d` gives `T^d`.
const IRON_GALL_INK: &[(f64, f64)] = &[
    (400.0, 0.06),
    (500.0, 0.08),
    (600.0, 0.12),
    (700.0, 0.25),
    (800.0, 0.45),
    (900.0, 0.62),
    (1000.0, 0.75),
];

#[derive(Clone, Debug, PartialEq)]
pub enum Medium {
    /// Dry media are alpha-composited over what lies beneath.
    Dry { opacity: f64 },
    /// Wet media multiply the underlying reflectance by `T(λ)^dilution`.
    Wet { dilution: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialSpectrum {
    pub name: String,
    /// Control points `(wavelength nm, value)`; reflectance for dry media,
    /// full-strength transmittance for wet media.
    pub curve: Vec<(f64, f64)>,
    pub medium: Medium,
}

impl MaterialSpectrum {
    fn dry(name: &str, curve: &[(f64, f64)], opacity: f64) -> Self {
        MaterialSpectrum {
            name: name.to_string(),
            curve: curve.to_vec(),
            medium: Medium::Dry { opacity },
        }
    }

    /// Linear interpolation of the control points, held constant outside them.
    pub fn curve_at(&self, wavelength: f64) -> f64 {
        interpolate(&self.curve, wavelength)
    }

    /// Reflectance (dry) or effective transmittance (wet) at a wavelength.
    pub fn response(&self, wavelength: f64) -> f64 {
        let v = self.curve_at(wavelength);
        match self.medium {
            Medium::Dry { .. } => v,
            Medium::Wet { dilution } => v.powf(dilution),
        }
    }

    /// Composites this material over an underlying reflectance.
    pub fn apply(&self, under: f64, wavelength: f64) -> f64 {
        match self.medium {
            Medium::Dry { opacity } => (1.0 - opacity) * under + opacity * self.curve_at(wavelength),
            Medium::Wet { .. } => under * self.response(wavelength),
        }
    }

    pub fn with_dilution(&self, dilution: f64) -> Result<Self, PhantomError> {
        match self.medium {
            Medium::Wet { .. } => {
                if !(dilution > 0.0 && dilution <= 1.0) {
                    return Err(PhantomError::UnknownDilution(dilution));
                }
                Ok(MaterialSpectrum {
                    medium: Medium::Wet { dilution },
                    ..self.clone()
                })
            }
            Medium::Dry { .. } => Err(PhantomError::InvalidSpec(format!(
                "dilution given for dry medium `{}`",
                self.name
            ))),
        }
    }
}

pub(crate) fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= x);
    let (x0, y0) = points[i - 1];
    let (x1, y1) = points[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

pub fn paper() -> MaterialSpectrum {
    MaterialSpectrum::dry("paper", PAPER, 1.0)
}

/// Iron-gall ink at dilution `d` in `(0, 1]` (1 = undiluted).
pub fn iron_gall_ink(dilution: f64) -> Result<MaterialSpectrum, PhantomError> {
    if !(dilution > 0.0 && dilution <= 1.0) {
        return Err(PhantomError::UnknownDilution(dilution));
    }
    Ok(MaterialSpectrum {
        name: "iron_gall_ink".to_string(),
        curve: IRON_GALL_INK.to_vec(),
        medium: Medium::Wet { dilution },
    })
}

/// Paper substrate plus the drawing media; ink is listed undiluted.
pub fn builtin_materials() -> Vec<MaterialSpectrum> {
    vec![
        paper(),
        MaterialSpectrum::dry("red_chalk", RED_CHALK, 0.85),
        MaterialSpectrum::dry("graphite", GRAPHITE, 1.0),
        MaterialSpectrum::dry("black_chalk", BLACK_CHALK, 0.9),
        MaterialSpectrum::dry("white_chalk", WHITE_CHALK, 0.7),
        MaterialSpectrum::dry("charcoal", CHARCOAL, 0.85),
        iron_gall_ink(1.0).expect("valid dilution"),
    ]
}

pub fn material(name: &str) -> Option<MaterialSpectrum> {
    builtin_materials().into_iter().find(|m| m.name == name)
}
