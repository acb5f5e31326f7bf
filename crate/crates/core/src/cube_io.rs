//! Hyperspectral cube container: a `key = value` text header plus a raw
//! interleaved payload, and 8-bit grayscale export.
//!
//! In memory every cube is band-sequential: `values[b * lines * samples + y * samples + x]`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CubeError {
    #[error("missing header field `{0}`")]
    MissingField(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("wavelengths must be strictly increasing")]
    NonIncreasingWavelengths,
    #[error("payload size mismatch: expected {expected} bytes, got {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },
    #[error("band {band} out of range for cube with {bands} bands")]
    BandOutOfRange { band: usize, bands: usize },
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CubeError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CubeError + '_ {
    move |source| CubeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataKind {
    Float32,
    Uint16,
}

impl DataKind {
    pub fn element_size(self) -> usize {
        match self {
            DataKind::Float32 => 4,
            DataKind::Uint16 => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interleave {
    /// Band-sequential: one full image plane per band.
    Bsq,
    /// Band-interleaved-by-line: for each line, one row per band.
    Bil,
    /// Band-interleaved-by-pixel: the full spectrum of each pixel in turn.
    Bip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ByteOrder {
    Little,
    Big,
}

macro_rules! keyword_enum {
    ($ty:ty, $key:literal, { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = CubeError;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($variant),)+
                    other => Err(CubeError::InvalidValue {
                        key: $key.to_string(),
                        reason: format!("unrecognized value `{other}`"),
                    }),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let text = match self {
                    $(v if *v == $variant => $text,)+
                    _ => unreachable!(),
                };
                f.write_str(text)
            }
        }
    };
}

keyword_enum!(DataKind, "data_kind", { "float32" => DataKind::Float32, "uint16" => DataKind::Uint16 });
keyword_enum!(Interleave, "interleave", { "bsq" => Interleave::Bsq, "bil" => Interleave::Bil, "bip" => Interleave::Bip });
keyword_enum!(ByteOrder, "byte_order", { "little" => ByteOrder::Little, "big" => ByteOrder::Big });

#[derive(Clone, Debug, PartialEq)]
pub struct CubeHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub data_kind: DataKind,
    pub interleave: Interleave,
    pub byte_order: ByteOrder,
    pub wavelengths: Option<Vec<f64>>,
}

impl CubeHeader {
    /// Header for an in-memory float32 little-endian BSQ cube.
    pub fn new(samples: usize, lines: usize, bands: usize, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        let header = CubeHeader {
            samples,
            lines,
            bands,
            data_kind: DataKind::Float32,
            interleave: Interleave::Bsq,
            byte_order: ByteOrder::Little,
            wavelengths,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, value) in [("samples", self.samples), ("lines", self.lines), ("bands", self.bands)] {
            if value == 0 {
                return Err(CubeError::InvalidValue {
                    key: key.to_string(),
                    reason: "must be at least 1".to_string(),
                });
            }
        }
        if let Some(w) = &self.wavelengths {
            if w.len() != self.bands {
                return Err(CubeError::InvalidValue {
                    key: "wavelengths".to_string(),
                    reason: format!("expected {} values, got {}", self.bands, w.len()),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(CubeError::InvalidValue {
                    key: "wavelengths".to_string(),
                    reason: "non-finite wavelength".to_string(),
                });
            }
            if w.windows(2).any(|p| p[1] <= p[0]) {
                return Err(CubeError::NonIncreasingWavelengths);
            }
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.samples * self.lines
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.bands
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn payload_len(&self) -> usize {
        self.len() * self.data_kind.element_size()
    }

    /// Renders the header as `key = value` text accepted by [`parse_header`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("samples = {}\n", self.samples));
        out.push_str(&format!("lines = {}\n", self.lines));
        out.push_str(&format!("bands = {}\n", self.bands));
        out.push_str(&format!("data_kind = {}\n", self.data_kind));
        out.push_str(&format!("interleave = {}\n", self.interleave));
        out.push_str(&format!("byte_order = {}\n", self.byte_order));
        if let Some(w) = &self.wavelengths {
            let joined: Vec<String> = w.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&format!("wavelengths = {}\n", joined.join(", ")));
        }
        out
    }
}

/// Parses header text, returning unknown keys through the warning list.
pub fn parse_header_with_warnings(text: &str) -> Result<(CubeHeader, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut samples = None;
    let mut lines = None;
    let mut bands = None;
    let mut data_kind = None;
    let mut interleave = None;
    let mut byte_order = None;
    let mut wavelengths = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CubeError::InvalidValue {
                key: format!("line {}", lineno + 1),
                reason: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        match key.as_str() {
            "samples" => samples = Some(parse_count(&key, value)?),
            "lines" => lines = Some(parse_count(&key, value)?),
            "bands" => bands = Some(parse_count(&key, value)?),
            "data_kind" => data_kind = Some(value.parse::<DataKind>()?),
            "interleave" => interleave = Some(value.parse::<Interleave>()?),
            "byte_order" => byte_order = Some(value.parse::<ByteOrder>()?),
            "wavelengths" => wavelengths = Some(parse_wavelengths(value)?),
            _ => warnings.push(format!("ignoring unknown header key `{key}`")),
        }
    }

    let missing = |k: &str| CubeError::MissingField(k.to_string());
    let header = CubeHeader {
        samples: samples.ok_or_else(|| missing("samples"))?,
        lines: lines.ok_or_else(|| missing("lines"))?,
        bands: bands.ok_or_else(|| missing("bands"))?,
        data_kind: data_kind.ok_or_else(|| missing("data_kind"))?,
        interleave: interleave.ok_or_else(|| missing("interleave"))?,
        byte_order: byte_order.ok_or_else(|| missing("byte_order"))?,
        wavelengths,
    };
    header.validate()?;
    Ok((header, warnings))
}

/// Parses header text. Unknown keys are logged and otherwise ignored.
pub fn parse_header(text: &str) -> Result<CubeHeader> {
    let (header, warnings) = parse_header_with_warnings(text)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(header)
}

fn parse_count(key: &str, value: &str) -> Result<usize> {
    let n: usize = value.parse().map_err(|e| CubeError::InvalidValue {
        key: key.to_string(),
        reason: format!("`{value}`: {e}"),
    })?;
    if n == 0 {
        return Err(CubeError::InvalidValue {
            key: key.to_string(),
            reason: "must be at least 1".to_string(),
        });
    }
    Ok(n)
}

fn parse_wavelengths(value: &str) -> Result<Vec<f64>> {
    let values = value
        .trim_matches(|c| c == '{' || c == '}')
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| CubeError::InvalidValue {
                key: "wavelengths".to_string(),
                reason: format!("`{}`: {e}", s.trim()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.windows(2).any(|p| p[1] <= p[0]) {
        return Err(CubeError::NonIncreasingWavelengths);
    }
    Ok(values)
}

/// An H×W×B cube of finite, nonnegative values stored band-sequentially.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCube {
    header: CubeHeader,
    values: Vec<f64>,
}

impl SpectralCube {
    pub fn new(header: CubeHeader, values: Vec<f64>) -> Result<Self> {
        header.validate()?;
        if values.len() != header.len() {
            return Err(CubeError::InvalidCube(format!(
                "expected {} values, got {}",
                header.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(CubeError::InvalidCube(format!(
                "value {} at index {i} is not a finite nonnegative number",
                values[i]
            )));
        }
        Ok(SpectralCube { header, values })
    }

    /// Builds a cube without the nonnegativity check. Used for linear
    /// reconstructions, which may dip slightly below zero.
    pub(crate) fn from_parts_unchecked(header: CubeHeader, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), header.len());
        SpectralCube { header, values }
    }

    pub fn header(&self) -> &CubeHeader {
        &self.header
    }

    pub fn samples(&self) -> usize {
        self.header.samples
    }

    pub fn lines(&self) -> usize {
        self.header.lines
    }

    pub fn bands(&self) -> usize {
        self.header.bands
    }

    pub fn pixels(&self) -> usize {
        self.header.pixels()
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.header.wavelengths.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.pixels();
        &self.values[band * n..(band + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, band: usize) -> f64 {
        self.values[band * self.pixels() + y * self.samples() + x]
    }

    /// Spectrum of pixel `p` (row-major pixel index).
    pub fn spectrum(&self, pixel: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.bands()).map(|b| self.values[b * n + pixel]).collect()
    }
}

/// Decodes a payload in any supported layout into a band-sequential cube.
/// uint16 samples are converted to reals without scaling.
pub fn read_cube(header: &CubeHeader, payload: &[u8]) -> Result<SpectralCube> {
    header.validate()?;
    let expected = header.payload_len();
    if payload.len() != expected {
        return Err(CubeError::PayloadSizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let (w, h, nb) = (header.samples, header.lines, header.bands);
    let n = w * h;
    let size = header.data_kind.element_size();
    let mut values = vec![0.0f64; header.len()];
    for (i, chunk) in payload.chunks_exact(size).enumerate() {
        let v = decode_element(chunk, header.data_kind, header.byte_order);
        if !v.is_finite() || v < 0.0 {
            return Err(CubeError::InvalidCube(format!(
                "payload element {i} = {v} is not a finite nonnegative number"
            )));
        }
        let (x, y, b) = disk_coordinates(i, w, h, nb, header.interleave);
        values[b * n + y * w + x] = v;
    }
    let mut canonical = header.clone();
    canonical.interleave = Interleave::Bsq;
    Ok(SpectralCube {
        header: canonical,
        values,
    })
}

/// Maps the i-th on-disk element to (x, y, band).
fn disk_coordinates(i: usize, w: usize, h: usize, nb: usize, interleave: Interleave) -> (usize, usize, usize) {
    match interleave {
        Interleave::Bsq => {
            let b = i / (w * h);
            let r = i % (w * h);
            (r % w, r / w, b)
        }
        Interleave::Bil => {
            let y = i / (nb * w);
            let r = i % (nb * w);
            (r % w, y, r / w)
        }
        Interleave::Bip => {
            let p = i / nb;
            (p % w, p / w, i % nb)
        }
    }
}

fn decode_element(bytes: &[u8], kind: DataKind, order: ByteOrder) -> f64 {
    match (kind, order) {
        (DataKind::Float32, ByteOrder::Little) => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (DataKind::Float32, ByteOrder::Big) => f32::from_be_bytes(bytes.try_into().unwrap()) as f64,
        (DataKind::Uint16, ByteOrder::Little) => u16::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (DataKind::Uint16, ByteOrder::Big) => u16::from_be_bytes(bytes.try_into().unwrap()) as f64,
    }
}

/// Payload layout used when encoding a cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub interleave: Interleave,
    pub data_kind: DataKind,
    pub byte_order: ByteOrder,
}

impl Layout {
    pub fn float32(interleave: Interleave) -> Self {
        Layout {
            interleave,
            data_kind: DataKind::Float32,
            byte_order: ByteOrder::Little,
        }
    }
}

/// Encodes a cube with an explicit layout. uint16 output requires every
/// value to be an integer in `0..=65535`.
pub fn encode_cube(cube: &SpectralCube, layout: Layout) -> Result<(String, Vec<u8>)> {
    let mut header = cube.header.clone();
    header.interleave = layout.interleave;
    header.data_kind = layout.data_kind;
    header.byte_order = layout.byte_order;
    let (w, h, nb) = (header.samples, header.lines, header.bands);
    let n = w * h;
    let mut bytes = Vec::with_capacity(header.payload_len());
    for i in 0..header.len() {
        let (x, y, b) = disk_coordinates(i, w, h, nb, layout.interleave);
        let v = cube.values[b * n + y * w + x];
        match layout.data_kind {
            DataKind::Float32 => {
                let f = v as f32;
                match layout.byte_order {
                    ByteOrder::Little => bytes.extend_from_slice(&f.to_le_bytes()),
                    ByteOrder::Big => bytes.extend_from_slice(&f.to_be_bytes()),
                }
            }
            DataKind::Uint16 => {
                if v.fract() != 0.0 || !(0.0..=65535.0).contains(&v) {
                    return Err(CubeError::InvalidValue {
                        key: "data_kind".to_string(),
                        reason: format!("value {v} is not representable as uint16"),
                    });
                }
                let u = v as u16;
                match layout.byte_order {
                    ByteOrder::Little => bytes.extend_from_slice(&u.to_le_bytes()),
                    ByteOrder::Big => bytes.extend_from_slice(&u.to_be_bytes()),
                }
            }
        }
    }
    Ok((header.to_text(), bytes))
}

/// Encodes a cube as little-endian float32 in the requested interleave.
pub fn write_cube(cube: &SpectralCube, interleave: Interleave) -> (String, Vec<u8>) {
    encode_cube(cube, Layout::float32(interleave)).expect("float32 encoding is infallible")
}

/// Payload path paired with a header path: `name.hdr` -> `name.raw`.
pub fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

pub fn load_cube(header_path: &Path) -> Result<SpectralCube> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header = parse_header(&text)?;
    let raw = payload_path(header_path);
    let payload = fs::read(&raw).map_err(io_err(&raw))?;
    read_cube(&header, &payload)
}

pub fn save_cube(cube: &SpectralCube, header_path: &Path, interleave: Interleave) -> Result<()> {
    let (text, bytes) = write_cube(cube, interleave);
    fs::write(header_path, text).map_err(io_err(header_path))?;
    let raw = payload_path(header_path);
    fs::write(&raw, bytes).map_err(io_err(&raw))
}

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CubeError::InvalidImage("dimensions must be positive".to_string()));
        }
        if pixels.len() != width * height {
            return Err(CubeError::InvalidImage(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, level: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![level; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses binary P5 data with maxval 255. Comments in the header are skipped.
    pub fn from_pgm(data: &[u8]) -> Result<Self> {
        let bad = |m: &str| CubeError::InvalidImage(format!("PGM: {m}"));
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
                if data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            tokens.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("non-ascii header"))?);
        }
        if tokens[0] != "P5" {
            return Err(bad("only binary P5 is supported"));
        }
        let parse = |t: &str| t.parse::<usize>().map_err(|_| bad("bad dimension"));
        let (width, height, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
        if maxval != 255 {
            return Err(bad("maxval must be 255"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let end = pos + width * height;
        if data.len() < end {
            return Err(bad("truncated raster"));
        }
        GrayImage::new(width, height, data[pos..end].to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_pgm()).map_err(io_err(path))
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(io_err(path))?;
        GrayImage::from_pgm(&data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DisplayRange {
    /// The plane's own minimum and maximum.
    MinMax,
    Fixed(f64, f64),
}

/// Linear map of one band plane into `[0, 255]`, rounding half up.
/// A constant plane (or an empty fixed range) maps to 0.
pub fn render_band(cube: &SpectralCube, band: usize, range: DisplayRange) -> Result<GrayImage> {
    if band >= cube.bands() {
        return Err(CubeError::BandOutOfRange {
            band,
            bands: cube.bands(),
        });
    }
    let plane = cube.band(band);
    let (lo, hi) = match range {
        DisplayRange::MinMax => plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        }),
        DisplayRange::Fixed(lo, hi) => (lo, hi),
    };
    let span = hi - lo;
    let pixels = plane
        .iter()
        .map(|&v| {
            if span <= 0.0 {
                0
            } else {
                let t = ((v - lo) / span).clamp(0.0, 1.0);
                (t * 255.0 + 0.5).floor() as u8
            }
        })
        .collect();
    GrayImage::new(cube.samples(), cube.lines(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "samples=4\nlines=2\nbands=3\ndata_kind=float32\ninterleave=bsq\nbyte_order=little";

    fn tiny_cube() -> SpectralCube {
        // 2x1 pixels, 2 bands; pixel spectra (1,2) and (3,4)
        let header = CubeHeader::new(2, 1, 2, None).unwrap();
        SpectralCube::new(header, vec![1.0, 3.0, 2.0, 4.0]).unwrap()
    }

    fn f32_bytes(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn parses_basic_header() {
        let h = parse_header(BASIC).unwrap();
        assert_eq!(
            h,
            CubeHeader {
                samples: 4,
                lines: 2,
                bands: 3,
                data_kind: DataKind::Float32,
                interleave: Interleave::Bsq,
                byte_order: ByteOrder::Little,
                wavelengths: None,
            }
        );
    }

    #[test]
    fn keys_and_values_are_case_insensitive_and_comments_skipped() {
        let text =
            "# comment\nSAMPLES = 4\nLines=2 # trailing\nBands=3\nData_Kind=UINT16\ninterleave=BIP\nbyte_order=Big\n";
        let h = parse_header(text).unwrap();
        assert_eq!(h.data_kind, DataKind::Uint16);
        assert_eq!(h.interleave, Interleave::Bip);
        assert_eq!(h.byte_order, ByteOrder::Big);
    }

    #[test]
    fn missing_bands_is_reported() {
        let text = BASIC.replace("bands=3\n", "");
        match parse_header(&text) {
            Err(CubeError::MissingField(k)) => assert_eq!(k, "bands"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decreasing_wavelengths_rejected() {
        let text = format!("{BASIC}\nwavelengths=500,499,600");
        assert!(matches!(parse_header(&text), Err(CubeError::NonIncreasingWavelengths)));
    }

    #[test]
    fn wavelength_count_must_match_bands() {
        let text = format!("{BASIC}\nwavelengths=500,600");
        assert!(matches!(parse_header(&text), Err(CubeError::InvalidValue { .. })));
    }

    #[test]
    fn unknown_keys_produce_warnings() {
        let text = format!("{BASIC}\nsensor = cmos\n");
        let (_, warnings) = parse_header_with_warnings(&text).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("sensor"));
    }

    #[test]
    fn malformed_values_are_typed_errors() {
        for bad in ["samples=0", "samples=-1", "samples=abc", "interleave=xyz", "just text"] {
            let text = BASIC.replace("samples=4", bad);
            assert!(parse_header(&text).is_err(), "{bad}");
        }
    }

    #[test]
    fn bip_payload_is_canonicalized() {
        let mut h = CubeHeader::new(2, 1, 2, None).unwrap();
        h.interleave = Interleave::Bip;
        let cube = read_cube(&h, &f32_bytes(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(cube.band(0), &[1.0, 3.0]);
        assert_eq!(cube.band(1), &[2.0, 4.0]);
    }

    #[test]
    fn all_interleaves_agree_on_hand_permuted_payloads() {
        // Hand-computed disk orders for the 2x1x2 cube with pixel spectra (1,2), (3,4).
        // BSQ: band planes [1,3][2,4]; BIL (one line): band rows [1,3][2,4]; BIP: [1,2][3,4].
        let orders = [
            (Interleave::Bsq, [1.0, 3.0, 2.0, 4.0]),
            (Interleave::Bil, [1.0, 3.0, 2.0, 4.0]),
            (Interleave::Bip, [1.0, 2.0, 3.0, 4.0]),
        ];
        for (il, disk) in orders {
            let mut h = CubeHeader::new(2, 1, 2, None).unwrap();
            h.interleave = il;
            let cube = read_cube(&h, &f32_bytes(&disk)).unwrap();
            assert_eq!(cube, tiny_cube(), "{il:?}");
        }
    }

    #[test]
    fn bil_differs_from_bsq_on_multi_line_cube() {
        // 1 sample x 2 lines x 2 bands: value = 10*y + b
        let header = CubeHeader::new(1, 2, 2, None).unwrap();
        let cube = SpectralCube::new(header, vec![0.0, 10.0, 1.0, 11.0]).unwrap();
        let (_, bil) = write_cube(&cube, Interleave::Bil);
        let decoded: Vec<f32> = bil
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(decoded, vec![0.0, 1.0, 10.0, 11.0]);
    }

    #[test]
    fn zero_payload_gives_zero_cube() {
        let h = parse_header(BASIC).unwrap();
        let cube = read_cube(&h, &vec![0u8; h.payload_len()]).unwrap();
        assert!(cube.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_payload_is_rejected() {
        let h = parse_header(BASIC).unwrap();
        let err = read_cube(&h, &vec![0u8; h.payload_len() - 1]).unwrap_err();
        assert!(matches!(
            err,
            CubeError::PayloadSizeMismatch {
                expected: 96,
                actual: 95
            }
        ));
    }

    #[test]
    fn bsq_write_is_band_plane_order() {
        let (_, bytes) = write_cube(&tiny_cube(), Interleave::Bsq);
        assert_eq!(bytes, f32_bytes(&[1.0, 3.0, 2.0, 4.0]));
        let (_, bip) = write_cube(&tiny_cube(), Interleave::Bip);
        assert_eq!(bip, f32_bytes(&[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn uint16_big_endian_converts_without_scaling() {
        let cube = tiny_cube();
        let layout = Layout {
            interleave: Interleave::Bil,
            data_kind: DataKind::Uint16,
            byte_order: ByteOrder::Big,
        };
        let (text, bytes) = encode_cube(&cube, layout).unwrap();
        assert_eq!(bytes.len(), 8);
        let back = read_cube(&parse_header(&text).unwrap(), &bytes).unwrap();
        assert_eq!(back.values(), cube.values());
    }

    #[test]
    fn uint16_rejects_fractional_values() {
        let header = CubeHeader::new(1, 1, 1, None).unwrap();
        let cube = SpectralCube::new(header, vec![0.5]).unwrap();
        let layout = Layout {
            interleave: Interleave::Bsq,
            data_kind: DataKind::Uint16,
            byte_order: ByteOrder::Little,
        };
        assert!(encode_cube(&cube, layout).is_err());
    }

    #[test]
    fn cube_rejects_negative_and_nan() {
        let header = CubeHeader::new(1, 1, 2, None).unwrap();
        assert!(SpectralCube::new(header.clone(), vec![-1.0, 0.0]).is_err());
        assert!(SpectralCube::new(header, vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn render_minmax_endpoints_and_constant_plane() {
        let header = CubeHeader::new(2, 1, 2, None).unwrap();
        let cube = SpectralCube::new(header, vec![0.0, 1.0, 0.7, 0.7]).unwrap();
        assert_eq!(render_band(&cube, 0, DisplayRange::MinMax).unwrap().pixels(), &[0, 255]);
        assert_eq!(render_band(&cube, 1, DisplayRange::MinMax).unwrap().pixels(), &[0, 0]);
    }

    #[test]
    fn render_fixed_rounds_half_up() {
        // 0.5 * 255 = 127.5 -> 128
        let header = CubeHeader::new(3, 1, 1, None).unwrap();
        let cube = SpectralCube::new(header, vec![0.0, 0.5, 1.0]).unwrap();
        let img = render_band(&cube, 0, DisplayRange::Fixed(0.0, 1.0)).unwrap();
        assert_eq!(img.pixels(), &[0, 128, 255]);
    }

    #[test]
    fn render_band_out_of_range() {
        assert!(matches!(
            render_band(&tiny_cube(), 2, DisplayRange::MinMax),
            Err(CubeError::BandOutOfRange { band: 2, bands: 2 })
        ));
    }

    #[test]
    fn pgm_header_is_exact() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 3, 4, 255]).unwrap();
        let pgm = img.to_pgm();
        assert_eq!(&pgm[..11], b"P5\n3 2\n255\n");
        assert_eq!(&pgm[11..], &[0, 1, 2, 3, 4, 255]);
        assert_eq!(GrayImage::from_pgm(&pgm).unwrap(), img);
    }

    #[test]
    fn pgm_reader_skips_comments() {
        let mut data = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[7, 9]);
        assert_eq!(GrayImage::from_pgm(&data).unwrap().pixels(), &[7, 9]);
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
