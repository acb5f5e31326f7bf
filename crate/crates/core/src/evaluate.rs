//! Ground truth from sequential scans, integer-translation registration and
//! scoring of cluster label maps against known layers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::cluster::LabelMap;
use crate::cube_io::{CubeError, GrayImage};

pub const BACKGROUND: &str = "background";

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least 2 scans, got {0}")]
    TooFewScans(usize),
    #[error("image has zero variance over the compared region")]
    DegenerateImage,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] CubeError),
}

pub type Result<T> = std::result::Result<T, EvaluateError>;

/// Ordered per-layer masks; earlier layers were drawn first.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGroundTruth {
    width: usize,
    height: usize,
    layers: Vec<(String, Vec<bool>)>,
}

impl LayerGroundTruth {
    pub fn new(width: usize, height: usize, layers: Vec<(String, Vec<bool>)>) -> Result<Self> {
        for (name, mask) in &layers {
            if mask.len() != width * height {
                return Err(EvaluateError::DimensionMismatch(format!(
                    "mask `{name}` has {} pixels, expected {}",
                    mask.len(),
                    width * height
                )));
            }
            if name == BACKGROUND {
                return Err(EvaluateError::InvalidParameter(format!("`{BACKGROUND}` is reserved")));
            }
        }
        Ok(LayerGroundTruth { width, height, layers })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn layers(&self) -> &[(String, Vec<bool>)] {
        &self.layers
    }

    pub fn names(&self) -> Vec<&str> {
        self.layers.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn mask(&self, name: &str) -> Option<&[bool]> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, m)| m.as_slice())
    }

    /// Region index per pixel: the latest layer covering it, or
    /// `layers().len()` for background.
    pub fn regions(&self) -> Vec<usize> {
        let mut region = vec![self.layers.len(); self.width * self.height];
        for (i, (_, mask)) in self.layers.iter().enumerate() {
            for (r, &m) in region.iter_mut().zip(mask) {
                if m {
                    *r = i;
                }
            }
        }
        region
    }

    /// Writes `mask_NN_<name>.pgm` files (255 inside the layer, 0 outside).
    pub fn save_masks(&self, dir: &Path) -> Result<()> {
        for (i, (name, mask)) in self.layers.iter().enumerate() {
            let pixels = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
            let img = GrayImage::new(self.width, self.height, pixels)?;
            img.save_pgm(&dir.join(format!("mask_{i:02}_{name}.pgm")))?;
        }
        Ok(())
    }

    /// Reads every `mask_NN_<name>.pgm` in `dir`, ordered by file name.
    pub fn load_masks(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|source| CubeError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files: Vec<(String, std::path::PathBuf)> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter_map(|p| {
                let name = p.file_name()?.to_str()?.to_string();
                (name.starts_with("mask_") && name.ends_with(".pgm")).then_some((name, p))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(EvaluateError::InvalidParameter(format!(
                "no mask_*.pgm files in {}",
                dir.display()
            )));
        }
        let mut layers = Vec::new();
        let mut dims = None;
        for (file, path) in files {
            let img = GrayImage::load_pgm(&path)?;
            let d = (img.width(), img.height());
            if *dims.get_or_insert(d) != d {
                return Err(EvaluateError::DimensionMismatch(format!("{file} is {}x{}", d.0, d.1)));
            }
            let stem = file.trim_end_matches(".pgm");
            let name = match stem.splitn(3, '_').nth(2) {
                Some(n) if !n.is_empty() => n.to_string(),
                _ => stem.to_string(),
            };
            layers.push((name, img.pixels().iter().map(|&p| p >= 128).collect()));
        }
        let (w, h) = dims.expect("at least one mask");
        LayerGroundTruth::new(w, h, layers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    /// Otsu's threshold on the 256-bin histogram of each difference image.
    Otsu,
    /// Gray-level difference that must be exceeded.
    Fixed(u8),
}

/// Collapses interleaved RGB bytes to luminance by the mean of channels.
pub fn luminance_from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
    if rgb.len() != width * height * 3 {
        return Err(EvaluateError::DimensionMismatch(format!(
            "expected {} RGB bytes, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    let pixels = rgb
        .chunks_exact(3)
        .map(|c| ((c[0] as u32 + c[1] as u32 + c[2] as u32 + 1) / 3) as u8)
        .collect();
    Ok(GrayImage::new(width, height, pixels)?)
}

/// Otsu threshold `t`: pixels with value `> t` form the foreground.
pub fn otsu_threshold(histogram: &[u64; 256]) -> u8 {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return 0;
    }
    let sum_all: f64 = histogram.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best_t = 0u8;
    let mut best_var = -1.0;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for t in 0..256usize {
        w0 += histogram[t];
        sum0 += t as f64 * histogram[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            if best_var < 0.0 {
                best_var = 0.0;
                best_t = t as u8;
            }
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// Layer `i` is where `|scan[i+1] - scan[i]|` exceeds the threshold.
pub fn derive_layers(scans: &[GrayImage], threshold: Threshold) -> Result<LayerGroundTruth> {
    let names: Vec<String> = (0..scans.len().saturating_sub(1))
        .map(|i| format!("layer_{i}"))
        .collect();
    derive_layers_named(scans, &names, threshold)
}

pub fn derive_layers_named(scans: &[GrayImage], names: &[String], threshold: Threshold) -> Result<LayerGroundTruth> {
    if scans.len() < 2 {
        return Err(EvaluateError::TooFewScans(scans.len()));
    }
    if names.len() != scans.len() - 1 {
        return Err(EvaluateError::InvalidParameter(format!(
            "{} names for {} layers",
            names.len(),
            scans.len() - 1
        )));
    }
    let (w, h) = (scans[0].width(), scans[0].height());
    if let Some(s) = scans.iter().find(|s| s.width() != w || s.height() != h) {
        return Err(EvaluateError::DimensionMismatch(format!(
            "scan is {}x{}, expected {w}x{h}",
            s.width(),
            s.height()
        )));
    }
    let layers = scans
        .windows(2)
        .zip(names)
        .map(|(pair, name)| {
            let diff: Vec<u8> = pair[0]
                .pixels()
                .iter()
                .zip(pair[1].pixels())
                .map(|(a, b)| a.abs_diff(*b))
                .collect();
            let t = match threshold {
                Threshold::Fixed(t) => t,
                Threshold::Otsu => {
                    let mut hist = [0u64; 256];
                    diff.iter().for_each(|&d| hist[d as usize] += 1);
                    otsu_threshold(&hist)
                }
            };
            (name.clone(), diff.iter().map(|&d| d > t).collect())
        })
        .collect();
    LayerGroundTruth::new(w, h, layers)
}

fn zncc(reference: &GrayImage, moving: &GrayImage, dx: i64, dy: i64) -> Option<f64> {
    let (w, h) = (reference.width() as i64, reference.height() as i64);
    let (x0, x1) = ((-dx).max(0), (w - dx).min(w));
    let (y0, y1) = ((-dy).max(0), (h - dy).min(h));
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let count = ((x1 - x0) * (y1 - y0)) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            sa += reference.get(x as usize, y as usize) as f64;
            sb += moving.get((x + dx) as usize, (y + dy) as usize) as f64;
        }
    }
    let (ma, mb) = (sa / count, sb / count);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let a = reference.get(x as usize, y as usize) as f64 - ma;
            let b = moving.get((x + dx) as usize, (y + dy) as usize) as f64 - mb;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Integer shift `(dx, dy)` such that `moving(x + dx, y + dy)` best matches
/// `reference(x, y)` by zero-mean normalized cross-correlation over the overlap.
/// Ties go to the smallest `|dx| + |dy|`, then the lexicographically smallest shift.
pub fn register_translation(reference: &GrayImage, moving: &GrayImage, max_shift: usize) -> Result<(i64, i64)> {
    let (w, h) = (reference.width(), reference.height());
    if moving.width() != w || moving.height() != h {
        return Err(EvaluateError::DimensionMismatch(format!(
            "moving image is {}x{}, reference is {w}x{h}",
            moving.width(),
            moving.height()
        )));
    }
    if 2 * max_shift >= w.min(h) {
        return Err(EvaluateError::InvalidParameter(format!(
            "max_shift {max_shift} must be below half the smaller image side"
        )));
    }
    if zncc(reference, moving, 0, 0).is_none() {
        return Err(EvaluateError::DegenerateImage);
    }
    let m = max_shift as i64;
    let mut best: Option<(f64, i64, i64)> = None;
    for dx in -m..=m {
        for dy in -m..=m {
            let Some(score) = zncc(reference, moving, dx, dy) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bs, bx, by)) => {
                    score > bs || (score == bs && (dx.abs() + dy.abs(), dx, dy) < (bx.abs() + by.abs(), bx, by))
                }
            };
            if better {
                best = Some((score, dx, dy));
            }
        }
    }
    let (_, dx, dy) = best.ok_or(EvaluateError::DegenerateImage)?;
    Ok((dx, dy))
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns the column chosen for each row.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return vec![];
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchReport {
    /// Region name (a layer or [`BACKGROUND`]) for each cluster id.
    pub assignment: Vec<String>,
    /// IoU of each layer's assigned clusters against its full mask, in layer order.
    pub per_layer_iou: Vec<(String, f64)>,
    pub pixel_accuracy: f64,
    pub purity: f64,
}

impl MatchReport {
    pub fn mean_iou(&self) -> f64 {
        if self.per_layer_iou.is_empty() {
            return 1.0;
        }
        self.per_layer_iou.iter().map(|(_, v)| v).sum::<f64>() / self.per_layer_iou.len() as f64
    }

    pub fn iou(&self, layer: &str) -> Option<f64> {
        self.per_layer_iou.iter().find(|(n, _)| n == layer).map(|(_, v)| *v)
    }

    /// `metric = value` lines (6 decimals) followed by the assignment table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pixel_accuracy = {:.6}", self.pixel_accuracy);
        let _ = writeln!(out, "purity = {:.6}", self.purity);
        let _ = writeln!(out, "mean_iou = {:.6}", self.mean_iou());
        for (name, v) in &self.per_layer_iou {
            let _ = writeln!(out, "iou.{name} = {v:.6}");
        }
        out.push_str("# cluster assignment\n");
        for (c, region) in self.assignment.iter().enumerate() {
            let _ = writeln!(out, "cluster.{c} = {region}");
        }
        out
    }

    /// Parses the metric lines written by [`MatchReport::to_text`].
    pub fn metrics_from_text(text: &str) -> BTreeMap<String, f64> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .filter_map(|l| l.split_once('='))
            .filter_map(|(k, v)| Some((k.trim().to_string(), v.trim().parse::<f64>().ok()?)))
            .collect()
    }
}

/// Contingency counts between clusters and regions (layers then background).
struct Contingency {
    /// Overlap with each layer's full mask; background = pixels in no layer.
    full: Vec<Vec<i64>>,
    /// Overlap with the precedence partition (latest layer wins).
    partition: Vec<Vec<i64>>,
    sizes: Vec<i64>,
}

fn contingency(labels: &LabelMap, truth: &LayerGroundTruth) -> Contingency {
    let k = labels.k();
    let nl = truth.layers().len();
    let regions = truth.regions();
    let mut full = vec![vec![0i64; nl + 1]; k];
    let mut partition = vec![vec![0i64; nl + 1]; k];
    let mut sizes = vec![0i64; k];
    for (p, &l) in labels.labels().iter().enumerate() {
        let c = l as usize;
        sizes[c] += 1;
        partition[c][regions[p]] += 1;
        let mut any = false;
        for (i, (_, mask)) in truth.layers().iter().enumerate() {
            if mask[p] {
                full[c][i] += 1;
                any = true;
            }
        }
        if !any {
            full[c][nl] += 1;
        }
    }
    Contingency { full, partition, sizes }
}

/// Optimal cluster→region assignment maximizing total overlap with the full
/// layer masks. With no more clusters than regions the map is one-to-one;
/// otherwise every region receives at least one cluster and the rest go to
/// their best-overlapping region.
fn assign_clusters(table: &Contingency) -> Vec<usize> {
    let k = table.full.len();
    let r = table.full.first().map_or(0, |row| row.len());
    // canonical cluster order makes the result independent of cluster numbering
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (&table.full[a], &table.partition[a]).cmp(&(&table.full[b], &table.partition[b])));
    let mut assignment = vec![0usize; k];
    if k <= r {
        let cost: Vec<Vec<i64>> = order
            .iter()
            .map(|&c| table.full[c].iter().map(|v| -v).collect())
            .collect();
        for (row, col) in hungarian(&cost).into_iter().enumerate() {
            assignment[order[row]] = col;
        }
    } else {
        let best_region = |c: usize| -> usize {
            let row = &table.full[c];
            (0..r).fold(0, |b, j| if row[j] > row[b] { j } else { b })
        };
        for &c in &order {
            assignment[c] = best_region(c);
        }
        // loss of making cluster c the representative of region j
        let cost: Vec<Vec<i64>> = (0..r)
            .map(|j| {
                order
                    .iter()
                    .map(|&c| table.full[c][best_region(c)] - table.full[c][j])
                    .collect()
            })
            .collect();
        for (region, col) in hungarian(&cost).into_iter().enumerate() {
            assignment[order[col]] = region;
        }
    }
    assignment
}

fn metrics_for(assignment: &[usize], table: &Contingency, truth: &LayerGroundTruth) -> MatchReport {
    let nl = truth.layers().len();
    let total: i64 = table.sizes.iter().sum();
    let per_layer_iou = truth
        .layers()
        .iter()
        .enumerate()
        .map(|(l, (name, mask))| {
            let truth_size = mask.iter().filter(|&&m| m).count() as i64;
            let mut inter = 0;
            let mut predicted = 0;
            for (c, &a) in assignment.iter().enumerate() {
                if a == l {
                    inter += table.full[c][l];
                    predicted += table.sizes[c];
                }
            }
            let union = predicted + truth_size - inter;
            let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            (name.clone(), iou)
        })
        .collect();
    let correct: i64 = assignment.iter().enumerate().map(|(c, &a)| table.partition[c][a]).sum();
    let pure: i64 = table
        .partition
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    let region_name = |j: usize| {
        if j == nl {
            BACKGROUND.to_string()
        } else {
            truth.layers()[j].0.clone()
        }
    };
    MatchReport {
        assignment: assignment.iter().map(|&a| region_name(a)).collect(),
        per_layer_iou,
        pixel_accuracy: correct as f64 / total as f64,
        purity: pure as f64 / total as f64,
    }
}

/// Scores a label map against layered ground truth.
///
/// Accuracy and purity use the precedence partition (a later layer owns the
/// pixels it covers). IoU for each layer is measured against its full mask, so
/// recovering a covered underdrawing counts.
pub fn match_clusters(labels: &LabelMap, truth: &LayerGroundTruth) -> Result<MatchReport> {
    if labels.width() != truth.width() || labels.height() != truth.height() {
        return Err(EvaluateError::DimensionMismatch(format!(
            "labels are {}x{}, truth is {}x{}",
            labels.width(),
            labels.height(),
            truth.width(),
            truth.height()
        )));
    }
    let table = contingency(labels, truth);
    let assignment = assign_clusters(&table);
    Ok(metrics_for(&assignment, &table, truth))
}
