//! End-to-end separation: trim, bin and normalize, PCA, then clustering,
//! with every intermediate written as an inspectable file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use crate::cluster::{
    extract_layer, gmm_assign, gmm_fit, kmeans_fit, render_label_map, CovarianceKind, ExtractMode, GmmConfig, GmmModel,
    KMeansConfig, KMeansModel, LabelMap,
};
use crate::cube_io::{load_cube, save_cube, CubeError, Interleave, SpectralCube};
use crate::dimred::{fit_pca, project, render_component, ComponentSelector, PcaModel, ScoreCube};
use crate::evaluate::{match_clusters, LayerGroundTruth, MatchReport};
use crate::parallel::with_threads;
use crate::preprocess::{
    apply_normalization, bin_bands_with, compute_white_factors, trim_bands, RemainderPolicy, WhiteTarget,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StageOrder {
    #[default]
    TrimBinNorm,
    NormTrimBin,
}

impl FromStr for StageOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trim-bin-norm" => Ok(StageOrder::TrimBinNorm),
            "norm-trim-bin" => Ok(StageOrder::NormTrimBin),
            other => Err(Error::Config(format!("unknown order `{other}`"))),
        }
    }
}

impl std::fmt::Display for StageOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageOrder::TrimBinNorm => "trim-bin-norm",
            StageOrder::NormTrimBin => "norm-trim-bin",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    KMeans,
    Gmm,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(Method::KMeans),
            "gmm" => Ok(Method::Gmm),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::KMeans => "kmeans",
            Method::Gmm => "gmm",
        })
    }
}

fn parse_covariance(s: &str) -> Result<CovarianceKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "full" => Ok(CovarianceKind::Full),
        "diag" | "diagonal" => Ok(CovarianceKind::Diagonal),
        other => Err(Error::Config(format!("unknown covariance `{other}`"))),
    }
}

fn covariance_name(kind: CovarianceKind) -> &'static str {
    match kind {
        CovarianceKind::Full => "full",
        CovarianceKind::Diagonal => "diag",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub trim: (usize, usize),
    pub bin: usize,
    pub order: StageOrder,
    pub remainder: RemainderPolicy,
    pub white_target: WhiteTarget,
    pub selector: ComponentSelector,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub covariance: CovarianceKind,
    pub reg: f64,
    pub max_iter: usize,
    /// Lloyd iterations applied to the k-means++ seeds before EM.
    pub gmm_init_iters: usize,
    /// Worker cap; never affects results.
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            trim: (4, 4),
            bin: 4,
            order: StageOrder::TrimBinNorm,
            remainder: RemainderPolicy::Strict,
            white_target: WhiteTarget::MeanOfMeans,
            selector: ComponentSelector::VarianceTarget(0.995),
            method: Method::KMeans,
            k: 4,
            seed: 0,
            restarts: 10,
            covariance: CovarianceKind::Full,
            reg: 1e-6,
            max_iter: 300,
            gmm_init_iters: 5,
            threads: None,
            output_dir: PathBuf::from("strata-out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().to_ascii_lowercase().as_str() {
            "trim" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!(
                        "`trim` expects `leading,trailing`, got `{value}`"
                    )));
                }
                self.trim = (parse_num(key, parts[0])?, parse_num(key, parts[1])?);
            }
            "bin" => self.bin = parse_num(key, value)?,
            "order" => self.order = value.parse()?,
            "drop_tail" => {
                self.remainder = if parse_bool(key, value)? {
                    RemainderPolicy::DropTail
                } else {
                    RemainderPolicy::Strict
                }
            }
            "white_target" => {
                self.white_target = if value.eq_ignore_ascii_case("mean") {
                    WhiteTarget::MeanOfMeans
                } else {
                    WhiteTarget::Fixed(parse_num(key, value)?)
                }
            }
            "components" => self.selector = ComponentSelector::FixedK(parse_num(key, value)?),
            "variance" => self.selector = ComponentSelector::VarianceTarget(parse_num(key, value)?),
            "method" => self.method = value.parse()?,
            "k" => self.k = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "restarts" => self.restarts = parse_num(key, value)?,
            "cov" => self.covariance = parse_covariance(value)?,
            "reg" => self.reg = parse_num(key, value)?,
            "max_iter" => self.max_iter = parse_num(key, value)?,
            "gmm_init_iters" => self.gmm_init_iters = parse_num(key, value)?,
            "threads" => self.threads = Some(parse_num(key, value)?),
            "output" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Every result-affecting setting; re-reading it reproduces the run.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trim = {},{}", self.trim.0, self.trim.1);
        let _ = writeln!(s, "bin = {}", self.bin);
        let _ = writeln!(s, "order = {}", self.order);
        let _ = writeln!(s, "drop_tail = {}", self.remainder == RemainderPolicy::DropTail);
        match self.white_target {
            WhiteTarget::MeanOfMeans => s.push_str("white_target = mean\n"),
            WhiteTarget::Fixed(v) => {
                let _ = writeln!(s, "white_target = {v:?}");
            }
        }
        match self.selector {
            ComponentSelector::FixedK(k) => {
                let _ = writeln!(s, "components = {k}");
            }
            ComponentSelector::VarianceTarget(r) => {
                let _ = writeln!(s, "variance = {r:?}");
            }
        }
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "restarts = {}", self.restarts);
        let _ = writeln!(s, "cov = {}", covariance_name(self.covariance));
        let _ = writeln!(s, "reg = {:?}", self.reg);
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        let _ = writeln!(s, "gmm_init_iters = {}", self.gmm_init_iters);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin == 0 {
            return Err(Error::Config("bin must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::Config(format!(
                "reg must be a nonnegative number, got {}",
                self.reg
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            restarts: self.restarts,
            max_iter: self.max_iter,
            ..KMeansConfig::new(self.k, self.seed)
        }
    }

    fn gmm_config(&self) -> GmmConfig {
        GmmConfig {
            covariance: self.covariance,
            restarts: self.restarts,
            max_iter: self.max_iter,
            reg: self.reg,
            init_lloyd_iters: self.gmm_init_iters,
            ..GmmConfig::new(self.k, self.seed)
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

/// Band counts seen along the preprocessing chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandCounts {
    pub input: usize,
    pub trimmed: usize,
    pub binned: usize,
}

fn trim_and_bin(config: &PipelineConfig, cube: SpectralCube) -> Result<SpectralCube> {
    let trimmed = trim_bands(&cube, config.trim.0, config.trim.1).map_err(|e| Error::at("trim")(e.into()))?;
    drop(cube);
    bin_bands_with(&trimmed, config.bin, config.remainder).map_err(|e| Error::at("bin")(e.into()))
}

fn normalize(config: &PipelineConfig, cube: &SpectralCube, white: &SpectralCube) -> Result<SpectralCube> {
    let stage = Error::at("normalize");
    if white.bands() != cube.bands() {
        return Err(stage(Error::Config(format!(
            "white reference has {} bands but the cube has {}",
            white.bands(),
            cube.bands()
        ))));
    }
    let factors = compute_white_factors(white, config.white_target).map_err(|e| Error::at("normalize")(e.into()))?;
    apply_normalization(cube, &factors).map_err(|e| stage(e.into()))
}

/// Trims, bins and white-normalizes a cube in the configured order. Takes
/// ownership so each intermediate can be freed as soon as it is consumed.
pub fn preprocess_cube(
    config: &PipelineConfig,
    cube: SpectralCube,
    white: SpectralCube,
) -> Result<(SpectralCube, BandCounts)> {
    let input = cube.bands();
    let trimmed = input.saturating_sub(config.trim.0 + config.trim.1);
    let out = match config.order {
        StageOrder::TrimBinNorm => {
            let cube = trim_and_bin(config, cube)?;
            let white = trim_and_bin(config, white)?;
            normalize(config, &cube, &white)?
        }
        StageOrder::NormTrimBin => {
            let normalized = normalize(config, &cube, &white)?;
            drop((cube, white));
            trim_and_bin(config, normalized)?
        }
    };
    let binned = out.bands();
    Ok((out, BandCounts { input, trimmed, binned }))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Fit {
    KMeans(KMeansModel),
    Gmm(GmmModel),
}

impl Fit {
    pub fn method(&self) -> Method {
        match self {
            Fit::KMeans(_) => Method::KMeans,
            Fit::Gmm(_) => Method::Gmm,
        }
    }

    fn summary_line(&self) -> String {
        match self {
            Fit::KMeans(m) => format!("final_inertia = {:.16e}", m.inertia),
            Fit::Gmm(m) => format!("final_log_likelihood = {:.16e}", m.log_likelihood),
        }
    }
}

pub fn cluster_scores(config: &PipelineConfig, scores: &ScoreCube, method: Method) -> Result<(LabelMap, Fit)> {
    let stage = Error::at("cluster");
    match method {
        Method::KMeans => {
            let (model, labels) = kmeans_fit(scores, &config.kmeans_config()).map_err(|e| stage(e.into()))?;
            Ok((labels, Fit::KMeans(model)))
        }
        Method::Gmm => {
            let model = gmm_fit(scores, &config.gmm_config()).map_err(|e| Error::at("cluster")(e.into()))?;
            let labels = gmm_assign(scores, &model).map_err(|e| stage(e.into()))?;
            Ok((labels, Fit::Gmm(model)))
        }
    }
}

/// In-memory products shared by both methods.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub normalized: SpectralCube,
    pub bands: BandCounts,
    pub model: PcaModel,
    pub scores: ScoreCube,
}

pub fn reduce(config: &PipelineConfig, cube: SpectralCube, white: SpectralCube) -> Result<Reduction> {
    config.validate()?;
    let (normalized, bands) = preprocess_cube(config, cube, white)?;
    info!(
        "preprocessed: {} -> {} -> {} bands",
        bands.input, bands.trimmed, bands.binned
    );
    let model = fit_pca(&normalized, config.selector).map_err(|e| Error::at("pca")(e.into()))?;
    let scores = project(&normalized, &model).map_err(|e| Error::at("pca")(e.into()))?;
    info!(
        "pca: k = {}, cumulative ratio = {:.6}",
        model.k(),
        model.cumulative_ratio()
    );
    Ok(Reduction {
        normalized,
        bands,
        model,
        scores,
    })
}

#[derive(Clone, Debug)]
pub struct Separation {
    pub reduction: Reduction,
    pub labels: LabelMap,
    pub fit: Fit,
}

/// Runs the whole chain in memory with the configured method.
pub fn run_separation(config: &PipelineConfig, cube: SpectralCube, white: SpectralCube) -> Result<Separation> {
    with_threads(config.threads, || {
        let reduction = reduce(config, cube, white)?;
        let (labels, fit) = cluster_scores(config, &reduction.scores, config.method)?;
        info!("clustered with {} into {} clusters", config.method, labels.k());
        Ok(Separation { reduction, labels, fit })
    })
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Cube(CubeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// Per-component eigenvalue, ratios and score statistics.
pub fn scores_summary(model: &PcaModel, scores: &ScoreCube) -> String {
    let mut s = String::from("# component eigenvalue explained_ratio cumulative_ratio min max mean std\n");
    let ratios = model.explained_ratio();
    let n = scores.pixels() as f64;
    let mut cumulative = 0.0;
    for c in 0..model.k() {
        cumulative += ratios[c];
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for p in 0..scores.pixels() {
            let v = scores.point(p)[c];
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        let mean = sum / n;
        let var = (0..scores.pixels())
            .map(|p| (scores.point(p)[c] - mean).powi(2))
            .sum::<f64>()
            / n;
        let _ = writeln!(
            s,
            "{c} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
            model.explained_variance()[c],
            ratios[c],
            cumulative,
            lo,
            hi,
            mean,
            var.sqrt()
        );
    }
    s
}

fn labels_sidecar(config: &PipelineConfig, labels: &LabelMap, fit: &Fit) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "k = {}", labels.k());
    let _ = writeln!(s, "method = {}", fit.method());
    let _ = writeln!(s, "seed = {}", config.seed);
    let _ = writeln!(s, "restarts = {}", config.restarts);
    if fit.method() == Method::Gmm {
        let _ = writeln!(s, "cov = {}", covariance_name(config.covariance));
        let _ = writeln!(s, "reg = {:?}", config.reg);
    }
    let _ = writeln!(s, "{}", fit.summary_line());
    let iterations = match fit {
        Fit::KMeans(m) => m.iterations,
        Fit::Gmm(m) => m.iterations,
    };
    let _ = writeln!(s, "iterations = {iterations}");
    let counts: Vec<String> = labels.counts().iter().map(|c| c.to_string()).collect();
    let _ = writeln!(s, "cluster_sizes = {}", counts.join(","));
    for c in 0..labels.k() {
        let _ = writeln!(s, "gray.{c} = {}", crate::cluster::cluster_gray_level(c, labels.k()));
    }
    s
}

/// Label map, sidecar and per-cluster mask/inverse extractions.
fn write_clustering(config: &PipelineConfig, dir: &Path, labels: &LabelMap, fit: &Fit) -> Result<Vec<String>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    render_label_map(labels).save_pgm(&dir.join("labels.pgm"))?;
    written.push("labels.pgm".to_string());
    write_text(&dir.join("labels.txt"), &labels_sidecar(config, labels, fit))?;
    written.push("labels.txt".to_string());
    for c in 0..labels.k() {
        for (mode, suffix) in [(ExtractMode::Mask, "mask"), (ExtractMode::Inverse, "inverse")] {
            let name = format!("layer_{c:02}_{suffix}.pgm");
            extract_layer(labels, &[c], mode)
                .map_err(|e| Error::at("extract")(e.into()))?
                .save_pgm(&dir.join(&name))?;
            written.push(name);
        }
    }
    Ok(written)
}

fn manifest_header(config: &PipelineConfig, cube_path: &Path, white_path: &Path, reduction: &Reduction) -> String {
    let mut s = String::from("# strata run manifest\n");
    let _ = writeln!(s, "tool = strata {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "cube = {}", cube_path.display());
    let _ = writeln!(s, "white = {}", white_path.display());
    s.push_str("# config\n");
    s.push_str(&config.to_text());
    s.push_str("# results\n");
    let b = &reduction.bands;
    let _ = writeln!(s, "bands_input = {}", b.input);
    let _ = writeln!(s, "bands_trimmed = {}", b.trimmed);
    let _ = writeln!(s, "bands_binned = {}", b.binned);
    let _ = writeln!(s, "pixels = {}", reduction.scores.pixels());
    let model = &reduction.model;
    let _ = writeln!(s, "pca_k = {}", model.k());
    let ratios: Vec<String> = model.explained_ratio().iter().map(|r| format!("{r:.16e}")).collect();
    let _ = writeln!(s, "explained_ratio = {}", ratios.join(","));
    let _ = writeln!(s, "cumulative_ratio = {:.16e}", model.cumulative_ratio());
    s
}

fn write_reduction(dir: &Path, reduction: &Reduction) -> Result<()> {
    create_dir(dir)?;
    save_cube(&reduction.normalized, &dir.join("normalized.hdr"), Interleave::Bsq)?;
    write_text(&dir.join("pca_model.txt"), &reduction.model.to_text())?;
    write_text(
        &dir.join("scores_summary.txt"),
        &scores_summary(&reduction.model, &reduction.scores),
    )?;
    for c in 0..reduction.scores.k() {
        render_component(&reduction.scores, c)
            .map_err(|e| Error::at("pca")(e.into()))?
            .save_pgm(&dir.join(format!("pc_{c:02}.pgm")))?;
    }
    Ok(())
}

fn load_inputs(cube_path: &Path, white_path: &Path) -> Result<(SpectralCube, SpectralCube)> {
    let cube = load_cube(cube_path).map_err(|e| Error::at("load cube")(e.into()))?;
    let white = load_cube(white_path).map_err(|e| Error::at("load white reference")(e.into()))?;
    Ok((cube, white))
}

/// Writes a finished separation into `config.output_dir`.
pub fn write_separation(config: &PipelineConfig, cube_path: &Path, white_path: &Path, sep: &Separation) -> Result<()> {
    let dir = &config.output_dir;
    write_reduction(dir, &sep.reduction)?;
    let written = write_clustering(config, dir, &sep.labels, &sep.fit)?;
    let mut manifest = manifest_header(config, cube_path, white_path, &sep.reduction);
    let _ = writeln!(manifest, "{}", sep.fit.summary_line());
    let counts: Vec<String> = sep.labels.counts().iter().map(|c| c.to_string()).collect();
    let _ = writeln!(manifest, "cluster_sizes = {}", counts.join(","));
    manifest.push_str("# artifacts\nnormalized.hdr\nnormalized.raw\npca_model.txt\nscores_summary.txt\n");
    for c in 0..sep.reduction.scores.k() {
        let _ = writeln!(manifest, "pc_{c:02}.pgm");
    }
    for name in written {
        let _ = writeln!(manifest, "{name}");
    }
    write_text(&dir.join("manifest.txt"), &manifest)
}

/// Loads both cubes, runs the configured method and writes all artifacts.
pub fn separate(config: &PipelineConfig, cube_path: &Path, white_path: &Path) -> Result<Separation> {
    let (cube, white) = load_inputs(cube_path, white_path)?;
    let sep = run_separation(config, cube, white)?;
    write_separation(config, cube_path, white_path, &sep)?;
    Ok(sep)
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub labels: LabelMap,
    pub fit: Fit,
    pub report: Option<MatchReport>,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub reduction: Reduction,
    pub kmeans: MethodResult,
    pub gmm: MethodResult,
}

/// Both methods on one score cube, with reports when truth is given.
pub fn compare_in_memory(
    config: &PipelineConfig,
    cube: SpectralCube,
    white: SpectralCube,
    truth: Option<&LayerGroundTruth>,
) -> Result<Comparison> {
    with_threads(config.threads, || {
        let reduction = reduce(config, cube, white)?;
        let run = |method| -> Result<MethodResult> {
            let (labels, fit) = cluster_scores(config, &reduction.scores, method)?;
            let report = truth
                .map(|t| match_clusters(&labels, t))
                .transpose()
                .map_err(|e| Error::at("evaluate")(e.into()))?;
            Ok(MethodResult { labels, fit, report })
        };
        let kmeans = run(Method::KMeans)?;
        let gmm = run(Method::Gmm)?;
        Ok(Comparison { reduction, kmeans, gmm })
    })
}

/// Writes shared artifacts at the top of `config.output_dir` and each
/// method's label map, extractions and optional report in `kmeans/` and `gmm/`.
pub fn compare_methods(
    config: &PipelineConfig,
    cube_path: &Path,
    white_path: &Path,
    truth: Option<&LayerGroundTruth>,
) -> Result<Comparison> {
    let (cube, white) = load_inputs(cube_path, white_path)?;
    let cmp = compare_in_memory(config, cube, white, truth)?;
    let dir = &config.output_dir;
    write_reduction(dir, &cmp.reduction)?;
    let mut manifest = manifest_header(config, cube_path, white_path, &cmp.reduction);
    for (name, result) in [("kmeans", &cmp.kmeans), ("gmm", &cmp.gmm)] {
        let sub = dir.join(name);
        write_clustering(config, &sub, &result.labels, &result.fit)?;
        if let Some(report) = &result.report {
            write_text(&sub.join("report.txt"), &report.to_text())?;
        }
        let _ = writeln!(manifest, "{name}.{}", result.fit.summary_line());
    }
    write_text(&dir.join("manifest.txt"), &manifest)?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};
    use crate::ErrorClass;

    #[test]
    fn config_text_round_trip() {
        let mut config = PipelineConfig::default();
        config.apply_text("# comment\ntrim = 2, 3\nbin = 2\norder = norm-trim-bin\nmethod = gmm\nk = 5\ncov = diag\nwhite_target = 0.9\ncomponents = 3\ndrop_tail = yes\n").unwrap();
        assert_eq!(config.trim, (2, 3));
        assert_eq!(config.method, Method::Gmm);
        assert_eq!(config.selector, ComponentSelector::FixedK(3));
        assert_eq!(config.remainder, RemainderPolicy::DropTail);
        let again = PipelineConfig::from_text(&config.to_text()).unwrap();
        assert_eq!(again, config);
    }

    #[test]
    fn config_errors_are_usage_errors() {
        for text in [
            "bogus = 1",
            "k = many",
            "trim = 4",
            "no equals sign",
            "method = spectral",
        ] {
            let err = PipelineConfig::from_text(text).unwrap_err();
            assert_eq!(err.class(), ErrorClass::Usage, "{text}");
        }
        let config = PipelineConfig {
            k: 0,
            ..PipelineConfig::default()
        };
        assert!(config.validate().is_err());
    }

    fn small_inputs(bands: usize) -> (SpectralCube, SpectralCube) {
        let ph = generate_phantom(&PhantomSpec::default_scene(24, 20, bands)).unwrap();
        (ph.cube, ph.white)
    }

    #[test]
    fn both_orders_give_same_band_count() {
        for order in [StageOrder::TrimBinNorm, StageOrder::NormTrimBin] {
            let config = PipelineConfig {
                order,
                ..PipelineConfig::default()
            };
            let (cube, white) = small_inputs(40);
            let (out, counts) = preprocess_cube(&config, cube, white).unwrap();
            assert_eq!(
                counts,
                BandCounts {
                    input: 40,
                    trimmed: 32,
                    binned: 8
                }
            );
            assert_eq!(out.bands(), 8);
        }
    }

    #[test]
    fn stage_errors_are_tagged_and_classified() {
        let config = PipelineConfig {
            bin: 3,
            ..PipelineConfig::default()
        };
        let (cube, white) = small_inputs(40);
        let err = run_separation(&config, cube, white).unwrap_err();
        assert!(err.to_string().starts_with("bin:"), "{err}");
        assert_eq!(err.class(), ErrorClass::Numeric);
    }

    #[test]
    fn separate_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let ph = generate_phantom(&PhantomSpec::default_scene(24, 20, 40)).unwrap();
        ph.save(&PhantomSpec::default_scene(24, 20, 40), dir.path()).unwrap();
        let config = PipelineConfig {
            output_dir: dir.path().join("out"),
            restarts: 2,
            ..PipelineConfig::default()
        };
        let sep = separate(&config, &dir.path().join("cube.hdr"), &dir.path().join("white.hdr")).unwrap();
        let out = &config.output_dir;
        for f in [
            "normalized.hdr",
            "normalized.raw",
            "pca_model.txt",
            "scores_summary.txt",
            "labels.pgm",
            "labels.txt",
            "layer_00_mask.pgm",
            "layer_03_inverse.pgm",
            "manifest.txt",
        ] {
            assert!(out.join(f).exists(), "{f}");
        }
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("bands_binned = 8"));
        assert!(manifest.contains("final_inertia = "));
        assert_eq!(sep.labels.k(), 4);
    }
}
