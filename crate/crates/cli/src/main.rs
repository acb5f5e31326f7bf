use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use strata_core::cluster::{cluster_gray_level, CovarianceKind, LabelMap};
use strata_core::cube_io::{load_cube, save_cube, Interleave};
use strata_core::dimred::{fit_pca, project, render_component, ComponentSelector, PcaModel};
use strata_core::evaluate::{match_clusters, LayerGroundTruth};
use strata_core::parallel::with_threads;
use strata_core::phantom::{generate_phantom, PhantomSpec};
use strata_core::pipeline::{
    self, cluster_scores, preprocess_cube, scores_summary, Method, PipelineConfig, StageOrder,
};
use strata_core::preprocess::{apply_normalization, compute_white_factors, RemainderPolicy};
use strata_core::{Error, GrayImage};

#[derive(Parser)]
#[command(name = "strata", version, about = "Separate drawing layers in multispectral scans")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "STRATA_THREADS")]
    threads: Option<usize>,
    /// Log each stage to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Divide each band by its white-reference factor.
    Normalize {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        white: PathBuf,
        /// `mean` (mean of band means) or a fixed level.
        #[arg(long, default_value = "mean")]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trim edge bands and bin neighbours; normalizes too when --white is given.
    Bin {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        white: Option<PathBuf>,
        #[arg(long, default_value = "4,4")]
        trim: String,
        #[arg(long, default_value_t = 4)]
        bin: usize,
        #[arg(long, value_enum, default_value_t = OrderArg::TrimBinNorm)]
        order: OrderArg,
        #[arg(long)]
        drop_tail: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA; writes the model, a score summary and one image per component.
    Pca {
        #[arg(long)]
        cube: PathBuf,
        #[command(flatten)]
        selector: SelectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster PCA scores of a cube into a label map.
    Cluster {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full chain: trim, bin, normalize, PCA, cluster, layer extraction.
    Separate(RunArgs),
    /// Run k-means and GMM on the same scores, side by side.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Directory of ground-truth masks; enables match reports.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Generate a synthetic drawing with ground truth.
    Phantom {
        /// Phantom description (TOML). Overrides --scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SceneArg::Default)]
        scene: SceneArg,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 1040)]
        bands: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a label map against ground-truth masks.
    Evaluate {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Number of clusters; inferred from distinct gray levels if omitted.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    TrimBinNorm,
    NormTrimBin,
}

impl From<OrderArg> for StageOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::TrimBinNorm => StageOrder::TrimBinNorm,
            OrderArg::NormTrimBin => StageOrder::NormTrimBin,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Kmeans,
    Gmm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kmeans => Method::KMeans,
            MethodArg::Gmm => Method::Gmm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Full,
    Diag,
}

impl From<CovArg> for CovarianceKind {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Full => CovarianceKind::Full,
            CovArg::Diag => CovarianceKind::Diagonal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneArg {
    Default,
    Concealed,
    Gradient,
}

#[derive(Args)]
#[group(multiple = false)]
struct SelectorArgs {
    /// Keep exactly this many components.
    #[arg(long = "k")]
    k: Option<usize>,
    /// Keep the fewest components reaching this cumulative explained ratio.
    #[arg(long)]
    variance: Option<f64>,
}

impl SelectorArgs {
    fn selector(&self) -> Option<ComponentSelector> {
        match (self.k, self.variance) {
            (Some(k), _) => Some(ComponentSelector::FixedK(k)),
            (None, Some(r)) => Some(ComponentSelector::VarianceTarget(r)),
            (None, None) => None,
        }
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Number of clusters.
    #[arg(long = "k")]
    clusters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, value_enum)]
    cov: Option<CovArg>,
    #[arg(long)]
    reg: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    white: PathBuf,
    /// `key = value` settings applied before any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trim: Option<String>,
    #[arg(long)]
    bin: Option<usize>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    #[arg(long)]
    drop_tail: bool,
    #[arg(long)]
    target: Option<String>,
    /// Fixed number of principal components.
    #[arg(long, conflicts_with = "variance")]
    components: Option<usize>,
    #[arg(long)]
    variance: Option<f64>,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long)]
    out: PathBuf,
}

fn apply_cluster_args(config: &mut PipelineConfig, args: &ClusterArgs) {
    if let Some(m) = args.method {
        config.method = m.into();
    }
    if let Some(k) = args.clusters {
        config.k = k;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(r) = args.restarts {
        config.restarts = r;
    }
    if let Some(c) = args.cov {
        config.covariance = c.into();
    }
    if let Some(r) = args.reg {
        config.reg = r;
    }
}

fn build_config(args: &RunArgs, threads: Option<usize>) -> Result<PipelineConfig, Error> {
    let mut config = PipelineConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    if let Some(t) = &args.trim {
        config.set("trim", t)?;
    }
    if let Some(b) = args.bin {
        config.bin = b;
    }
    if let Some(o) = args.order {
        config.order = o.into();
    }
    if args.drop_tail {
        config.remainder = RemainderPolicy::DropTail;
    }
    if let Some(t) = &args.target {
        config.set("white_target", t)?;
    }
    if let Some(k) = args.components {
        config.selector = ComponentSelector::FixedK(k);
    }
    if let Some(r) = args.variance {
        config.selector = ComponentSelector::VarianceTarget(r);
    }
    apply_cluster_args(&mut config, &args.cluster);
    if threads.is_some() {
        config.threads = threads;
    }
    config.output_dir = args.out.clone();
    config.validate()?;
    Ok(config)
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| {
        Error::Cube(strata_core::CubeError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn mkdir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| {
        Error::Cube(strata_core::CubeError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Normalize {
            cube,
            white,
            target,
            out,
        } => {
            let mut config = PipelineConfig::default();
            config.set("white_target", &target)?;
            with_threads(threads, || {
                let cube = load_cube(&cube)?;
                let white = load_cube(&white)?;
                let factors = compute_white_factors(&white, config.white_target)?;
                let normalized = apply_normalization(&cube, &factors)?;
                save_cube(&normalized, &out, Interleave::Bsq)?;
                info!("normalized {} bands to target {}", normalized.bands(), factors.target());
                Ok(())
            })
        }
        Command::Bin {
            cube,
            white,
            trim,
            bin,
            order,
            drop_tail,
            out,
        } => {
            let mut config = PipelineConfig {
                bin,
                order: order.into(),
                remainder: if drop_tail {
                    RemainderPolicy::DropTail
                } else {
                    RemainderPolicy::Strict
                },
                ..PipelineConfig::default()
            };
            config.set("trim", &trim)?;
            config.validate()?;
            with_threads(threads, || {
                let cube = load_cube(&cube)?;
                let result = match white {
                    Some(w) => preprocess_cube(&config, cube, load_cube(&w)?)?.0,
                    None => {
                        let trimmed = strata_core::preprocess::trim_bands(&cube, config.trim.0, config.trim.1)?;
                        strata_core::preprocess::bin_bands_with(&trimmed, config.bin, config.remainder)?
                    }
                };
                save_cube(&result, &out, Interleave::Bsq)?;
                info!("wrote {} bands", result.bands());
                Ok(())
            })
        }
        Command::Pca { cube, selector, out } => {
            let selector = selector.selector().unwrap_or(ComponentSelector::VarianceTarget(0.995));
            with_threads(threads, || {
                let cube = load_cube(&cube)?;
                let model = fit_pca(&cube, selector)?;
                let scores = project(&cube, &model)?;
                mkdir(&out)?;
                write(&out.join("pca_model.txt"), &model.to_text())?;
                write(&out.join("scores_summary.txt"), &scores_summary(&model, &scores))?;
                for c in 0..model.k() {
                    render_component(&scores, c)?.save_pgm(&out.join(format!("pc_{c:02}.pgm")))?;
                }
                info!(
                    "kept {} components, cumulative ratio {:.6}",
                    model.k(),
                    model.cumulative_ratio()
                );
                Ok(())
            })
        }
        Command::Cluster {
            cube,
            model,
            cluster,
            out,
        } => {
            let mut config = PipelineConfig::default();
            apply_cluster_args(&mut config, &cluster);
            if cluster.clusters.is_none() {
                return Err(Error::Config("--k is required".into()));
            }
            config.validate()?;
            with_threads(threads, || {
                let cube = load_cube(&cube)?;
                let text = fs::read_to_string(&model).map_err(|e| {
                    Error::Cube(strata_core::CubeError::Io {
                        path: model.clone(),
                        source: e,
                    })
                })?;
                let model = PcaModel::from_text(&text)?;
                let scores = project(&cube, &model)?;
                let (labels, fit) = cluster_scores(&config, &scores, config.method)?;
                mkdir(&out)?;
                strata_core::render_label_map(&labels).save_pgm(&out.join("labels.pgm"))?;
                let mut sidecar = format!(
                    "k = {}\nmethod = {}\nseed = {}\nrestarts = {}\n",
                    labels.k(),
                    config.method,
                    config.seed,
                    config.restarts
                );
                match fit {
                    pipeline::Fit::KMeans(m) => sidecar.push_str(&format!("final_inertia = {:.16e}\n", m.inertia)),
                    pipeline::Fit::Gmm(m) => {
                        sidecar.push_str(&format!("final_log_likelihood = {:.16e}\n", m.log_likelihood))
                    }
                }
                for c in 0..labels.k() {
                    sidecar.push_str(&format!("gray.{c} = {}\n", cluster_gray_level(c, labels.k())));
                }
                write(&out.join("labels.txt"), &sidecar)
            })
        }
        Command::Separate(args) => {
            let config = build_config(&args, threads)?;
            let sep = pipeline::separate(&config, &args.cube, &args.white)?;
            info!(
                "separated into {} clusters using {} components",
                sep.labels.k(),
                sep.reduction.model.k()
            );
            Ok(())
        }
        Command::Compare { run, truth } => {
            let config = build_config(&run, threads)?;
            let truth = truth.map(|dir| LayerGroundTruth::load_masks(&dir)).transpose()?;
            let cmp = pipeline::compare_methods(&config, &run.cube, &run.white, truth.as_ref())?;
            for (name, r) in [("kmeans", &cmp.kmeans), ("gmm", &cmp.gmm)] {
                if let Some(report) = &r.report {
                    println!("{name}: mean_iou = {:.6}", report.mean_iou());
                }
            }
            Ok(())
        }
        Command::Phantom {
            spec,
            scene,
            size,
            bands,
            seed,
            out,
        } => {
            let mut spec = match spec {
                Some(path) => {
                    let text =
                        fs::read_to_string(&path).map_err(|e| Error::Phantom(strata_core::PhantomError::Io(e)))?;
                    PhantomSpec::from_toml(&text)?
                }
                None => match scene {
                    SceneArg::Default => PhantomSpec::default_scene(size, size, bands),
                    SceneArg::Concealed => PhantomSpec::concealed_chalk_scene(size, size, bands),
                    SceneArg::Gradient => PhantomSpec::gradient_scene(size, size, bands, 0.15, 0.1),
                },
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            with_threads(threads, || {
                let phantom = generate_phantom(&spec)?;
                phantom.save(&spec, &out)?;
                info!(
                    "phantom with {} layers written to {}",
                    phantom.truth.layers().len(),
                    out.display()
                );
                Ok(())
            })
        }
        Command::Evaluate {
            labels,
            truth,
            k,
            report,
        } => {
            let image = GrayImage::load_pgm(&labels)?;
            let labels = LabelMap::from_gray(&image, k)?;
            let truth = LayerGroundTruth::load_masks(&truth)?;
            let result = match_clusters(&labels, &truth)?;
            let text = result.to_text();
            match report {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
