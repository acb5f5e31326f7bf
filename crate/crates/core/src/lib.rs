//! Separation of drawing layers in multispectral scans of works on paper.
//!
//! The pipeline reads a reflectance cube, normalizes it against a white
//! reference, trims and bins bands, projects pixels onto principal components
//! and clusters the scores into layers. Synthetic phantoms with exact ground
//! truth and matching metrics are provided for evaluation.

pub mod cluster;
pub mod cube_io;
pub mod dimred;
pub mod evaluate;
pub mod linalg;
pub mod parallel;
pub mod phantom;
pub mod preprocess;

pub use cluster::{
    extract_layer, gmm_assign, gmm_fit, kmeans_fit, render_label_map, ClusterError, CovarianceKind, ExtractMode,
    GmmConfig, GmmModel, KMeansConfig, KMeansModel, LabelMap,
};
pub use cube_io::{CubeError, CubeHeader, DisplayRange, GrayImage, Interleave, SpectralCube};
pub use dimred::{
    fit_pca, project, reconstruct, render_component, ComponentSelector, DimredError, PcaModel, ScoreCube,
};
pub use evaluate::{match_clusters, EvaluateError, LayerGroundTruth, MatchReport};
pub use phantom::{generate_phantom, Phantom, PhantomError, PhantomSpec};
pub use preprocess::{NormalizationFactors, PreprocessError, RemainderPolicy, WhiteTarget};
pub mod pipeline;

pub use pipeline::{compare_methods, separate, Method, PipelineConfig, StageOrder};

/// Coarse failure category, mapped to process exit codes by the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Format,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Format => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Dimred(#[from] DimredError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

fn cube_class(e: &CubeError) -> ErrorClass {
    match e {
        CubeError::BandOutOfRange { .. } => ErrorClass::Numeric,
        _ => ErrorClass::Format,
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Cube(e) => cube_class(e),
            Error::Preprocess(_) | Error::Cluster(_) => ErrorClass::Numeric,
            Error::Dimred(DimredError::Parse(_)) => ErrorClass::Format,
            Error::Dimred(_) => ErrorClass::Numeric,
            Error::Evaluate(EvaluateError::Io(e)) => cube_class(e),
            Error::Evaluate(_) => ErrorClass::Numeric,
            Error::Phantom(PhantomError::Cube(e)) => cube_class(e),
            Error::Phantom(PhantomError::Io(_) | PhantomError::InvalidSpec(_) | PhantomError::UnknownMaterial(_)) => {
                ErrorClass::Format
            }
            Error::Phantom(_) => ErrorClass::Numeric,
            Error::Config(_) => ErrorClass::Usage,
            Error::Stage { source, .. } => source.class(),
        }
    }

    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
