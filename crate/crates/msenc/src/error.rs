use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("blob for {entry} not found at {path}")]
    MissingBlob { entry: String, path: PathBuf },
    #[error("{entry}: expected {expected} bytes, found {actual}")]
    ShapeMismatch { entry: String, expected: u64, actual: u64 },
    #[error("container version {found} is not supported (expected {supported})")]
    VersionUnsupported { found: u32, supported: u32 },
    #[error("invalid manifest {path}: {reason}")]
    InvalidManifest { path: PathBuf, reason: String },
    #[error("no PCA embedding at {0}")]
    MissingEmbedding(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] msenc_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
        Error::InvalidManifest {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short name used in the one-line error report.
    pub fn kind(&self) -> &'static str {
        use msenc_core::Error as C;
        match self {
            Error::Io { .. } => "Io",
            Error::Json { .. } => "Json",
            Error::MissingBlob { .. } => "MissingBlob",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::VersionUnsupported { .. } => "VersionUnsupported",
            Error::InvalidManifest { .. } => "InvalidManifest",
            Error::MissingEmbedding(_) => "MissingEmbedding",
            Error::Usage(_) => "Usage",
            Error::Core(e) => match e {
                C::ShapeMismatch { .. } => "ShapeMismatch",
                C::LengthMismatch { .. } => "LengthMismatch",
                C::RatioInvalid => "RatioInvalid",
                C::BatchTooSmall(_) => "BatchTooSmall",
                C::SubjectOutOfRange { .. } => "SubjectOutOfRange",
                C::CountTooLarge { .. } => "CountTooLarge",
                C::StepOutOfRange { .. } => "StepOutOfRange",
                C::NonFiniteGradient { .. } => "NonFiniteLoss",
                C::EmptyMask => "EmptyMask",
                C::AllVerticesExcluded => "AllVerticesExcluded",
                C::StaleCache => "StaleCache",
                C::DegenerateComponent { .. } => "DegenerateComponent",
                C::NonFiniteInput { .. } => "NonFiniteInput",
                C::InvalidConfig(_) => "InvalidConfig",
            },
        }
    }

    /// 1 for usage and configuration problems, 3 for numeric failure during
    /// optimization, 2 for everything else (data and IO).
    pub fn exit_code(&self) -> i32 {
        use msenc_core::Error as C;
        match self {
            Error::Usage(_) | Error::Core(C::InvalidConfig(_) | C::RatioInvalid | C::StepOutOfRange { .. }) => 1,
            Error::Core(C::NonFiniteGradient { .. } | C::DegenerateComponent { .. }) => 3,
            _ => 2,
        }
    }

    /// `error kind=<Kind> code=<n> message=<json string>` on one line.
    pub fn report_line(&self) -> String {
        let message = serde_json::to_string(&self.to_string()).unwrap_or_else(|_| "\"\"".into());
        format!(
            "error kind={} code={} message={}",
            self.kind(),
            self.exit_code(),
            message
        )
    }
}
