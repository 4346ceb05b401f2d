pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive definite (pivot {0:.3e} at index {1})")]
    NotPositiveDefinite(f64, usize),
    #[error("matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("could not place {aps} APs with minimum spacing on a {side_m} m square within the update budget")]
    PlacementInfeasible { aps: usize, side_m: f64 },
    #[error("3D distance {0} m is below the 1 m model floor")]
    DistanceTooSmall(f64),
    #[error("UE {ue} can only reach {got} of the required {need} serving APs under the per-AP load cap")]
    InfeasibleClustering { ue: usize, got: usize, need: usize },
    #[error("precoder for UE {ue} at AP {ap} has a vanishing average norm but a positive power target")]
    ZeroNormPrecoder { ue: usize, ap: usize },
    #[error("codeword expects {need} symbols, got {got}")]
    WrongSymbolCount { got: usize, need: usize },
    #[error("symbol modulus {0} is not 1")]
    NonUnitModulus(f64),
    #[error("differential state is not unitary (deviation {0:.3e})")]
    NonUnitaryInput(f64),
    #[error("malformed space-time design: {0}")]
    UnsupportedDesign(String),
    #[error("empty codebook")]
    EmptyCodebook,
    #[error("bit labels are not a bijection on the constellation")]
    MappingNotBijective,
    #[error("codeword frames misaligned: {0}")]
    FrameMisalignment(String),
    #[error("config parse error: {0}")]
    ParseError(String),
    #[error("invalid config: {0}")]
    ValidationError(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag for each variant, used by the CLI's
    /// JSON error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotHermitian(_) => "NotHermitian",
            Error::NotPositiveDefinite(..) => "NotPositiveDefinite",
            Error::NotPsd(_) => "NotPsd",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::PlacementInfeasible { .. } => "PlacementInfeasible",
            Error::DistanceTooSmall(_) => "DistanceTooSmall",
            Error::InfeasibleClustering { .. } => "InfeasibleClustering",
            Error::ZeroNormPrecoder { .. } => "ZeroNormPrecoder",
            Error::WrongSymbolCount { .. } => "WrongSymbolCount",
            Error::NonUnitModulus(_) => "NonUnitModulus",
            Error::NonUnitaryInput(_) => "NonUnitaryInput",
            Error::UnsupportedDesign(_) => "UnsupportedDesign",
            Error::EmptyCodebook => "EmptyCodebook",
            Error::MappingNotBijective => "MappingNotBijective",
            Error::FrameMisalignment(_) => "FrameMisalignment",
            Error::ParseError(_) => "ParseError",
            Error::ValidationError(_) => "ValidationError",
            Error::Io(_) => "Io",
        }
    }
}
