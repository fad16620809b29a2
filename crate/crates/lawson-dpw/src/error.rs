use thiserror::Error;

/// Every failure the library can report.
///
/// [`Error::class`] sorts them into input problems, numeric trouble and
/// convergence failures, which is what the CLI turns into exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not trace-free (|tr| = {0:.3e})")]
    NotTraceFree(f64),
    #[error("Laurent polynomial with a pole evaluated at lambda = 0")]
    PoleAtZero,
    #[error("puncture points are not pairwise distinct")]
    DegeneratePunctures,
    #[error("residues do not sum to zero (|sum| = {0:.3e})")]
    ResidueSumNonzero(f64),
    #[error("resonant weight: 2*rho = {0} is an integer")]
    Resonant(f64),
    #[error("weight rho = {0} outside (0, 1/2)")]
    InvalidWeight(f64),
    #[error("modulus u = {0} is not allowed (u must avoid 0 and 1)")]
    BadModulus(String),
    #[error("residue {0} vanishes; no eigenline")]
    DegenerateResidue(usize),
    #[error("point {0} is a puncture")]
    PoleAtPuncture(String),
    #[error("gauge is singular (vanishing denominator)")]
    SingularGauge,
    #[error("points are not pairwise distinct")]
    CoincidentPoints,
    #[error("sign pair (1, 1) is not an admissible reducible system")]
    InvalidSigns,
    #[error("parabolic structure is not stable")]
    NotStable,
    #[error("unstable family parameter E = 0 has no Fuchsian gauge")]
    DegenerateGauge,
    #[error("path passes within {0:.3e} of a puncture")]
    PathTooClose(f64),
    #[error("step size underflow in the integrator at s = {0}")]
    StepFailure(f64),
    #[error("coefficients violate the quadric by {0:.3e}")]
    QuadricViolation(f64),
    #[error("residue of lambda*eta at 0 is not nilpotent (defect {0:.3e})")]
    NotNilpotent(f64),
    #[error("residue of c at lambda = 0 vanishes")]
    ZeroResidueC,
    #[error("angle t = {0} outside (0, 1/4]")]
    InvalidAngle(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("chart elimination is singular (leading coefficient b_-1 vanishes)")]
    EliminationSingular,
    #[error("Jacobian is numerically singular")]
    JacobianSingular,
    #[error("continuation step fell below the floor at t = {0}")]
    StepUnderflow(f64),
    #[error("no unitarizing metric at lambda sample {0}")]
    MissingUnitarization(usize),
    #[error("Sym-point frame is not unitary (deviation {0:.3e})")]
    NonUnitary(f64),
    #[error("t = {0} is not of the form 1/(2g+2)")]
    NonCompactAngle(f64),
    #[error("too few samples to estimate the cone angle")]
    InsufficientSamples,
    #[error("Iwasawa factorization failed: {0}")]
    Iwasawa(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numeric,
    NoConvergence,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            NotTraceFree(_) | DegeneratePunctures | ResidueSumNonzero(_) | Resonant(_)
            | InvalidWeight(_) | InvalidSigns | InvalidAngle(_) | NonCompactAngle(_)
            | Input(_) | Io(_) | BadModulus(_) | CoincidentPoints | PoleAtPuncture(_)
            | DegenerateGauge | SingularGauge | QuadricViolation(_) | NotNilpotent(_) | PoleAtZero
            | ZeroResidueC => {
                ErrorClass::Input
            }
            NoConvergence { .. } | StepUnderflow(_) => ErrorClass::NoConvergence,
            _ => ErrorClass::Numeric,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Input(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
