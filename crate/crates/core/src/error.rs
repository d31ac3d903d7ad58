use thiserror::Error;

/// Errors produced by the bound, kernel, network and estimator routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is wide ({rows}x{cols}); injective layers need rows >= cols, transpose the weight")]
    WideMatrix { rows: usize, cols: usize },

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNonConvergence { rows: usize, cols: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weight class is empty: C^d = {cap} < D = {floor} (C = {c}, d = {d})")]
    InfeasibleClass { c: f64, d: usize, cap: f64, floor: f64 },

    #[error("weight class violated by layer(s) {layers:?}: {detail}")]
    ClassViolation { layers: Vec<usize>, detail: String },

    #[error("ratio supremum is unbounded: requires s_in <= s_out, got s_in = {s_in}, s_out = {s_out}")]
    UnboundedRatio { s_in: f64, s_out: f64 },

    #[error("unsupported Matern smoothness nu = s - d/2 = {nu}; supported values are 1/2, 3/2, 5/2")]
    UnsupportedSmoothness { nu: f64 },

    #[error("Sobolev condition violated at layer {layer}: s_l > d_l/2 required, got s = {s}, d = {d}")]
    SobolevOrder { layer: usize, s: f64, d: usize },

    #[error("activation {0} is not bi-Lipschitz on the real line")]
    NotBiLipschitz(String),

    #[error("quadrature did not converge after {doublings} doublings (last iterates {previous}, {last})")]
    QuadratureNonConvergence {
        doublings: usize,
        previous: f64,
        last: f64,
    },

    #[error("output matrix of task {task} is not positive definite")]
    SingularOutputMatrix { task: usize },

    #[error("output matrix invalid: {0}")]
    InvalidOutputMatrix(String),

    #[error("bound requires a single-output, single-task network (m = 1, T = 1), got m = {m}, T = {tasks}")]
    SingleOutputOnly { m: usize, tasks: usize },

    #[error("rank-deficient weight at layer {layer}; determinant factor is zero")]
    RankDeficient { layer: usize },

    #[error("sign enumeration too large: n*m = {nm} > 16, use Monte-Carlo estimation")]
    EnumerationTooLarge { nm: usize },

    #[error("all {count} restarts were discarded: {last_reason}")]
    AllRestartsDiscarded { count: usize, last_reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
