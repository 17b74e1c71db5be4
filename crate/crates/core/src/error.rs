use thiserror::Error;

use crate::hb::HbSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error(
        "sampling grid {m_xi}x{m_zeta} is below the Nyquist guardrail \
         (need m_xi >= {need_xi}, m_zeta >= {need_zeta}); enable the undersampling override"
    )]
    GridTooCoarse {
        m_xi: usize,
        m_zeta: usize,
        need_xi: usize,
        need_zeta: usize,
    },

    #[error("MDFT operator is rank deficient (rank {rank} of {columns}); colliding columns: {}", format_pairs(.collisions))]
    RankDeficient {
        rank: usize,
        columns: usize,
        collisions: Vec<((i32, u32), (i32, u32))>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("model produced a non-finite value at u = {u}, phase = {phase}")]
    NonFinite { u: f64, phase: f64 },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("harmonic balance did not converge: residual {:.3e} after {} iterations", .best.residual_norm, .best.iterations)]
    NotConverged { best: Box<HbSolution> },

    #[error(
        "stacked inverse system did not converge: residual {residual_norm:.3e} after {iterations} iterations \
         (per-block residuals {block_residuals:?})"
    )]
    InverseNotConverged {
        residual_norm: f64,
        iterations: usize,
        block_residuals: Vec<f64>,
    },

    #[error("stacked system needs {expected} blocks for {controls} controls, got {got}")]
    CountMismatch {
        controls: usize,
        expected: usize,
        got: usize,
    },

    #[error("anharmonicity order {0} is not supported")]
    UnsupportedOrder(u32),

    #[error("no root of the control equation in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("effective vector field is not canonical: {0}")]
    NonCanonical(String),

    #[error("integrator step size underflow at xi = {0}")]
    StepSizeUnderflow(f64),

    #[error("linear Mathieu system is unstable (|trace|/2 = {0})")]
    Unstable(f64),

    #[error("potential is not monotonic on (0, {0}]")]
    NonMonotonic(f64),

    #[error("reference trajectory starts at u(0) = 0")]
    ZeroReference,

    #[error("singular linear system in Newton step")]
    SingularJacobian,
}

fn format_pairs(pairs: &[((i32, u32), (i32, u32))]) -> String {
    pairs
        .iter()
        .map(|(a, b)| format!("({},{})/({},{})", a.0, a.1, b.0, b.1))
        .collect::<Vec<_>>()
        .join(", ")
}
