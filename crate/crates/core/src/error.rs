use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge on [{a}, {b}]: estimated error {error:e} after {evals} evaluations")]
    Quadrature {
        a: f64,
        b: f64,
        error: f64,
        evals: usize,
    },

    #[error("tail bound {bound:e} exceeds tolerance {tol:e}; profile decays too slowly")]
    InsufficientDecay { bound: f64, tol: f64 },

    #[error("c_beta calibration failed: {0}")]
    Calibration(String),

    #[error("argument {value} below g-table minimum {r_min}{}", cell_suffix(.cell))]
    BelowTable {
        value: f64,
        r_min: f64,
        cell: Option<[usize; 3]>,
    },

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("grid under-resolves the screening length: spacing {spacing} > {limit}")]
    Resolution { spacing: f64, limit: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last update {last:e}, damping {damping})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        damping: f64,
        history: Vec<f64>,
    },

    #[error("upper cap H binds at convergence in {cells} cells")]
    CapActive { cells: usize },

    #[error("B produced a negative value {value:e} at cell {cell:?}")]
    NegativeB { value: f64, cell: [usize; 3] },

    #[error("under-resolved comparison: {0}")]
    UnderResolved(String),

    #[error("inconsistent computation: {0}")]
    Inconsistent(String),

    #[error("bracket search failed: {0}")]
    Bracket(String),

    #[error("field format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn cell_suffix(cell: &Option<[usize; 3]>) -> String {
    match cell {
        Some(c) => format!(" at cell {c:?}"),
        None => String::new(),
    }
}
