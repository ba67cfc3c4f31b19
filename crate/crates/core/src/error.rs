use std::fmt;

/// Errors raised by the simulation and reconstruction engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("atom {index} at ({x:.3}, {y:.3}, {z:.3}) Å lies outside the grid")]
    AtomOutsideGrid { index: usize, x: f64, y: f64, z: f64 },

    #[error("missing 180-degree partners for angles (rad): {}", AngleList(.0))]
    MissingPartners(Vec<f64>),

    #[error("reciprocal coverage {covered:.4} below required {required:.4} (uncovered fraction {:.4})", 1.0 - .covered)]
    Coverage { covered: f64, required: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parseable category, used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::Precondition(_) => "precondition",
            Error::AtomOutsideGrid { .. } => "atom-outside-grid",
            Error::MissingPartners(_) => "missing-partners",
            Error::Coverage { .. } => "coverage",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

struct AngleList<'a>(&'a [f64]);

impl fmt::Display for AngleList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a:.6}")?;
        }
        Ok(())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
