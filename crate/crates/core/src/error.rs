use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SfdeError {
    #[error("time {time} is not a multiple of dt = {dt}")]
    Alignment { time: f64, dt: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("state blew up at step {step}{}", path_suffix(*path_index))]
    BlowUp {
        step: usize,
        path_index: Option<usize>,
    },
    #[error("control grid is empty")]
    EmptyControlGrid,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

fn path_suffix(path_index: Option<usize>) -> String {
    match path_index {
        Some(i) => format!(" on path {i}"),
        None => String::new(),
    }
}

impl SfdeError {
    /// Attach the offending Monte Carlo path index to a blow-up error.
    pub fn on_path(self, index: usize) -> Self {
        match self {
            SfdeError::BlowUp { step, .. } => SfdeError::BlowUp {
                step,
                path_index: Some(index),
            },
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, SfdeError::BlowUp { .. })
    }
}

impl From<std::io::Error> for SfdeError {
    fn from(e: std::io::Error) -> Self {
        SfdeError::Io(e.to_string())
    }
}

impl From<csv::Error> for SfdeError {
    fn from(e: csv::Error) -> Self {
        SfdeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SfdeError>;
