use thiserror::Error;

/// Errors raised across ingestion, design construction, fitting and tariffing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input header is missing column `{0}`")]
    MissingColumn(String),

    #[error("formula error: {0}")]
    Formula(String),

    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),

    #[error("unknown level `{level}` for dimension `{dimension}`")]
    UnknownLevel { dimension: String, level: String },

    #[error("design has {rows} rows but {columns} columns; the model is not identifiable")]
    Unidentifiable { rows: usize, columns: usize },

    #[error("weighted cross-product is singular; collinear columns: {}", .0.join(", "))]
    Singular(Vec<String>),

    #[error("response {value} at row {row} is outside the {family} domain")]
    InvalidResponse {
        row: usize,
        value: f64,
        family: &'static str,
    },

    #[error("not enough residual degrees of freedom (n = {n}, p = {p})")]
    NoResidualDf { n: usize, p: usize },

    #[error("dimension `{0}` would collapse to a single level; drop it from the formula instead")]
    SingleLevel(String),

    #[error("multiplicative tariff needs log-link models, got {0}")]
    NonLogLink(String),

    #[error("invalid tariff: {0}")]
    Tariff(String),

    #[error("not covered by the tariff: {0}")]
    Excluded(String),

    #[error("model and data do not match: {0}")]
    Mismatch(String),

    #[error("contrast has zero variance")]
    ZeroVariance,

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
