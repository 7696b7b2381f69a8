// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use crate::domain::Bin;
use crate::ingest::RowError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid bin grid: {0}")]
    Grid(String),

    #[error("invalid model config: {0}")]
    Model(String),

    #[error("invalid hardware spec: {0}")]
    Hardware(String),

    #[error("negative or non-finite energy: {0} J")]
    NegativeEnergy(f64),

    #[error("unknown energy unit `{0}` (expected J, Wh or kWh)")]
    UnknownUnit(String),

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{} malformed row(s); first: {}", .0.len(), .0[0])]
    MalformedRows(Vec<RowError>),

    #[error("statistics of an empty sequence are undefined")]
    EmptyInput,

    #[error("binned workload: {0}")]
    Binned(String),

    #[error("grid mismatch: cannot combine workloads binned on different grids")]
    GridMismatch,

    #[error("measurement table line {line}: {message}")]
    TableRow { line: u64, message: String },

    #[error("measurement table: duplicate record for ({backend}, {device}, {bin})")]
    DuplicateRecord {
        backend: String,
        device: String,
        bin: Bin,
    },

    #[error("measurement table: bin {bin} is not on the table grid")]
    OffGrid { bin: Bin },

    #[error("no measurement for bin {bin} on ({backend}, {device})")]
    MissingBin {
        backend: String,
        device: String,
        bin: Bin,
    },

    #[error("bin {bin} lies outside the measured region for ({backend}, {device}); cannot interpolate")]
    OutsideHull {
        backend: String,
        device: String,
        bin: Bin,
    },

    #[error("request_flops: input length must be at least 1")]
    ZeroInput,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("comparison: {0}")]
    Comparison(String),

    #[error("unknown report format `{0}` (expected json, csv or markdown)")]
    UnknownFormat(String),

    #[error("sweep plan: {0}")]
    Sweep(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
