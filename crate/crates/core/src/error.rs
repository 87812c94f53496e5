use thiserror::Error;

/// Errors produced while loading data, building models or evaluating queries.
#[derive(Debug, Error)]
pub enum GspnError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(
        "schema violation in graph {graph}, vertex {vertex}, attribute {attribute}: {message}"
    )]
    SchemaViolation {
        graph: usize,
        vertex: usize,
        attribute: usize,
        message: String,
    },

    #[error("invalid graph {graph}: {message}")]
    InvalidGraph { graph: usize, message: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("vertex {vertex} out of range for graph with {num_vertices} vertices")]
    VertexOutOfRange { vertex: usize, num_vertices: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("impossible evidence at vertex {vertex}, attribute {attribute}: every mixture state assigns zero probability")]
    ImpossibleEvidence { vertex: usize, attribute: usize },

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no masked entries to evaluate")]
    NoMaskedEntries,

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, GspnError>;
