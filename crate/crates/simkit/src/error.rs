use thiserror::Error;

pub type SimResult<T> = Result<T, SimError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// A builder or formula parameter is outside its allowed range.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    /// The state vector would not fit in the configured memory limit. Raised
    /// before anything is allocated.
    #[error("capacity error: state vector for {n_qubits} qubits needs {required_bytes} bytes, {available_bytes} bytes available")]
    Capacity {
        n_qubits: u32,
        required_bytes: u128,
        available_bytes: u128,
    },

    #[error("malformed directive: {0}")]
    Directive(String),
}
