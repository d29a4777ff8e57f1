#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    /// Two `f32` components, 8 bytes per amplitude.
    Single,
    /// Two `f64` components, 16 bytes per amplitude.
    Double,
}

impl Precision {
    pub fn bytes_per_amplitude(self) -> u128 {
        match self {
            Precision::Single => 8,
            Precision::Double => 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub n_qubits: u32,
    pub precision: Precision,
    pub bytes: u128,
}

/// Bytes needed to hold `2^n` amplitudes at `precision`. Saturates at
/// `u128::MAX` for registers beyond 123 qubits.
pub fn memory_estimate(n_qubits: u32, precision: Precision) -> MemoryEstimate {
    let per = precision.bytes_per_amplitude();
    let bytes = if n_qubits > 123 {
        u128::MAX
    } else {
        per << n_qubits
    };
    MemoryEstimate {
        n_qubits,
        precision,
        bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_sizes() {
        assert_eq!(memory_estimate(1, Precision::Double).bytes, 32);
        assert_eq!(memory_estimate(31, Precision::Single).bytes, 17_179_869_184);
        assert_eq!(memory_estimate(30, Precision::Double).bytes, 17_179_869_184);
        assert_eq!(memory_estimate(200, Precision::Double).bytes, u128::MAX);
    }
}
