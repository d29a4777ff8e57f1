//! Gate-count scaling formulas as quoted for the benchmark routines. These
//! are reporting values; the builders' exact counts differ.

use crate::directive::Routine;
use crate::error::{SimError, SimResult};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalingParams {
    pub n: Option<u64>,
    pub d: Option<u64>,
    pub p: Option<u64>,
}

/// Evaluates `n(n/2+1)` for qft, `dn/2` for qv and `pn(n+1)+n` for qaoa.
pub fn paper_gate_scaling(routine: Routine, params: ScalingParams) -> SimResult<f64> {
    let need = |v: Option<u64>, name: &str| {
        v.map(|x| x as f64).ok_or_else(|| {
            SimError::Domain(format!("{} scaling needs parameter {name}", routine.as_str()))
        })
    };
    let n = need(params.n, "n")?;
    Ok(match routine {
        Routine::Qft => n * (n / 2.0 + 1.0),
        Routine::Qv => need(params.d, "d")? * n / 2.0,
        Routine::Qaoa => need(params.p, "p")? * n * (n + 1.0) + n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u64, d: Option<u64>, p: Option<u64>) -> ScalingParams {
        ScalingParams { n: Some(n), d, p }
    }

    #[test]
    fn quoted_values() {
        assert_eq!(paper_gate_scaling(Routine::Qaoa, params(29, None, Some(5))).unwrap(), 4379.0);
        assert_eq!(paper_gate_scaling(Routine::Qv, params(29, Some(20), None)).unwrap(), 290.0);
        assert_eq!(paper_gate_scaling(Routine::Qft, params(2, None, None)).unwrap(), 4.0);
        assert_eq!(paper_gate_scaling(Routine::Qft, params(29, None, None)).unwrap(), 449.5);
    }

    #[test]
    fn missing_parameters() {
        assert!(paper_gate_scaling(Routine::Qv, params(29, None, None)).is_err());
        assert!(paper_gate_scaling(Routine::Qaoa, params(29, Some(1), None)).is_err());
        assert!(paper_gate_scaling(Routine::Qft, ScalingParams::default()).is_err());
    }
}
