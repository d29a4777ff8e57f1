//! The one-line payload directive understood by the payload runner, and the
//! simulator timing line it prints.
//!
//! ```text
//! #q8s: routine=<qft|qv|qaoa> n=<int> [d=<int>] [p=<int>] [seed=<int>]
//! Q8S_SIM_SECONDS=<decimal seconds>
//! ```

use std::fmt;
use std::str::FromStr;

use crate::circuit::{build_qaoa_maxcut_ring, build_qft, build_qv, Circuit};
use crate::error::{SimError, SimResult};

pub const DIRECTIVE_PREFIX: &str = "#q8s:";
pub const SIM_SECONDS_PREFIX: &str = "Q8S_SIM_SECONDS=";

pub const DEFAULT_QV_DEPTH: usize = 20;
pub const DEFAULT_QAOA_LAYERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Routine {
    Qft,
    Qv,
    Qaoa,
}

impl Routine {
    pub const ALL: [Routine; 3] = [Routine::Qft, Routine::Qv, Routine::Qaoa];

    pub fn as_str(self) -> &'static str {
        match self {
            Routine::Qft => "qft",
            Routine::Qv => "qv",
            Routine::Qaoa => "qaoa",
        }
    }
}

impl fmt::Display for Routine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Routine {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qft" => Ok(Routine::Qft),
            "qv" => Ok(Routine::Qv),
            "qaoa" => Ok(Routine::Qaoa),
            other => Err(SimError::Directive(format!(
                "unknown routine {other:?}, expected qft, qv or qaoa"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Directive {
    pub routine: Routine,
    pub n: usize,
    pub d: Option<usize>,
    pub p: Option<usize>,
    pub seed: Option<u64>,
}

impl Directive {
    pub fn new(routine: Routine, n: usize) -> Self {
        Self {
            routine,
            n,
            d: None,
            p: None,
            seed: None,
        }
    }

    /// Finds the first directive line in `source`. `Ok(None)` when there is
    /// none; an error when a directive line is present but malformed.
    pub fn find(source: &str) -> SimResult<Option<Directive>> {
        source
            .lines()
            .map(str::trim)
            .find_map(|line| line.strip_prefix(DIRECTIVE_PREFIX))
            .map(Self::parse_body)
            .transpose()
    }

    fn parse_body(body: &str) -> SimResult<Directive> {
        let mut routine = None;
        let mut n = None;
        let mut d = None;
        let mut p = None;
        let mut seed = None;
        for token in body.split_whitespace() {
            let (key, value) = token.split_once('=').ok_or_else(|| {
                SimError::Directive(format!("expected key=value, got {token:?}"))
            })?;
            let int = |v: &str| {
                v.parse::<u64>().map_err(|_| {
                    SimError::Directive(format!("{key} must be a non-negative integer, got {v:?}"))
                })
            };
            let slot_taken = match key {
                "routine" => routine.replace(value.parse::<Routine>()?).is_some(),
                "n" => n.replace(int(value)? as usize).is_some(),
                "d" => d.replace(int(value)? as usize).is_some(),
                "p" => p.replace(int(value)? as usize).is_some(),
                "seed" => seed.replace(int(value)?).is_some(),
                other => return Err(SimError::Directive(format!("unknown key {other:?}"))),
            };
            if slot_taken {
                return Err(SimError::Directive(format!("duplicate key {key:?}")));
            }
        }
        let routine = routine.ok_or_else(|| SimError::Directive("missing routine=".into()))?;
        let n = n.ok_or_else(|| SimError::Directive("missing n=".into()))?;
        if n == 0 {
            return Err(SimError::Directive("n must be positive".into()));
        }
        Ok(Directive {
            routine,
            n,
            d,
            p,
            seed,
        })
    }

    pub fn depth(&self) -> usize {
        self.d.unwrap_or(DEFAULT_QV_DEPTH)
    }

    pub fn layers(&self) -> usize {
        self.p.unwrap_or(DEFAULT_QAOA_LAYERS)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn build_circuit(&self) -> SimResult<Circuit> {
        match self.routine {
            Routine::Qft => build_qft(self.n),
            Routine::Qv => build_qv(self.n, self.depth(), self.seed()),
            Routine::Qaoa => build_qaoa_maxcut_ring(self.n, self.layers(), self.seed()),
        }
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{DIRECTIVE_PREFIX} routine={} n={}", self.routine, self.n)?;
        if let Some(d) = self.d {
            write!(f, " d={d}")?;
        }
        if let Some(p) = self.p {
            write!(f, " p={p}")?;
        }
        if let Some(seed) = self.seed {
            write!(f, " seed={seed}")?;
        }
        Ok(())
    }
}

/// `Q8S_SIM_SECONDS=<value>` using the shortest decimal text that parses
/// back to the same `f64`.
pub fn format_sim_seconds(seconds: f64) -> String {
    format!("{SIM_SECONDS_PREFIX}{seconds}")
}

/// The value of the last well-formed timing line in `output`.
pub fn parse_sim_seconds(output: &str) -> Option<f64> {
    output
        .lines()
        .rev()
        .filter_map(|l| l.trim().strip_prefix(SIM_SECONDS_PREFIX))
        .find_map(|v| v.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn finds_directive_anywhere() {
        let src = "import qiskit\n\n  #q8s: routine=qv n=6 d=3 seed=9\nprint('x')\n";
        let d = Directive::find(src).unwrap().unwrap();
        assert_eq!(d.routine, Routine::Qv);
        assert_eq!((d.n, d.depth(), d.seed()), (6, 3, 9));
        assert_eq!(d.layers(), DEFAULT_QAOA_LAYERS);
    }

    #[test]
    fn absent_directive() {
        assert_eq!(Directive::find("print('hello')").unwrap(), None);
    }

    #[test]
    fn malformed_directives() {
        for bad in [
            "#q8s: routine=qft",
            "#q8s: n=3",
            "#q8s: routine=bell n=3",
            "#q8s: routine=qft n=three",
            "#q8s: routine=qft n=3 n=4",
            "#q8s: routine=qft n=3 depth=2",
            "#q8s: routine=qft n=0",
            "#q8s: routine=qft n",
        ] {
            assert!(
                matches!(Directive::find(bad), Err(SimError::Directive(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn display_parses_back() {
        let d = Directive {
            routine: Routine::Qaoa,
            n: 12,
            d: None,
            p: Some(2),
            seed: Some(4),
        };
        assert_eq!(d.to_string(), "#q8s: routine=qaoa n=12 p=2 seed=4");
        assert_eq!(Directive::find(&d.to_string()).unwrap(), Some(d));
    }

    #[test]
    fn last_timing_line_wins() {
        let out = "Q8S_SIM_SECONDS=1\nhello\nQ8S_SIM_SECONDS=2.5\n";
        assert_eq!(parse_sim_seconds(out), Some(2.5));
        assert_eq!(parse_sim_seconds("nothing"), None);
        assert_eq!(parse_sim_seconds("Q8S_SIM_SECONDS=-1"), None);
    }

    proptest! {
        #[test]
        fn timing_line_round_trips_bit_exact(v in 0.0f64..1e6) {
            let line = format_sim_seconds(v);
            let back = parse_sim_seconds(&line).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
