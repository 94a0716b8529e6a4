//! Dispatch from solver ids and parameter points to the built-in solvers.

use std::fmt;
use std::str::FromStr;

use crate::cim::{self, CimFixedParams, CimParams};
use crate::error::{Error, Result};
use crate::model::{IsingInstance, SampleSet};
use crate::params::ParameterPoint;
use crate::pt::{self, PtParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverId {
    ParallelTempering,
    CimCac,
}

impl SolverId {
    pub const ALL: [SolverId; 2] = [SolverId::ParallelTempering, SolverId::CimCac];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ParallelTempering => pt::SOLVER_ID,
            Self::CimCac => cim::SOLVER_ID,
        }
    }

    /// Tunable parameter names, sorted.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Self::ParallelTempering => &pt::PARAM_NAMES,
            Self::CimCac => &cim::PARAM_NAMES,
        }
    }

    pub fn check_point(&self, point: &ParameterPoint) -> Result<()> {
        if point.solver_id != self.as_str() {
            return Err(Error::InvalidParameter(format!(
                "point for `{}` passed to `{}`",
                point.solver_id,
                self.as_str()
            )));
        }
        if let Some(k) = point.values.keys().find(|k| !self.param_names().contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!("unknown {} parameter `{k}`", self.as_str())));
        }
        if let Some(k) = self.param_names().iter().find(|k| !point.values.contains_key(**k)) {
            return Err(Error::InvalidParameter(format!("missing {} parameter `{k}`", self.as_str())));
        }
        Ok(())
    }

    /// Run `shots` executions at `point`. The returned set is keyed by the
    /// point as given, not by any clamped or rounded values used internally.
    pub fn run(
        &self,
        instance_id: &str,
        instance: &IsingInstance,
        point: &ParameterPoint,
        fixed: &CimFixedParams,
        shots: usize,
        seed: u64,
    ) -> Result<SampleSet> {
        self.check_point(point)?;
        let mut set = match self {
            Self::ParallelTempering => {
                let params = PtParams::from_point(point, instance)?;
                pt::run_pt(instance_id, instance, &params, shots, seed)?
            }
            Self::CimCac => {
                let params = CimParams::from_point(point)?;
                cim::run_cim(instance_id, instance, &params, fixed, shots, seed)?
            }
        };
        set.params = point.clone();
        Ok(set)
    }
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pt" => Ok(Self::ParallelTempering),
            "cim-cac" => Ok(Self::CimCac),
            other => Err(Error::UnknownSolver(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_reject() {
        assert_eq!("pt".parse::<SolverId>().unwrap(), SolverId::ParallelTempering);
        assert_eq!("cim-cac".parse::<SolverId>().unwrap(), SolverId::CimCac);
        let err = "foo".parse::<SolverId>().unwrap_err().to_string();
        assert!(err.contains("pt") && err.contains("cim-cac"), "{err}");
    }

    #[test]
    fn schema_checked() {
        let inst = IsingInstance::from_couplings(2, [(0, 1, -1.0)]).unwrap();
        let bad = ParameterPoint::new("pt", [("sweeps", 3.0)]);
        let r = SolverId::ParallelTempering.run("i", &inst, &bad, &CimFixedParams::default(), 1, 0);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        let ok = ParameterPoint::new("pt", [("sweeps", 3.0), ("n_replicas", 2.0), ("p_cold", 0.5), ("p_hot", 0.5)]);
        let set = SolverId::ParallelTempering.run("i", &inst, &ok, &CimFixedParams::default(), 2, 0).unwrap();
        assert_eq!(set.params, ok);
    }
}
