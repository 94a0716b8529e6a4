//! Solver parameter assignments and search-space distributions.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution as _, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named assignment of solver parameters.
///
/// Ordering and equality compare the solver id and then the values in name
/// order using a total order on floats, which gives the lexicographic
/// tie-breaking rule used by every argmax.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub solver_id: String,
    pub values: BTreeMap<String, f64>,
}

impl ParameterPoint {
    pub fn new<K: Into<String>>(solver_id: impl Into<String>, values: impl IntoIterator<Item = (K, f64)>) -> Self {
        Self {
            solver_id: solver_id.into(),
            values: values.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.get(name)
            .ok_or_else(|| Error::InvalidParameter(format!("missing parameter `{name}` for {}", self.solver_id)))
    }

    /// Canonical textual form, used for hashing.
    pub fn canonical(&self) -> String {
        let body: Vec<String> = self.values.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
        format!("{}|{}", self.solver_id, body.join(";"))
    }

    /// Stable 16-hex-digit key identifying this point in profile files.
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", crate::rng::tag(&self.canonical()))
    }
}

impl PartialEq for ParameterPoint {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ParameterPoint {}

impl PartialOrd for ParameterPoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ParameterPoint {
    fn cmp(&self, other: &Self) -> Ordering {
        self.solver_id.cmp(&other.solver_id).then_with(|| {
            let mut a = self.values.iter();
            let mut b = other.values.iter();
            loop {
                match (a.next(), b.next()) {
                    (None, None) => return Ordering::Equal,
                    (None, Some(_)) => return Ordering::Less,
                    (Some(_), None) => return Ordering::Greater,
                    (Some((ka, va)), Some((kb, vb))) => {
                        let o = ka.cmp(kb).then_with(|| va.total_cmp(vb));
                        if o != Ordering::Equal {
                            return o;
                        }
                    }
                }
            }
        })
    }
}

impl fmt::Display for ParameterPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}({})", self.solver_id, body.join(", "))
    }
}

/// Sampling distribution of one parameter.
///
/// Textual grammar (after the `dist:` prefix in config files):
/// `uniform(lo,hi)`, `loguniform(lo,hi)`, `rounduniform(lo,hi)`,
/// `truncnormal(mean=..,sd=..,min=..[,max=..])`,
/// `lognormal(mu=..,sigma=..[,min=..][,max=..])`, `choice(a,b,...)`, `fixed(v)`.
/// The normal families are clamped at their bounds.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    RoundUniform { lo: f64, hi: f64 },
    TruncNormal { mean: f64, sd: f64, min: f64, max: f64 },
    LogNormal { mu: f64, sigma: f64, min: f64, max: f64 },
    Choice(Vec<f64>),
    Fixed(f64),
}

impl Distribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::LogUniform { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp(),
            Self::RoundUniform { lo, hi } => (lo + (hi - lo) * rng.random::<f64>()).round(),
            Self::TruncNormal { mean, sd, min, max } => {
                Normal::new(mean, sd).expect("validated").sample(rng).clamp(min, max)
            }
            Self::LogNormal { mu, sigma, min, max } => {
                LogNormal::new(mu, sigma).expect("validated").sample(rng).clamp(min, max)
            }
            Self::Choice(ref v) => v[rng.random_range(0..v.len())],
            Self::Fixed(v) => v,
        }
    }

    /// Representative value used when no sampling budget is available.
    pub fn nominal(&self) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::LogUniform { lo, hi } => (lo * hi).sqrt(),
            Self::RoundUniform { lo, hi } => (0.5 * (lo + hi)).round(),
            Self::TruncNormal { mean, min, max, .. } => mean.clamp(min, max),
            Self::LogNormal { mu, min, max, .. } => mu.exp().clamp(min, max),
            Self::Choice(ref v) => v[0],
            Self::Fixed(v) => v,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match *self {
            Self::Uniform { lo, hi } | Self::RoundUniform { lo, hi } if !(lo <= hi) => {
                bad(format!("uniform bounds {lo} > {hi}"))
            }
            Self::LogUniform { lo, hi } if !(0.0 < lo && lo <= hi) => {
                bad(format!("loguniform needs 0 < lo <= hi, got ({lo}, {hi})"))
            }
            Self::TruncNormal { sd, min, max, .. } if !(sd > 0.0 && min <= max) => {
                bad(format!("truncnormal needs sd > 0 and min <= max (sd={sd})"))
            }
            Self::LogNormal { sigma, min, max, .. } if !(sigma > 0.0 && min <= max) => {
                bad(format!("lognormal needs sigma > 0 and min <= max (sigma={sigma})"))
            }
            Self::Choice(ref v) if v.is_empty() => bad("empty choice list".into()),
            _ => Ok(()),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix("dist:").unwrap_or(s).trim();
        let bad = || Error::InvalidParameter(format!("malformed distribution `{s}`"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.trim().strip_suffix(')').ok_or_else(bad)?;
        let mut positional = Vec::new();
        let mut named = BTreeMap::new();
        for a in args.split(',').map(str::trim).filter(|a| !a.is_empty()) {
            match a.split_once('=') {
                Some((k, v)) => {
                    named.insert(k.trim().to_string(), v.trim().parse::<f64>().map_err(|_| bad())?);
                }
                None => positional.push(a.parse::<f64>().map_err(|_| bad())?),
            }
        }
        let arg = |key: &str, pos: usize| named.get(key).copied().or_else(|| positional.get(pos).copied());
        let req = |key: &str, pos: usize| arg(key, pos).ok_or_else(bad);
        let d = match name.trim() {
            "uniform" => Self::Uniform { lo: req("lo", 0)?, hi: req("hi", 1)? },
            "loguniform" => Self::LogUniform { lo: req("lo", 0)?, hi: req("hi", 1)? },
            "rounduniform" => Self::RoundUniform { lo: req("lo", 0)?, hi: req("hi", 1)? },
            "truncnormal" | "normal" => Self::TruncNormal {
                mean: req("mean", 0)?,
                sd: req("sd", 1)?,
                min: arg("min", 2).unwrap_or(f64::NEG_INFINITY),
                max: arg("max", 3).unwrap_or(f64::INFINITY),
            },
            "lognormal" => Self::LogNormal {
                mu: req("mu", 0)?,
                sigma: req("sigma", 1)?,
                min: arg("min", 2).unwrap_or(0.0),
                max: arg("max", 3).unwrap_or(f64::INFINITY),
            },
            "choice" if named.is_empty() => Self::Choice(positional),
            "fixed" => Self::Fixed(req("value", 0)?),
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Anything that can propose parameter points for exploration.
pub trait ParameterSampler {
    fn sample_point(&self, rng: &mut dyn rand::RngCore) -> ParameterPoint;

    /// Point used by degenerate strategies that cannot afford exploration.
    fn nominal_point(&self) -> ParameterPoint;
}

/// Independent per-parameter distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub solver_id: String,
    pub dims: BTreeMap<String, Distribution>,
    pub nominal: Option<ParameterPoint>,
}

impl SearchSpace {
    pub fn new(solver_id: impl Into<String>, dims: BTreeMap<String, Distribution>) -> Self {
        Self { solver_id: solver_id.into(), dims, nominal: None }
    }
}

impl ParameterSampler for SearchSpace {
    fn sample_point(&self, rng: &mut dyn rand::RngCore) -> ParameterPoint {
        ParameterPoint {
            solver_id: self.solver_id.clone(),
            values: self.dims.iter().map(|(k, d)| (k.clone(), d.sample(rng))).collect(),
        }
    }

    fn nominal_point(&self) -> ParameterPoint {
        self.nominal.clone().unwrap_or_else(|| ParameterPoint {
            solver_id: self.solver_id.clone(),
            values: self.dims.iter().map(|(k, d)| (k.clone(), d.nominal())).collect(),
        })
    }
}

/// Uniform choice over a fixed set of pre-evaluated points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpace {
    pub points: Vec<ParameterPoint>,
    pub nominal: ParameterPoint,
}

impl DiscreteSpace {
    pub fn new(points: Vec<ParameterPoint>, nominal: Option<ParameterPoint>) -> Result<Self> {
        let first = points.first().cloned().ok_or(Error::Empty("discrete search space"))?;
        let nominal = match nominal {
            Some(p) => nearest_point(&points, &p).clone(),
            None => points.iter().min().cloned().unwrap_or(first),
        };
        Ok(Self { points, nominal })
    }
}

impl ParameterSampler for DiscreteSpace {
    fn sample_point(&self, rng: &mut dyn rand::RngCore) -> ParameterPoint {
        self.points[rng.random_range(0..self.points.len())].clone()
    }

    fn nominal_point(&self) -> ParameterPoint {
        self.nominal.clone()
    }
}

/// Closest member of `points` to `target`, with each parameter scaled by its
/// range over `points`. Ties go to the lexicographically smallest point.
pub fn nearest_point<'a>(points: &'a [ParameterPoint], target: &ParameterPoint) -> &'a ParameterPoint {
    let mut ranges: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for p in points {
        for (k, &v) in &p.values {
            let r = ranges.entry(k.as_str()).or_insert((v, v));
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    let dist = |p: &ParameterPoint| -> f64 {
        target
            .values
            .iter()
            .map(|(k, &t)| {
                let v = p.get(k).unwrap_or(f64::NAN);
                let (lo, hi) = ranges.get(k.as_str()).copied().unwrap_or((0.0, 0.0));
                let scale = if hi > lo { hi - lo } else { 1.0 };
                ((v - t) / scale).powi(2)
            })
            .sum()
    };
    points
        .iter()
        .map(|p| (dist(p), p))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, p)| p)
        .expect("non-empty point set")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parses_named_and_positional_distributions() {
        assert_eq!(
            "dist:loguniform(1,10000)".parse::<Distribution>().unwrap(),
            Distribution::LogUniform { lo: 1.0, hi: 10000.0 }
        );
        assert_eq!(
            "dist:truncnormal(mean=50,sd=10,min=0.1)".parse::<Distribution>().unwrap(),
            Distribution::TruncNormal { mean: 50.0, sd: 10.0, min: 0.1, max: f64::INFINITY }
        );
        assert_eq!(
            "choice(1, 2, 4)".parse::<Distribution>().unwrap(),
            Distribution::Choice(vec![1.0, 2.0, 4.0])
        );
        assert!("dist:uniform(3,1)".parse::<Distribution>().is_err());
        assert!("dist:gamma(1,2)".parse::<Distribution>().is_err());
        assert!("dist:uniform(1,2".parse::<Distribution>().is_err());
    }

    #[test]
    fn samples_respect_support() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let dists: Vec<Distribution> = [
            "loguniform(1,10000)",
            "rounduniform(1,128)",
            "truncnormal(mean=50,sd=10,min=0.1)",
            "lognormal(mu=0,sigma=2.3,min=0.01)",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        for _ in 0..2000 {
            let v = dists[0].sample(&mut rng);
            assert!((1.0..=10000.0).contains(&v));
            let v = dists[1].sample(&mut rng);
            assert!((1.0..=128.0).contains(&v) && v.fract() == 0.0);
            assert!(dists[2].sample(&mut rng) >= 0.1);
            assert!(dists[3].sample(&mut rng) >= 0.01);
        }
    }

    #[test]
    fn ordering_is_lexicographic_on_values() {
        let a = ParameterPoint::new("pt", [("sweeps", 10.0), ("n_replicas", 2.0)]);
        let b = ParameterPoint::new("pt", [("sweeps", 5.0), ("n_replicas", 4.0)]);
        // n_replicas sorts first by name
        assert!(a < b);
        assert_eq!(a.hash_hex(), a.clone().hash_hex());
        assert_ne!(a.hash_hex(), b.hash_hex());
    }

    #[test]
    fn nearest_point_uses_scaled_distance() {
        let pts = vec![
            ParameterPoint::new("pt", [("sweeps", 10.0), ("n_replicas", 2.0)]),
            ParameterPoint::new("pt", [("sweeps", 1000.0), ("n_replicas", 2.0)]),
        ];
        let t = ParameterPoint::new("pt", [("sweeps", 505.0), ("n_replicas", 2.0)]);
        assert_eq!(nearest_point(&pts, &t), &pts[0]);
        let t = ParameterPoint::new("pt", [("sweeps", 600.0), ("n_replicas", 2.0)]);
        assert_eq!(nearest_point(&pts, &t), &pts[1]);
    }
}
