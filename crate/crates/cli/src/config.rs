//! Flat `key = value` run configuration.
//!
//! ```text
//! seed = 7
//! out_dir = out
//! instances.n = 16, 32
//! instances.alpha = 0.5
//! instances.count = 20
//! solvers = pt
//! pt.shots = 100
//! pt.param.sweeps = 10, 100, 1000
//! pt.param.p_hot = dist:truncnormal(mean=0.5, sd=0.1, min=0.001)
//! pt.param_samples = 12
//! ```
//!
//! Lists are comma separated. A parameter given only as lists forms a
//! Cartesian grid; any `dist:` value switches the solver to sampling
//! `param_samples` points, with lists treated as uniform choices.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use stochbench::cim::{CimFixedParams, CimParams};
use stochbench::params::{Distribution, ParameterSampler, SearchSpace};
use stochbench::profiles::{BootstrapSettings, Statistic};
use stochbench::rng;
use stochbench::strategies::{FitFamily, MetaParams};
use stochbench::{ParameterPoint, SolverId};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum ParamSpec {
    Values(Vec<f64>),
    Dist(Distribution),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub id: SolverId,
    pub shots: usize,
    pub params: BTreeMap<String, ParamSpec>,
    pub param_samples: Option<usize>,
    pub nominal: Option<ParameterPoint>,
    pub meta_explore_frac: Option<Vec<f64>>,
    pub meta_tau: Option<Vec<f64>>,
    pub fixed: CimFixedParams,
}

impl SolverSettings {
    fn new(id: SolverId) -> Self {
        Self {
            id,
            shots: 100,
            params: BTreeMap::new(),
            param_samples: None,
            nominal: None,
            meta_explore_frac: None,
            meta_tau: None,
            fixed: CimFixedParams::default(),
        }
    }

    /// Parameter points to evaluate, sorted and deduplicated.
    pub fn points(&self, seed: u64) -> Result<Vec<ParameterPoint>, CliError> {
        let solver = self.id.as_str();
        let sampled = self.params.values().any(|p| matches!(p, ParamSpec::Dist(_)));
        let mut out = BTreeSet::new();
        if sampled {
            let count = self.param_samples.ok_or_else(|| {
                CliError::Config(format!("{solver}: distribution parameters need `{solver}.param_samples`"))
            })?;
            let dims = self
                .params
                .iter()
                .map(|(k, p)| {
                    let d = match p {
                        ParamSpec::Dist(d) => d.clone(),
                        ParamSpec::Values(v) if v.len() == 1 => Distribution::Fixed(v[0]),
                        ParamSpec::Values(v) => Distribution::Choice(v.clone()),
                    };
                    (k.clone(), d)
                })
                .collect();
            let space = SearchSpace::new(solver, dims);
            let mut r = rng::substream(seed, &[rng::tag("param-samples"), rng::tag(solver)]);
            for _ in 0..count {
                out.insert(space.sample_point(&mut r));
            }
        } else {
            let mut grid = vec![BTreeMap::new()];
            for (name, spec) in &self.params {
                let ParamSpec::Values(values) = spec else { unreachable!() };
                grid = grid
                    .into_iter()
                    .flat_map(|m| {
                        values.iter().map(move |&v| {
                            let mut m = m.clone();
                            m.insert(name.clone(), v);
                            m
                        })
                    })
                    .collect();
            }
            out.extend(grid.into_iter().map(|values| ParameterPoint { solver_id: solver.to_string(), values }));
        }
        let points: Vec<ParameterPoint> = out.into_iter().collect();
        for p in &points {
            self.id.check_point(p).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(points)
    }

    pub fn meta_grid(&self) -> Result<Vec<MetaParams>, CliError> {
        let default = match self.id {
            SolverId::ParallelTempering => MetaParams::pt_default_grid(),
            SolverId::CimCac => MetaParams::cim_default_grid(),
        };
        let fracs = self.meta_explore_frac.clone().unwrap_or_else(|| unique(default.iter().map(|m| m.explore_frac)));
        let taus = self.meta_tau.clone().unwrap_or_else(|| unique(default.iter().map(|m| m.tau)));
        MetaParams::grid(&fracs, &taus).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridSpec {
    pub points: Option<usize>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub instances_dir: PathBuf,
    pub sizes: Vec<usize>,
    pub alpha: f64,
    pub count: usize,
    pub solvers: Vec<SolverSettings>,
    pub grid: GridSpec,
    pub bootstrap: BootstrapSettings,
    pub statistic: Statistic,
    pub n_splits: usize,
    pub train_frac: f64,
    pub n_rep: usize,
    pub window: usize,
    pub fit: Option<FitFamily>,
    pub scaling_resource: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn samples_dir(&self, solver: SolverId) -> PathBuf {
        self.out_dir.join("samples").join(solver.as_str())
    }

    pub fn profiles_dir(&self, solver: SolverId) -> PathBuf {
        self.out_dir.join("profiles").join(solver.as_str())
    }

    pub fn strategies_dir(&self, solver: SolverId) -> PathBuf {
        self.out_dir.join("strategies").join(solver.as_str())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }

    /// Parse config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        let mut p = Parser { entries };

        let seed = p.take("seed")?.ok_or_else(|| CliError::Config("missing `seed`".into()))?;
        let out_dir = base.join(p.take::<String>("out_dir")?.unwrap_or_else(|| "out".into()));
        let instances_dir =
            p.take::<String>("instances.dir")?.map(|d| base.join(d)).unwrap_or_else(|| out_dir.join("instances"));
        let sizes = p.take_list("instances.n")?.unwrap_or_default();
        let alpha = p.take("instances.alpha")?.unwrap_or(0.5);
        let count = p.take("instances.count")?.unwrap_or(0);

        let solver_names: Vec<String> = p.take_list("solvers")?.unwrap_or_default();
        let mut solvers = Vec::new();
        for name in &solver_names {
            let id: SolverId = name.parse().map_err(|e: stochbench::Error| CliError::Config(e.to_string()))?;
            if solvers.iter().any(|s: &SolverSettings| s.id == id) {
                return Err(CliError::Config(format!("solver `{id}` listed twice")));
            }
            solvers.push(p.solver(id)?);
        }

        let defaults = BootstrapSettings::default();
        let bootstrap = BootstrapSettings {
            n_boot: p.take("bootstrap.n_boot")?.unwrap_or(defaults.n_boot),
            confidence: p.take("bootstrap.confidence")?.unwrap_or(defaults.confidence),
            seed,
        };
        bootstrap.validate(1).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = Self {
            seed,
            out_dir,
            instances_dir,
            sizes,
            alpha,
            count,
            solvers,
            grid: GridSpec { points: p.take("grid.points")?, min: p.take("grid.min")?, max: p.take("grid.max")? },
            bootstrap,
            statistic: p.take_parsed("aggregate")?.unwrap_or(Statistic::Mean),
            n_splits: p.take("cv.n_splits")?.unwrap_or(10),
            train_frac: p.take("cv.train_frac")?.unwrap_or(0.8),
            n_rep: p.take("strategy.n_rep")?.unwrap_or(5),
            window: p.take("strategy.window")?.unwrap_or(5),
            fit: match p.take::<String>("strategy.fit")? {
                None => None,
                Some(s) if s == "none" => None,
                Some(s) => Some(s.parse().map_err(|e: stochbench::Error| CliError::Config(e.to_string()))?),
            },
            scaling_resource: p.take("scaling.resource")?,
        };
        if let Some((k, (line, _))) = p.entries.iter().next() {
            return Err(CliError::Config(format!("line {line}: unknown key `{k}`")));
        }
        Ok(cfg)
    }
}

struct Parser {
    entries: BTreeMap<String, (usize, String)>,
}

impl Parser {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("line {line}: bad value for `{key}`: {e}"))),
        }
    }

    fn take_parsed<T: std::str::FromStr<Err = stochbench::Error>>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        self.take(key)
    }

    fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| CliError::Config(format!("line {line}: bad value in `{key}`: {e}"))))
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    fn solver(&mut self, id: SolverId) -> Result<SolverSettings, CliError> {
        let name = id.as_str();
        let mut s = SolverSettings::new(id);
        if let Some(shots) = self.take(&format!("{name}.shots"))? {
            s.shots = shots;
        }
        if s.shots == 0 {
            return Err(CliError::Config(format!("`{name}.shots` must be positive")));
        }
        s.param_samples = self.take(&format!("{name}.param_samples"))?;
        s.meta_explore_frac = self.take_list(&format!("{name}.meta.explore_frac"))?;
        s.meta_tau = self.take_list(&format!("{name}.meta.tau"))?;

        let param_prefix = format!("{name}.param.");
        let nominal_prefix = format!("{name}.nominal.");
        let fixed_prefix = format!("{name}.fixed.");
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(&format!("{name}."))).cloned().collect();
        let mut nominal = BTreeMap::new();
        for key in keys {
            let (line, value) = self.entries[&key].clone();
            if let Some(param) = key.strip_prefix(&param_prefix) {
                let spec = if let Some(rest) = value.strip_prefix("dist:") {
                    ParamSpec::Dist(
                        rest.parse().map_err(|e: stochbench::Error| CliError::Config(format!("line {line}: {e}")))?,
                    )
                } else {
                    ParamSpec::Values(self.take_list(&key)?.unwrap_or_default())
                };
                if let ParamSpec::Values(v) = &spec {
                    if v.is_empty() {
                        return Err(CliError::Config(format!("line {line}: `{key}` has no values")));
                    }
                }
                self.entries.remove(&key);
                s.params.insert(param.to_string(), spec);
            } else if let Some(param) = key.strip_prefix(&nominal_prefix) {
                let v: f64 = self.take(&key)?.expect("present");
                nominal.insert(param.to_string(), v);
            } else if let Some(field) = key.strip_prefix(&fixed_prefix) {
                if id != SolverId::CimCac {
                    return Err(CliError::Config(format!("line {line}: `{name}` has no fixed parameters")));
                }
                let v: f64 = self.take(&key)?.expect("present");
                if !s.fixed.set(field, v) {
                    return Err(CliError::Config(format!("line {line}: unknown fixed parameter `{field}`")));
                }
            }
        }
        s.fixed.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if id == SolverId::CimCac {
            // unspecified tunables default to the nominal set
            for (k, v) in CimParams::default().to_point().values {
                s.params.entry(k).or_insert(ParamSpec::Values(vec![v]));
            }
        }
        if !nominal.is_empty() {
            let point = ParameterPoint { solver_id: name.to_string(), values: nominal };
            id.check_point(&point).map_err(|e| CliError::Config(e.to_string()))?;
            s.nominal = Some(point);
        }
        Ok(s)
    }
}
