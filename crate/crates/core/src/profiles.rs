//! Bootstrap performance profiles.
//!
//! A profile estimates the expected performance score of a solver setting as
//! a function of the resource spent, regenerated from the shots of a single
//! run at the largest resource. For a resource `r` the bootstrap draws
//! `k(r) = max(1, floor(r / mean shot cost))` shots with replacement and
//! scores the best energy among them.
//!
//! Each resample draws one sequence of `k_max` shots and reads the running
//! minimum at every grid point, so within a profile the estimates share
//! their random draws and are non-decreasing in `r`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IsingInstance, SampleSet};
use crate::params::ParameterPoint;
use crate::rng;

const CHUNK: usize = 1024;
const K_EPS: f64 = 1e-9;

/// Strictly ascending positive resource values `r_0 < ... < r_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceGrid {
    values: Vec<f64>,
}

impl ResourceGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("resource grid"));
        }
        if !values.iter().all(|&v| v > 0.0 && v.is_finite()) || !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!("resource grid must be positive and ascending: {values:?}")));
        }
        Ok(Self { values })
    }

    /// `points` log-spaced values from `lo` to `hi` inclusive; duplicates
    /// produced by degenerate ranges are dropped.
    pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo) || points == 0 {
            return Err(Error::InvalidParameter(format!("bad grid range [{lo}, {hi}] x {points}")));
        }
        if points == 1 || hi == lo {
            return Self::new(vec![hi]);
        }
        let step = (hi / lo).ln() / (points - 1) as f64;
        let mut values: Vec<f64> = (0..points).map(|k| lo * (step * k as f64).exp()).collect();
        values[0] = lo;
        values[points - 1] = hi;
        values.dedup_by(|a, b| a <= b);
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("non-empty grid")
    }

    /// Index of the largest grid value not exceeding `r`, or 0 when `r < r_0`.
    pub fn floor_index(&self, r: f64) -> usize {
        self.values.partition_point(|&v| v <= r * (1.0 + K_EPS)).saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub resource: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceProfile {
    pub instance_id: String,
    pub solver_id: String,
    pub params: ParameterPoint,
    pub points: Vec<ProfilePoint>,
}

impl PerformanceProfile {
    pub fn resources(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.resource).collect()
    }

    pub fn grid(&self) -> Result<ResourceGrid> {
        ResourceGrid::new(self.resources())
    }

    /// Estimate at the largest grid point not above `r` (the first point
    /// when `r` lies below the grid).
    pub fn estimate_at(&self, r: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.resource <= r * (1.0 + K_EPS)).saturating_sub(1);
        self.points[idx].estimate
    }

    fn aligned_with(&self, other: &Self) -> bool {
        self.points.len() == other.points.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| a.resource == b.resource)
    }
}

/// `(best - random) / (optimal - random)`.
pub fn performance_score(best_found: f64, optimal: f64, random_base: f64) -> Result<f64> {
    if optimal == random_base {
        return Err(Error::DegenerateInstance);
    }
    Ok((best_found - random_base) / (optimal - random_base))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    /// Two-sided confidence level, e.g. 0.95.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { n_boot: 1000, confidence: 0.95, seed: 0 }
    }
}

impl BootstrapSettings {
    pub fn validate(&self, min_boot: usize) -> Result<()> {
        if self.n_boot < min_boot {
            return Err(Error::InvalidParameter(format!("n_boot must be >= {min_boot}, got {}", self.n_boot)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(resource: f64, mut stats: Vec<f64>, confidence: f64) -> ProfilePoint {
    let n = stats.len();
    let estimate = stats.iter().sum::<f64>() / n as f64;
    stats.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - confidence);
    ProfilePoint {
        resource,
        estimate,
        // the mean of a skewed resample distribution can sit outside the
        // percentile interval; widen to keep ci_low <= estimate <= ci_high
        ci_low: percentile_sorted(&stats, tail).min(estimate),
        ci_high: percentile_sorted(&stats, 1.0 - tail).max(estimate),
        n_boot: n,
    }
}

/// Shots drawn for resource `r` at the given mean shot cost.
pub fn draws_for(r: f64, mean_cost: f64) -> usize {
    ((r / mean_cost + K_EPS).floor() as usize).max(1)
}

/// Bootstrap the profile of one pool over `grid`. The optimum is the
/// instance's planted ground energy and the baseline its random-guess energy.
pub fn bootstrap_profile(
    pool: &SampleSet,
    grid: &ResourceGrid,
    settings: &BootstrapSettings,
    instance: &IsingInstance,
) -> Result<PerformanceProfile> {
    let optimal = instance.ground_energy().ok_or_else(|| Error::UnknownOptimum(pool.instance_id.clone()))?;
    bootstrap_profile_with(pool, grid, settings, optimal, instance.random_baseline())
}

pub fn bootstrap_profile_with(
    pool: &SampleSet,
    grid: &ResourceGrid,
    settings: &BootstrapSettings,
    optimal: f64,
    random_base: f64,
) -> Result<PerformanceProfile> {
    settings.validate(100)?;
    if pool.records.is_empty() {
        return Err(Error::EmptyPool);
    }
    if grid.last() > pool.total_resource * (1.0 + K_EPS) {
        return Err(Error::BudgetExceeded { requested: grid.last(), available: pool.total_resource });
    }
    performance_score(optimal, optimal, random_base)?;

    let energies: Vec<f64> = pool.records.iter().map(|r| r.energy).collect();
    let mean_cost = pool.mean_cost();
    let ks: Vec<usize> = grid.values().iter().map(|&r| draws_for(r, mean_cost)).collect();
    let k_max = *ks.iter().max().expect("non-empty grid");
    let n_chunks = settings.n_boot.div_ceil(CHUNK);

    let chunks: Vec<Vec<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::substream(settings.seed, &[rng::tag("bootstrap"), c as u64]);
            let size = CHUNK.min(settings.n_boot - c * CHUNK);
            let mut out = vec![Vec::with_capacity(size); ks.len()];
            for _ in 0..size {
                let mut best = f64::INFINITY;
                let mut g = 0;
                for draw in 1..=k_max {
                    best = best.min(energies[rng.random_range(0..energies.len())]);
                    while g < ks.len() && ks[g] == draw {
                        out[g].push((best - random_base) / (optimal - random_base));
                        g += 1;
                    }
                }
            }
            out
        })
        .collect();

    let points = grid
        .values()
        .iter()
        .enumerate()
        .map(|(g, &r)| {
            let stats: Vec<f64> = chunks.iter().flat_map(|c| c[g].iter().copied()).collect();
            summarize(r, stats, settings.confidence)
        })
        .collect();
    Ok(PerformanceProfile {
        instance_id: pool.instance_id.clone(),
        solver_id: pool.solver_id.clone(),
        params: pool.params.clone(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Median,
}

impl Statistic {
    pub fn apply(&self, values: &[f64]) -> f64 {
        match self {
            Self::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Self::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 {
                    v[m]
                } else {
                    0.5 * (v[m - 1] + v[m])
                }
            }
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(Error::InvalidParameter(format!("unknown statistic `{other}` (mean|median)"))),
        }
    }
}

/// Combine per-instance profiles into one.
///
/// The estimate is the pointwise statistic across instances. The interval
/// is the union of the percentile bootstrap over instances and the
/// statistic of the per-instance intervals, so per-instance uncertainty is
/// carried into the aggregate.
pub fn aggregate_instances(
    profiles: &[PerformanceProfile],
    statistic: Statistic,
    settings: &BootstrapSettings,
) -> Result<PerformanceProfile> {
    settings.validate(1)?;
    let first = profiles.first().ok_or(Error::Empty("profiles to aggregate"))?;
    if profiles.iter().any(|p| !p.aligned_with(first)) {
        return Err(Error::GridMismatch);
    }
    let m = profiles.len();
    if m == 1 {
        return Ok(first.clone());
    }
    let n_chunks = settings.n_boot.div_ceil(CHUNK);
    let resamples: Vec<Vec<usize>> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng::substream(settings.seed, &[rng::tag("aggregate"), c as u64]);
            let size = CHUNK.min(settings.n_boot - c * CHUNK);
            (0..size).map(move |_| (0..m).map(|_| rng.random_range(0..m)).collect::<Vec<_>>()).collect::<Vec<_>>()
        })
        .collect();

    let tail = 0.5 * (1.0 - settings.confidence);
    let points = (0..first.points.len())
        .map(|g| {
            let est: Vec<f64> = profiles.iter().map(|p| p.points[g].estimate).collect();
            let lows: Vec<f64> = profiles.iter().map(|p| p.points[g].ci_low).collect();
            let highs: Vec<f64> = profiles.iter().map(|p| p.points[g].ci_high).collect();
            let estimate = statistic.apply(&est);
            let mut stats: Vec<f64> = resamples
                .iter()
                .map(|idx| statistic.apply(&idx.iter().map(|&i| est[i]).collect::<Vec<_>>()))
                .collect();
            stats.sort_by(f64::total_cmp);
            ProfilePoint {
                resource: first.points[g].resource,
                estimate,
                ci_low: percentile_sorted(&stats, tail).min(statistic.apply(&lows)).min(estimate),
                ci_high: percentile_sorted(&stats, 1.0 - tail).max(statistic.apply(&highs)).max(estimate),
                n_boot: settings.n_boot,
            }
        })
        .collect();
    Ok(PerformanceProfile {
        instance_id: "aggregate".into(),
        solver_id: first.solver_id.clone(),
        params: first.params.clone(),
        points,
    })
}

/// Profiles of every (instance, parameter point) pair on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub grid: ResourceGrid,
    pub by_instance: BTreeMap<String, BTreeMap<ParameterPoint, PerformanceProfile>>,
}

impl ProfileSet {
    /// Every instance must carry a profile for the same set of points.
    pub fn new(profiles: Vec<PerformanceProfile>) -> Result<Self> {
        let first = profiles.first().ok_or(Error::Empty("profile set"))?;
        let grid = first.grid()?;
        let mut by_instance: BTreeMap<String, BTreeMap<ParameterPoint, PerformanceProfile>> = BTreeMap::new();
        for p in profiles {
            if p.resources() != grid.values() {
                return Err(Error::GridMismatch);
            }
            let slot = by_instance.entry(p.instance_id.clone()).or_default();
            if slot.insert(p.params.clone(), p).is_some() {
                return Err(Error::InvalidParameter("duplicate (instance, parameter) profile".into()));
            }
        }
        let mut sets = by_instance.values().map(|m| m.keys().collect::<Vec<_>>());
        let reference = sets.next().expect("non-empty");
        if sets.any(|s| s != reference) {
            return Err(Error::InvalidParameter("instances were profiled at different parameter points".into()));
        }
        Ok(Self { grid, by_instance })
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.by_instance.keys().cloned().collect()
    }

    /// Evaluated parameter points, sorted.
    pub fn points(&self) -> Vec<ParameterPoint> {
        self.by_instance.values().next().map(|m| m.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn get(&self, instance_id: &str, point: &ParameterPoint) -> Option<&PerformanceProfile> {
        self.by_instance.get(instance_id)?.get(point)
    }

    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let mut by_instance = BTreeMap::new();
        for id in ids {
            let m = self
                .by_instance
                .get(id)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown instance `{id}`")))?;
            by_instance.insert(id.clone(), m.clone());
        }
        if by_instance.is_empty() {
            return Err(Error::Empty("instance subset"));
        }
        Ok(Self { grid: self.grid.clone(), by_instance })
    }

    pub fn profiles_for(&self, point: &ParameterPoint) -> Vec<PerformanceProfile> {
        self.by_instance.values().filter_map(|m| m.get(point).cloned()).collect()
    }
}

/// Write profile rows:
/// `instance_id,solver_id,param_hash,resource,estimate,ci_low,ci_high,n_boot`.
pub fn write_profiles_csv<W: Write>(out: W, profiles: &[PerformanceProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance_id", "solver_id", "param_hash", "resource", "estimate", "ci_low", "ci_high", "n_boot"])
        .map_err(csv_err)?;
    for p in profiles {
        let hash = p.params.hash_hex();
        for pt in &p.points {
            w.write_record([
                p.instance_id.clone(),
                p.solver_id.clone(),
                hash.clone(),
                pt.resource.to_string(),
                pt.estimate.to_string(),
                pt.ci_low.to_string(),
                pt.ci_high.to_string(),
                pt.n_boot.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the parameter index: `param_hash,solver_id,param:<name>...`.
pub fn write_params_csv<W: Write>(out: W, points: &[ParameterPoint]) -> Result<()> {
    let names: Vec<String> = points
        .iter()
        .flat_map(|p| p.values.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["param_hash".to_string(), "solver_id".to_string()];
    header.extend(names.iter().map(|n| format!("param:{n}")));
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        let mut row = vec![p.hash_hex(), p.solver_id.clone()];
        row.extend(names.iter().map(|n| p.get(n).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_params_csv<R: Read>(input: R) -> Result<BTreeMap<String, ParameterPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let mut out = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let mut values = BTreeMap::new();
        for (h, v) in header.iter().zip(rec.iter()).skip(2) {
            if let (Some(name), false) = (h.strip_prefix("param:"), v.is_empty()) {
                values.insert(name.to_string(), parse_f64(v, line + 2)?);
            }
        }
        let point = ParameterPoint { solver_id: rec[1].to_string(), values };
        out.insert(rec[0].to_string(), point);
    }
    Ok(out)
}

pub fn read_profiles_csv<R: Read>(input: R, params: &BTreeMap<String, ParameterPoint>) -> Result<Vec<PerformanceProfile>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<PerformanceProfile> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let line = line + 2;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 8 {
            return Err(Error::Parse { line, msg: format!("expected 8 columns, got {}", rec.len()) });
        }
        let point = ProfilePoint {
            resource: parse_f64(&rec[3], line)?,
            estimate: parse_f64(&rec[4], line)?,
            ci_low: parse_f64(&rec[5], line)?,
            ci_high: parse_f64(&rec[6], line)?,
            n_boot: rec[7].parse().map_err(|e| Error::Parse { line, msg: format!("bad n_boot: {e}") })?,
        };
        let params = params
            .get(&rec[2])
            .ok_or_else(|| Error::Parse { line, msg: format!("unknown param_hash {}", &rec[2]) })?;
        match out.last_mut() {
            Some(p) if p.instance_id == rec[0] && p.solver_id == rec[1] && &p.params == params => p.points.push(point),
            _ => out.push(PerformanceProfile {
                instance_id: rec[0].to_string(),
                solver_id: rec[1].to_string(),
                params: params.clone(),
                points: vec![point],
            }),
        }
    }
    Ok(out)
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|e| Error::Parse { line, msg: format!("bad number `{s}`: {e}") })
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse { line: p.line() as usize, msg: e.to_string() },
        None => Error::Parse { line: 0, msg: e.to_string() },
    }
}
