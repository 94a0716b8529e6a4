//! Parameter-setting strategies.
//!
//! * Virtual best: per instance and resource, the best evaluated setting.
//! * Fixed: one setting per resource chosen on training instances and
//!   applied unchanged to unseen ones.
//! * Exploration-exploitation: spend a fraction of the budget sampling
//!   settings at a fixed cost each, then run the incumbent with the rest.
//!
//! Strategy curves are smoothed into actionable form and scored on held-out
//! instances across several train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{nearest_point, DiscreteSpace, ParameterPoint, ParameterSampler};
use crate::profiles::{
    aggregate_instances, percentile_sorted, BootstrapSettings, PerformanceProfile, ProfilePoint, ProfileSet, Statistic,
};
use crate::rng;

pub const META_SOLVER_ID: &str = "meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "virtual-best")]
    VirtualBest,
    /// Argmax of the aggregated training profile.
    #[serde(rename = "fixed")]
    Fixed,
    /// Per-parameter average of the per-instance argmax.
    #[serde(rename = "fixed-average")]
    FixedAverage,
    #[serde(rename = "explore-exploit")]
    ExploreExploit,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::VirtualBest, Self::Fixed, Self::FixedAverage, Self::ExploreExploit];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::VirtualBest => "virtual-best",
            Self::Fixed => "fixed",
            Self::FixedAverage => "fixed-average",
            Self::ExploreExploit => "explore-exploit",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPoint {
    pub resource: f64,
    pub params: ParameterPoint,
    /// Expected score; NaN when the point has not been evaluated.
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub needs_rerun: bool,
}

/// Resource to (parameters, expected score).
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyCurve {
    pub kind: StrategyKind,
    pub points: Vec<StrategyPoint>,
    pub actionable: bool,
    /// Set for per-instance virtual-best curves.
    pub instance_id: Option<String>,
}

/// Exploration-exploitation meta-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub explore_frac: f64,
    /// Resource spent on each explored setting.
    pub tau: f64,
}

impl MetaParams {
    pub fn new(explore_frac: f64, tau: f64) -> Result<Self> {
        let m = Self { explore_frac, tau };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.explore_frac > 0.0 && self.explore_frac <= 1.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need explore_frac in (0, 1] and tau > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn to_point(&self) -> ParameterPoint {
        ParameterPoint::new(META_SOLVER_ID, [("explore_frac", self.explore_frac), ("tau", self.tau)])
    }

    pub fn from_point(p: &ParameterPoint) -> Result<Self> {
        Self::new(p.require("explore_frac")?, p.require("tau")?)
    }

    /// Cartesian product of the two axes.
    pub fn grid(explore_fracs: &[f64], taus: &[f64]) -> Result<Vec<Self>> {
        explore_fracs.iter().flat_map(|&f| taus.iter().map(move |&t| Self::new(f, t))).collect()
    }

    /// Meta grid used for the CIM-CAC solver: `tau in {11, 16, ..., 501}`,
    /// `explore_frac in {0.05, 0.10, ..., 1.00}`.
    pub fn cim_default_grid() -> Vec<Self> {
        let fracs: Vec<f64> = (1..=20).map(|k| k as f64 * 0.05).collect();
        let taus: Vec<f64> = (0..=98).map(|k| 11.0 + 5.0 * k as f64).collect();
        Self::grid(&fracs, &taus).expect("valid grid")
    }

    /// Meta grid used for parallel tempering.
    pub fn pt_default_grid() -> Vec<Self> {
        let fracs = [0.05, 0.1, 0.2, 0.3, 0.5, 0.6, 0.75];
        let taus = [10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0, 10000.0];
        Self::grid(&fracs, &taus).expect("valid grid")
    }
}

fn argmax_by_estimate<'a, I>(items: I) -> Option<(&'a ParameterPoint, &'a ProfilePoint)>
where
    I: IntoIterator<Item = (&'a ParameterPoint, &'a ProfilePoint)>,
{
    // ties go to the lexicographically smallest parameter vector
    items.into_iter().fold(None, |best, (p, pt)| match best {
        Some((bp, bpt)) if bpt.estimate > pt.estimate || (bpt.estimate == pt.estimate && bp <= p) => Some((bp, bpt)),
        _ => Some((p, pt)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualBest {
    pub curve: StrategyCurve,
    pub profile: PerformanceProfile,
}

/// Virtual best of one instance's profiles.
pub fn virtual_best_instance(profiles: &BTreeMap<ParameterPoint, PerformanceProfile>) -> Result<VirtualBest> {
    let first = profiles.values().next().ok_or(Error::Empty("profile set"))?;
    if profiles.values().any(|p| p.resources() != first.resources()) {
        return Err(Error::GridMismatch);
    }
    let mut curve_points = Vec::with_capacity(first.points.len());
    let mut profile_points = Vec::with_capacity(first.points.len());
    for g in 0..first.points.len() {
        let (p, pt) = argmax_by_estimate(profiles.iter().map(|(k, v)| (k, &v.points[g]))).expect("non-empty");
        curve_points.push(StrategyPoint {
            resource: pt.resource,
            params: p.clone(),
            estimate: pt.estimate,
            ci_low: pt.ci_low,
            ci_high: pt.ci_high,
            needs_rerun: false,
        });
        profile_points.push(*pt);
    }
    Ok(VirtualBest {
        curve: StrategyCurve {
            kind: StrategyKind::VirtualBest,
            points: curve_points,
            actionable: false,
            instance_id: Some(first.instance_id.clone()),
        },
        profile: PerformanceProfile {
            instance_id: first.instance_id.clone(),
            solver_id: first.solver_id.clone(),
            params: ParameterPoint::new(StrategyKind::VirtualBest.as_str(), std::iter::empty::<(String, f64)>()),
            points: profile_points,
        },
    })
}

/// Per-instance virtual best curves and profiles.
pub fn virtual_best(set: &ProfileSet) -> Result<BTreeMap<String, VirtualBest>> {
    set.by_instance.iter().map(|(id, m)| Ok((id.clone(), virtual_best_instance(m)?))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedMode {
    ArgmaxOfAggregate,
    AverageOfArgmax,
}

impl FixedMode {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Self::ArgmaxOfAggregate => StrategyKind::Fixed,
            Self::AverageOfArgmax => StrategyKind::FixedAverage,
        }
    }
}

/// Aggregated training profile of every evaluated point.
pub fn aggregate_points(
    set: &ProfileSet,
    statistic: Statistic,
    settings: &BootstrapSettings,
) -> Result<BTreeMap<ParameterPoint, PerformanceProfile>> {
    set.points()
        .into_iter()
        .map(|p| {
            let s = BootstrapSettings { seed: rng::derive(settings.seed, &[rng::tag(&p.canonical())]), ..*settings };
            let agg = aggregate_instances(&set.profiles_for(&p), statistic, &s)?;
            Ok((p, agg))
        })
        .collect()
}

/// Fixed strategy derived from training profiles.
pub fn fixed_best(
    train: &ProfileSet,
    mode: FixedMode,
    statistic: Statistic,
    settings: &BootstrapSettings,
) -> Result<StrategyCurve> {
    if train.by_instance.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let aggregated = aggregate_points(train, statistic, settings)?;
    let evaluated: Vec<ParameterPoint> = aggregated.keys().cloned().collect();
    let per_instance = match mode {
        FixedMode::AverageOfArgmax => Some(virtual_best(train)?),
        FixedMode::ArgmaxOfAggregate => None,
    };

    let points = (0..train.grid.len())
        .map(|g| {
            let resource = train.grid.values()[g];
            let (params, needs_rerun) = match &per_instance {
                None => {
                    let (p, _) =
                        argmax_by_estimate(aggregated.iter().map(|(k, v)| (k, &v.points[g]))).expect("non-empty");
                    (p.clone(), false)
                }
                Some(vb) => {
                    let chosen: Vec<&ParameterPoint> = vb.values().map(|v| &v.curve.points[g].params).collect();
                    let mut values = BTreeMap::new();
                    for name in chosen[0].values.keys() {
                        let sum: f64 = chosen.iter().map(|p| p.values[name]).sum();
                        values.insert(name.clone(), sum / chosen.len() as f64);
                    }
                    let avg = ParameterPoint { solver_id: chosen[0].solver_id.clone(), values };
                    let rerun = !aggregated.contains_key(&avg);
                    (avg, rerun)
                }
            };
            let proxy = if needs_rerun { nearest_point(&evaluated, &params) } else { &params };
            let pt = aggregated[proxy].points[g];
            StrategyPoint {
                resource,
                params,
                estimate: if needs_rerun { f64::NAN } else { pt.estimate },
                ci_low: if needs_rerun { f64::NAN } else { pt.ci_low },
                ci_high: if needs_rerun { f64::NAN } else { pt.ci_high },
                needs_rerun,
            }
        })
        .collect();
    Ok(StrategyCurve { kind: mode.kind(), points, actionable: false, instance_id: None })
}

/// Score a parameter curve on every instance of `set`. Points that were not
/// evaluated are scored by their nearest evaluated neighbour.
pub fn apply_curve(curve: &StrategyCurve, set: &ProfileSet) -> Result<Vec<PerformanceProfile>> {
    if curve.points.len() != set.grid.len()
        || curve.points.iter().zip(set.grid.values()).any(|(p, &r)| p.resource != r)
    {
        return Err(Error::GridMismatch);
    }
    let evaluated = set.points();
    let proxies: Vec<&ParameterPoint> =
        curve.points.iter().map(|sp| nearest_point(&evaluated, &sp.params)).collect();
    Ok(set
        .by_instance
        .iter()
        .map(|(id, m)| PerformanceProfile {
            instance_id: id.clone(),
            solver_id: m.values().next().map(|p| p.solver_id.clone()).unwrap_or_default(),
            params: ParameterPoint::new(curve.kind.as_str(), std::iter::empty::<(String, f64)>()),
            points: proxies.iter().enumerate().map(|(g, p)| m[*p].points[g]).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreExploitOutcome {
    /// `(cumulative resource, best score so far)` after every evaluation.
    pub trajectory: Vec<(f64, f64)>,
    pub chosen: ParameterPoint,
    pub explored: usize,
    pub exploit_budget: f64,
    pub degenerate: bool,
}

impl ExploreExploitOutcome {
    pub fn final_score(&self) -> f64 {
        self.trajectory.last().map(|t| t.1).unwrap_or(f64::NAN)
    }
}

/// Number of settings explored under `meta` with budget `budget`.
pub fn explored_count(budget: f64, meta: &MetaParams) -> usize {
    (meta.explore_frac * budget / meta.tau + 1e-9).floor() as usize
}

/// Explore `K = floor(explore_frac * B / tau)` sampled settings at cost
/// `tau` each, then run the best one (earliest on ties) with `B - K tau`.
/// With `K = 0` the whole budget goes to the nominal point.
pub fn explore_exploit<S, F>(
    budget: f64,
    meta: &MetaParams,
    space: &S,
    mut evaluate: F,
    rng: &mut dyn rand::RngCore,
) -> Result<ExploreExploitOutcome>
where
    S: ParameterSampler + ?Sized,
    F: FnMut(&ParameterPoint, f64) -> f64,
{
    meta.validate()?;
    if !(budget > 0.0) {
        return Err(Error::InvalidParameter(format!("budget must be positive, got {budget}")));
    }
    let k = explored_count(budget, meta);
    if k == 0 {
        let chosen = space.nominal_point();
        let score = evaluate(&chosen, budget);
        return Ok(ExploreExploitOutcome {
            trajectory: vec![(budget, score)],
            chosen,
            explored: 0,
            exploit_budget: budget,
            degenerate: true,
        });
    }

    let mut trajectory = Vec::with_capacity(k + 1);
    let mut best: Option<(ParameterPoint, f64)> = None;
    for i in 1..=k {
        let p = space.sample_point(rng);
        let s = evaluate(&p, meta.tau);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((p, s));
        }
        trajectory.push((i as f64 * meta.tau, best.as_ref().expect("set").1));
    }
    let (chosen, best_score) = best.expect("k >= 1");
    let exploit_budget = budget - k as f64 * meta.tau;
    if exploit_budget > 0.0 {
        let s = evaluate(&chosen, exploit_budget);
        trajectory.push((budget, best_score.max(s)));
    }
    Ok(ExploreExploitOutcome { trajectory, chosen, explored: k, exploit_budget, degenerate: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaCell {
    pub meta: MetaParams,
    pub resource: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaSweep {
    pub cells: Vec<MetaCell>,
    /// Best-found meta point per budget.
    pub best: StrategyCurve,
}

/// Average exploration-exploitation outcomes over instances and repetitions
/// for every meta point and budget. Random streams depend on the instance,
/// repetition and budget only, so all meta points see common draws.
pub fn meta_sweep<S, E>(
    grid: &[MetaParams],
    budgets: &[f64],
    space: &S,
    evaluators: &[E],
    n_rep: usize,
    confidence: f64,
    seed: u64,
) -> Result<MetaSweep>
where
    S: ParameterSampler + Sync + ?Sized,
    E: Fn(&ParameterPoint, f64) -> f64 + Sync,
{
    if grid.is_empty() {
        return Err(Error::Empty("meta grid"));
    }
    if evaluators.is_empty() || n_rep == 0 {
        return Err(Error::Empty("meta sweep instances"));
    }
    let tail = 0.5 * (1.0 - confidence);
    let cells: Vec<MetaCell> = grid
        .par_iter()
        .flat_map_iter(|meta| {
            budgets.iter().enumerate().map(move |(b, &budget)| {
                let mut per_instance = Vec::with_capacity(evaluators.len());
                for (i, eval) in evaluators.iter().enumerate() {
                    let mut sum = 0.0;
                    for rep in 0..n_rep {
                        let mut r = rng::substream(seed, &[rng::tag("meta-sweep"), i as u64, rep as u64, b as u64]);
                        sum += explore_exploit(budget, meta, space, eval, &mut r)?.final_score();
                    }
                    per_instance.push(sum / n_rep as f64);
                }
                let estimate = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
                per_instance.sort_by(f64::total_cmp);
                Ok(MetaCell {
                    meta: *meta,
                    resource: budget,
                    estimate,
                    ci_low: percentile_sorted(&per_instance, tail).min(estimate),
                    ci_high: percentile_sorted(&per_instance, 1.0 - tail).max(estimate),
                })
            })
        })
        .collect::<Result<_>>()?;

    let points = budgets
        .iter()
        .map(|&r| {
            let best = cells
                .iter()
                .filter(|c| c.resource == r)
                .fold(None::<&MetaCell>, |acc, c| match acc {
                    Some(a) if a.estimate > c.estimate
                        || (a.estimate == c.estimate && a.meta.to_point() <= c.meta.to_point()) =>
                    {
                        Some(a)
                    }
                    _ => Some(c),
                })
                .expect("non-empty grid");
            StrategyPoint {
                resource: r,
                params: best.meta.to_point(),
                estimate: best.estimate,
                ci_low: best.ci_low,
                ci_high: best.ci_high,
                needs_rerun: false,
            }
        })
        .collect();
    Ok(MetaSweep {
        cells,
        best: StrategyCurve { kind: StrategyKind::ExploreExploit, points, actionable: false, instance_id: None },
    })
}

/// Functional families for fitting a parameter trajectory against resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFamily {
    Constant,
    /// `a + b ln r`
    LinearLog,
    /// `a r^b`
    PowerLaw,
}

impl std::str::FromStr for FitFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(Self::Constant),
            "linear-log" => Ok(Self::LinearLog),
            "power" | "power-law" => Ok(Self::PowerLaw),
            other => Err(Error::InvalidParameter(format!("unknown fit family `{other}`"))),
        }
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn fit_values(family: FitFamily, resources: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let logr: Vec<f64> = resources.iter().map(|r| r.ln()).collect();
    Ok(match family {
        FitFamily::Constant => {
            let m = values.iter().sum::<f64>() / values.len() as f64;
            vec![m; values.len()]
        }
        FitFamily::LinearLog => {
            let (a, b) = least_squares(&logr, values);
            logr.iter().map(|x| a + b * x).collect()
        }
        FitFamily::PowerLaw => {
            if values.iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidParameter("power-law fit needs positive values".into()));
            }
            let logv: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            let (a, b) = least_squares(&logr, &logv);
            logr.iter().map(|x| (a + b * x).exp()).collect()
        }
    })
}

/// Centered rolling median; the window shrinks symmetrically at the ends.
pub fn rolling_median(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            Statistic::Median.apply(&values[i - h..=i + h])
        })
        .collect()
}

/// Make a strategy curve actionable: per-parameter rolling median, then an
/// optional least-squares fit. Points not in `evaluated` are flagged.
pub fn smooth_curve(
    curve: &StrategyCurve,
    window: usize,
    fit: Option<FitFamily>,
    evaluated: &[ParameterPoint],
) -> Result<StrategyCurve> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("smoothing window must be odd and >= 1, got {window}")));
    }
    let n = curve.points.len();
    if n == 0 {
        return Err(Error::Empty("strategy curve"));
    }
    let mut window = window;
    if window > n {
        warn!("smoothing window {window} exceeds curve length {n}; clamping");
        window = if n % 2 == 1 { n } else { n - 1 };
    }
    let resources: Vec<f64> = curve.points.iter().map(|p| p.resource).collect();
    let names: Vec<String> = curve.points[0].params.values.keys().cloned().collect();
    let mut columns = BTreeMap::new();
    for name in &names {
        let raw: Vec<f64> = curve.points.iter().map(|p| p.params.values[name]).collect();
        let mut smooth = rolling_median(&raw, window);
        if let Some(f) = fit {
            smooth = fit_values(f, &resources, &smooth)?;
        }
        columns.insert(name.clone(), smooth);
    }
    let evaluated: BTreeSet<&ParameterPoint> = evaluated.iter().collect();
    let points = curve
        .points
        .iter()
        .enumerate()
        .map(|(g, old)| {
            let params = ParameterPoint {
                solver_id: old.params.solver_id.clone(),
                values: names.iter().map(|k| (k.clone(), columns[k][g])).collect(),
            };
            let unchanged = params == old.params;
            StrategyPoint {
                resource: old.resource,
                needs_rerun: !evaluated.contains(&params),
                estimate: if unchanged { old.estimate } else { f64::NAN },
                ci_low: if unchanged { old.ci_low } else { f64::NAN },
                ci_high: if unchanged { old.ci_high } else { f64::NAN },
                params,
            }
        })
        .collect();
    Ok(StrategyCurve { kind: curve.kind, points, actionable: true, instance_id: curve.instance_id.clone() })
}

/// One train/test partition of the instance ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split_id: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Random splits with `round(train_frac * |I|)` training instances. With
/// `train_frac = 1` every split trains and tests on the full set.
pub fn make_splits(ids: &[String], n_splits: usize, train_frac: f64, seed: u64) -> Result<Vec<SplitSpec>> {
    if ids.len() < 5 {
        return Err(Error::TooFewInstances { need: 5, got: ids.len() });
    }
    if n_splits == 0 || !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::InvalidParameter(format!("bad split settings: {n_splits} x {train_frac}")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if train_frac == 1.0 {
        return Ok((0..n_splits)
            .map(|k| SplitSpec { split_id: k, train_ids: sorted.clone(), test_ids: sorted.clone(), seed })
            .collect());
    }
    let n_train = (train_frac * ids.len() as f64).round() as usize;
    if n_train == 0 || n_train == ids.len() {
        return Err(Error::InvalidParameter(format!(
            "train_frac {train_frac} leaves an empty side for {} instances",
            ids.len()
        )));
    }
    Ok((0..n_splits)
        .map(|k| {
            let split_seed = rng::derive(seed, &[rng::tag("split"), k as u64]);
            let mut shuffled = sorted.clone();
            shuffled.shuffle(&mut rng::substream(split_seed, &[]));
            let mut train_ids = shuffled[..n_train].to_vec();
            let mut test_ids = shuffled[n_train..].to_vec();
            train_ids.sort();
            test_ids.sort();
            SplitSpec { split_id: k, train_ids, test_ids, seed: split_seed }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySettings {
    pub statistic: Statistic,
    pub bootstrap: BootstrapSettings,
    pub window: usize,
    pub fit: Option<FitFamily>,
    pub meta_grid: Vec<MetaParams>,
    pub n_rep: usize,
    pub nominal: Option<ParameterPoint>,
}

/// Strategies derived from a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedStrategies {
    pub fixed: StrategyCurve,
    pub fixed_actionable: StrategyCurve,
    pub fixed_average: StrategyCurve,
    pub fixed_average_actionable: StrategyCurve,
    pub meta: MetaSweep,
    pub meta_actionable: StrategyCurve,
}

fn profile_evaluator(profiles: &BTreeMap<ParameterPoint, PerformanceProfile>) -> impl Fn(&ParameterPoint, f64) -> f64 + Sync + '_ {
    move |p, r| profiles[p].estimate_at(r)
}

pub fn train_strategies(train: &ProfileSet, settings: &StrategySettings) -> Result<TrainedStrategies> {
    let evaluated = train.points();
    let fixed = fixed_best(train, FixedMode::ArgmaxOfAggregate, settings.statistic, &settings.bootstrap)?;
    let fixed_average = fixed_best(train, FixedMode::AverageOfArgmax, settings.statistic, &settings.bootstrap)?;
    let space = DiscreteSpace::new(evaluated.clone(), settings.nominal.clone())?;
    let evaluators: Vec<_> = train.by_instance.values().map(profile_evaluator).collect();
    let meta = meta_sweep(
        &settings.meta_grid,
        train.grid.values(),
        &space,
        &evaluators,
        settings.n_rep,
        settings.bootstrap.confidence,
        rng::derive(settings.bootstrap.seed, &[rng::tag("meta")]),
    )?;
    let meta_points: Vec<ParameterPoint> = settings.meta_grid.iter().map(MetaParams::to_point).collect();
    Ok(TrainedStrategies {
        fixed_actionable: smooth_curve(&fixed, settings.window, settings.fit, &evaluated)?,
        fixed_average_actionable: smooth_curve(&fixed_average, settings.window, settings.fit, &evaluated)?,
        meta_actionable: smooth_curve(&meta.best, settings.window, settings.fit, &meta_points)?,
        fixed,
        fixed_average,
        meta,
    })
}

/// Run the actionable exploration-exploitation curve on every instance of `set`.
pub fn apply_explore_exploit(
    meta_curve: &StrategyCurve,
    set: &ProfileSet,
    settings: &StrategySettings,
    seed: u64,
) -> Result<Vec<PerformanceProfile>> {
    if meta_curve.points.len() != set.grid.len() {
        return Err(Error::GridMismatch);
    }
    let space = DiscreteSpace::new(set.points(), settings.nominal.clone())?;
    let tail = 0.5 * (1.0 - settings.bootstrap.confidence);
    set.by_instance
        .iter()
        .map(|(id, m)| {
            let eval = profile_evaluator(m);
            let points = meta_curve
                .points
                .iter()
                .enumerate()
                .map(|(g, sp)| {
                    let meta = MetaParams::from_point(&sp.params)?;
                    let mut scores = (0..settings.n_rep)
                        .map(|rep| {
                            let mut r = rng::substream(seed, &[rng::tag("explore-exploit"), rng::tag(id), g as u64, rep as u64]);
                            explore_exploit(sp.resource, &meta, &space, &eval, &mut r).map(|o| o.final_score())
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    let estimate = scores.iter().sum::<f64>() / scores.len() as f64;
                    scores.sort_by(f64::total_cmp);
                    Ok(ProfilePoint {
                        resource: sp.resource,
                        estimate,
                        ci_low: percentile_sorted(&scores, tail).min(estimate),
                        ci_high: percentile_sorted(&scores, 1.0 - tail).max(estimate),
                        n_boot: settings.n_rep,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PerformanceProfile {
                instance_id: id.clone(),
                solver_id: m.values().next().map(|p| p.solver_id.clone()).unwrap_or_default(),
                params: ParameterPoint::new(StrategyKind::ExploreExploit.as_str(), std::iter::empty::<(String, f64)>()),
                points,
            })
        })
        .collect()
}

/// Per-strategy profiles of the instances in `test` under strategies trained elsewhere.
pub fn evaluate_on(
    trained: &TrainedStrategies,
    test: &ProfileSet,
    settings: &StrategySettings,
    seed: u64,
) -> Result<BTreeMap<StrategyKind, Vec<PerformanceProfile>>> {
    let mut out = BTreeMap::new();
    out.insert(StrategyKind::VirtualBest, virtual_best(test)?.into_values().map(|v| v.profile).collect());
    out.insert(StrategyKind::Fixed, apply_curve(&trained.fixed_actionable, test)?);
    out.insert(StrategyKind::FixedAverage, apply_curve(&trained.fixed_average_actionable, test)?);
    out.insert(StrategyKind::ExploreExploit, apply_explore_exploit(&trained.meta_actionable, test, settings, seed)?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub split: SplitSpec,
    pub trained: TrainedStrategies,
    pub test_profiles: BTreeMap<StrategyKind, Vec<PerformanceProfile>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub splits: Vec<SplitOutcome>,
    /// Test profiles pooled over splits and instances.
    pub profiles: BTreeMap<StrategyKind, PerformanceProfile>,
}

pub fn run_split(set: &ProfileSet, split: &SplitSpec, settings: &StrategySettings) -> Result<SplitOutcome> {
    let train = set.subset(&split.train_ids)?;
    let test = set.subset(&split.test_ids)?;
    let trained = train_strategies(&train, settings)?;
    let test_profiles = evaluate_on(&trained, &test, settings, split.seed)?;
    Ok(SplitOutcome { split: split.clone(), trained, test_profiles })
}

/// Pool test profiles of all splits per strategy and aggregate them.
pub fn pool_splits(
    outcomes: &[&BTreeMap<StrategyKind, Vec<PerformanceProfile>>],
    statistic: Statistic,
    settings: &BootstrapSettings,
) -> Result<BTreeMap<StrategyKind, PerformanceProfile>> {
    let mut pooled: BTreeMap<StrategyKind, Vec<PerformanceProfile>> = BTreeMap::new();
    for o in outcomes {
        for (k, v) in o.iter() {
            pooled.entry(*k).or_default().extend(v.iter().cloned());
        }
    }
    pooled
        .into_iter()
        .map(|(k, v)| {
            let s = BootstrapSettings { seed: rng::derive(settings.seed, &[rng::tag(k.as_str())]), ..*settings };
            let mut agg = aggregate_instances(&v, statistic, &s)?;
            agg.instance_id = "cross-validated".into();
            agg.params = ParameterPoint::new(k.as_str(), std::iter::empty::<(String, f64)>());
            Ok((k, agg))
        })
        .collect()
}

pub fn cross_validate(
    set: &ProfileSet,
    n_splits: usize,
    train_frac: f64,
    seed: u64,
    settings: &StrategySettings,
) -> Result<CrossValidation> {
    let splits = make_splits(&set.instance_ids(), n_splits, train_frac, seed)?;
    let outcomes = splits.iter().map(|s| run_split(set, s, settings)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = outcomes.iter().map(|o| &o.test_profiles).collect();
    let profiles = pool_splits(&refs, settings.statistic, &settings.bootstrap)?;
    Ok(CrossValidation { splits: outcomes, profiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SearchSpace;
    use rand::SeedableRng;

    #[test]
    fn explore_exploit_arithmetic() {
        let space = SearchSpace::new("x", [("v".to_string(), "uniform(0,1)".parse().unwrap())].into());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let meta = MetaParams::new(0.3, 100.0).unwrap();
        let o = explore_exploit(1000.0, &meta, &space, |_, _| 0.5, &mut rng).unwrap();
        assert_eq!(o.explored, 3);
        assert_eq!(o.exploit_budget, 700.0);
        assert_eq!(o.trajectory.last().unwrap().0, 1000.0);

        let meta = MetaParams::new(1.0, 1000.0).unwrap();
        let o = explore_exploit(1000.0, &meta, &space, |_, r| r, &mut rng).unwrap();
        assert_eq!((o.explored, o.exploit_budget), (1, 0.0));
        assert_eq!(o.trajectory, vec![(1000.0, 1000.0)]);

        let meta = MetaParams::new(0.1, 500.0).unwrap();
        let o = explore_exploit(1000.0, &meta, &space, |_, _| 0.1, &mut rng).unwrap();
        assert!(o.degenerate);
        assert_eq!(o.chosen.get("v"), Some(0.5));
    }

    #[test]
    fn rolling_median_shrinks_at_edges() {
        assert_eq!(rolling_median(&[1.0, 9.0, 1.0, 1.0, 1.0], 3), vec![1.0; 5]);
        assert_eq!(rolling_median(&[3.0, 1.0, 2.0], 1), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn fits() {
        let r = [1.0, 10.0, 100.0];
        let v = fit_values(FitFamily::LinearLog, &r, &[1.0, 2.0, 3.0]).unwrap();
        assert!(v.iter().zip([1.0, 2.0, 3.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        let v = fit_values(FitFamily::PowerLaw, &r, &[2.0, 20.0, 200.0]).unwrap();
        assert!(v.iter().zip([2.0, 20.0, 200.0]).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(fit_values(FitFamily::PowerLaw, &r, &[0.0, 1.0, 1.0]).is_err());
        assert_eq!(fit_values(FitFamily::Constant, &r, &[1.0, 2.0, 3.0]).unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn splits_bookkeeping() {
        let ids: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        let splits = make_splits(&ids, 10, 0.8, 1).unwrap();
        assert_eq!(splits.len(), 10);
        for s in &splits {
            assert_eq!((s.train_ids.len(), s.test_ids.len()), (8, 2));
            assert!(s.test_ids.iter().all(|t| !s.train_ids.contains(t)));
        }
        let distinct: BTreeSet<_> = splits.iter().map(|s| s.test_ids.clone()).collect();
        assert!(distinct.len() > 1);
        assert!(matches!(make_splits(&ids[..4], 1, 0.8, 0), Err(Error::TooFewInstances { .. })));
    }

    fn prof(inst: &str, sweeps: f64, est: &[f64]) -> PerformanceProfile {
        PerformanceProfile {
            instance_id: inst.into(),
            solver_id: "pt".into(),
            params: ParameterPoint::new("pt", [("sweeps", sweeps)]),
            points: est
                .iter()
                .enumerate()
                .map(|(g, &e)| ProfilePoint {
                    resource: 10f64.powi(g as i32),
                    estimate: e,
                    ci_low: e - 0.05,
                    ci_high: e + 0.05,
                    n_boot: 100,
                })
                .collect(),
        }
    }

    fn settings(meta_grid: Vec<MetaParams>) -> StrategySettings {
        StrategySettings {
            statistic: Statistic::Mean,
            bootstrap: BootstrapSettings { n_boot: 200, confidence: 0.95, seed: 3 },
            window: 1,
            fit: None,
            meta_grid,
            n_rep: 3,
            nominal: None,
        }
    }

    #[test]
    fn virtual_best_is_pointwise_max() {
        let curves = [[0.1, 0.5, 0.6], [0.3, 0.4, 0.7], [0.2, 0.5, 0.65]];
        let set =
            ProfileSet::new(curves.iter().enumerate().map(|(k, c)| prof("a", k as f64, c)).collect()).unwrap();
        let vb = &virtual_best(&set).unwrap()["a"];
        for g in 0..3 {
            let mut best = f64::NEG_INFINITY;
            for c in &curves {
                if c[g] > best {
                    best = c[g];
                }
            }
            assert_eq!(vb.profile.points[g].estimate, best);
        }
        // tie at g = 1 between sweeps 0 and 2 goes to the smaller vector
        let chosen: Vec<f64> = vb.curve.points.iter().map(|p| p.params.values["sweeps"]).collect();
        assert_eq!(chosen, vec![1.0, 0.0, 1.0]);
        assert_eq!(vb.curve.instance_id.as_deref(), Some("a"));

        let single = ProfileSet::new(vec![prof("a", 1.0, &curves[0])]).unwrap();
        assert_eq!(virtual_best(&single).unwrap()["a"].profile.points, single.by_instance["a"].values().next().unwrap().points);
    }

    #[test]
    fn fixed_modes() {
        let s = BootstrapSettings { n_boot: 200, ..Default::default() };
        let one = ProfileSet::new(vec![prof("a", 1.0, &[0.1, 0.2]), prof("a", 5.0, &[0.3, 0.1])]).unwrap();
        for mode in [FixedMode::ArgmaxOfAggregate, FixedMode::AverageOfArgmax] {
            let c = fixed_best(&one, mode, Statistic::Mean, &s).unwrap();
            let sweeps: Vec<f64> = c.points.iter().map(|p| p.params.values["sweeps"]).collect();
            assert_eq!(sweeps, vec![5.0, 1.0]);
            assert!(c.points.iter().all(|p| !p.needs_rerun));
        }

        let two = ProfileSet::new(vec![
            prof("a", 10.0, &[0.9]),
            prof("a", 1000.0, &[0.1]),
            prof("b", 10.0, &[0.2]),
            prof("b", 1000.0, &[0.8]),
        ])
        .unwrap();
        let avg = fixed_best(&two, FixedMode::AverageOfArgmax, Statistic::Mean, &s).unwrap();
        assert_eq!(avg.points[0].params.values["sweeps"], 505.0);
        assert!(avg.points[0].needs_rerun && avg.points[0].estimate.is_nan());
        let agg = fixed_best(&two, FixedMode::ArgmaxOfAggregate, Statistic::Mean, &s).unwrap();
        assert_eq!(agg.points[0].params.values["sweeps"], 10.0);
        assert!((agg.points[0].estimate - 0.55).abs() < 1e-12);
        // 505 is equidistant from both; the tie goes to the smaller point
        let applied = apply_curve(&avg, &two).unwrap();
        assert_eq!(applied[0].points[0].estimate, 0.9);
    }

    #[test]
    fn mock_evaluator_replay() {
        let pts: Vec<ParameterPoint> = (1..=6).map(|v| ParameterPoint::new("x", [("v", v as f64)])).collect();
        let space = DiscreteSpace::new(pts.clone(), None).unwrap();
        let meta = MetaParams::new(0.5, 60.0).unwrap();
        let mut calls = Vec::new();
        let mut rng = rng::substream(9, &[]);
        let o = explore_exploit(1000.0, &meta, &space, |p, r| {
            calls.push((p.values["v"], r));
            p.values["v"]
        }, &mut rng)
        .unwrap();

        // hand simulation: replay the sampler alone
        let mut replay = rng::substream(9, &[]);
        let drawn: Vec<f64> = (0..8).map(|_| space.sample_point(&mut replay).values["v"]).collect();
        let mut expected = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for (i, v) in drawn.iter().enumerate() {
            best = best.max(*v);
            expected.push(((i + 1) as f64 * 60.0, best));
        }
        expected.push((1000.0, best));
        assert_eq!(o.explored, 8);
        assert_eq!(o.exploit_budget, 520.0);
        assert_eq!(o.trajectory, expected);
        assert_eq!(o.chosen.values["v"], best);
        assert_eq!(calls.last(), Some(&(best, 520.0)));
        assert_eq!(calls.iter().map(|c| c.1).sum::<f64>(), 1000.0);
    }

    #[test]
    fn meta_sweep_matches_tabulation() {
        let pts = vec![ParameterPoint::new("x", [("v", 0.0)])];
        let space = DiscreteSpace::new(pts, None).unwrap();
        let score = |r: f64| r / (r + 50.0);
        let evals = [move |_: &ParameterPoint, r: f64| score(r)];
        let grid = MetaParams::grid(&[0.1, 0.5, 1.0], &[20.0, 100.0, 400.0]).unwrap();
        let budgets = [100.0, 400.0, 1000.0];
        let sweep = meta_sweep(&grid, &budgets, &space, &evals, 2, 0.95, 1).unwrap();
        for (b, &budget) in budgets.iter().enumerate() {
            let mut table: Vec<(f64, ParameterPoint)> = grid
                .iter()
                .map(|m| {
                    let k = (m.explore_frac * budget / m.tau + 1e-9).floor();
                    let v = if k == 0.0 { score(budget) } else { score(m.tau).max(score(budget - k * m.tau)) };
                    (v, m.to_point())
                })
                .collect();
            table.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            assert_eq!(sweep.best.points[b].params, table[0].1, "budget {budget}");
            assert!((sweep.best.points[b].estimate - table[0].0).abs() < 1e-12);
        }
        let single = meta_sweep(&grid[..1], &budgets, &space, &evals, 1, 0.95, 1).unwrap();
        assert!(single.best.points.iter().all(|p| p.params == grid[0].to_point()));
    }

    #[test]
    fn default_meta_grid_budget_identity() {
        let pts = vec![ParameterPoint::new("x", [("v", 1.0)])];
        let space = DiscreteSpace::new(pts, None).unwrap();
        let mut rng = rng::substream(0, &[]);
        let cim = MetaParams::cim_default_grid();
        let pt = MetaParams::pt_default_grid();
        assert_eq!((cim.len(), pt.len()), (99 * 20, 70));
        for meta in cim.iter().chain(&pt) {
            for budget in [1.0, 37.0, 500.0, 1234.0, 20000.0, 100000.0] {
                let o = explore_exploit(budget, meta, &space, |_, _| 0.0, &mut rng).unwrap();
                if o.degenerate {
                    assert_eq!(o.exploit_budget, budget);
                } else {
                    assert_eq!(o.explored as f64 * meta.tau + o.exploit_budget, budget);
                    assert_eq!(o.trajectory.last().unwrap().0, budget);
                }
            }
        }
    }

    #[test]
    fn smoothing_examples() {
        let curve = |vals: &[f64]| StrategyCurve {
            kind: StrategyKind::Fixed,
            points: vals
                .iter()
                .enumerate()
                .map(|(g, &v)| StrategyPoint {
                    resource: (g + 1) as f64,
                    params: ParameterPoint::new("pt", [("sweeps", v)]),
                    estimate: 0.5,
                    ci_low: 0.4,
                    ci_high: 0.6,
                    needs_rerun: false,
                })
                .collect(),
            actionable: false,
            instance_id: None,
        };
        let evaluated: Vec<_> = [1.0, 9.0, 3.0].iter().map(|&v| ParameterPoint::new("pt", [("sweeps", v)])).collect();
        let c = curve(&[1.0, 9.0, 3.0, 1.0]);
        let same = smooth_curve(&c, 1, None, &evaluated).unwrap();
        assert_eq!(same.points, c.points);
        assert!(same.actionable);
        let flat = curve(&[3.0; 4]);
        assert_eq!(smooth_curve(&flat, 5, None, &evaluated).unwrap().points, flat.points);
        let spiky = smooth_curve(&curve(&[1.0, 9.0, 1.0, 1.0, 1.0]), 3, None, &evaluated).unwrap();
        assert!(spiky.points.iter().all(|p| p.params.values["sweeps"] == 1.0));
        let fitted = smooth_curve(&c, 3, Some(FitFamily::Constant), &evaluated).unwrap();
        assert!(fitted.points.iter().all(|p| p.needs_rerun && p.estimate.is_nan()));
        assert!(smooth_curve(&c, 2, None, &evaluated).is_err());
    }

    fn synthetic_set(n_inst: usize, sentinel: Option<usize>) -> ProfileSet {
        let mut profiles = Vec::new();
        for i in 0..n_inst {
            for (k, sweeps) in [1.0, 10.0, 100.0].into_iter().enumerate() {
                let base = 0.1 * k as f64 + 0.02 * i as f64;
                let mut est = [base, base + 0.1, base + 0.2];
                if Some(i) == sentinel && k == 0 {
                    est = [0.99; 3];
                }
                profiles.push(prof(&format!("i{i:02}"), sweeps, &est));
            }
        }
        ProfileSet::new(profiles).unwrap()
    }

    #[test]
    fn cross_validation_respects_test_vb() {
        let set = synthetic_set(10, None);
        let s = settings(MetaParams::grid(&[0.2, 1.0], &[1.0, 10.0]).unwrap());
        let cv = cross_validate(&set, 3, 0.8, 5, &s).unwrap();
        for o in &cv.splits {
            assert_eq!((o.split.train_ids.len(), o.split.test_ids.len()), (8, 2));
            let vb = &o.test_profiles[&StrategyKind::VirtualBest];
            for kind in [StrategyKind::Fixed, StrategyKind::FixedAverage, StrategyKind::ExploreExploit] {
                for (p, v) in o.test_profiles[&kind].iter().zip(vb) {
                    assert_eq!(p.instance_id, v.instance_id);
                    assert!(p.points.iter().zip(&v.points).all(|(a, b)| a.estimate <= b.estimate), "{kind}");
                }
            }
        }
        assert_eq!(cv.profiles.len(), 4);
    }

    #[test]
    fn sentinel_cannot_leak_into_training() {
        // the sentinel makes sweeps=1 look perfect on one instance only
        let set = synthetic_set(10, Some(7));
        let s = settings(MetaParams::grid(&[1.0], &[1.0]).unwrap());
        let splits = make_splits(&set.instance_ids(), 10, 0.8, 2).unwrap();
        let mut tested = 0;
        for split in splits.iter().filter(|sp| sp.test_ids.contains(&"i07".to_string())) {
            let o = run_split(&set, split, &s).unwrap();
            tested += 1;
            for p in &o.trained.fixed.points {
                assert_eq!(p.params.values["sweeps"], 100.0);
            }
        }
        assert!(tested > 0);
        // with the sentinel poisoning training, the mean picks it up
        let poisoned = synthetic_set(5, Some(0)).subset(&["i00".into()]).unwrap();
        let c = fixed_best(&poisoned, FixedMode::ArgmaxOfAggregate, Statistic::Mean, &s.bootstrap).unwrap();
        assert_eq!(c.points[0].params.values["sweeps"], 1.0);
    }

    #[test]
    fn full_train_split_equals_direct_pipeline() {
        let set = synthetic_set(6, None);
        let s = settings(MetaParams::grid(&[0.5], &[1.0, 10.0]).unwrap());
        let cv = cross_validate(&set, 1, 1.0, 11, &s).unwrap();
        let trained = train_strategies(&set, &s).unwrap();
        let direct = evaluate_on(&trained, &set, &s, cv.splits[0].split.seed).unwrap();
        assert_eq!(cv.splits[0].trained, trained);
        assert_eq!(cv.splits[0].test_profiles, direct);
        let pooled = pool_splits(&[&direct], s.statistic, &s.bootstrap).unwrap();
        assert_eq!(cv.profiles, pooled);
    }
}

