//! Parallel tempering (replica-exchange Metropolis).
//!
//! Temperature bounds are given indirectly through two probabilities:
//! `p_cold`, the probability of the least likely spin flip at `T_min`, and
//! `p_hot`, the probability of the most likely flip at `T_max`.

use log::warn;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{IsingInstance, SampleRecord, SampleSet, SpinConfig};
use crate::params::ParameterPoint;
use crate::rng;

pub const SOLVER_ID: &str = "pt";
pub const PARAM_NAMES: [&str; 4] = ["n_replicas", "p_cold", "p_hot", "sweeps"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtParams {
    pub n_replicas: usize,
    pub sweeps: usize,
    pub p_cold: f64,
    pub p_hot: f64,
}

impl PtParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicas < 1 || self.sweeps < 1 {
            return Err(Error::InvalidParameter("n_replicas and sweeps must be >= 1".into()));
        }
        if !(self.p_cold > 0.0) || !(self.p_hot > 0.0 && self.p_hot < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need p_cold > 0 and 0 < p_hot < 1, got p_cold={} p_hot={}",
                self.p_cold, self.p_hot
            )));
        }
        Ok(())
    }

    /// Read a parameter point; integer parameters are rounded and the
    /// probabilities are clamped into their admissible open intervals for
    /// this instance.
    pub fn from_point(point: &ParameterPoint, instance: &IsingInstance) -> Result<Self> {
        let gaps = EnergyGaps::of(instance)?;
        let round = |v: f64| v.round().max(1.0) as usize;
        Ok(Self {
            n_replicas: round(point.require("n_replicas")?),
            sweeps: round(point.require("sweeps")?),
            p_cold: point.require("p_cold")?.clamp(1e-6, gaps.n_min_gap as f64 * (1.0 - 1e-6)),
            p_hot: point.require("p_hot")?.clamp(1e-6, 1.0 - 1e-6),
        })
    }
}

/// Coupling-derived energy scales entering the temperature bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyGaps {
    pub de_cold: f64,
    pub n_min_gap: usize,
    pub de_hot: f64,
}

impl EnergyGaps {
    pub fn of(instance: &IsingInstance) -> Result<Self> {
        let per_spin: Vec<f64> = (0..instance.n())
            .filter_map(|i| {
                instance.neighbors(i).iter().map(|&(_, w)| 2.0 * w.abs()).reduce(f64::min)
            })
            .collect();
        let de_cold = per_spin.iter().copied().reduce(f64::min).ok_or(Error::NoCoupling)?;
        let n_min_gap = per_spin.iter().filter(|&&d| d == de_cold).count();
        let de_hot = (0..instance.n())
            .map(|i| 2.0 * instance.neighbors(i).iter().map(|&(_, w)| w.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(Self { de_cold, n_min_gap, de_hot })
    }
}

/// `(T_min, T_max)` from `p_cold = N exp(-dE_cold / T_min)` and
/// `p_hot = exp(-dE_hot / T_max)`.
pub fn derive_temperatures(instance: &IsingInstance, p_cold: f64, p_hot: f64) -> Result<(f64, f64)> {
    let gaps = EnergyGaps::of(instance)?;
    let n = gaps.n_min_gap as f64;
    if !(p_cold > 0.0 && p_cold < n) {
        return Err(Error::InvalidParameter(format!("p_cold must lie in (0, {n}), got {p_cold}")));
    }
    if !(p_hot > 0.0 && p_hot < 1.0) {
        return Err(Error::InvalidParameter(format!("p_hot must lie in (0, 1), got {p_hot}")));
    }
    let t_min = gaps.de_cold / (n / p_cold).ln();
    let t_max = gaps.de_hot / (1.0 / p_hot).ln();
    if t_max < t_min {
        warn!("T_max = {t_max} < T_min = {t_min}; swapping bounds");
        return Ok((t_max, t_min));
    }
    Ok((t_min, t_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureLadder {
    pub temperatures: Vec<f64>,
}

/// Geometric ladder `T_k = T_min (T_max / T_min)^(k / (n - 1))`.
pub fn temperature_ladder(t_min: f64, t_max: f64, n_replicas: usize) -> Result<TemperatureLadder> {
    if !(t_min > 0.0 && t_max >= t_min && t_max.is_finite()) {
        return Err(Error::InvalidParameter(format!("bad temperature range [{t_min}, {t_max}]")));
    }
    if n_replicas == 0 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    if n_replicas == 1 {
        return Ok(TemperatureLadder { temperatures: vec![t_min] });
    }
    let ratio = t_max / t_min;
    let last = (n_replicas - 1) as f64;
    let mut temperatures: Vec<f64> = (0..n_replicas).map(|k| t_min * ratio.powf(k as f64 / last)).collect();
    temperatures[n_replicas - 1] = t_max;
    Ok(TemperatureLadder { temperatures })
}

/// One sequential Metropolis pass over all spins at temperature `t`.
/// Returns the updated energy.
pub fn metropolis_sweep<R: Rng + ?Sized>(
    instance: &IsingInstance,
    config: &mut SpinConfig,
    mut energy: f64,
    t: f64,
    rng: &mut R,
) -> f64 {
    for i in 0..instance.n() {
        let delta = instance.delta_unchecked(config, i);
        if delta <= 0.0 || rng.random::<f64>() < (-delta / t).exp() {
            config.flip(i);
            energy += delta;
        }
    }
    energy
}

/// `min(1, exp((1/T_a - 1/T_b)(E_a - E_b)))`.
pub fn swap_probability(t_a: f64, e_a: f64, t_b: f64, e_b: f64) -> f64 {
    ((1.0 / t_a - 1.0 / t_b) * (e_a - e_b)).exp().min(1.0)
}

/// Metropolis decision for exchanging configurations between two slots.
pub fn replica_swap<R: Rng + ?Sized>(a: (f64, f64), b: (f64, f64), rng: &mut R) -> bool {
    let p = swap_probability(a.0, a.1, b.0, b.1);
    p >= 1.0 || rng.random::<f64>() < p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotResult {
    pub energy: f64,
    pub first_hit: u64,
}

/// A single PT execution; returns the best configuration seen in any replica.
pub fn run_shot<R: Rng + ?Sized>(
    instance: &IsingInstance,
    ladder: &TemperatureLadder,
    sweeps: usize,
    rng: &mut R,
) -> (SpinConfig, ShotResult) {
    let n = instance.n();
    let temps = &ladder.temperatures;
    let mut replicas: Vec<(SpinConfig, f64)> = temps
        .iter()
        .map(|_| {
            let c = SpinConfig::new((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
                .expect("±1 spins");
            let e = instance.energy_unchecked(&c);
            (c, e)
        })
        .collect();

    let (mut best_config, mut best) = replicas
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, e)| (c.clone(), ShotResult { energy: *e, first_hit: 0 }))
        .expect("at least one replica");

    for round in 1..=sweeps {
        for ((config, energy), &t) in replicas.iter_mut().zip(temps) {
            *energy = metropolis_sweep(instance, config, *energy, t, rng);
        }
        let mut k = (round - 1) % 2;
        while k + 1 < replicas.len() {
            if replica_swap((temps[k], replicas[k].1), (temps[k + 1], replicas[k + 1].1), rng) {
                replicas.swap(k, k + 1);
            }
            k += 2;
        }
        for (config, energy) in &replicas {
            if *energy < best.energy {
                best = ShotResult { energy: *energy, first_hit: round as u64 };
                best_config = config.clone();
            }
        }
    }
    (best_config, best)
}

/// Run `shots` independent PT executions; shot `k` draws from substream `(seed, k)`.
pub fn run_pt(
    instance_id: &str,
    instance: &IsingInstance,
    params: &PtParams,
    shots: usize,
    seed: u64,
) -> Result<SampleSet> {
    params.validate()?;
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be >= 1".into()));
    }
    let (t_min, t_max) = derive_temperatures(instance, params.p_cold, params.p_hot)?;
    let ladder = temperature_ladder(t_min, t_max, params.n_replicas)?;
    let cost = (params.n_replicas * params.sweeps) as f64;
    let records = (0..shots)
        .into_par_iter()
        .map(|k| {
            let shot_seed = rng::derive(seed, &[rng::tag(SOLVER_ID), k as u64]);
            let mut rng = rng::substream(shot_seed, &[]);
            let (config, res) = run_shot(instance, &ladder, params.sweeps, &mut rng);
            SampleRecord {
                energy: res.energy,
                config: Some(config),
                resource_cost: cost,
                shot_seed,
                first_hit: res.first_hit,
                diverged: false,
            }
        })
        .collect();
    SampleSet::new(instance_id, SOLVER_ID, params.to_point(), records)
}

impl PtParams {
    pub fn to_point(&self) -> ParameterPoint {
        ParameterPoint::new(
            SOLVER_ID,
            [
                ("n_replicas", self.n_replicas as f64),
                ("sweeps", self.sweeps as f64),
                ("p_cold", self.p_cold),
                ("p_hot", self.p_hot),
            ],
        )
    }
}
