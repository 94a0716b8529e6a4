//! Chaotic-amplitude-control coherent Ising machine (CIM-CAC) simulator.
//!
//! Amplitudes `x_i` and error variables `e_i` follow
//!
//! ```text
//! dx_i/dt = (R - 1) x_i - mu x_i^3 - beta e_i sum_j J_ij x_j
//! de_i/dt = -xi (x_i^2 - a) e_i
//! a       = alpha + rho tanh(delta dH)
//! xi      = max(0, gamma (t - t_c))
//! ```
//!
//! integrated with explicit Euler-Maruyama steps. The coupling term carries a
//! minus sign because instances store a minimization objective `s'Js`; the
//! usual CIM form `+beta e_i sum_j J_ij x_j` is written for the maximization
//! convention. `dH` is the energy of the current sign projection minus the
//! best energy found so far.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{IsingInstance, SampleRecord, SampleSet, SpinConfig};
use crate::params::ParameterPoint;
use crate::rng;

pub const SOLVER_ID: &str = "cim-cac";
pub const PARAM_NAMES: [&str; 4] = ["alpha", "beta", "gamma", "pump"];

/// Amplitude beyond which a trajectory counts as diverged.
pub const DIVERGENCE_BOUND: f64 = 10.0;
pub const MAX_RESTARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CimParams {
    /// Target amplitude baseline.
    pub alpha: f64,
    /// Coupling strength.
    pub beta: f64,
    /// Ramp rate of `xi`.
    pub gamma: f64,
    /// Pump `R`.
    pub pump: f64,
}

impl Default for CimParams {
    fn default() -> Self {
        Self { alpha: 0.25, beta: 0.002, gamma: 0.08, pump: -10.0 }
    }
}

impl CimParams {
    pub fn validate(&self) -> Result<()> {
        if ![self.alpha, self.beta, self.gamma, self.pump].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite CIM parameter in {self:?}")));
        }
        if self.gamma < 0.0 {
            warn!("negative gamma {} keeps the error-variable ramp switched off", self.gamma);
        }
        Ok(())
    }

    pub fn from_point(point: &ParameterPoint) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            alpha: point.get("alpha").unwrap_or(d.alpha),
            beta: point.get("beta").unwrap_or(d.beta),
            gamma: point.get("gamma").unwrap_or(d.gamma),
            pump: point.get("pump").unwrap_or(d.pump),
        })
    }

    pub fn to_point(&self) -> ParameterPoint {
        ParameterPoint::new(
            SOLVER_ID,
            [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("pump", self.pump)],
        )
    }
}

/// Integration constants that are not tuned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CimFixedParams {
    pub dt: f64,
    pub mu: f64,
    pub rho: f64,
    pub delta: f64,
    pub noise: f64,
    /// Integration steps per shot.
    pub steps: u64,
    /// Onset time of the `xi` ramp.
    pub t_c: f64,
}

impl Default for CimFixedParams {
    fn default() -> Self {
        Self { dt: 0.00625, mu: 0.5, rho: 5.0, delta: 10.0, noise: 0.5, steps: 5000, t_c: 0.0 }
    }
}

impl CimFixedParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.steps < 1 || !(self.noise >= 0.0) {
            return Err(Error::InvalidParameter(format!("bad fixed CIM parameters {self:?}")));
        }
        Ok(())
    }

    /// Override a field by name; returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: f64) -> bool {
        match key {
            "dt" | "time_step" => self.dt = value,
            "mu" => self.mu = value,
            "rho" => self.rho = value,
            "delta" => self.delta = value,
            "noise" => self.noise = value,
            "steps" | "T" => self.steps = value.round().max(0.0) as u64,
            "t_c" => self.t_c = value,
            _ => return false,
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CimState {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub t: f64,
    pub step: u64,
    /// Energy of `sign(x)`.
    pub current_energy: f64,
    pub best_energy: f64,
    pub best_config: SpinConfig,
    pub best_step: u64,
}

impl CimState {
    pub fn new(instance: &IsingInstance, x: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        if x.len() != instance.n() || e.len() != instance.n() {
            return Err(Error::Dimension { expected: instance.n(), got: x.len().min(e.len()) });
        }
        let config = SpinConfig::from_signs(&x);
        let energy = instance.energy_unchecked(&config);
        Ok(Self {
            x,
            e,
            t: 0.0,
            step: 0,
            current_energy: energy,
            best_energy: energy,
            best_config: config,
            best_step: 0,
        })
    }
}

/// Squared target amplitude `alpha + rho tanh(delta dH)`.
pub fn modulate_target(alpha: f64, rho: f64, delta: f64, dh: f64) -> f64 {
    alpha + rho * (delta * dh).tanh()
}

/// One Euler-Maruyama step of size `dt`.
pub fn cac_step<R: Rng + ?Sized>(
    state: &mut CimState,
    instance: &IsingInstance,
    params: &CimParams,
    fixed: &CimFixedParams,
    rng: &mut R,
) -> Result<()> {
    let n = instance.n();
    if state.x.len() != n || state.e.len() != n {
        return Err(Error::Dimension { expected: n, got: state.x.len() });
    }
    let dt = fixed.dt;
    let a = modulate_target(params.alpha, fixed.rho, fixed.delta, state.current_energy - state.best_energy);
    let xi = (params.gamma * (state.t - fixed.t_c)).max(0.0);
    let kick = fixed.noise * dt.sqrt();

    let old = state.x.clone();
    for i in 0..n {
        let xi_old = old[i];
        let field = instance.local_field_continuous(&old, i);
        let drift = (params.pump - 1.0) * xi_old - fixed.mu * xi_old.powi(3) - params.beta * state.e[i] * field;
        let noise = if kick > 0.0 { kick * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        state.x[i] = xi_old + dt * drift + noise;
        state.e[i] += dt * (-xi * (xi_old * xi_old - a) * state.e[i]);
    }
    state.t += dt;
    state.step += 1;

    if state.x.iter().chain(&state.e).any(|v| !v.is_finite()) || state.x.iter().any(|v| v.abs() > DIVERGENCE_BOUND) {
        return Err(Error::Diverged { step: state.step });
    }

    let config = SpinConfig::from_signs(&state.x);
    state.current_energy = instance.energy_unchecked(&config);
    if state.current_energy < state.best_energy {
        state.best_energy = state.current_energy;
        state.best_config = config;
        state.best_step = state.step;
    }
    Ok(())
}

fn initial_state<R: Rng + ?Sized>(instance: &IsingInstance, fixed: &CimFixedParams, rng: &mut R) -> CimState {
    let n = instance.n();
    let x = (0..n).map(|_| 0.1 * fixed.noise * rng.random_range(-1.0..1.0)).collect();
    CimState::new(instance, x, vec![1.0; n]).expect("dimensions match")
}

/// Integrate one shot, restarting from fresh substreams on divergence.
pub fn run_shot(
    instance: &IsingInstance,
    params: &CimParams,
    fixed: &CimFixedParams,
    shot_seed: u64,
) -> (CimState, bool) {
    let mut last = None;
    for attempt in 0..=MAX_RESTARTS {
        let mut rng = rng::substream(shot_seed, &[attempt as u64]);
        let mut state = initial_state(instance, fixed, &mut rng);
        let mut ok = true;
        for _ in 0..fixed.steps {
            if cac_step(&mut state, instance, params, fixed, &mut rng).is_err() {
                ok = false;
                break;
            }
        }
        if ok {
            return (state, false);
        }
        last = Some(state);
    }
    (last.expect("at least one attempt"), true)
}

pub fn run_cim(
    instance_id: &str,
    instance: &IsingInstance,
    params: &CimParams,
    fixed: &CimFixedParams,
    shots: usize,
    seed: u64,
) -> Result<SampleSet> {
    params.validate()?;
    fixed.validate()?;
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be >= 1".into()));
    }
    let records = (0..shots)
        .into_par_iter()
        .map(|k| {
            let shot_seed = rng::derive(seed, &[rng::tag(SOLVER_ID), k as u64]);
            let (state, diverged) = run_shot(instance, params, fixed, shot_seed);
            SampleRecord {
                energy: state.best_energy,
                config: Some(state.best_config),
                resource_cost: fixed.steps as f64,
                shot_seed,
                first_hit: state.best_step,
                diverged,
            }
        })
        .collect();
    SampleSet::new(instance_id, SOLVER_ID, params.to_point(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ferro_pair() -> IsingInstance {
        IsingInstance::from_couplings(2, [(0, 1, -1.0)]).unwrap()
    }

    #[test]
    fn target_modulation() {
        assert_eq!(modulate_target(0.25, 5.0, 10.0, 0.0), 0.25);
        assert!((modulate_target(0.25, 5.0, 10.0, -1e6) - (0.25 - 5.0)).abs() < 1e-12);
        let v = modulate_target(0.25, 5.0, 10.0, 0.05);
        assert!((v - (0.25 + 5.0 * 0.5f64.tanh())).abs() < 1e-15);
        assert!((v - 2.56059).abs() < 1e-5);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let inst = ferro_pair();
        let fixed = CimFixedParams { noise: 0.0, ..Default::default() };
        let params = CimParams { beta: 0.7, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = CimState::new(&inst, vec![0.0; 2], vec![3.0, -2.0]).unwrap();
        for _ in 0..500 {
            cac_step(&mut s, &inst, &params, &fixed, &mut rng).unwrap();
        }
        assert_eq!(s.x, vec![0.0, 0.0]);
    }

    #[test]
    fn error_variables_frozen_before_ramp() {
        let inst = ferro_pair();
        let fixed = CimFixedParams { noise: 0.0, t_c: 1.0, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = CimState::new(&inst, vec![0.3, -0.2], vec![1.5, 0.5]).unwrap();
        cac_step(&mut s, &inst, &CimParams::default(), &fixed, &mut rng).unwrap();
        assert_eq!(s.e, vec![1.5, 0.5]);
    }

    #[test]
    fn single_step_matches_scalar_recomputation() {
        let inst = ferro_pair();
        let fixed = CimFixedParams { noise: 0.0, ..Default::default() };
        let p = CimParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        // t = 0 with t_c = 0 gives xi = 0 for the first step, so start later.
        let mut s = CimState::new(&inst, vec![0.1, -0.1], vec![1.0, 1.0]).unwrap();
        s.t = 2.0;
        cac_step(&mut s, &inst, &p, &fixed, &mut rng).unwrap();

        let dt = 0.00625;
        let (x0, x1) = (0.1_f64, -0.1_f64);
        // sign(x) = (+,-) has energy 2 * J_01 * (+1)(-1) = +2, also the best so far
        let a = 0.25 + 5.0 * (10.0_f64 * 0.0).tanh();
        let xi = 0.08 * 2.0;
        let h0 = -x1;
        let h1 = -x0;
        let nx0 = x0 + dt * ((-10.0 - 1.0) * x0 - 0.5 * x0 * x0 * x0 - 0.002 * 1.0 * h0);
        let nx1 = x1 + dt * ((-10.0 - 1.0) * x1 - 0.5 * x1 * x1 * x1 - 0.002 * 1.0 * h1);
        let ne0 = 1.0 + dt * (-xi * (x0 * x0 - a) * 1.0);
        let ne1 = 1.0 + dt * (-xi * (x1 * x1 - a) * 1.0);
        assert!((s.x[0] - nx0).abs() < 1e-12);
        assert!((s.x[1] - nx1).abs() < 1e-12);
        assert!((s.e[0] - ne0).abs() < 1e-12);
        assert!((s.e[1] - ne1).abs() < 1e-12);
        assert!((s.t - 2.00625).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_signalled() {
        let inst = ferro_pair();
        let fixed = CimFixedParams { noise: 0.0, ..Default::default() };
        let params = CimParams { pump: 2000.0, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = CimState::new(&inst, vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let err = (0..100).find_map(|_| cac_step(&mut s, &inst, &params, &fixed, &mut rng).err());
        assert!(matches!(err, Some(Error::Diverged { .. })));

        let set = run_cim("p", &inst, &params, &CimFixedParams { steps: 200, ..Default::default() }, 2, 1).unwrap();
        assert!(set.records.iter().all(|r| r.diverged && r.energy.is_finite()));
    }

    #[test]
    fn ferro_pair_nominal_run() {
        let inst = ferro_pair();
        let fixed = CimFixedParams::default();
        let set = run_cim("pair", &inst, &CimParams::default(), &fixed, 5, 4).unwrap();
        assert_eq!(set.records.len(), 5);
        assert_eq!(set.total_resource, 5.0 * 5000.0);
        assert!(set.records.iter().all(|r| r.energy == -2.0 && !r.diverged));
        let again = run_cim("pair", &inst, &CimParams::default(), &fixed, 5, 4).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn sign_projection_ties_go_up() {
        assert_eq!(SpinConfig::from_signs(&[0.0, -0.0, -1e-300, 2.0]).to_string(), "++-+");
    }
}
