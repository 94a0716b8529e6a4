//! Cross-checks of solver and statistics kernels against independent oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stochbench::model::{IsingInstance, SampleRecord, SampleSet, SpinConfig};
use stochbench::params::ParameterPoint;
use stochbench::profiles::{bootstrap_profile_with, BootstrapSettings, ResourceGrid};
use stochbench::pt::{derive_temperatures, metropolis_sweep, EnergyGaps};

fn pool(scores: &[f64]) -> SampleSet {
    let records = scores
        .iter()
        .enumerate()
        .map(|(k, &s)| SampleRecord {
            energy: -s,
            config: None,
            resource_cost: 1.0,
            shot_seed: k as u64,
            first_hit: 0,
            diverged: false,
        })
        .collect();
    SampleSet::new("i", "pt", ParameterPoint::new("pt", [("sweeps", 1.0)]), records).unwrap()
}

/// E[max of k draws with replacement], by enumerating all |pool|^k tuples.
fn enumerate_expected_max(scores: &[f64], k: usize) -> f64 {
    let m = scores.len();
    let total = m.pow(k as u32);
    let mut sum = 0.0;
    for code in 0..total {
        let mut c = code;
        let mut best = f64::NEG_INFINITY;
        for _ in 0..k {
            best = best.max(scores[c % m]);
            c /= m;
        }
        sum += best;
    }
    sum / total as f64
}

#[test]
fn bootstrap_matches_enumeration() {
    let pools: [&[f64]; 4] = [&[0.2, 0.5, 1.0], &[0.0, 1.0], &[0.1, 0.3, 0.35, 0.9], &[0.7]];
    for (i, scores) in pools.iter().enumerate() {
        // budgets beyond the pool's total resource are rejected
        let grid = ResourceGrid::new((1..=scores.len().min(3)).map(|k| k as f64).collect()).unwrap();
        let s = BootstrapSettings { n_boot: 20_000, confidence: 0.95, seed: i as u64 };
        let prof = bootstrap_profile_with(&pool(scores), &grid, &s, -1.0, 0.0).unwrap();
        for (g, pt) in prof.points.iter().enumerate() {
            let want = enumerate_expected_max(scores, g + 1);
            assert!((pt.estimate - want).abs() < 0.01, "pool {scores:?} k={} {} vs {want}", g + 1, pt.estimate);
        }
    }
    assert!((enumerate_expected_max(&[0.2, 0.5, 1.0], 1) - 0.56667).abs() < 1e-5);
    assert!((enumerate_expected_max(&[0.2, 0.5, 1.0], 2) - 0.74444).abs() < 1e-5);
}

#[test]
fn metropolis_samples_boltzmann_on_four_spins() {
    let inst = IsingInstance::from_couplings(4, [(0, 1, 0.5), (1, 2, -1.0), (2, 3, 0.7), (0, 3, -0.3), (0, 2, 0.2)])
        .unwrap();
    let t = 1.5;
    let states: Vec<SpinConfig> = (0..16u64).map(|b| SpinConfig::from_bits(4, b)).collect();
    let weights: Vec<f64> = states.iter().map(|s| (-inst.energy(s).unwrap() / t).exp()).collect();
    let z: f64 = weights.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut config = SpinConfig::all_up(4);
    let mut energy = inst.energy(&config).unwrap();
    let mut counts = [0usize; 16];
    let sweeps = 100_000;
    for _ in 0..sweeps {
        energy = metropolis_sweep(&inst, &mut config, energy, t, &mut rng);
        let bits = (0..4).fold(0usize, |acc, i| acc | (usize::from(config.get(i) < 0.0) << i));
        counts[bits] += 1;
    }
    assert!((energy - inst.energy(&config).unwrap()).abs() < 1e-9);
    let tv: f64 =
        0.5 * counts.iter().zip(&weights).map(|(&c, w)| (c as f64 / sweeps as f64 - w / z).abs()).sum::<f64>();
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn temperatures_invert_acceptance_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.random_range(3..10);
        let couplings: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, (rng.random_range(-4i32..=4)) as f64 / 2.0))
            .collect();
        let Ok(inst) = IsingInstance::from_couplings(n, couplings) else { continue };
        let Ok(gaps) = EnergyGaps::of(&inst) else { continue };
        let p_cold = 0.3 * gaps.n_min_gap as f64;
        let (t_min, t_max) = derive_temperatures(&inst, p_cold, 0.4).unwrap();
        assert!(t_min <= t_max);
        // inverted bounds come back swapped
        let ok = [(t_min, t_max), (t_max, t_min)].iter().any(|&(cold, hot)| {
            let back = gaps.n_min_gap as f64 * (-gaps.de_cold / cold).exp();
            (back - p_cold).abs() < 1e-10 && ((-gaps.de_hot / hot).exp() - 0.4).abs() < 1e-10
        });
        assert!(ok, "{t_min} {t_max}");
    }
}
