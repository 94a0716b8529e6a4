//! Wishart planted-ensemble instance generation and instance files.
//!
//! Each instance plants a random `±1` vector `s*` in the nullspace of a
//! Gaussian matrix `W` with `round(alpha * n)` rows. The couplings are the
//! off-diagonal part of `W'W / n`, so `s'Js = |Ws|^2 / n - const` and the
//! planted state attains the minimum `|Ws*|^2 = 0`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{IsingInstance, SpinConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct WishartSpec {
    pub n: usize,
    /// Hardness ratio rows/columns.
    pub alpha: f64,
    pub seed: u64,
    pub count: usize,
}

impl WishartSpec {
    /// Number of rows of `W`, rounded half away from zero.
    pub fn rows(&self) -> usize {
        (self.alpha * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!("need n >= 2, got {}", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidSpec(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.rows() < 1 {
            return Err(Error::InvalidSpec(format!(
                "round(alpha * n) = round({} * {}) is zero",
                self.alpha, self.n
            )));
        }
        Ok(())
    }
}

/// A generated instance together with the matrix it was planted from.
#[derive(Debug, Clone)]
pub struct PlantedWishart {
    pub instance: IsingInstance,
    /// Row-major `rows x n` matrix with `W s* = 0`.
    pub w: Vec<Vec<f64>>,
}

impl PlantedWishart {
    /// `max_r |(W s*)_r|`.
    pub fn residual_norm(&self) -> f64 {
        let s = self.instance.planted_state().expect("planted");
        self.w
            .iter()
            .map(|row| row.iter().enumerate().map(|(i, w)| w * s.get(i)).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// `max_{r,i} |W_ri|`.
    pub fn max_norm(&self) -> f64 {
        self.w.iter().flatten().fold(0.0_f64, |m, w| m.max(w.abs()))
    }
}

/// Generate one planted instance from its own substream.
pub fn generate_one(spec: &WishartSpec, index: usize) -> Result<PlantedWishart> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = rng::substream(spec.seed, &[rng::tag("wishart"), index as u64]);

    // Gauge: random sign mask applied to the all-up vector.
    let planted = SpinConfig::new((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())?;

    let w: Vec<Vec<f64>> = (0..spec.rows())
        .map(|_| {
            let mut row: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let proj = row.iter().enumerate().map(|(i, v)| v * planted.get(i)).sum::<f64>() / n as f64;
            for (i, v) in row.iter_mut().enumerate() {
                *v -= proj * planted.get(i);
            }
            row
        })
        .collect();

    let scale = 1.0 / n as f64;
    let mut couplings = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            let jab: f64 = w.iter().map(|row| row[a] * row[b]).sum::<f64>() * scale;
            couplings.push((a, b, jab));
        }
    }
    let instance = IsingInstance::from_couplings(n, couplings)?
        .with_planted(planted)?
        .with_meta("generator", "wishart")
        .with_meta("wishart_alpha", format!("{:?}", spec.alpha))
        .with_meta("seed", spec.seed.to_string())
        .with_meta("index", index.to_string());
    Ok(PlantedWishart { instance, w })
}

/// Generate `spec.count` instances, ordered by index.
pub fn generate_wishart(spec: &WishartSpec) -> Result<Vec<IsingInstance>> {
    spec.validate()?;
    (0..spec.count)
        .into_par_iter()
        .map(|k| generate_one(spec, k).map(|p| p.instance))
        .collect()
}

/// Atomically write an instance file (temp file, then rename).
pub fn write_instance(instance: &IsingInstance, path: &Path) -> Result<()> {
    write_atomic(path, instance.to_text().as_bytes())
}

pub fn read_instance(path: &Path) -> Result<IsingInstance> {
    IsingInstance::from_text(&fs::read_to_string(path)?)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Exhaustive minimum energy over all `2^n` configurations.
pub fn brute_force_minimum(instance: &IsingInstance) -> f64 {
    let n = instance.n();
    assert!(n <= 24, "exhaustive search limited to 24 spins");
    // Fix the last spin to +1; the objective is invariant under global flip.
    (0..1u64 << (n - 1))
        .into_par_iter()
        .map(|bits| instance.energy_unchecked(&SpinConfig::from_bits(n, bits)))
        .reduce(|| f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_vanishes() {
        let spec = WishartSpec { n: 4, alpha: 0.5, seed: 1, count: 1 };
        assert_eq!(spec.rows(), 2);
        let p = generate_one(&spec, 0).unwrap();
        assert_eq!(p.w.len(), 2);
        assert!(p.residual_norm() <= 1e-9);
    }

    #[test]
    fn degenerate_ratio_rejected() {
        let spec = WishartSpec { n: 4, alpha: 0.1, seed: 1, count: 1 };
        assert!(matches!(generate_wishart(&spec), Err(Error::InvalidSpec(_))));
        // 0.125 * 4 = 0.5 rounds away from zero to one row
        assert_eq!(WishartSpec { n: 4, alpha: 0.125, seed: 0, count: 1 }.rows(), 1);
    }

    #[test]
    fn couplings_equal_gram_off_diagonal() {
        let spec = WishartSpec { n: 6, alpha: 0.5, seed: 3, count: 1 };
        let p = generate_one(&spec, 0).unwrap();
        for a in 0..6 {
            assert_eq!(p.instance.coupling(a, a), 0.0);
            for b in 0..6 {
                assert_eq!(p.instance.coupling(a, b), p.instance.coupling(b, a));
                if a != b {
                    let g: f64 = p.w.iter().map(|r| r[a] * r[b]).sum::<f64>() / 6.0;
                    assert!((p.instance.coupling(a, b) - g).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gauge_flip_preserves_planted_energy() {
        let spec = WishartSpec { n: 8, alpha: 0.5, seed: 9, count: 1 };
        let inst = generate_one(&spec, 0).unwrap().instance;
        let s = inst.planted_state().unwrap().clone();
        let mask: Vec<f64> = (0..8).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let flipped = IsingInstance::from_couplings(8, inst.couplings().map(|(a, b, w)| (a, b, w * mask[a] * mask[b])))
            .unwrap();
        let fs = SpinConfig::new((0..8).map(|i| (s.get(i) * mask[i]) as i8).collect()).unwrap();
        assert_eq!(flipped.energy(&fs).unwrap(), inst.energy(&s).unwrap());
    }

    #[test]
    fn generation_is_deterministic_and_indexed() {
        let spec = WishartSpec { n: 10, alpha: 0.5, seed: 5, count: 3 };
        let a = generate_wishart(&spec).unwrap();
        let b = generate_wishart(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1], generate_one(&spec, 1).unwrap().instance);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = WishartSpec { n: 12, alpha: 0.75, seed: 2, count: 2 };
        for inst in generate_wishart(&spec).unwrap() {
            let path = dir.path().join("x.ising");
            write_instance(&inst, &path).unwrap();
            let back = read_instance(&path).unwrap();
            assert_eq!(back, inst);
            assert_eq!(back.ground_energy(), inst.energy(inst.planted_state().unwrap()).ok());
        }
    }

    #[test]
    fn planted_state_is_never_beaten() {
        let spec = WishartSpec { n: 10, alpha: 0.3, seed: 4, count: 5 };
        for inst in generate_wishart(&spec).unwrap() {
            let bf = brute_force_minimum(&inst);
            let g = inst.ground_energy().unwrap();
            assert!(bf <= g);
            assert!(g - bf <= 1e-9 * g.abs());
        }
    }
}
