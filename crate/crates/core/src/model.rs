//! Ising problem representation shared by every solver.
//!
//! The objective is `s'Js` over spins `s_i in {-1, +1}` with a symmetric,
//! zero-diagonal coupling matrix. Both `(i, j)` and `(j, i)` terms are
//! counted, so each coupled pair contributes `2 J_ij s_i s_j`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterPoint;

/// A configuration of `±1` spins.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidInstance(format!("spin value {bad} is not ±1")));
        }
        Ok(Self(spins))
    }

    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    /// Sign projection of continuous amplitudes; `x_i = 0` maps to `+1`.
    pub fn from_signs(x: &[f64]) -> Self {
        Self(x.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect())
    }

    /// Configuration whose bits are taken from `bits` (bit `i` set means `-1`).
    pub fn from_bits(n: usize, bits: u64) -> Self {
        Self((0..n).map(|i| if bits >> i & 1 == 1 { -1 } else { 1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        f64::from(self.0[i])
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    /// Global spin flip.
    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(if s > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl FromStr for SpinConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::InvalidInstance(format!("bad spin character `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl From<SpinConfig> for String {
    fn from(c: SpinConfig) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for SpinConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Zero-field Ising instance with symmetric sparse couplings.
///
/// Adjacency lists hold both triangle halves, sorted by neighbour index, so
/// energy sums are evaluated in a canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingInstance {
    n: usize,
    adjacency: Vec<Vec<(usize, f64)>>,
    planted_state: Option<SpinConfig>,
    ground_energy: Option<f64>,
    meta: BTreeMap<String, String>,
}

impl IsingInstance {
    /// Build an instance from coupling triples `(i, j, J_ij)`, each unordered
    /// pair given at most once. Zero couplings are dropped.
    pub fn from_couplings<I>(n: usize, couplings: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if n < 2 {
            return Err(Error::InvalidInstance(format!("need at least 2 spins, got {n}")));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for (i, j, w) in couplings {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { index: i.max(j), n });
            }
            if !w.is_finite() {
                return Err(Error::InvalidInstance(format!("coupling ({i},{j}) is not finite")));
            }
            if i == j {
                if w != 0.0 {
                    return Err(Error::InvalidInstance(format!("diagonal coupling J_{i}{i} = {w}")));
                }
                continue;
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidInstance(format!("duplicate coupling ({i},{j})")));
            }
            if w != 0.0 {
                adjacency[i].push((j, w));
                adjacency[j].push((i, w));
            }
        }
        for row in &mut adjacency {
            row.sort_by_key(|&(j, _)| j);
        }
        Ok(Self { n, adjacency, planted_state: None, ground_energy: None, meta: BTreeMap::new() })
    }

    /// Dense constructor; only the upper triangle is read and the matrix must
    /// be symmetric with zero diagonal.
    pub fn from_dense(j: &[Vec<f64>]) -> Result<Self> {
        let n = j.len();
        for (i, row) in j.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension { expected: n, got: row.len() });
            }
            if row[i] != 0.0 {
                return Err(Error::InvalidInstance(format!("diagonal coupling J_{i}{i} = {}", row[i])));
            }
            for k in 0..i {
                if row[k] != j[k][i] {
                    return Err(Error::InvalidInstance(format!("asymmetric couplings at ({k},{i})")));
                }
            }
        }
        Self::from_couplings(
            n,
            (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).map(|(a, b)| (a, b, j[a][b])),
        )
    }

    /// Attach a planted state; the ground energy is computed from it.
    pub fn with_planted(mut self, planted: SpinConfig) -> Result<Self> {
        let e = self.energy(&planted)?;
        self.planted_state = Some(planted);
        self.ground_energy = Some(e);
        Ok(self)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn planted_state(&self) -> Option<&SpinConfig> {
        self.planted_state.as_ref()
    }

    pub fn ground_energy(&self) -> Option<f64> {
        self.ground_energy
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    /// Upper-triangle couplings `(i, j, J_ij)` with `i < j`, in row-major order.
    pub fn couplings(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, row)| {
            row.iter().filter(move |&&(j, _)| j > i).map(move |&(j, w)| (i, j, w))
        })
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let row = &self.adjacency[i];
        match row.binary_search_by_key(&j, |&(k, _)| k) {
            Ok(pos) => row[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn n_couplings(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `sum_j J_ij s_j`.
    #[inline]
    pub fn local_field(&self, spins: &SpinConfig, i: usize) -> f64 {
        self.adjacency[i].iter().map(|&(j, w)| w * spins.get(j)).sum()
    }

    /// `sum_j J_ij x_j` for continuous amplitudes.
    #[inline]
    pub fn local_field_continuous(&self, x: &[f64], i: usize) -> f64 {
        self.adjacency[i].iter().map(|&(j, w)| w * x[j]).sum()
    }

    fn check_len(&self, config: &SpinConfig) -> Result<()> {
        if config.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: config.len() });
        }
        Ok(())
    }

    /// `s'Js`.
    pub fn energy(&self, config: &SpinConfig) -> Result<f64> {
        self.check_len(config)?;
        Ok(self.energy_unchecked(config))
    }

    pub(crate) fn energy_unchecked(&self, config: &SpinConfig) -> f64 {
        (0..self.n).map(|i| config.get(i) * self.local_field(config, i)).sum()
    }

    /// Energy change from flipping spin `i`: `-4 s_i sum_j J_ij s_j`.
    pub fn delta_energy(&self, config: &SpinConfig, flip_index: usize) -> Result<f64> {
        self.check_len(config)?;
        if flip_index >= self.n {
            return Err(Error::IndexOutOfRange { index: flip_index, n: self.n });
        }
        Ok(self.delta_unchecked(config, flip_index))
    }

    #[inline]
    pub(crate) fn delta_unchecked(&self, config: &SpinConfig, i: usize) -> f64 {
        -4.0 * config.get(i) * self.local_field(config, i)
    }

    /// Expected energy of a uniformly random configuration. With a zero
    /// diagonal `E[s_i s_j] = 0` for every coupled pair, so this is exactly 0.
    pub fn random_baseline(&self) -> f64 {
        0.0
    }

    /// Serialize to the line-oriented instance format.
    pub fn to_text(&self) -> String {
        let mut out = format!("ising {}\n", self.n);
        if let (Some(s), Some(e)) = (&self.planted_state, self.ground_energy) {
            out.push_str(&format!("planted {s} {e:?}\n"));
        }
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        for (i, j, w) in self.couplings() {
            out.push_str(&format!("{i} {j} {w:?}\n"));
        }
        out
    }

    /// Parse the line-oriented instance format.
    ///
    /// Lines starting with `#` hold `key=value` metadata. A stored ground
    /// energy must agree with the recomputed energy of the planted state.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
        let perr = |line: usize, msg: String| Error::Parse { line, msg };

        let (hline, header) = lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| perr(1, "empty instance file".into()))?;
        let n: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["ising", n] => n.parse().map_err(|e| perr(hline, format!("bad spin count: {e}")))?,
            _ => return Err(perr(hline, format!("expected `ising <n>`, got `{header}`"))),
        };

        let mut planted: Option<(usize, SpinConfig, f64)> = None;
        let mut meta = BTreeMap::new();
        let mut couplings = Vec::new();
        let mut seen = BTreeMap::new();
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "planted" {
                if planted.is_some() || !couplings.is_empty() {
                    return Err(perr(ln, "`planted` must appear once, before couplings".into()));
                }
                let [_, s, e] = fields.as_slice() else {
                    return Err(perr(ln, "expected `planted <spins> <energy>`".into()));
                };
                let s: SpinConfig = s.parse().map_err(|e: Error| perr(ln, e.to_string()))?;
                if s.len() != n {
                    return Err(perr(ln, format!("planted state has length {}, expected {n}", s.len())));
                }
                let e: f64 = e.parse().map_err(|e| perr(ln, format!("bad energy: {e}")))?;
                planted = Some((ln, s, e));
                continue;
            }
            let [i, j, w] = fields.as_slice() else {
                return Err(perr(ln, format!("expected `i j J_ij`, got `{line}`")));
            };
            let i: usize = i.parse().map_err(|e| perr(ln, format!("bad index: {e}")))?;
            let j: usize = j.parse().map_err(|e| perr(ln, format!("bad index: {e}")))?;
            let w: f64 = w.parse().map_err(|e| perr(ln, format!("bad coupling: {e}")))?;
            if i >= n || j >= n {
                return Err(perr(ln, format!("index out of range for {n} spins")));
            }
            if i == j {
                return Err(perr(ln, format!("diagonal coupling J_{i}{i} is not allowed")));
            }
            if let Some(prev) = seen.insert((i.min(j), i.max(j)), ln) {
                return Err(perr(ln, format!("duplicate coupling ({i},{j}), first given at line {prev}")));
            }
            couplings.push((i, j, w));
        }

        let mut inst = Self::from_couplings(n, couplings).map_err(|e| perr(hline, e.to_string()))?;
        inst.meta = meta;
        if let Some((ln, s, stored)) = planted {
            inst = inst.with_planted(s)?;
            let e = inst.ground_energy.unwrap_or_default();
            if (e - stored).abs() > 1e-9 * e.abs().max(1.0) {
                return Err(perr(ln, format!("stored ground energy {stored} disagrees with recomputed {e}")));
            }
        }
        Ok(inst)
    }
}

/// Outcome of a single solver shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SpinConfig>,
    pub resource_cost: f64,
    pub shot_seed: u64,
    /// Sweep round (PT) or integration step (CIM) at which `energy` was first reached.
    #[serde(default)]
    pub first_hit: u64,
    #[serde(default)]
    pub diverged: bool,
}

/// Raw output distribution of one solver run at its maximal resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub instance_id: String,
    pub solver_id: String,
    pub params: ParameterPoint,
    pub records: Vec<SampleRecord>,
    pub total_resource: f64,
}

impl SampleSet {
    pub fn new(
        instance_id: impl Into<String>,
        solver_id: impl Into<String>,
        params: ParameterPoint,
        records: Vec<SampleRecord>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyPool);
        }
        if let Some(r) = records.iter().find(|r| !(r.resource_cost > 0.0)) {
            return Err(Error::InvalidParameter(format!("nonpositive resource cost {}", r.resource_cost)));
        }
        let total_resource = records.iter().map(|r| r.resource_cost).sum();
        Ok(Self {
            instance_id: instance_id.into(),
            solver_id: solver_id.into(),
            params,
            records,
            total_resource,
        })
    }

    pub fn mean_cost(&self) -> f64 {
        self.total_resource / self.records.len() as f64
    }

    pub fn best_energy(&self) -> f64 {
        self.records.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pair(j: f64) -> IsingInstance {
        IsingInstance::from_couplings(2, [(0, 1, j)]).unwrap()
    }

    fn random_dense(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut j = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let w: f64 = rng.random_range(-1.0..1.0);
                j[a][b] = w;
                j[b][a] = w;
            }
        }
        j
    }

    fn random_spins(n: usize, rng: &mut impl Rng) -> SpinConfig {
        SpinConfig::new((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).unwrap()
    }

    // Independent triple-loop evaluation of s'Js on the dense matrix.
    fn dense_energy(j: &[Vec<f64>], s: &SpinConfig) -> f64 {
        let n = j.len();
        let mut e = 0.0;
        for a in 0..n {
            for b in 0..n {
                e += s.get(a) * j[a][b] * s.get(b);
            }
        }
        e
    }

    #[test]
    fn pair_energies() {
        let inst = pair(1.0);
        assert_eq!(inst.energy(&"+-".parse().unwrap()).unwrap(), -2.0);
        assert_eq!(inst.energy(&"++".parse().unwrap()).unwrap(), 2.0);
        assert_eq!(inst.delta_energy(&"++".parse().unwrap(), 0).unwrap(), -4.0);
    }

    #[test]
    fn energy_matches_dense_quadratic_form() {
        let j = random_dense(4, 11);
        let inst = IsingInstance::from_dense(&j).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = random_spins(4, &mut rng);
            assert!((inst.energy(&s).unwrap() - dense_energy(&j, &s)).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_matches_full_recompute() {
        let inst = IsingInstance::from_dense(&random_dense(6, 3)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let s = random_spins(6, &mut rng);
        for i in 0..6 {
            let mut t = s.clone();
            t.flip(i);
            let full = inst.energy(&t).unwrap() - inst.energy(&s).unwrap();
            assert!((inst.delta_energy(&s, i).unwrap() - full).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_bad_dimensions() {
        let inst = pair(1.0);
        assert!(matches!(inst.energy(&SpinConfig::all_up(3)), Err(Error::Dimension { .. })));
        assert!(matches!(
            inst.delta_energy(&SpinConfig::all_up(2), 2),
            Err(Error::IndexOutOfRange { index: 2, n: 2 })
        ));
        assert!(IsingInstance::from_couplings(1, []).is_err());
        assert!(IsingInstance::from_couplings(3, [(1, 1, 0.5)]).is_err());
        assert!(IsingInstance::from_couplings(3, [(0, 1, 0.5), (1, 0, 0.5)]).is_err());
    }

    #[test]
    fn random_baseline_matches_enumeration() {
        let inst = pair(1.0);
        let mean: f64 = (0..4).map(|b| inst.energy(&SpinConfig::from_bits(2, b)).unwrap()).sum::<f64>() / 4.0;
        assert_eq!(mean, 0.0);
        assert_eq!(inst.random_baseline(), 0.0);

        let inst = IsingInstance::from_dense(&random_dense(3, 21)).unwrap();
        let mean: f64 = (0..8).map(|b| inst.energy(&SpinConfig::from_bits(3, b)).unwrap()).sum::<f64>() / 8.0;
        assert!((mean - inst.random_baseline()).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip_and_errors() {
        let inst = IsingInstance::from_dense(&random_dense(5, 1))
            .unwrap()
            .with_planted("+-+-+".parse().unwrap())
            .unwrap()
            .with_meta("generator", "test");
        let back = IsingInstance::from_text(&inst.to_text()).unwrap();
        assert_eq!(back, inst);

        let err = IsingInstance::from_text("ising 3\n0 1 1.0\n1 1 2.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = IsingInstance::from_text("ising 3\n0 1 1.0\n0 2 1.0\n1 0 0.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let err = IsingInstance::from_text("ising 2\nplanted ++ 5.0\n0 1 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(IsingInstance::from_text("isin 2\n").is_err());
    }

    proptest! {
        #[test]
        fn flip_involution_and_global_symmetry(seed in 0u64..1000, n in 2usize..12) {
            let inst = IsingInstance::from_dense(&random_dense(n, seed)).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1);
            let s = random_spins(n, &mut rng);
            prop_assert_eq!(inst.energy(&s).unwrap(), inst.energy(&s.negated()).unwrap());
            for i in 0..n {
                let d1 = inst.delta_energy(&s, i).unwrap();
                let mut t = s.clone();
                t.flip(i);
                let d2 = inst.delta_energy(&t, i).unwrap();
                prop_assert!((d1 + d2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_chain_tracks_energy() {
        let inst = IsingInstance::from_dense(&random_dense(10, 8)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut s = random_spins(10, &mut rng);
        let mut e = inst.energy(&s).unwrap();
        for _ in 0..10_000 {
            let i = rng.random_range(0..10);
            e += inst.delta_energy(&s, i).unwrap();
            s.flip(i);
        }
        assert!((e - inst.energy(&s).unwrap()).abs() < 1e-9);
    }
}
