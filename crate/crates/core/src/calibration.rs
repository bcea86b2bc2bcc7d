//! Persistent table of fitted type-I error constants and the shuffle
//! simulations that produce them.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bf::{BfEngine, Hyperparams};
use crate::dataset::SlicedDataset;
use crate::error::{Error, Result};
use crate::permutation::{
    conditional_shuffle_with, fit_formula, replicate_rng, EmpiricalFormulaConstants, FormulaFit, RatePoint,
};
use crate::simulation::normal;

/// Environment variable naming the default calibration table path.
pub const CALIBRATION_ENV: &str = "SLICEBF_CALIBRATION";
pub const SCHEMA_VERSION: u32 = 1;

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Lookup key: design shape, rounded (x, z) cell frequencies (z-major) and
/// hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationKey {
    pub x_levels: usize,
    pub z_levels: usize,
    pub frequencies: Vec<f64>,
    pub lambda0: f64,
    pub alpha0: f64,
}

impl CalibrationKey {
    pub fn new(x_levels: usize, z_levels: usize, frequencies: &[f64], hyper: &Hyperparams) -> Self {
        Self {
            x_levels,
            z_levels,
            frequencies: frequencies.iter().map(|&f| round2(f)).collect(),
            lambda0: hyper.lambda0,
            alpha0: hyper.alpha0,
        }
    }

    /// Key of an observed dataset; levels never observed are dropped so that
    /// unused labels do not change the key.
    pub fn for_dataset(d: &SlicedDataset, hyper: &Hyperparams) -> Self {
        let counts = d.cell_counts();
        let xl = d.x_levels();
        let x_used: Vec<usize> =
            (0..xl).filter(|&k| (0..d.z_levels()).any(|j| counts[j * xl + k] > 0)).collect();
        let z_used: Vec<usize> =
            (0..d.z_levels()).filter(|&j| (0..xl).any(|k| counts[j * xl + k] > 0)).collect();
        let n = d.n() as f64;
        let freqs: Vec<f64> =
            z_used.iter().flat_map(|&j| x_used.iter().map(move |&k| (j, k))).map(|(j, k)| counts[j * xl + k] as f64 / n).collect();
        Self::new(x_used.len(), z_used.len(), &freqs, hyper)
    }

    fn matches(&self, other: &CalibrationKey) -> bool {
        self.x_levels == other.x_levels
            && self.z_levels == other.z_levels
            && self.frequencies.len() == other.frequencies.len()
            && self.frequencies.iter().zip(&other.frequencies).all(|(a, b)| (a - b).abs() < 1e-9)
            && (self.lambda0 - other.lambda0).abs() < 1e-9
            && (self.alpha0 - other.alpha0).abs() < 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    #[serde(flatten)]
    pub key: CalibrationKey,
    pub constants: EmpiricalFormulaConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms: Option<f64>,
    /// `builtin` or `simulated`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub schema: u32,
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationTable {
    /// The two reference fits: balanced binary covariate without groups, and
    /// uniform frequencies over a 2×2 covariate-by-group design.
    pub fn builtin() -> Self {
        let hyper = Hyperparams::default();
        Self {
            schema: SCHEMA_VERSION,
            entries: vec![
                CalibrationEntry {
                    key: CalibrationKey::new(2, 1, &[0.5, 0.5], &hyper),
                    constants: EmpiricalFormulaConstants::BALANCED_BINARY,
                    rms: None,
                    source: "builtin".into(),
                },
                CalibrationEntry {
                    key: CalibrationKey::new(2, 2, &[0.25; 4], &hyper),
                    constants: EmpiricalFormulaConstants::UNIFORM_TWO_BY_TWO,
                    rms: None,
                    source: "builtin".into(),
                },
            ],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text)?;
        if table.schema != SCHEMA_VERSION {
            return Err(Error::input(format!("unsupported calibration schema {}", table.schema)));
        }
        Ok(table)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Path from [`CALIBRATION_ENV`], if set.
    pub fn env_path() -> Option<PathBuf> {
        std::env::var_os(CALIBRATION_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    /// Built-in entries overlaid with the table at `path` when it exists.
    pub fn load_or_builtin(path: Option<&Path>) -> Result<Self> {
        let mut table = Self::builtin();
        if let Some(p) = path.filter(|p| p.exists()) {
            for e in Self::read(p)?.entries {
                table.upsert(e);
            }
        }
        Ok(table)
    }

    pub fn lookup(&self, key: &CalibrationKey) -> Option<&CalibrationEntry> {
        self.entries.iter().rev().find(|e| e.key.matches(key))
    }

    /// Inserts or replaces the entry with the same key.
    pub fn upsert(&mut self, entry: CalibrationEntry) {
        match self.entries.iter_mut().find(|e| e.key.matches(&entry.key)) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }
}

/// A null design for shuffle calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub x_levels: usize,
    pub z_levels: usize,
    /// Cell frequencies, z-major; must sum to 1.
    pub frequencies: Vec<f64>,
    pub ns: Vec<usize>,
    pub bs: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
    /// Mean shift of the response per group level; only the within-group
    /// shuffle is random, so this merely keeps the group–response link.
    pub z_effect: f64,
    /// Cells with fewer exceedances than this are left out of the fit: their
    /// log rates are dominated by Monte Carlo noise.
    pub min_hits: usize,
}

impl CalibrationSpec {
    /// Balanced binary covariate, no groups.
    pub fn balanced_binary() -> Self {
        Self::with_frequencies(2, 1, vec![0.5, 0.5])
    }

    /// Binary covariate and binary group with uniform cell frequencies.
    pub fn uniform_two_by_two() -> Self {
        Self::with_frequencies(2, 2, vec![0.25; 4])
    }

    pub fn with_frequencies(x_levels: usize, z_levels: usize, frequencies: Vec<f64>) -> Self {
        Self {
            x_levels,
            z_levels,
            frequencies,
            ns: vec![100, 200, 400, 800],
            bs: vec![1.0, 3.0, 10.0, 30.0, 100.0],
            replicates: 10_000,
            seed: 1,
            hyper: Hyperparams::default(),
            z_effect: 0.4,
            min_hits: 10,
        }
    }

    pub fn key(&self) -> CalibrationKey {
        CalibrationKey::new(self.x_levels, self.z_levels, &self.frequencies, &self.hyper)
    }

    fn validate(&self) -> Result<()> {
        if self.x_levels < 2 || self.z_levels < 1 || self.frequencies.len() != self.x_levels * self.z_levels {
            return Err(Error::input("frequency vector must have |X|·|Z| entries with |X| ≥ 2"));
        }
        let total: f64 = self.frequencies.iter().sum();
        if self.frequencies.iter().any(|&f| !(f >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::input("frequencies must be nonnegative and sum to 1"));
        }
        if self.replicates == 0 || self.ns.iter().any(|&n| n < 2) || self.bs.iter().any(|&b| !(b >= 1.0)) {
            return Err(Error::input("need replicates ≥ 1, every n ≥ 2 and every b ≥ 1"));
        }
        let mut ns = self.ns.clone();
        ns.sort_unstable();
        ns.dedup();
        let mut bs = self.bs.clone();
        bs.sort_by(f64::total_cmp);
        bs.dedup();
        if ns.len() < 2 || bs.len() < 2 {
            return Err(Error::input("calibration grid needs at least two distinct n and two distinct b"));
        }
        Ok(())
    }
}

/// Cell counts for `n` observations by largest remainder.
pub fn allocate_counts(frequencies: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = frequencies.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Shuffle estimates of `Pr(BF > b)` for every `(n, b)` in the grid.
/// Replicate `r` at size `n` draws its response and shuffle from stream `r`
/// of a seed derived from `(seed, n)`.
pub fn simulate_rates(spec: &CalibrationSpec) -> Result<Vec<RatePoint>> {
    spec.validate()?;
    let mut points = Vec::new();
    for &n in &spec.ns {
        let counts = allocate_counts(&spec.frequencies, n);
        let mut x = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for (cell, &c) in counts.iter().enumerate() {
            x.extend(std::iter::repeat_n((cell % spec.x_levels) as u32, c));
            z.extend(std::iter::repeat_n((cell / spec.x_levels) as u32, c));
        }
        let engine = BfEngine::new(spec.hyper, spec.x_levels, n);
        let seed = spec.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let log_bfs: Vec<f64> = (0..spec.replicates)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = replicate_rng(seed, r as u64);
                let y: Vec<f64> = z.iter().map(|&g| spec.z_effect * g as f64 + normal(&mut rng)).collect();
                let d = SlicedDataset::from_codes(&y, &x, spec.x_levels, Some((&z, spec.z_levels)))?;
                let shuffled = conditional_shuffle_with(&d, &d.group_positions(), &mut rng);
                Ok(engine.log_bf(&shuffled))
            })
            .collect::<Result<_>>()?;
        for &b in &spec.bs {
            let hits = log_bfs.iter().filter(|&&v| v > b.ln()).count();
            points.push(RatePoint { b, n, rate: hits as f64 / spec.replicates as f64 });
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRun {
    pub entry: CalibrationEntry,
    pub points: Vec<RatePoint>,
    pub fit: FormulaFit,
}

/// Simulates the grid and fits the formula to the cells with at least
/// `min_hits` exceedances. Fewer than three usable cells is an input error.
pub fn calibrate(spec: &CalibrationSpec) -> Result<CalibrationRun> {
    let points = simulate_rates(spec)?;
    let floor = spec.min_hits.max(1) as f64 / spec.replicates as f64;
    let usable: Vec<RatePoint> = points.iter().copied().filter(|p| p.rate >= floor && p.rate < 1.0).collect();
    if usable.len() < 3 {
        return Err(Error::input("calibration grid too small: fewer than 3 cells with enough exceedances"));
    }
    let fit = fit_formula(&usable)?;
    let entry =
        CalibrationEntry { key: spec.key(), constants: fit.constants, rms: Some(fit.rms), source: "simulated".into() };
    Ok(CalibrationRun { entry, points, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookup() {
        let t = CalibrationTable::builtin();
        let h = Hyperparams::default();
        let e = t.lookup(&CalibrationKey::new(2, 1, &[0.499, 0.501], &h)).unwrap();
        assert_eq!(e.constants, EmpiricalFormulaConstants::BALANCED_BINARY);
        let e = t.lookup(&CalibrationKey::new(2, 2, &[0.25, 0.25, 0.25, 0.25], &h)).unwrap();
        assert_eq!(e.constants, EmpiricalFormulaConstants::UNIFORM_TWO_BY_TWO);
        assert!(t.lookup(&CalibrationKey::new(2, 1, &[0.3, 0.7], &h)).is_none());
        let other = Hyperparams::new(1.0, 2.0).unwrap();
        assert!(t.lookup(&CalibrationKey::new(2, 1, &[0.5, 0.5], &other)).is_none());
    }

    #[test]
    fn dataset_key_ignores_unused_levels() {
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let d = SlicedDataset::from_codes(&y, &[0, 1, 0, 1, 0, 1, 0, 1], 3, None).unwrap();
        let k = CalibrationKey::for_dataset(&d, &Hyperparams::default());
        assert_eq!((k.x_levels, k.z_levels), (2, 1));
        assert_eq!(k.frequencies, vec![0.5, 0.5]);
    }

    #[test]
    fn json_round_trip_and_overlay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.json");
        let mut t = CalibrationTable::builtin();
        let h = Hyperparams::default();
        t.upsert(CalibrationEntry {
            key: CalibrationKey::new(2, 1, &[0.3, 0.7], &h),
            constants: EmpiricalFormulaConstants::new(1.0, 0.5, 0.5).unwrap(),
            rms: Some(0.1),
            source: "simulated".into(),
        });
        t.write(&path).unwrap();
        let back = CalibrationTable::read(&path).unwrap();
        assert_eq!(back, t);
        let merged = CalibrationTable::load_or_builtin(Some(&path)).unwrap();
        assert_eq!(merged.entries.len(), 3);
        assert!(CalibrationTable::load_or_builtin(Some(&dir.path().join("missing.json"))).unwrap().entries.len() == 2);
        assert!(CalibrationTable::from_json(r#"{"schema": 2, "entries": []}"#).is_err());
    }

    #[test]
    fn largest_remainder_allocation() {
        assert_eq!(allocate_counts(&[0.5, 0.5], 7), vec![4, 3]);
        assert_eq!(allocate_counts(&[0.25; 4], 10).iter().sum::<usize>(), 10);
        assert_eq!(allocate_counts(&[0.2, 0.8], 10), vec![2, 8]);
    }

    #[test]
    fn small_grid_rejected() {
        let mut spec = CalibrationSpec::balanced_binary();
        spec.ns = vec![100];
        assert!(matches!(calibrate(&spec), Err(Error::Input(_))));
        let mut spec = CalibrationSpec::balanced_binary();
        spec.ns = vec![20, 40];
        spec.bs = vec![1e6, 1e7];
        spec.replicates = 20;
        assert!(matches!(calibrate(&spec), Err(Error::Input(_))));
    }

    #[test]
    fn rates_are_deterministic_and_decreasing_in_b() {
        let mut spec = CalibrationSpec::balanced_binary();
        spec.ns = vec![50, 100];
        spec.bs = vec![1.0, 10.0];
        spec.replicates = 300;
        let a = simulate_rates(&spec).unwrap();
        assert_eq!(a, simulate_rates(&spec).unwrap());
        for pair in a.chunks(2) {
            assert!(pair[0].rate >= pair[1].rate);
        }
    }
}
