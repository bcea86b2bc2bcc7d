//! Conditional permutation nulls and the empirical type-I error formula.
//!
//! Every replicate draws from its own ChaCha stream (`seed`, replicate index),
//! so results do not depend on thread count or scheduling.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bf::{BfEngine, Hyperparams};
use crate::dataset::SlicedDataset;
use crate::error::{Error, Result};

/// Default number of permutations.
pub const DEFAULT_REPLICATES: usize = 1000;

/// Independent, reproducible random stream for one replicate.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which labels a permutation null moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleScheme {
    /// Permute the covariate among observations of the same group.
    CovariateWithinGroups,
    /// Permute the response among observations of the same group. For a
    /// single covariate this has the same law as the covariate shuffle; it
    /// differs when several covariates must move together.
    ResponseWithinGroups,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub replicates: usize,
    pub seed: u64,
    pub scheme: ShuffleScheme,
}

impl PermutationPlan {
    pub fn new(replicates: usize, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::input("at least one permutation replicate is required"));
        }
        Ok(Self { replicates, seed, scheme: ShuffleScheme::CovariateWithinGroups })
    }

    pub fn with_scheme(mut self, scheme: ShuffleScheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// A random permutation of ranks that only exchanges ranks within the same
/// group: entry `r` is the rank whose observation moves to rank `r`.
pub fn within_group_permutation<R: Rng + ?Sized>(groups: &[Vec<usize>], n: usize, rng: &mut R) -> Vec<usize> {
    let mut source: Vec<usize> = (0..n).collect();
    for members in groups {
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        for (&dst, &src) in members.iter().zip(&shuffled) {
            source[dst] = src;
        }
    }
    source
}

/// Applies a rank permutation from [`within_group_permutation`].
pub fn permute_codes(codes: &[u32], source: &[usize]) -> Vec<u32> {
    source.iter().map(|&s| codes[s]).collect()
}

pub fn conditional_shuffle_with<R: Rng + ?Sized>(
    d: &SlicedDataset,
    groups: &[Vec<usize>],
    rng: &mut R,
) -> SlicedDataset {
    let source = within_group_permutation(groups, d.n(), rng);
    d.with_ranked_x(permute_codes(d.x(), &source))
}

/// Shuffles `x` uniformly within each `z` group; `y` and `z` are untouched.
pub fn conditional_shuffle(d: &SlicedDataset, seed: u64) -> SlicedDataset {
    let mut rng = replicate_rng(seed, 0);
    conditional_shuffle_with(d, &d.group_positions(), &mut rng)
}

/// Add-one Monte Carlo p-value `(1 + #{null >= observed}) / (B + 1)`.
pub fn pvalue_from_null(observed: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McPvalue {
    pub p_value: f64,
    pub replicates: usize,
    /// Null log Bayes factors in replicate order.
    pub null: Vec<f64>,
}

/// Null sample of log Bayes factors under the within-group shuffle.
pub fn null_log_bf(d: &SlicedDataset, hyper: &Hyperparams, plan: &PermutationPlan) -> Vec<f64> {
    let engine = BfEngine::for_dataset(d, *hyper);
    let groups = d.group_positions();
    (0..plan.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(plan.seed, r as u64);
            engine.log_bf(&conditional_shuffle_with(d, &groups, &mut rng))
        })
        .collect()
}

/// Permutation p-value of an observed log Bayes factor.
pub fn mc_pvalue(observed: f64, d: &SlicedDataset, hyper: &Hyperparams, plan: &PermutationPlan) -> McPvalue {
    let null = null_log_bf(d, hyper, plan);
    McPvalue { p_value: pvalue_from_null(observed, &null), replicates: plan.replicates, null }
}

/// Constants of `Pr(BF > b) ≈ γ / (b^α n^β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalFormulaConstants {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EmpiricalFormulaConstants {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let c = Self { alpha, beta, gamma };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::input(format!("formula constants must be positive: {self:?}")))
        }
    }

    /// Unconditional test, binary covariate with `Pr(X = 1) = 0.5`.
    pub const BALANCED_BINARY: Self = Self { alpha: 1.12, beta: 0.6, gamma: 0.76 };

    /// Conditional test, `|X| = |Z| = 2` with uniform configuration frequencies.
    pub const UNIFORM_TWO_BY_TWO: Self = Self { alpha: 1.07, beta: 0.86, gamma: 3.8 };
}

/// Approximate type-I error of the cutoff `BF > b` at sample size `n`,
/// clamped to `(0, 1]`.
pub fn formula_pvalue(b: f64, n: usize, constants: &EmpiricalFormulaConstants) -> Result<f64> {
    constants.validate()?;
    if !(b >= 1.0) {
        return Err(Error::input(format!("cutoff must be at least 1, got {b}")));
    }
    if n == 0 {
        return Err(Error::input("sample size must be positive"));
    }
    let log_p = constants.gamma.ln() - constants.alpha * b.ln() - constants.beta * (n as f64).ln();
    Ok(log_p.exp().clamp(f64::MIN_POSITIVE, 1.0))
}

/// One observed type-I rate of the cutoff `BF > b` at sample size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub b: f64,
    pub n: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormulaFit {
    pub constants: EmpiricalFormulaConstants,
    /// Root mean square residual on the log-rate scale.
    pub rms: f64,
}

/// Least-squares fit of `log rate = log γ − α log b − β log n`.
pub fn fit_formula(points: &[RatePoint]) -> Result<FormulaFit> {
    if points.len() < 3 {
        return Err(Error::input("formula fit needs at least 3 grid points"));
    }
    if let Some(p) = points.iter().find(|p| !(p.rate > 0.0 && p.rate < 1.0)) {
        return Err(Error::input(format!("rate {} at (b = {}, n = {}) is outside (0, 1)", p.rate, p.b, p.n)));
    }
    if let Some(p) = points.iter().find(|p| !(p.b > 0.0) || p.n == 0) {
        return Err(Error::input(format!("invalid grid point (b = {}, n = {})", p.b, p.n)));
    }
    let distinct = |v: Vec<f64>| v.iter().any(|a| (a - v[0]).abs() > 1e-12);
    if !distinct(points.iter().map(|p| p.b).collect()) || !distinct(points.iter().map(|p| p.n as f64).collect()) {
        return Err(Error::input("formula fit needs distinct cutoffs and distinct sample sizes"));
    }
    let design = DMatrix::from_fn(points.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => -points[i].b.ln(),
        _ => -(points[i].n as f64).ln(),
    });
    let target = DVector::from_iterator(points.len(), points.iter().map(|p| p.rate.ln()));
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-12)
        .map_err(|e| Error::input(format!("formula fit failed: {e}")))?;
    let resid = &design * &coef - &target;
    let rms = (resid.norm_squared() / points.len() as f64).sqrt();
    let constants = EmpiricalFormulaConstants { alpha: coef[1], beta: coef[2], gamma: coef[0].exp() };
    Ok(FormulaFit { constants, rms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Ranking;
    use approx::assert_relative_eq;

    fn grouped() -> SlicedDataset {
        let x = vec![0, 1, 1, 0, 2, 1, 0, 0, 1, 2];
        let z = vec![0, 0, 1, 1, 0, 1, 0, 1, 1, 0];
        SlicedDataset::from_ranked(Ranking::identity(10), x, 3, z, 2).unwrap()
    }

    fn group_multisets(d: &SlicedDataset) -> Vec<Vec<u32>> {
        d.group_positions()
            .iter()
            .map(|g| {
                let mut v: Vec<u32> = g.iter().map(|&r| d.x()[r]).collect();
                v.sort();
                v
            })
            .collect()
    }

    #[test]
    fn shuffle_preserves_group_multisets() {
        let d = grouped();
        let s = conditional_shuffle(&d, 7);
        assert_eq!(group_multisets(&d), group_multisets(&s));
        assert_eq!(s.z(), d.z());
        let twice = conditional_shuffle(&s, 8);
        assert_eq!(group_multisets(&d), group_multisets(&twice));
    }

    #[test]
    fn shuffle_is_deterministic() {
        let d = grouped();
        assert_eq!(conditional_shuffle(&d, 42), conditional_shuffle(&d, 42));
    }

    #[test]
    fn single_group_shuffle_is_full_permutation() {
        let n = 6;
        let d = SlicedDataset::from_ranked(Ranking::identity(n), (0..n as u32).collect(), n, vec![0; n], 1).unwrap();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..200 {
            let s = conditional_shuffle(&d, seed);
            let mut sorted = s.x().to_vec();
            sorted.sort();
            assert_eq!(sorted, (0..n as u32).collect::<Vec<_>>());
            seen.insert(s.x()[0]);
        }
        assert_eq!(seen.len(), n);
    }

    #[test]
    fn pvalue_estimator_arithmetic() {
        let null: Vec<f64> = (0..999).map(|i| i as f64).collect();
        assert_relative_eq!(pvalue_from_null(1e6, &null), 1.0 / 1000.0);
        assert_relative_eq!(pvalue_from_null(-1.0, &null), 1.0);
        let null = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0];
        assert_relative_eq!(pvalue_from_null(10.0, &null), 0.2);
    }

    #[test]
    fn formula_examples() {
        let c = EmpiricalFormulaConstants::BALANCED_BINARY;
        assert_relative_eq!(formula_pvalue(1.0, 400, &c).unwrap(), 0.76 / 400f64.powf(0.6), max_relative = 1e-12);
        assert!((formula_pvalue(1.0, 400, &c).unwrap() - 0.0209).abs() < 5e-5);
        assert!((formula_pvalue(10.0, 400, &c).unwrap() - 1.58e-3).abs() < 5e-6);
        let c = EmpiricalFormulaConstants::UNIFORM_TWO_BY_TWO;
        assert!((formula_pvalue(1.0, 400, &c).unwrap() - 0.022).abs() < 5e-4);
        let bad = EmpiricalFormulaConstants { alpha: 0.0, beta: 1.0, gamma: 1.0 };
        assert!(formula_pvalue(1.0, 10, &bad).is_err());
        assert!(formula_pvalue(0.5, 10, &c).is_err());
        assert_eq!(formula_pvalue(1.0, 1, &c).unwrap(), 1.0);
    }

    fn noiseless_grid(c: EmpiricalFormulaConstants) -> Vec<RatePoint> {
        let mut pts = Vec::new();
        for &n in &[100usize, 200, 400, 800] {
            for &b in &[1.0, 3.0, 10.0] {
                let rate = formula_pvalue(b, n, &c).unwrap();
                pts.push(RatePoint { b, n, rate });
            }
        }
        pts
    }

    #[test]
    fn fit_recovers_noiseless_constants() {
        for c in [EmpiricalFormulaConstants::BALANCED_BINARY, EmpiricalFormulaConstants::UNIFORM_TWO_BY_TWO] {
            let fit = fit_formula(&noiseless_grid(c)).unwrap();
            assert!((fit.constants.alpha - c.alpha).abs() < 1e-6);
            assert!((fit.constants.beta - c.beta).abs() < 1e-6);
            assert!((fit.constants.gamma - c.gamma).abs() < 1e-6);
            assert!(fit.rms < 1e-9);
        }
    }

    #[test]
    fn fit_rejects_bad_grids() {
        let mut pts = noiseless_grid(EmpiricalFormulaConstants::BALANCED_BINARY);
        pts[2].rate = 0.0;
        assert!(matches!(fit_formula(&pts), Err(Error::Input(_))));
        let same_b: Vec<RatePoint> =
            [100, 200, 400].iter().map(|&n| RatePoint { b: 1.0, n, rate: 0.01 }).collect();
        assert!(fit_formula(&same_b).is_err());
        let same_n: Vec<RatePoint> =
            [1.0, 2.0, 3.0].iter().map(|&b| RatePoint { b, n: 100, rate: 0.01 }).collect();
        assert!(fit_formula(&same_n).is_err());
        assert!(fit_formula(&same_n[..2]).is_err());
    }
}
