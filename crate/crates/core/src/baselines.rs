//! Classical comparators: Welch t, Wilcoxon rank-sum, two-sample
//! Kolmogorov–Smirnov, k-sample Anderson–Darling, one- and two-way ANOVA.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    WelchT,
    RankSum,
    KolmogorovSmirnov,
    AndersonDarling,
    AnovaOneWay,
    AnovaTwoWay,
    AnovaInteraction,
    AnovaModelComparison,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::WelchT => "t",
            Method::RankSum => "ranksum",
            Method::KolmogorovSmirnov => "ks",
            Method::AndersonDarling => "ad",
            Method::AnovaOneWay => "anova1",
            Method::AnovaTwoWay => "anova2",
            Method::AnovaInteraction => "anova_interaction",
            Method::AnovaModelComparison => "anova",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom (numerator for F tests).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    /// Denominator degrees of freedom for F tests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub sizes: Vec<usize>,
}

impl TestReport {
    fn new(method: Method, statistic: f64, p_value: f64, sizes: Vec<usize>) -> Self {
        Self { method, statistic, p_value: p_value.clamp(0.0, 1.0), df: None, df2: None, sizes }
    }

    /// `-ln p`, floored so that underflowed p-values stay finite.
    pub fn evidence(&self) -> f64 {
        -self.p_value.max(1e-300).ln()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sum_sq_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum()
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn check_finite(samples: &[&[f64]]) -> Result<()> {
    if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::input("samples must be finite"));
    }
    Ok(())
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestReport> {
    check_finite(&[a, b])?;
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::input("Welch t-test needs at least 2 observations per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sum_sq_dev(a) / (na - 1.0) / na;
    let vb = sum_sq_dev(b) / (nb - 1.0) / nb;
    let se2 = va + vb;
    if se2 <= 0.0 {
        return Err(Error::input("Welch t-test undefined: both samples have zero variance"));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::input(e.to_string()))?;
    let p = 2.0 * dist.sf(t.abs());
    let mut r = TestReport::new(Method::WelchT, t, p, vec![a.len(), b.len()]);
    r.df = Some(df);
    Ok(r)
}

/// Midranks (1-based) of the pooled values and the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && pooled[idx[end]] == pooled[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Normal-approximation p-value of a rank sum given its null mean and
/// variance, with continuity correction.
pub(crate) fn rank_sum_normal_p(w: f64, mean: f64, var: f64) -> (f64, f64) {
    if var <= 0.0 {
        return (0.0, 1.0);
    }
    let d = w - mean;
    let z = if d == 0.0 { 0.0 } else { (d - 0.5 * d.signum()) / var.sqrt() };
    let p = (2.0 * std_normal().cdf(-z.abs())).min(1.0);
    (z, p)
}

/// Wilcoxon rank-sum test. The statistic is the rank sum of `a`; the
/// p-value uses the tie-corrected normal approximation with continuity
/// correction.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestReport> {
    check_finite(&[a, b])?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("rank-sum test needs two nonempty samples"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let mean = na * (n + 1.0) / 2.0;
    let var = if n > 1.0 { na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0))) } else { 0.0 };
    let (_, p) = rank_sum_normal_p(w, mean, var);
    Ok(TestReport::new(Method::RankSum, w, p, vec![a.len(), b.len()]))
}

/// Survival function of the Kolmogorov distribution, `Pr(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small λ
        let c = -PI * PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=20 {
            let odd = (2 * k - 1) as f64;
            let term = (c * odd * odd).exp();
            s += term;
            if term < 1e-17 * s {
                break;
            }
        }
        (1.0 - (2.0 * PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value at
/// effective size `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestReport> {
    check_finite(&[a, b])?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("KS test needs two nonempty samples"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let v = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] == v {
            i += 1;
        }
        while j < sb.len() && sb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let p = kolmogorov_sf(ne.sqrt() * d);
    Ok(TestReport::new(Method::KolmogorovSmirnov, d, p, vec![a.len(), b.len()]))
}

const AD_SIGNIFICANCE: [f64; 7] = [0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001];
const AD_B0: [f64; 7] = [0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085];
const AD_B1: [f64; 7] = [-0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615];
const AD_B2: [f64; 7] = [-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154];

/// Critical values of the standardized k-sample statistic for `k - 1 = m`.
pub fn anderson_darling_critical_values(m: usize) -> [f64; 7] {
    let m = m as f64;
    std::array::from_fn(|i| AD_B0[i] + AD_B1[i] / m.sqrt() + AD_B2[i] / m)
}

/// Quadratic fit of log significance on the critical values, extended
/// linearly beyond the largest tabulated value.
fn anderson_darling_p(t: f64, m: usize) -> f64 {
    let crit = anderson_darling_critical_values(m);
    let x = DMatrix::from_fn(7, 3, |i, j| crit[i].powi(j as i32));
    let y = DVector::from_iterator(7, AD_SIGNIFICANCE.iter().map(|s| s.ln()));
    let coef = x.clone().svd(true, true).solve(&y, 1e-14).expect("well-conditioned interpolation");
    let quad = |v: f64| coef[0] + coef[1] * v + coef[2] * v * v;
    let top = crit[6];
    let log_p = if t <= top {
        quad(t)
    } else {
        let slope = coef[1] + 2.0 * coef[2] * top;
        quad(top) + slope * (t - top)
    };
    log_p.exp().clamp(0.0, 1.0)
}

/// k-sample Anderson–Darling test (midrank form, suitable with ties). The
/// statistic is standardized, `(A²_akN − (k−1)) / σ_N`; the p-value is
/// interpolated from the asymptotic percentage points.
pub fn anderson_darling_ksample(samples: &[&[f64]]) -> Result<TestReport> {
    check_finite(samples)?;
    let k = samples.len();
    if k < 2 || samples.iter().any(|s| s.is_empty()) {
        return Err(Error::input("Anderson–Darling test needs at least two nonempty samples"));
    }
    let mut pooled: Vec<f64> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    let n_total = pooled.len();
    if n_total < 4 {
        return Err(Error::input("Anderson–Darling variance needs a pooled size of at least 4"));
    }
    let nf = n_total as f64;
    let mut distinct: Vec<f64> = pooled.clone();
    distinct.dedup();
    // l_j and B_aj = #(< z_j) + l_j / 2
    let lower = |s: &[f64], v: f64| s.partition_point(|&x| x < v);
    let upper = |s: &[f64], v: f64| s.partition_point(|&x| x <= v);
    let lj: Vec<f64> = distinct.iter().map(|&v| (upper(&pooled, v) - lower(&pooled, v)) as f64).collect();
    let bj: Vec<f64> = distinct.iter().zip(&lj).map(|(&v, &l)| lower(&pooled, v) as f64 + l / 2.0).collect();
    let mut a2 = 0.0;
    for s in samples {
        let mut sorted = s.to_vec();
        sorted.sort_by(f64::total_cmp);
        let ni = sorted.len() as f64;
        let mut inner = 0.0;
        for ((&v, &l), &b) in distinct.iter().zip(&lj).zip(&bj) {
            let right = upper(&sorted, v) as f64;
            let fij = right - lower(&sorted, v) as f64;
            let mij = right - fij / 2.0;
            let denom = b * (nf - b) - nf * l / 4.0;
            if denom > 0.0 {
                inner += l / nf * (nf * mij - b * ni).powi(2) / denom;
            }
        }
        a2 += inner / ni;
    }
    a2 *= (nf - 1.0) / nf;

    let kf = k as f64;
    let h_big: f64 = samples.iter().map(|s| 1.0 / s.len() as f64).sum();
    // harmonic[i] = sum_{j=1}^{i} 1/j
    let mut harmonic = vec![0.0; n_total];
    for i in 1..n_total {
        harmonic[i] = harmonic[i - 1] + 1.0 / i as f64;
    }
    let h = harmonic[n_total - 1];
    let g: f64 = (1..=n_total - 2).map(|i| (h - harmonic[i]) / (nf - i as f64)).sum();
    let a = (4.0 * g - 6.0) * (kf - 1.0) + (10.0 - 6.0 * g) * h_big;
    let b = (2.0 * g - 4.0) * kf * kf + 8.0 * h * kf + (2.0 * g - 14.0 * h - 4.0) * h_big - 8.0 * h + 4.0 * g - 6.0;
    let c = (6.0 * h + 2.0 * g - 2.0) * kf * kf + (4.0 * h - 4.0 * g + 6.0) * kf + (2.0 * h - 6.0) * h_big + 4.0 * h;
    let d = (2.0 * h + 6.0) * kf * kf - 4.0 * h * kf;
    let var = (a * nf.powi(3) + b * nf * nf + c * nf + d) / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0));
    let m = k - 1;
    let t = (a2 - m as f64) / var.sqrt();
    let p = anderson_darling_p(t, m);
    Ok(TestReport::new(Method::AndersonDarling, t, p, samples.iter().map(|s| s.len()).collect()))
}

pub fn anderson_darling_2sample(a: &[f64], b: &[f64]) -> Result<TestReport> {
    anderson_darling_ksample(&[a, b])
}

fn f_report(method: Method, numerator: f64, df1: f64, residual: f64, df2: f64, sizes: Vec<usize>) -> Result<TestReport> {
    if df1 < 1.0 || df2 < 1.0 {
        return Err(Error::input(format!("F test needs positive degrees of freedom ({df1}, {df2})")));
    }
    if residual <= 0.0 {
        return Err(Error::input("F test undefined: zero residual variance"));
    }
    let f = ((numerator / df1) / (residual / df2)).max(0.0);
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::input(e.to_string()))?;
    let p = dist.sf(f);
    let mut r = TestReport::new(method, f, p, sizes);
    r.df = Some(df1);
    r.df2 = Some(df2);
    Ok(r)
}

/// Residual sum of squares around group means, and the group sizes.
fn within_group_ss(y: &[f64], groups: &[u32]) -> (f64, Vec<usize>) {
    let levels = groups.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
    let mut sum = vec![0.0; levels];
    let mut count = vec![0usize; levels];
    for (&v, &g) in y.iter().zip(groups) {
        sum[g as usize] += v;
        count[g as usize] += 1;
    }
    let ss = y
        .iter()
        .zip(groups)
        .map(|(&v, &g)| (v - sum[g as usize] / count[g as usize] as f64).powi(2))
        .sum();
    (ss, count.into_iter().filter(|&c| c > 0).collect())
}

/// Smallest sum of squares treated as nonzero, relative to the total.
fn ss_floor(y: &[f64]) -> f64 {
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    1e-24 * scale
}

/// One-way ANOVA F test of equal group means.
pub fn anova_one_way(y: &[f64], groups: &[u32]) -> Result<TestReport> {
    check_finite(&[y])?;
    if y.len() != groups.len() {
        return Err(Error::input("response and group lengths differ"));
    }
    let (ssw, sizes) = within_group_ss(y, groups);
    let k = sizes.len();
    if k < 2 {
        return Err(Error::input("one-way ANOVA needs at least two nonempty groups"));
    }
    let total = sum_sq_dev(y);
    let ssw = if ssw <= ss_floor(y) { 0.0 } else { ssw };
    f_report(Method::AnovaOneWay, total - ssw, (k - 1) as f64, ssw, (y.len() - k) as f64, sizes)
}

/// Joint F test of every `x`-related term (main effect and `x·z`
/// interaction) given `z`: the cell-means model against the `z`-only model.
pub fn anova_two_way(y: &[f64], x: &[u32], z: &[u32]) -> Result<TestReport> {
    check_finite(&[y])?;
    if y.len() != x.len() || y.len() != z.len() {
        return Err(Error::input("response, covariate and group lengths differ"));
    }
    let xs = distinct_sorted(x);
    let zs = distinct_sorted(z);
    let xl = *xs.last().unwrap_or(&0) as usize + 1;
    let cells: Vec<u32> = x.iter().zip(z).map(|(&a, &b)| b * xl as u32 + a).collect();
    let observed = distinct_sorted(&cells).len();
    if observed < xs.len() * zs.len() {
        return Err(Error::input("two-way ANOVA: empty (x, z) cells make the full model rank-deficient"));
    }
    if xs.len() < 2 {
        return Err(Error::input("two-way ANOVA needs at least two covariate levels"));
    }
    let (rss_full, sizes) = within_group_ss(y, &cells);
    let (rss_red, _) = within_group_ss(y, z);
    let rss_full = if rss_full <= ss_floor(y) { 0.0 } else { rss_full };
    let df_full = (y.len() - observed) as f64;
    let df_red = (y.len() - zs.len()) as f64;
    f_report(Method::AnovaTwoWay, rss_red - rss_full, df_red - df_full, rss_full, df_full, sizes)
}

fn distinct_sorted(v: &[u32]) -> Vec<u32> {
    let mut d = v.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

fn least_squares_rss(y: &DVector<f64>, design: &DMatrix<f64>) -> (f64, usize) {
    let svd = design.clone().svd(true, true);
    let tol = svd.singular_values.max() * design.nrows().max(design.ncols()) as f64 * f64::EPSILON;
    let rank = svd.rank(tol);
    let coef = svd.solve(y, tol).expect("SVD with U and V");
    ((design * coef - y).norm_squared(), rank)
}

/// Generic nested linear-model F test: `reduced` must span a subspace of
/// `full`. Rank-deficient full designs are rejected.
pub fn anova_model_comparison(y: &[f64], reduced: &DMatrix<f64>, full: &DMatrix<f64>) -> Result<TestReport> {
    check_finite(&[y])?;
    let n = y.len();
    if reduced.nrows() != n || full.nrows() != n {
        return Err(Error::input("design matrices must have one row per observation"));
    }
    let yv = DVector::from_column_slice(y);
    let (rss_full, rank_full) = least_squares_rss(&yv, full);
    if rank_full < full.ncols() {
        return Err(Error::input("full model design is rank-deficient"));
    }
    let (rss_red, rank_red) = least_squares_rss(&yv, reduced);
    let rss_full = if rss_full <= ss_floor(y) { 0.0 } else { rss_full };
    f_report(
        Method::AnovaModelComparison,
        rss_red - rss_full,
        rank_full as f64 - rank_red as f64,
        rss_full,
        (n - rank_full) as f64,
        vec![n],
    )
}

/// Treatment-coded design: intercept, then one column per non-reference
/// level of each factor, then products for the requested interactions.
pub fn factor_design(factors: &[(&[u32], usize)], interactions: &[(usize, usize)]) -> DMatrix<f64> {
    let n = factors.first().map_or(0, |f| f.0.len());
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut dummies: Vec<Vec<Vec<f64>>> = Vec::new();
    for &(codes, levels) in factors {
        let d: Vec<Vec<f64>> =
            (1..levels).map(|l| codes.iter().map(|&c| (c as usize == l) as u8 as f64).collect()).collect();
        cols.extend(d.iter().cloned());
        dummies.push(d);
    }
    for &(a, b) in interactions {
        for da in &dummies[a] {
            for db in &dummies[b] {
                cols.push(da.iter().zip(db).map(|(u, v)| u * v).collect());
            }
        }
    }
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// F test of the `x·z` interaction alone: additive model `{z, x}` against
/// the full `{z, x, x·z}` model.
pub fn anova_interaction(y: &[f64], x: &[u32], z: &[u32]) -> Result<TestReport> {
    if y.len() != x.len() || y.len() != z.len() {
        return Err(Error::input("response, covariate and group lengths differ"));
    }
    let xl = x.iter().map(|&v| v as usize + 1).max().unwrap_or(1);
    let zl = z.iter().map(|&v| v as usize + 1).max().unwrap_or(1);
    let additive = factor_design(&[(z, zl), (x, xl)], &[]);
    let full = factor_design(&[(z, zl), (x, xl)], &[(0, 1)]);
    let mut r = anova_model_comparison(y, &additive, &full)?;
    r.method = Method::AnovaInteraction;
    Ok(r)
}
