//! Bayes factor of the sliced inverse model.
//!
//! Under the null, `X | Z = j` is multinomial with a Dirichlet(α₀/|X|, ...)
//! prior independent of the response. Under the alternative the ranked
//! observations are cut into contiguous slices and each (group, slice) cell
//! has its own multinomial. The Bayes factor averages the slice-wise marginal
//! likelihood ratio over every slicing scheme, weighted by a prior that
//! inserts a boundary in each gap independently with probability π₀.

use std::ops::Range;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{PrefixCountTable, SlicedDataset};
use crate::error::{Error, Result};
use crate::special::{ln_gamma, log_sum_exp, softplus};

/// Maximum number of admissible gaps accepted by [`bf_bruteforce`].
pub const BRUTEFORCE_MAX_GAPS: usize = 20;

/// Prior hyper-parameters. The boundary probability π₀ is derived from the
/// sample size as `π₀ = 1 / (1 + n^λ₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha0: f64,
    pub lambda0: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { alpha0: 1.0, lambda0: 1.0 }
    }
}

impl Hyperparams {
    pub fn new(alpha0: f64, lambda0: f64) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::input(format!("alpha0 must be positive and finite, got {alpha0}")));
        }
        if !lambda0.is_finite() {
            return Err(Error::input(format!("lambda0 must be finite, got {lambda0}")));
        }
        Ok(Self { alpha0, lambda0 })
    }

    /// Boundary probability for a sample of size `n`.
    pub fn pi0(&self, n: usize) -> f64 {
        self.log_pi0(n).exp()
    }

    /// `log π₀ = -log(1 + n^λ₀)`.
    pub fn log_pi0(&self, n: usize) -> f64 {
        -softplus(self.lambda0 * (n as f64).ln())
    }

    /// `log(1 - π₀) = -log(1 + n^-λ₀)`.
    pub fn log_one_minus_pi0(&self, n: usize) -> f64 {
        -softplus(-self.lambda0 * (n as f64).ln())
    }
}

/// Output of a Bayes factor evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfResult {
    /// Natural log of the Bayes factor.
    pub log_bf: f64,
    pub hyper: Hyperparams,
    pub pi0: f64,
    pub n: usize,
    pub x_levels: usize,
    pub z_levels: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl BfResult {
    pub fn bf(&self) -> f64 {
        self.log_bf.exp()
    }
}

/// A slicing of the ranked sample: ranks at which a new slice starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlicingScheme {
    boundaries: Vec<usize>,
}

impl SlicingScheme {
    /// Validates boundaries against the dataset: strictly increasing, inside
    /// `1..n`, and on tie-block starts.
    pub fn new(boundaries: Vec<usize>, d: &SlicedDataset) -> Result<Self> {
        let n = d.n();
        let mut prev = 0;
        for &b in &boundaries {
            if b <= prev || b >= n {
                return Err(Error::input(format!("slice boundary {b} leaves an empty slice")));
            }
            if d.block_ends().binary_search(&b).is_err() {
                return Err(Error::input(format!("slice boundary {b} splits a tie block")));
            }
            prev = b;
        }
        Ok(Self { boundaries })
    }

    pub fn single() -> Self {
        Self { boundaries: Vec::new() }
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_slices(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn slices(&self, n: usize) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(self.num_slices());
        let mut start = 0;
        for &b in self.boundaries.iter().chain(std::iter::once(&n)) {
            out.push(start..b);
            start = b;
        }
        out
    }
}

/// `log ψ` of one segment from its `(z, x)` counts (`z`-major, `x_levels`
/// counts per group):
///
/// `Σ_j [lnΓ(α₀) − lnΓ(α₀ + n_j) + Σ_k (lnΓ(n_jk + α₀/|X|) − lnΓ(α₀/|X|))]`.
pub fn log_psi_segment(counts: &[u32], x_levels: usize, hyper: &Hyperparams) -> f64 {
    assert!(x_levels > 0 && counts.len().is_multiple_of(x_levels), "counts must be a whole number of groups");
    let a = hyper.alpha0 / x_levels as f64;
    let lg_a = ln_gamma(a);
    let lg_alpha = ln_gamma(hyper.alpha0);
    counts
        .chunks_exact(x_levels)
        .map(|group| {
            let total: u32 = group.iter().sum();
            let cells: f64 = group.iter().map(|&c| ln_gamma(c as f64 + a) - lg_a).sum();
            lg_alpha - ln_gamma(hyper.alpha0 + total as f64) + cells
        })
        .sum()
}

/// Precomputed log-gamma differences for integer counts.
#[derive(Debug, Clone)]
struct LogGammaTable {
    /// `lnΓ(c + α₀/|X|) − lnΓ(α₀/|X|)`
    cell: Vec<f64>,
    /// `lnΓ(α₀) − lnΓ(α₀ + c)`
    group: Vec<f64>,
}

impl LogGammaTable {
    fn new(hyper: &Hyperparams, x_levels: usize, max_count: usize) -> Self {
        let a = hyper.alpha0 / x_levels as f64;
        let lg_a = ln_gamma(a);
        let lg_alpha = ln_gamma(hyper.alpha0);
        let cell = (0..=max_count).map(|c| ln_gamma(c as f64 + a) - lg_a).collect();
        let group = (0..=max_count).map(|c| lg_alpha - ln_gamma(hyper.alpha0 + c as f64)).collect();
        Self { cell, group }
    }
}

/// Reusable evaluator for the dynamic program at fixed hyper-parameters,
/// covariate cardinality and maximum sample size.
///
/// Building the log-gamma tables costs `O(n)` calls to `lnΓ`; after that each
/// segment score is a handful of table lookups, which is what makes
/// permutation loops affordable.
#[derive(Debug, Clone)]
pub struct BfEngine {
    hyper: Hyperparams,
    x_levels: usize,
    table: LogGammaTable,
}

impl BfEngine {
    pub fn new(hyper: Hyperparams, x_levels: usize, max_n: usize) -> Self {
        assert!(x_levels > 0);
        Self { hyper, x_levels, table: LogGammaTable::new(&hyper, x_levels, max_n) }
    }

    pub fn for_dataset(d: &SlicedDataset, hyper: Hyperparams) -> Self {
        Self::new(hyper, d.x_levels(), d.n())
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn max_n(&self) -> usize {
        self.table.cell.len() - 1
    }

    #[inline]
    fn segment(&self, hi: &[u32], lo: &[u32]) -> f64 {
        if self.x_levels == 2 && hi.len() == 2 {
            let a = (hi[0] - lo[0]) as usize;
            let b = (hi[1] - lo[1]) as usize;
            return self.table.cell[a] + self.table.cell[b] + self.table.group[a + b];
        }
        let mut acc = 0.0;
        for (h, l) in hi.chunks_exact(self.x_levels).zip(lo.chunks_exact(self.x_levels)) {
            let mut total = 0usize;
            for (&a, &b) in h.iter().zip(l) {
                let c = (a - b) as usize;
                total += c;
                acc += self.table.cell[c];
            }
            acc += self.table.group[total];
        }
        acc
    }

    /// Natural-log Bayes factor of a dataset.
    pub fn log_bf(&self, d: &SlicedDataset) -> f64 {
        assert_eq!(d.x_levels(), self.x_levels, "engine built for a different |X|");
        let prefix = PrefixCountTable::new(d);
        self.log_bf_prefix(&prefix, d.block_ends())
    }

    /// Forward recursion over tie-block ends `e_1 < ... < e_B = n`.
    ///
    /// With `H_i = log ψ(1..e_i)` and `g_i` the log of the prior-weighted sum
    /// of slice likelihood ratios over all slicings of the first `e_i` ranks,
    ///
    /// `g_i = (e_i − 1) log(1−π₀) − H_i + LSE_{j<i}(c_j + log ψ(e_j+1..e_i))`
    ///
    /// where `c_0 = 0` and `c_j = g_j + H_j + log π₀ − e_j log(1−π₀)`. Each
    /// boundary contributes π₀ and each non-boundary gap 1−π₀, so the
    /// single-slice term carries `(1−π₀)^(n−1)`. The result is `g_B`.
    pub fn log_bf_prefix(&self, prefix: &PrefixCountTable, block_ends: &[usize]) -> f64 {
        let n = prefix.n();
        assert!(n <= self.max_n(), "engine tables sized for n <= {}", self.max_n());
        assert_eq!(block_ends.last().copied(), Some(n));
        let log_pi = self.hyper.log_pi0(n);
        let log_stay = self.hyper.log_one_minus_pi0(n);

        let blocks = block_ends.len();
        let width = prefix.width();
        let cum = prefix.data();
        // carry[j] = c_j, offsets[j] = row offset of e_j, with e_0 = 0
        let mut carry = Vec::with_capacity(blocks + 1);
        let mut offsets = Vec::with_capacity(blocks + 1);
        carry.push(0.0);
        offsets.push(0usize);
        let mut terms = Vec::with_capacity(blocks);
        let mut last = 0.0;
        for &e in block_ends {
            let hi = &cum[e * width..(e + 1) * width];
            // Terms relative to the single-slice term t_0 = c_0 + H_i = H_i, so
            // g_i = (e_i − 1) log(1−π₀) + log(1 + Σ_{j≥1} exp(t_j − t_0)). Taking
            // log1p of the tail keeps log BF accurate when it is tiny (large λ₀)
            // instead of losing it to cancellation between H_i-sized numbers.
            let head = self.segment(hi, &cum[..width]);
            terms.clear();
            let mut max = 0.0f64;
            for (&c, &off) in carry.iter().zip(&offsets).skip(1) {
                let t = c + self.segment(hi, &cum[off..off + width]) - head;
                max = max.max(t);
                terms.push(t);
            }
            let tail = if max == 0.0 {
                terms.iter().map(|t| t.exp()).sum::<f64>().ln_1p()
            } else {
                max + ((-max).exp() + terms.iter().map(|t| (t - max).exp()).sum::<f64>()).ln()
            };
            let g = (e - 1) as f64 * log_stay + tail;
            carry.push(g + head + log_pi - e as f64 * log_stay);
            offsets.push(e * width);
            last = g;
        }
        last
    }
}

/// Bayes factor by dynamic programming over all admissible slicings.
/// `O(n²·|Z|·|X|)` time, `O(n·|Z|·|X|)` memory.
pub fn bf_dynamic_program(d: &SlicedDataset, hyper: &Hyperparams) -> BfResult {
    let started = Instant::now();
    let log_bf = BfEngine::for_dataset(d, *hyper).log_bf(d);
    BfResult {
        log_bf,
        hyper: *hyper,
        pi0: hyper.pi0(d.n()),
        n: d.n(),
        x_levels: d.x_levels(),
        z_levels: d.z_levels(),
        elapsed: started.elapsed(),
    }
}

fn direct_counts(d: &SlicedDataset, ranks: Range<usize>) -> Vec<u32> {
    let mut counts = vec![0u32; d.z_levels() * d.x_levels()];
    for r in ranks {
        counts[d.z()[r] as usize * d.x_levels() + d.x()[r] as usize] += 1;
    }
    counts
}

/// Bayes factor by explicit enumeration of every admissible slicing.
///
/// Exponential in the number of tie-block gaps; refuses more than
/// [`BRUTEFORCE_MAX_GAPS`]. Segment counts are tallied directly from the
/// ranked columns and scored with [`log_psi_segment`], so this shares no code
/// path with [`BfEngine`].
pub fn bf_bruteforce(d: &SlicedDataset, hyper: &Hyperparams) -> Result<BfResult> {
    let started = Instant::now();
    let n = d.n();
    let gaps: Vec<usize> = d.block_ends()[..d.block_ends().len() - 1].to_vec();
    if gaps.len() > BRUTEFORCE_MAX_GAPS {
        return Err(Error::capacity(format!(
            "{} admissible gaps exceed the enumeration limit of {BRUTEFORCE_MAX_GAPS}",
            gaps.len()
        )));
    }
    let log_pi = hyper.log_pi0(n);
    let log_stay = hyper.log_one_minus_pi0(n);
    let null = log_psi_segment(&direct_counts(d, 0..n), d.x_levels(), hyper);
    let mut terms = Vec::with_capacity(1 << gaps.len());
    for mask in 0u64..(1u64 << gaps.len()) {
        let bounds: Vec<usize> =
            gaps.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &g)| g).collect();
        let scheme = SlicingScheme { boundaries: bounds };
        let k = scheme.boundaries.len();
        let lik: f64 = scheme
            .slices(n)
            .into_iter()
            .map(|s| log_psi_segment(&direct_counts(d, s), d.x_levels(), hyper))
            .sum();
        terms.push(lik - null + k as f64 * log_pi + (n - 1 - k) as f64 * log_stay);
    }
    Ok(BfResult {
        log_bf: log_sum_exp(&terms),
        hyper: *hyper,
        pi0: hyper.pi0(n),
        n,
        x_levels: d.x_levels(),
        z_levels: d.z_levels(),
        elapsed: started.elapsed(),
    })
}

/// Plug-in estimate of the conditional mutual information between `x` and the
/// slice label given `z`, in nats.
pub fn mi_plugin(d: &SlicedDataset, scheme: &SlicingScheme) -> Result<f64> {
    let n = d.n();
    let slices = scheme.slices(n);
    if slices.iter().any(|s| s.is_empty()) {
        return Err(Error::input("slicing scheme has an empty slice"));
    }
    let xl = d.x_levels();
    let entropy_term = |counts: &[u32]| -> f64 {
        counts
            .chunks_exact(xl)
            .map(|g| {
                let nj: u32 = g.iter().sum();
                g.iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| c as f64 * (c as f64 / nj as f64).ln())
                    .sum::<f64>()
            })
            .sum()
    };
    let prefix = PrefixCountTable::new(d);
    let sliced: f64 = slices.into_iter().map(|s| entropy_term(&prefix.segment_counts(s))).sum();
    let pooled = entropy_term(&prefix.segment_counts(0..n));
    Ok(((sliced - pooled) / n as f64).max(0.0))
}
