//! Synthetic scenarios for power studies, a correlated binary marker chain,
//! and ROC/AUC evaluation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::bf::{BfEngine, Hyperparams};
use crate::dataset::SlicedDataset;
use crate::error::{Error, Result};
use crate::permutation::replicate_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Scenario 1: N(−μ, 1) vs N(μ, 1).
    MeanShift,
    /// Scenario 2: N(0, 1) vs N(0, σ²).
    ScaleChange,
    /// Scenario 3: two-component mixture vs a moment-matched normal.
    SymMixture,
    /// Scenario 4: as scenario 3 with an unbalanced mixing weight.
    AsymMixture,
    /// Conditional cases 1–6.
    Case(u8),
    /// Correlated marker panel with a planted causal pair.
    Qtl,
}

impl Family {
    pub fn is_two_sample(&self) -> bool {
        matches!(self, Family::MeanShift | Family::ScaleChange | Family::SymMixture | Family::AsymMixture)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::MeanShift => write!(f, "s1"),
            Family::ScaleChange => write!(f, "s2"),
            Family::SymMixture => write!(f, "s3"),
            Family::AsymMixture => write!(f, "s4"),
            Family::Case(c) => write!(f, "case{c}"),
            Family::Qtl => write!(f, "qtl"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Ok(match s.as_str() {
            "s1" | "mean_shift" => Family::MeanShift,
            "s2" | "scale_change" => Family::ScaleChange,
            "s3" | "sym_mixture" => Family::SymMixture,
            "s4" | "asym_mixture" => Family::AsymMixture,
            "qtl" => Family::Qtl,
            _ => match s.strip_prefix("case").and_then(|c| c.parse::<u8>().ok()) {
                Some(c @ 1..=6) => Family::Case(c),
                _ => return Err(Error::input(format!("unknown scenario '{s}'"))),
            },
        })
    }
}

/// Scenario parameters. [`ScenarioSpec::new`] fills in the reference
/// defaults for the family; every field may be overridden afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    pub mu: f64,
    pub sigma: f64,
    pub theta: f64,
    pub gamma: f64,
    pub p0: f64,
    pub markers: usize,
    pub flip_prob: f64,
    /// Conditional case used for the trait in the marker-panel family.
    pub qtl_case: u8,
}

impl ScenarioSpec {
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        let (mu, theta) = match family {
            Family::MeanShift => (0.1, 0.5),
            Family::SymMixture => (1.2, 0.5),
            Family::AsymMixture => (1.2, 0.9),
            Family::Case(3 | 4) => (0.4, 0.5),
            Family::Qtl => (1.0, 0.5),
            _ => (0.2, 0.5),
        };
        Self {
            family,
            n,
            seed,
            mu,
            sigma: 1.2,
            theta,
            gamma: 0.2,
            p0: 0.5,
            markers: 100,
            flip_prob: 0.1,
            qtl_case: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::input("n must be at least 1"));
        }
        for (name, v) in [("theta", self.theta), ("p0", self.p0), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.sigma > 0.0) || !self.mu.is_finite() || !self.gamma.is_finite() {
            return Err(Error::input("sigma must be positive and mu, gamma finite"));
        }
        if let Family::Case(c) = self.family {
            if !(1..=6).contains(&c) {
                return Err(Error::input(format!("unknown case {c}")));
            }
        }
        if self.family == Family::Qtl && (self.markers < 2 || !(1..=6).contains(&self.qtl_case)) {
            return Err(Error::input("marker panel needs at least 2 markers and a case in 1..=6"));
        }
        Ok(())
    }
}

/// Raw simulated observations in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: Vec<f64>,
    pub x: Vec<u32>,
    /// Binary conditioning covariate; `None` for two-sample scenarios.
    pub z: Option<Vec<u32>>,
}

impl Sample {
    pub fn dataset(&self) -> Result<SlicedDataset> {
        SlicedDataset::from_codes(&self.y, &self.x, 2, self.z.as_deref().map(|z| (z, 2)))
    }

    /// Null counterpart: `x` permuted within `z` groups (or globally), which
    /// keeps the response law and any `z`–`y` association.
    pub fn shuffled<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let mut x = self.x.clone();
        match &self.z {
            None => x.shuffle(rng),
            Some(z) => {
                for level in 0..2 {
                    let idx: Vec<usize> = (0..z.len()).filter(|&i| z[i] == level).collect();
                    let mut vals: Vec<u32> = idx.iter().map(|&i| x[i]).collect();
                    vals.shuffle(rng);
                    for (&i, v) in idx.iter().zip(vals) {
                        x[i] = v;
                    }
                }
            }
        }
        Sample { y: self.y.clone(), x, z: self.z.clone() }
    }

    /// Responses split by covariate value.
    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let a = self.y.iter().zip(&self.x).filter(|(_, &x)| x == 0).map(|(&y, _)| y).collect();
        let b = self.y.iter().zip(&self.x).filter(|(_, &x)| x == 1).map(|(&y, _)| y).collect();
        (a, b)
    }
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Standard Cauchy draw by inverse CDF.
pub fn cauchy<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (PI * (u - 0.5)).tan()
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u32 {
    (rng.random::<f64>() < p) as u32
}

fn two_sample_draw<R: Rng + ?Sized>(spec: &ScenarioSpec, x: u32, rng: &mut R) -> f64 {
    let e = normal(rng);
    match (spec.family, x) {
        (Family::MeanShift, 0) => e - spec.mu,
        (Family::MeanShift, _) => e + spec.mu,
        (Family::ScaleChange, 0) => e,
        (Family::ScaleChange, _) => spec.sigma * e,
        (_, 0) => {
            let sign = if rng.random::<f64>() < spec.theta { 1.0 } else { -1.0 };
            e + sign * spec.mu
        }
        (_, _) => {
            let (t, m) = (spec.theta, spec.mu);
            (2.0 * t - 1.0) * m + (1.0 + 4.0 * t * (1.0 - t) * m * m).sqrt() * e
        }
    }
}

/// Two-sample scenarios 1–4 with `X ~ Bern(0.5)`.
pub fn gen_two_sample(spec: &ScenarioSpec) -> Result<Sample> {
    spec.validate()?;
    if !spec.family.is_two_sample() {
        return Err(Error::input(format!("{} is not a two-sample scenario", spec.family)));
    }
    let mut rng = replicate_rng(spec.seed, 0);
    Ok(gen_two_sample_with(spec, &mut rng))
}

fn gen_two_sample_with<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Sample {
    let x: Vec<u32> = (0..spec.n).map(|_| bernoulli(rng, 0.5)).collect();
    let y = x.iter().map(|&xi| two_sample_draw(spec, xi, rng)).collect();
    Sample { y, x, z: None }
}

/// Response for conditional case `case` given covariate values.
fn case_response<R: Rng + ?Sized>(case: u8, mu: f64, gamma: f64, x: u32, z: u32, rng: &mut R) -> f64 {
    let (xf, zf) = (x as f64, z as f64);
    let additive = case % 2 == 1;
    let mean = if additive { mu * zf + mu * xf } else { mu * zf * xf };
    let noise = match case {
        3 | 4 => cauchy(rng),
        5 => (1.0 + gamma * xf) * normal(rng),
        6 => (1.0 + gamma * zf * xf) * normal(rng),
        _ => normal(rng),
    };
    mean + noise
}

/// Conditional cases 1–6: `Z ~ Bern(0.5)`, `X | Z=0 ~ Bern(p₀)`,
/// `X | Z=1 ~ Bern(1−p₀)`.
pub fn gen_conditional(spec: &ScenarioSpec) -> Result<Sample> {
    spec.validate()?;
    let Family::Case(case) = spec.family else {
        return Err(Error::input(format!("{} is not a conditional case", spec.family)));
    };
    let mut rng = replicate_rng(spec.seed, 0);
    Ok(gen_conditional_with(spec, case, &mut rng))
}

fn gen_conditional_with<R: Rng + ?Sized>(spec: &ScenarioSpec, case: u8, rng: &mut R) -> Sample {
    let mut x = Vec::with_capacity(spec.n);
    let mut z = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let zi = bernoulli(rng, 0.5);
        let xi = bernoulli(rng, if zi == 0 { spec.p0 } else { 1.0 - spec.p0 });
        y.push(case_response(case, spec.mu, spec.gamma, xi, zi, rng));
        x.push(xi);
        z.push(zi);
    }
    Sample { y, x, z: Some(z) }
}

/// `m` binary markers per individual along a first-order Markov chain:
/// marker 1 is Bern(0.5), each next marker flips with probability
/// `flip_prob`. Returns one code vector per marker.
pub fn gen_qtl_markers(m: usize, n: usize, flip_prob: f64, seed: u64) -> Result<Vec<Vec<u32>>> {
    if m < 2 {
        return Err(Error::input("marker panel needs at least 2 markers"));
    }
    if !(0.0..=0.5).contains(&flip_prob) {
        return Err(Error::input("flip probability must lie in [0, 0.5]"));
    }
    let mut rng = replicate_rng(seed, 0);
    Ok(gen_markers_with(m, n, flip_prob, &mut rng))
}

fn gen_markers_with<R: Rng + ?Sized>(m: usize, n: usize, flip_prob: f64, rng: &mut R) -> Vec<Vec<u32>> {
    let mut markers = vec![vec![0u32; n]; m];
    for i in 0..n {
        let mut v = bernoulli(rng, 0.5);
        markers[0][i] = v;
        for marker in markers.iter_mut().skip(1) {
            if rng.random::<f64>() < flip_prob {
                v ^= 1;
            }
            marker[i] = v;
        }
    }
    markers
}

/// Marker panel with a trait driven by two randomly placed markers.
#[derive(Debug, Clone, PartialEq)]
pub struct QtlSample {
    pub markers: Vec<Vec<u32>>,
    pub y: Vec<f64>,
    /// Indices of the markers playing the roles of `Z` and `X` in the case
    /// equation.
    pub causal: (usize, usize),
}

pub fn gen_qtl(spec: &ScenarioSpec) -> Result<QtlSample> {
    spec.validate()?;
    if spec.family != Family::Qtl {
        return Err(Error::input(format!("{} is not the marker-panel scenario", spec.family)));
    }
    let mut rng = replicate_rng(spec.seed, 0);
    let markers = gen_markers_with(spec.markers, spec.n, spec.flip_prob, &mut rng);
    let a = rng.random_range(0..spec.markers);
    let mut b = rng.random_range(0..spec.markers - 1);
    if b >= a {
        b += 1;
    }
    let y = (0..spec.n)
        .map(|i| case_response(spec.qtl_case, spec.mu, spec.gamma, markers[b][i], markers[a][i], &mut rng))
        .collect();
    Ok(QtlSample { markers, y, causal: (a, b) })
}

/// Draws a sample for any two-sample or conditional family.
pub fn generate(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<Sample> {
    spec.validate()?;
    match spec.family {
        Family::Case(c) => Ok(gen_conditional_with(spec, c, rng)),
        Family::Qtl => Err(Error::input("the marker-panel scenario has no single-covariate sample")),
        _ => Ok(gen_two_sample_with(spec, rng)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve over all thresholds (larger score = stronger evidence), AUC by
/// the trapezoid rule. NaN scores are an input error.
pub fn roc(scores_h1: &[f64], scores_h0: &[f64]) -> Result<RocCurve> {
    if scores_h1.is_empty() || scores_h0.is_empty() {
        return Err(Error::input("ROC needs nonempty score lists"));
    }
    if scores_h1.iter().chain(scores_h0).any(|s| s.is_nan()) {
        return Err(Error::input("ROC scores must not be NaN"));
    }
    let mut all: Vec<(f64, bool)> =
        scores_h1.iter().map(|&s| (s, true)).chain(scores_h0.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n1, n0) = (scores_h1.len() as f64, scores_h0.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = (fp as f64 / n0, tp as f64 / n1);
        let prev = *points.last().expect("nonempty");
        auc += (next.0 - prev.0) * (next.1 + prev.1) / 2.0;
        points.push(next);
    }
    Ok(RocCurve { points, auc })
}

/// Methods a power study can score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StudyMethod {
    Bf { alpha0: f64, lambda0: f64 },
    WelchT,
    RankSum,
    Ks,
    Ad,
    Anova,
}

impl StudyMethod {
    pub fn parse_list(list: &str) -> Result<Vec<StudyMethod>> {
        list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
    }

    pub fn label(&self) -> String {
        match self {
            StudyMethod::Bf { alpha0, lambda0 } if *alpha0 == 1.0 && *lambda0 == 1.0 => "bf".into(),
            StudyMethod::Bf { alpha0, lambda0 } if *lambda0 == 1.0 => format!("bf:{alpha0}"),
            StudyMethod::Bf { alpha0, lambda0 } => format!("bf:{alpha0}:{lambda0}"),
            StudyMethod::WelchT => "t".into(),
            StudyMethod::RankSum => "ranksum".into(),
            StudyMethod::Ks => "ks".into(),
            StudyMethod::Ad => "ad".into(),
            StudyMethod::Anova => "anova".into(),
        }
    }
}

impl FromStr for StudyMethod {
    type Err = Error;

    /// `bf`, `bf:<alpha0>`, `bf:<alpha0>:<lambda0>`, `t`, `ranksum`, `ks`,
    /// `ad`, `anova`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default().to_ascii_lowercase();
        let method = match head.as_str() {
            "bf" => {
                let num = |p: Option<&str>| -> Result<f64> {
                    p.map_or(Ok(1.0), |v| v.parse().map_err(|_| Error::input(format!("bad number in '{s}'"))))
                };
                let alpha0 = num(parts.next())?;
                let lambda0 = num(parts.next())?;
                Hyperparams::new(alpha0, lambda0)?;
                StudyMethod::Bf { alpha0, lambda0 }
            }
            "t" | "welch" => StudyMethod::WelchT,
            "ranksum" | "wilcoxon" => StudyMethod::RankSum,
            "ks" => StudyMethod::Ks,
            "ad" => StudyMethod::Ad,
            "anova" => StudyMethod::Anova,
            _ => return Err(Error::input(format!("unknown method '{s}'"))),
        };
        if parts.next().is_some() {
            return Err(Error::input(format!("too many fields in method '{s}'")));
        }
        Ok(method)
    }
}

/// Score (larger = more evidence) and, where defined, a p-value.
fn score(method: &StudyMethod, sample: &Sample, engines: &BTreeMap<String, BfEngine>) -> Result<(f64, Option<f64>)> {
    let conditional = sample.z.is_some();
    match method {
        StudyMethod::Bf { .. } => {
            let engine = &engines[&method.label()];
            Ok((engine.log_bf(&sample.dataset()?), None))
        }
        StudyMethod::Anova => {
            let r = match &sample.z {
                Some(z) => baselines::anova_two_way(&sample.y, &sample.x, z)?,
                None => baselines::anova_one_way(&sample.y, &sample.x)?,
            };
            Ok((r.evidence(), Some(r.p_value)))
        }
        _ if conditional => {
            Err(Error::input(format!("method '{}' has no conditional form; use bf or anova", method.label())))
        }
        _ => {
            let (a, b) = sample.split();
            let r = match method {
                StudyMethod::WelchT => baselines::welch_t(&a, &b)?,
                StudyMethod::RankSum => baselines::wilcoxon_rank_sum(&a, &b)?,
                StudyMethod::Ks => baselines::ks_two_sample(&a, &b)?,
                _ => baselines::anderson_darling_2sample(&a, &b)?,
            };
            // the standardized statistic keeps resolution where the
            // interpolated p-value saturates
            let s = if *method == StudyMethod::Ad { r.statistic } else { r.evidence() };
            Ok((s, Some(r.p_value)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    H0,
    H1,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub method: String,
    pub replicate: usize,
    pub hypothesis: Hypothesis,
    pub score: f64,
    #[serde(skip)]
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub auc: f64,
    /// Fraction of alternative-arm replicates with p < 0.05.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate_h1: Option<f64>,
    /// Fraction of null-arm replicates with p < 0.05.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate_h0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub scenario: ScenarioSpec,
    pub replicates: usize,
    pub rows: Vec<ScoreRow>,
    pub summary: Vec<MethodSummary>,
}

impl StudyResult {
    pub fn auc(&self, method: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method).map(|s| s.auc)
    }

    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Tab-separated `method, replicate, hypothesis, score`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\treplicate\thypothesis\tscore\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.method, r.replicate, r.hypothesis, r.score));
        }
        out
    }
}

/// Runs `replicates` alternative and null draws of a scenario and scores
/// each with every method. The null arm permutes `x` (within `z`) of a
/// fresh alternative draw. Replicate `r` uses streams `2r` and `2r + 1` of
/// the scenario seed, so output is independent of thread count.
pub fn run_study(spec: &ScenarioSpec, methods: &[StudyMethod], replicates: usize) -> Result<StudyResult> {
    spec.validate()?;
    if spec.family == Family::Qtl {
        return Err(Error::input("power studies cover scenarios s1–s4 and case1–case6"));
    }
    if methods.is_empty() || replicates == 0 {
        return Err(Error::input("a study needs at least one method and one replicate"));
    }
    let mut engines = BTreeMap::new();
    for m in methods {
        if let StudyMethod::Bf { alpha0, lambda0 } = m {
            engines.insert(m.label(), BfEngine::new(Hyperparams::new(*alpha0, *lambda0)?, 2, spec.n));
        }
    }
    let per_rep: Vec<Vec<ScoreRow>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<ScoreRow>> {
            let mut rng = replicate_rng(spec.seed, 2 * r as u64);
            let h1 = generate(spec, &mut rng)?;
            let mut rng0 = replicate_rng(spec.seed, 2 * r as u64 + 1);
            let h0 = generate(spec, &mut rng0)?.shuffled(&mut rng0);
            let mut rows = Vec::with_capacity(2 * methods.len());
            for (hyp, sample) in [(Hypothesis::H1, &h1), (Hypothesis::H0, &h0)] {
                for m in methods {
                    let (score, p_value) = score(m, sample, &engines)?;
                    rows.push(ScoreRow { method: m.label(), replicate: r, hypothesis: hyp, score, p_value });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ScoreRow> = per_rep.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for m in methods {
        let label = m.label();
        let mine: Vec<&ScoreRow> = rows.iter().filter(|r| r.method == label).collect();
        let arm = |h: Hypothesis| mine.iter().copied().filter(move |r| r.hypothesis == h);
        let s1: Vec<f64> = arm(Hypothesis::H1).map(|r| r.score).collect();
        let s0: Vec<f64> = arm(Hypothesis::H0).map(|r| r.score).collect();
        let rate = |h: Hypothesis| -> Option<f64> {
            let ps: Vec<f64> = arm(h).filter_map(|r| r.p_value).collect();
            (!ps.is_empty()).then(|| ps.iter().filter(|&&p| p < 0.05).count() as f64 / ps.len() as f64)
        };
        summary.push(MethodSummary {
            auc: roc(&s1, &s0)?.auc,
            rejection_rate_h1: rate(Hypothesis::H1),
            rejection_rate_h0: rate(Hypothesis::H0),
            method: label,
        });
    }
    Ok(StudyResult { scenario: spec.clone(), replicates, rows, summary })
}
