//! Screening by unconditional Bayes factor followed by forward stepwise
//! selection on conditional Bayes factors given a growing super variable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::bf::{BfEngine, Hyperparams};
use crate::dataset::{encode_super_variable, Categorical, PrefixCountTable, Ranking, Table};
use crate::error::{Error, Result};
use crate::permutation::{permute_codes, pvalue_from_null, replicate_rng, within_group_permutation, PermutationPlan};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    /// Accept step `t` when BF > `thresholds[t-1]`; the last threshold
    /// repeats for later steps.
    FixedThreshold { thresholds: Vec<f64> },
    /// Accept when the max-BF permutation p-value is below the cutoff.
    Permutation { p_cutoff: f64 },
}

impl StopRule {
    /// Fixed threshold 150, the conventional "very strong evidence" level.
    pub fn very_strong() -> Self {
        StopRule::FixedThreshold { thresholds: vec![150.0] }
    }

    fn validate(&self) -> Result<()> {
        match self {
            StopRule::FixedThreshold { thresholds } => {
                if thresholds.is_empty() || thresholds.iter().any(|&b| !(b > 0.0)) {
                    return Err(Error::input("fixed thresholds must be a nonempty list of positive values"));
                }
            }
            StopRule::Permutation { p_cutoff } => {
                if !(*p_cutoff > 0.0 && *p_cutoff < 1.0) {
                    return Err(Error::input("p-value cutoff must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::Permutation { p_cutoff: 0.05 }
    }
}

impl FromStr for StopRule {
    type Err = Error;

    /// `bf:<b1>[,<b2>...]` or `perm:<cutoff>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) =
            s.split_once(':').ok_or_else(|| Error::input(format!("stop rule '{s}' must be bf:<b> or perm:<p>")))?;
        let bad = || Error::input(format!("bad number in stop rule '{s}'"));
        let rule = match kind {
            "bf" => StopRule::FixedThreshold {
                thresholds: value.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?,
            },
            "perm" | "p" => StopRule::Permutation { p_cutoff: value.trim().parse().map_err(|_| bad())? },
            _ => return Err(Error::input(format!("unknown stop rule '{kind}'"))),
        };
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionConfig {
    pub b0: f64,
    pub stop_rule: StopRule,
    pub permutations: usize,
    pub max_steps: usize,
    pub max_super_levels: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            b0: 10.0,
            stop_rule: StopRule::default(),
            permutations: 1000,
            max_steps: 10,
            max_super_levels: 64,
            seed: 0,
            hyper: Hyperparams::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b0 > 0.0) {
            return Err(Error::input("screening threshold b0 must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::input("max_steps must be at least 1"));
        }
        if self.max_super_levels < 1 {
            return Err(Error::input("max_super_levels must be at least 1"));
        }
        if matches!(self.stop_rule, StopRule::Permutation { .. }) && self.permutations == 0 {
            return Err(Error::input("the permutation stop rule needs at least one permutation"));
        }
        self.stop_rule.validate()
    }
}

/// A shared response and `m` categorical covariates, all stored in response
/// rank order.
#[derive(Debug, Clone)]
pub struct CovariateSet {
    ranking: Ranking,
    codes: Vec<Vec<u32>>,
    levels: Vec<usize>,
    names: Vec<String>,
}

impl CovariateSet {
    pub fn new(y: &[f64], covariates: Vec<(String, Categorical)>) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::input("at least one covariate is required"));
        }
        let ranking = Ranking::from_response(y)?;
        let mut codes = Vec::with_capacity(covariates.len());
        let mut levels = Vec::with_capacity(covariates.len());
        let mut names = Vec::with_capacity(covariates.len());
        for (name, c) in covariates {
            if c.len() != y.len() {
                return Err(Error::input(format!("covariate '{name}' has {} values, response has {}", c.len(), y.len())));
            }
            codes.push(ranking.gather(c.codes()));
            levels.push(c.levels());
            names.push(name);
        }
        Ok(Self { ranking, codes, levels, names })
    }

    /// Binary or other integer-coded covariates named `m1, m2, ...`.
    pub fn from_codes(y: &[f64], covariates: &[Vec<u32>]) -> Result<Self> {
        let cats = covariates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let levels = c.iter().max().map_or(1, |&m| m as usize + 1);
                Ok((format!("m{}", i + 1), Categorical::from_codes(c.clone(), levels)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(y, cats)
    }

    /// Every named column (or, if none are named, every column other than
    /// the response) becomes a covariate.
    pub fn from_table(table: &Table, response: &str, columns: &[&str]) -> Result<Self> {
        let y = table.numeric(response)?;
        let names: Vec<&str> = if columns.is_empty() {
            table.headers().iter().map(String::as_str).filter(|h| *h != response).collect()
        } else {
            columns.to_vec()
        };
        let cats = names.iter().map(|&c| Ok((c.to_string(), table.categorical(c)?))).collect::<Result<Vec<_>>>()?;
        Self::new(&y, cats)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn n(&self) -> usize {
        self.ranking.n()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn levels(&self, j: usize) -> usize {
        self.levels[j]
    }

    /// Covariate `j` in rank order.
    pub fn ranked_codes(&self, j: usize) -> &[u32] {
        &self.codes[j]
    }

    fn engines(&self, hyper: &Hyperparams) -> BTreeMap<usize, BfEngine> {
        let mut map = BTreeMap::new();
        for &l in &self.levels {
            map.entry(l).or_insert_with(|| BfEngine::new(*hyper, l, self.n()));
        }
        map
    }
}

/// Conditioning variable in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conditioning {
    pub codes: Vec<u32>,
    pub levels: usize,
}

impl Conditioning {
    pub fn none(n: usize) -> Self {
        Self { codes: vec![0; n], levels: 1 }
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.levels];
        for (r, &z) in self.codes.iter().enumerate() {
            g[z as usize].push(r);
        }
        g
    }
}

fn log_bf_codes(
    engines: &BTreeMap<usize, BfEngine>,
    set: &CovariateSet,
    j: usize,
    x: &[u32],
    z: &Conditioning,
) -> f64 {
    let prefix = PrefixCountTable::from_ranked(x, set.levels[j], &z.codes, z.levels);
    engines[&set.levels[j]].log_bf_prefix(&prefix, set.ranking.block_ends())
}

/// Conditional log BF of covariate `j` given `z`.
pub fn conditional_log_bf(set: &CovariateSet, j: usize, z: &Conditioning, hyper: &Hyperparams) -> f64 {
    let engines = set.engines(hyper);
    log_bf_codes(&engines, set, j, &set.codes[j], z)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenEntry {
    pub index: usize,
    pub label: String,
    pub log_bf: f64,
    /// 1-based rank by decreasing Bayes factor among all covariates.
    pub rank: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Screening {
    pub entries: Vec<ScreenEntry>,
    /// Indices with BF > b0, in index order.
    pub screened: Vec<usize>,
}

/// Unconditional Bayes factor of every covariate; keeps those with
/// BF strictly above `b0`.
pub fn screen(set: &CovariateSet, config: &SelectionConfig) -> Result<Screening> {
    config.validate()?;
    let engines = set.engines(&config.hyper);
    let none = Conditioning::none(set.n());
    let log_bfs: Vec<f64> =
        (0..set.len()).into_par_iter().map(|j| log_bf_codes(&engines, set, j, &set.codes[j], &none)).collect();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| log_bfs[b].total_cmp(&log_bfs[a]).then(a.cmp(&b)));
    let mut rank = vec![0; set.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    let entries: Vec<ScreenEntry> = (0..set.len())
        .map(|j| ScreenEntry {
            index: j,
            label: set.names[j].clone(),
            log_bf: log_bfs[j],
            rank: rank[j],
            passed: log_bfs[j].exp() > config.b0,
        })
        .collect();
    let screened = entries.iter().filter(|e| e.passed).map(|e| e.index).collect();
    Ok(Screening { entries, screened })
}

/// Null sample of `max_j log BF(X_j | Y_perm, Z)` over `candidates`, with
/// the response permuted within `z` groups. One permutation per replicate
/// is shared by all candidates.
pub fn max_bf_null(
    set: &CovariateSet,
    candidates: &[usize],
    z: &Conditioning,
    hyper: &Hyperparams,
    plan: &PermutationPlan,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::input("max-BF null needs at least one candidate"));
    }
    let engines = set.engines(hyper);
    let groups = z.groups();
    Ok((0..plan.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(plan.seed, r as u64);
            let source = within_group_permutation(&groups, set.n(), &mut rng);
            candidates
                .iter()
                .map(|&j| log_bf_codes(&engines, set, j, &permute_codes(&set.codes[j], &source), z))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Selected,
    /// The stop rule failed; the covariate is not added and selection ends.
    Stopped,
    /// Adding the covariate would exceed `max_super_levels`; selection ends.
    Capacity,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Selected => "selected",
            Decision::Stopped => "stopped",
            Decision::Capacity => "capacity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub index: usize,
    pub label: String,
    pub log_bf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    /// Levels of the conditioning variable after this step (unchanged when
    /// the step is not accepted).
    pub z_levels: usize,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionTrace {
    pub screened: Vec<ScreenEntry>,
    pub steps: Vec<StepRecord>,
    pub final_set: Vec<usize>,
    pub final_labels: Vec<String>,
}

/// Smallest index among the maxima.
fn argmax(candidates: &[usize], values: &[f64]) -> (usize, f64) {
    let mut best = (candidates[0], values[0]);
    for (&j, &v) in candidates.iter().zip(values).skip(1) {
        if v > best.1 || (v == best.1 && j < best.0) {
            best = (j, v);
        }
    }
    best
}

/// Forward stepwise selection over the screened set, which stays fixed.
pub fn stepwise(set: &CovariateSet, screening: &Screening, config: &SelectionConfig) -> Result<SelectionTrace> {
    config.validate()?;
    let engines = set.engines(&config.hyper);
    let mut z = Conditioning::none(set.n());
    let mut chosen: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    for t in 1..=config.max_steps {
        let candidates: Vec<usize> = screening.screened.iter().copied().filter(|j| !chosen.contains(j)).collect();
        if candidates.is_empty() {
            break;
        }
        let values: Vec<f64> =
            candidates.par_iter().map(|&j| log_bf_codes(&engines, set, j, &set.codes[j], &z)).collect();
        let (best, log_bf) = argmax(&candidates, &values);
        let (passes, p_value) = match &config.stop_rule {
            StopRule::FixedThreshold { thresholds } => {
                let b = thresholds[(t - 1).min(thresholds.len() - 1)];
                (log_bf.exp() > b, None)
            }
            StopRule::Permutation { p_cutoff } => {
                let seed = config.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let plan = PermutationPlan::new(config.permutations, seed)?;
                let null = max_bf_null(set, &candidates, &z, &config.hyper, &plan)?;
                let p = pvalue_from_null(log_bf, &null);
                (p < *p_cutoff, Some(p))
            }
        };
        let mut record =
            StepRecord { step: t, index: best, label: set.names[best].clone(), log_bf, p_value, z_levels: z.levels, decision: Decision::Stopped };
        if !passes {
            steps.push(record);
            break;
        }
        let grown = encode_super_variable(&[(&z.codes, z.levels), (&set.codes[best], set.levels[best])]);
        match grown {
            Ok((codes, levels)) if levels <= config.max_super_levels => {
                z = Conditioning { codes, levels };
                chosen.push(best);
                record.decision = Decision::Selected;
                record.z_levels = levels;
                steps.push(record);
            }
            Ok(_) | Err(Error::Capacity(_)) => {
                record.decision = Decision::Capacity;
                steps.push(record);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SelectionTrace {
        screened: screening.entries.iter().filter(|e| e.passed).cloned().collect(),
        steps,
        final_labels: chosen.iter().map(|&j| set.names[j].clone()).collect(),
        final_set: chosen,
    })
}

/// Screening followed by stepwise selection. An empty screened set yields
/// a trace with no steps.
pub fn select(set: &CovariateSet, config: &SelectionConfig) -> Result<SelectionTrace> {
    let screening = screen(set, config)?;
    stepwise(set, &screening, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bf::bf_dynamic_program;
    use crate::dataset::SlicedDataset;
    use crate::permutation::null_log_bf;
    use crate::simulation::normal;

    fn noise_set(n: usize, m: usize, seed: u64) -> (Vec<f64>, Vec<Vec<u32>>) {
        let mut rng = replicate_rng(seed, 0);
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let cov = (0..m).map(|_| (0..n).map(|_| (normal(&mut rng) > 0.0) as u32).collect()).collect();
        (y, cov)
    }

    #[test]
    fn stop_rule_parsing() {
        assert_eq!("bf:150".parse::<StopRule>().unwrap(), StopRule::very_strong());
        assert_eq!("perm:0.01".parse::<StopRule>().unwrap(), StopRule::Permutation { p_cutoff: 0.01 });
        assert_eq!(
            "bf:10,20".parse::<StopRule>().unwrap(),
            StopRule::FixedThreshold { thresholds: vec![10.0, 20.0] }
        );
        assert!("perm:1.5".parse::<StopRule>().is_err());
        assert!("bf:-1".parse::<StopRule>().is_err());
        assert!("nope".parse::<StopRule>().is_err());
    }

    #[test]
    fn conditional_bf_matches_dataset_path() {
        let (y, cov) = noise_set(60, 2, 1);
        let set = CovariateSet::from_codes(&y, &cov).unwrap();
        let (zc, zl) = encode_super_variable(&[(set.ranked_codes(1), 2)]).unwrap();
        let z = Conditioning { codes: zc, levels: zl };
        let direct = bf_dynamic_program(
            &SlicedDataset::from_codes(&y, &cov[0], 2, Some((&cov[1], 2))).unwrap(),
            &Hyperparams::default(),
        );
        assert!((conditional_log_bf(&set, 0, &z, &Hyperparams::default()) - direct.log_bf).abs() < 1e-12);
    }

    #[test]
    fn boundary_bf_equal_to_b0_is_excluded() {
        let (y, cov) = noise_set(50, 1, 2);
        let set = CovariateSet::from_codes(&y, &cov).unwrap();
        let bf = conditional_log_bf(&set, 0, &Conditioning::none(50), &Hyperparams::default()).exp();
        let config = SelectionConfig { b0: bf, ..Default::default() };
        assert!(screen(&set, &config).unwrap().screened.is_empty());
        let config = SelectionConfig { b0: bf * 0.999, ..Default::default() };
        assert_eq!(screen(&set, &config).unwrap().screened, vec![0]);
    }

    #[test]
    fn single_candidate_null_is_conditional_null() {
        let (y, cov) = noise_set(40, 2, 3);
        let set = CovariateSet::from_codes(&y, &cov).unwrap();
        let z = Conditioning { codes: set.ranked_codes(1).to_vec(), levels: 2 };
        let plan = PermutationPlan::new(50, 9).unwrap();
        let joint = max_bf_null(&set, &[0], &z, &Hyperparams::default(), &plan).unwrap();
        let d = SlicedDataset::from_codes(&y, &cov[0], 2, Some((&cov[1], 2))).unwrap();
        let single = null_log_bf(&d, &Hyperparams::default(), &plan);
        assert_eq!(joint, single);
    }

    #[test]
    fn argmax_prefers_smallest_index() {
        assert_eq!(argmax(&[3, 1, 2], &[1.0, 1.0, 0.5]), (1, 1.0));
        assert_eq!(argmax(&[0, 5], &[-1.0, 2.0]), (5, 2.0));
    }

    #[test]
    fn strong_single_covariate_is_selected_alone() {
        let mut rng = replicate_rng(4, 0);
        let x: Vec<u32> = (0..200).map(|i| (i % 2) as u32).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.0 * v as f64 + normal(&mut rng)).collect();
        let set = CovariateSet::from_codes(&y, &[x]).unwrap();
        let config = SelectionConfig { permutations: 99, ..Default::default() };
        let trace = select(&set, &config).unwrap();
        assert_eq!(trace.final_set, vec![0]);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].p_value, Some(0.01));
        assert_eq!(trace.steps[0].decision, Decision::Selected);
    }

    #[test]
    fn capacity_stop_is_recorded() {
        let mut rng = replicate_rng(5, 0);
        let n = 400;
        let a: Vec<u32> = (0..n).map(|_| (normal(&mut rng) > 0.0) as u32).collect();
        let b: Vec<u32> = (0..n).map(|_| (normal(&mut rng) > 0.0) as u32).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.5 * (a[i] + b[i]) as f64 + normal(&mut rng)).collect();
        let set = CovariateSet::from_codes(&y, &[a, b]).unwrap();
        let config = SelectionConfig { stop_rule: StopRule::very_strong(), max_super_levels: 2, ..Default::default() };
        let trace = select(&set, &config).unwrap();
        assert_eq!(trace.final_set.len(), 1);
        let last = trace.steps.last().unwrap();
        assert_eq!(last.decision, Decision::Capacity);
        assert_eq!(last.z_levels, 2);
    }

    #[test]
    fn trace_is_deterministic() {
        let (y, cov) = noise_set(120, 4, 6);
        let set = CovariateSet::from_codes(&y, &cov).unwrap();
        let config = SelectionConfig { b0: 0.01, permutations: 30, max_steps: 3, seed: 11, ..Default::default() };
        let a = select(&set, &config).unwrap();
        assert_eq!(a, select(&set, &config).unwrap());
        let mut seen = a.final_set.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), a.final_set.len());
        assert!(a.final_set.len() <= 3);
    }
}
