//! Bayes factor tests of dependence and conditional dependence between
//! categorical covariates and a continuous response, based on a sliced
//! inverse model marginalized over every slicing of the ranked response.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bf;
pub mod calibration;
pub mod dataset;
pub mod error;
pub mod permutation;
pub mod selection;
pub mod simulation;
pub mod special;

pub use bf::{
    bf_bruteforce, bf_dynamic_program, log_psi_segment, mi_plugin, BfEngine, BfResult, Hyperparams,
    SlicingScheme,
};
pub use dataset::{encode_super_variable, load_table, Categorical, PrefixCountTable, Ranking, SlicedDataset, Table};
pub use error::{Error, Result};
pub use permutation::{
    conditional_shuffle, fit_formula, formula_pvalue, mc_pvalue, EmpiricalFormulaConstants, McPvalue,
    PermutationPlan, RatePoint, ShuffleScheme,
};
pub use baselines::{Method, TestReport};
pub use calibration::{CalibrationSpec, CalibrationTable};
pub use selection::{select, CovariateSet, SelectionConfig, SelectionTrace, StopRule};
pub use simulation::{roc, run_study, Family, RocCurve, ScenarioSpec, StudyMethod};
