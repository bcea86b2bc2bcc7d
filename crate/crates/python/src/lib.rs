//! Python bindings. Categorical inputs accept any iterable; each element is
//! converted with `str()` and distinct strings become levels.

use pyo3::exceptions::{PyArithmeticError, PyOverflowError, PyValueError};
use pyo3::prelude::*;

use slicebf::baselines::{self, TestReport as CoreReport};
use slicebf::calibration::{CalibrationKey, CalibrationTable};
use slicebf::permutation::{formula_pvalue as core_formula_pvalue, mc_pvalue, EmpiricalFormulaConstants, PermutationPlan};
use slicebf::selection::{select as core_select, CovariateSet, SelectionConfig, StopRule};
use slicebf::simulation::{roc as core_roc, run_study, Family, ScenarioSpec, StudyMethod};
use slicebf::{bf_bruteforce, bf_dynamic_program, Categorical, Error, SlicedDataset};

fn err(e: Error) -> PyErr {
    match e {
        Error::Degenerate(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Capacity(_) => PyOverflowError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn labels(obj: &Bound<'_, PyAny>) -> PyResult<Vec<String>> {
    obj.try_iter()?.map(|item| Ok(item?.str()?.to_cow()?.into_owned())).collect()
}

fn categorical(obj: &Bound<'_, PyAny>) -> PyResult<Categorical> {
    Categorical::from_labels(&labels(obj)?).map_err(err)
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(frozen, from_py_object, module = "pyslicebf")]
#[derive(Clone, Copy)]
struct Hyperparams {
    inner: slicebf::Hyperparams,
}

#[pymethods]
impl Hyperparams {
    #[new]
    #[pyo3(signature = (alpha0 = 1.0, lambda0 = 1.0))]
    fn new(alpha0: f64, lambda0: f64) -> PyResult<Self> {
        Ok(Self { inner: slicebf::Hyperparams::new(alpha0, lambda0).map_err(err)? })
    }

    #[getter]
    fn alpha0(&self) -> f64 {
        self.inner.alpha0
    }

    #[getter]
    fn lambda0(&self) -> f64 {
        self.inner.lambda0
    }

    /// Prior probability of a slice boundary at sample size `n`.
    fn pi0(&self, n: usize) -> f64 {
        self.inner.pi0(n)
    }

    fn __repr__(&self) -> String {
        format!("Hyperparams(alpha0={}, lambda0={})", self.inner.alpha0, self.inner.lambda0)
    }
}

fn hyper_or_default(h: Option<Hyperparams>) -> slicebf::Hyperparams {
    h.map(|h| h.inner).unwrap_or_default()
}

/// Response, covariate and optional group variable, ranked by response.
#[pyclass(frozen, module = "pyslicebf")]
struct Dataset {
    inner: SlicedDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (y, x, z = None))]
    fn new(y: Vec<f64>, x: &Bound<'_, PyAny>, z: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let x = categorical(x)?;
        let z = match z {
            Some(z) => categorical(z)?,
            None => Categorical::constant(y.len()),
        };
        Ok(Self { inner: SlicedDataset::new(&y, &x, &z).map_err(err)? })
    }

    /// Dense integer codes with explicit level counts, so levels that are
    /// never observed still count.
    #[staticmethod]
    #[pyo3(signature = (y, x, x_levels, z = None, z_levels = 1))]
    fn from_codes(y: Vec<f64>, x: Vec<u32>, x_levels: usize, z: Option<Vec<u32>>, z_levels: usize) -> PyResult<Self> {
        let z = z.as_deref().map(|z| (z, z_levels));
        Ok(Self { inner: SlicedDataset::from_codes(&y, &x, x_levels, z).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn x_levels(&self) -> usize {
        self.inner.x_levels()
    }

    #[getter]
    fn z_levels(&self) -> usize {
        self.inner.z_levels()
    }

    /// log Bayes factor by dynamic programming.
    #[pyo3(signature = (hyper = None))]
    fn log_bf(&self, py: Python<'_>, hyper: Option<Hyperparams>) -> f64 {
        let h = hyper_or_default(hyper);
        py.detach(|| bf_dynamic_program(&self.inner, &h).log_bf)
    }

    /// log Bayes factor by enumerating every slicing (small inputs only).
    #[pyo3(signature = (hyper = None))]
    fn log_bf_bruteforce(&self, hyper: Option<Hyperparams>) -> PyResult<f64> {
        Ok(bf_bruteforce(&self.inner, &hyper_or_default(hyper)).map_err(err)?.log_bf)
    }

    /// Shuffle p-value and null log Bayes factors.
    #[pyo3(signature = (permutations = 1000, seed = 0, hyper = None))]
    fn permutation_pvalue(
        &self,
        py: Python<'_>,
        permutations: usize,
        seed: u64,
        hyper: Option<Hyperparams>,
    ) -> PyResult<(f64, Vec<f64>)> {
        let h = hyper_or_default(hyper);
        let plan = PermutationPlan::new(permutations, seed).map_err(err)?;
        let mc = py.detach(|| {
            let observed = bf_dynamic_program(&self.inner, &h).log_bf;
            mc_pvalue(observed, &self.inner, &h, &plan)
        });
        Ok((mc.p_value, mc.null))
    }

    /// Empirical-formula p-value when a calibration entry matches this
    /// design, else None. `table` overrides the built-in entries.
    #[pyo3(signature = (hyper = None, table = None))]
    fn formula_pvalue(&self, hyper: Option<Hyperparams>, table: Option<std::path::PathBuf>) -> PyResult<Option<f64>> {
        let h = hyper_or_default(hyper);
        let table = CalibrationTable::load_or_builtin(table.as_deref()).map_err(err)?;
        let Some(entry) = table.lookup(&CalibrationKey::for_dataset(&self.inner, &h)) else {
            return Ok(None);
        };
        let log_bf = bf_dynamic_program(&self.inner, &h).log_bf;
        if log_bf < 0.0 {
            return Ok(Some(1.0));
        }
        Ok(Some(core_formula_pvalue(log_bf.exp(), self.inner.n(), &entry.constants).map_err(err)?))
    }
}

#[pyclass(frozen, get_all, module = "pyslicebf")]
struct TestReport {
    method: String,
    statistic: f64,
    p_value: f64,
    df: Option<f64>,
    df2: Option<f64>,
    sizes: Vec<usize>,
}

#[pymethods]
impl TestReport {
    fn __repr__(&self) -> String {
        format!("TestReport(method={:?}, statistic={}, p_value={})", self.method, self.statistic, self.p_value)
    }
}

impl From<CoreReport> for TestReport {
    fn from(r: CoreReport) -> Self {
        Self { method: r.method.name().into(), statistic: r.statistic, p_value: r.p_value, df: r.df, df2: r.df2, sizes: r.sizes }
    }
}

fn report(r: slicebf::Result<CoreReport>) -> PyResult<TestReport> {
    r.map(TestReport::from).map_err(err)
}

#[pyfunction]
fn welch_t(a: Vec<f64>, b: Vec<f64>) -> PyResult<TestReport> {
    report(baselines::welch_t(&a, &b))
}

#[pyfunction]
fn rank_sum(a: Vec<f64>, b: Vec<f64>) -> PyResult<TestReport> {
    report(baselines::wilcoxon_rank_sum(&a, &b))
}

#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<TestReport> {
    report(baselines::ks_two_sample(&a, &b))
}

#[pyfunction]
fn anderson_darling(samples: Vec<Vec<f64>>) -> PyResult<TestReport> {
    let views: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
    report(baselines::anderson_darling_ksample(&views))
}

#[pyfunction]
#[pyo3(signature = (y, x, z = None))]
fn anova(y: Vec<f64>, x: &Bound<'_, PyAny>, z: Option<&Bound<'_, PyAny>>) -> PyResult<TestReport> {
    let x = categorical(x)?;
    match z {
        Some(z) => report(baselines::anova_two_way(&y, x.codes(), categorical(z)?.codes())),
        None => report(baselines::anova_one_way(&y, x.codes())),
    }
}

/// `γ / (b^α n^β)`.
#[pyfunction]
fn formula_pvalue(b: f64, n: usize, alpha: f64, beta: f64, gamma: f64) -> PyResult<f64> {
    let c = EmpiricalFormulaConstants::new(alpha, beta, gamma).map_err(err)?;
    core_formula_pvalue(b, n, &c).map_err(err)
}

/// ROC points and AUC for alternative and null scores.
#[pyfunction]
fn roc(h1: Vec<f64>, h0: Vec<f64>) -> PyResult<(Vec<(f64, f64)>, f64)> {
    let r = core_roc(&h1, &h0).map_err(err)?;
    Ok((r.points, r.auc))
}

/// Screening and stepwise selection. `covariates` maps names to
/// categorical columns. Returns the trace as a dict.
#[pyfunction]
#[pyo3(signature = (y, covariates, b0 = 10.0, stop_rule = "perm:0.05", permutations = 1000, max_steps = 10, max_super_levels = 64, seed = 0, hyper = None))]
#[allow(clippy::too_many_arguments)]
fn select<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    covariates: Vec<(String, Bound<'py, PyAny>)>,
    b0: f64,
    stop_rule: &str,
    permutations: usize,
    max_steps: usize,
    max_super_levels: usize,
    seed: u64,
    hyper: Option<Hyperparams>,
) -> PyResult<Bound<'py, PyAny>> {
    let cols = covariates.iter().map(|(k, v)| Ok((k.clone(), categorical(v)?))).collect::<PyResult<Vec<_>>>()?;
    let set = CovariateSet::new(&y, cols).map_err(err)?;
    let config = SelectionConfig {
        b0,
        stop_rule: stop_rule.parse::<StopRule>().map_err(err)?,
        permutations,
        max_steps,
        max_super_levels,
        seed,
        hyper: hyper_or_default(hyper),
    };
    let trace = py.detach(|| core_select(&set, &config)).map_err(err)?;
    json_to_py(py, &trace)
}

/// Power study for a scenario (s1–s4, case1–case6). Returns the per-method
/// summary as a list of dicts.
#[pyfunction]
#[pyo3(signature = (scenario, seed, n = 400, reps = 500, methods = None, mu = None))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: &str,
    seed: u64,
    n: usize,
    reps: usize,
    methods: Option<&str>,
    mu: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let family: Family = scenario.parse().map_err(err)?;
    let mut spec = ScenarioSpec::new(family, n, seed);
    if let Some(mu) = mu {
        spec.mu = mu;
    }
    let default = if family.is_two_sample() { "bf,t,ranksum,ks,ad" } else { "bf,anova" };
    let methods = StudyMethod::parse_list(methods.unwrap_or(default)).map_err(err)?;
    let study = py.detach(|| run_study(&spec, &methods, reps)).map_err(err)?;
    json_to_py(py, &study.summary)
}

#[pymodule]
pub fn pyslicebf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Hyperparams>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<TestReport>()?;
    m.add_function(wrap_pyfunction!(welch_t, m)?)?;
    m.add_function(wrap_pyfunction!(rank_sum, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(anderson_darling, m)?)?;
    m.add_function(wrap_pyfunction!(anova, m)?)?;
    m.add_function(wrap_pyfunction!(formula_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(roc, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
