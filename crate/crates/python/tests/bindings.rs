use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module(check: impl for<'py> FnOnce(Python<'py>, &Bound<'py, PyModule>) -> PyResult<()>) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "pyslicebf").unwrap();
        pyslicebf::pyslicebf(&m).unwrap();
        check(py, &m).unwrap();
    });
}

#[test]
fn toy_bayes_factors() {
    with_module(|_py, m| {
        let d = m.getattr("Dataset")?.call1((vec![0.5, 1.5], vec!["a", "b"]))?;
        let log_bf: f64 = d.call_method0("log_bf")?.extract()?;
        assert!((log_bf.exp() - 4.0 / 3.0).abs() < 1e-12);
        let d = m.getattr("Dataset")?.getattr("from_codes")?.call1((vec![0.5, 1.5], vec![0u32, 0], 2))?;
        let log_bf: f64 = d.call_method0("log_bf")?.extract()?;
        assert!((log_bf.exp() - 8.0 / 9.0).abs() < 1e-12);
        Ok(())
    });
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(|py, m| {
        let mismatch = m.getattr("Dataset")?.call1((vec![1.0, 2.0], vec!["a"])).unwrap_err();
        assert!(mismatch.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let bad = m.getattr("Hyperparams")?.call1((-1.0, 1.0)).unwrap_err();
        assert!(bad.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        Ok(())
    });
}

#[test]
fn reports_and_roc() {
    with_module(|_py, m| {
        let r = m.getattr("welch_t")?.call1((vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]))?;
        let method: String = r.getattr("method")?.extract()?;
        assert_eq!(method, "t");
        let (_, auc): (Vec<(f64, f64)>, f64) = m.getattr("roc")?.call1((vec![3.0, 1.0], vec![2.0, 0.0]))?.extract()?;
        assert_eq!(auc, 0.75);
        Ok(())
    });
}
