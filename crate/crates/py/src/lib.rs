//! Python bindings: surplus model, path bundles, the transform G and the
//! diagnostic identities.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use jumpctl_core::diagnostics;
use jumpctl_core::insurance::{self, PolicyConvention, SweepAxis, SweepConfig};
use jumpctl_core::io::{read_dump, write_csv, write_dump};
use jumpctl_core::mollify::{self, MollifiedDrift};
use jumpctl_core::transform::{discontinuity_coefficients, TransformG};
use jumpctl_core::{ControlPolicy, Scheme};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

/// `(axis_value, policy, mean, std_err, n)`.
type SweepRow = (f64, String, f64, f64, usize);

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "direct" => Ok(Scheme::DirectEuler),
        "transformed" => Ok(Scheme::Transformed),
        _ => Err(PyValueError::new_err(format!("unknown scheme {name:?}"))),
    }
}

/// Surplus model; keyword arguments override the default parameters.
#[pyclass(name = "SurplusModel", module = "jumpctl", from_py_object)]
#[derive(Clone)]
struct PySurplusModel {
    inner: insurance::SurplusModel,
}

impl PySurplusModel {
    fn policy(&self, name: &str, threshold: f64, literal: bool) -> PyResult<ControlPolicy> {
        let convention = if literal { PolicyConvention::Literal } else { PolicyConvention::Corrective };
        insurance::policy_library_with(self.inner.a_max, threshold, convention)
            .map_err(value_err)?
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown policy {name:?}")))
    }
}

#[pymethods]
impl PySurplusModel {
    #[new]
    #[pyo3(signature = (*, x0=None, delta=None, beta=None, h=None, sigma=None, lam=None, mu=None, tau=None, a_max=None, compound_poisson=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        x0: Option<f64>,
        delta: Option<f64>,
        beta: Option<f64>,
        h: Option<f64>,
        sigma: Option<f64>,
        lam: Option<f64>,
        mu: Option<f64>,
        tau: Option<f64>,
        a_max: Option<f64>,
        compound_poisson: bool,
    ) -> PyResult<Self> {
        let d = insurance::SurplusModel::baseline();
        let inner = insurance::SurplusModel {
            x0: x0.unwrap_or(d.x0),
            delta: delta.unwrap_or(d.delta),
            beta: beta.unwrap_or(d.beta),
            h: h.unwrap_or(d.h),
            sigma: sigma.unwrap_or(d.sigma),
            lambda: lam.unwrap_or(d.lambda),
            mu: mu.unwrap_or(d.mu),
            tau: tau.unwrap_or(d.tau),
            a_max: a_max.unwrap_or(d.a_max),
            claims: if compound_poisson { insurance::ClaimModel::CompoundPoisson } else { insurance::ClaimModel::DiffusionApproximation },
        };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn x0(&self) -> f64 {
        self.inner.x0
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn a_max(&self) -> f64 {
        self.inner.a_max
    }

    fn effective_sigma(&self) -> f64 {
        self.inner.effective_sigma()
    }

    /// `(mean, std_err, n)` of `X_T²` under the named policy.
    #[pyo3(signature = (policy, horizon, dt, n_paths, seed, threshold=2.0, literal=false))]
    #[allow(clippy::too_many_arguments)]
    fn terminal_second_moment(
        &self,
        py: Python<'_>,
        policy: &str,
        horizon: f64,
        dt: f64,
        n_paths: usize,
        seed: u64,
        threshold: f64,
        literal: bool,
    ) -> PyResult<(f64, f64, usize)> {
        let policy = self.policy(policy, threshold, literal)?;
        let cfg = SweepConfig { horizon, dt, n_paths, seed, scheme: Scheme::DirectEuler };
        let model = self.inner;
        let est = py.detach(|| insurance::terminal_second_moment(&model, &policy, horizon, &cfg)).map_err(value_err)?;
        Ok((est.mean, est.std_err, est.n))
    }

    /// Rows `(axis_value, policy, mean, std_err, n)` of a sweep along `T`, `lambda` or `tau`.
    #[pyo3(signature = (axis, values, policies, horizon, dt, n_paths, seed, threshold=2.0))]
    #[allow(clippy::too_many_arguments)]
    fn sweep(
        &self,
        py: Python<'_>,
        axis: &str,
        values: Vec<f64>,
        policies: Vec<String>,
        horizon: f64,
        dt: f64,
        n_paths: usize,
        seed: u64,
        threshold: f64,
    ) -> PyResult<Vec<SweepRow>> {
        let axis = SweepAxis::parse(axis).ok_or_else(|| PyValueError::new_err(format!("unknown axis {axis:?}")))?;
        let policies = policies.iter().map(|p| self.policy(p, threshold, false)).collect::<PyResult<Vec<_>>>()?;
        let cfg = SweepConfig { horizon, dt, n_paths, seed, scheme: Scheme::DirectEuler };
        let model = self.inner;
        let result = py.detach(|| insurance::sweep(&model, &policies, axis, &values, &cfg)).map_err(value_err)?;
        Ok(result.points.into_iter().map(|p| (p.value, p.policy, p.estimate.mean, p.estimate.std_err, p.estimate.n)).collect())
    }

    #[pyo3(signature = (policy, horizon, dt, n_paths, seed, x0=None, scheme_name="direct"))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        policy: &str,
        horizon: f64,
        dt: f64,
        n_paths: usize,
        seed: u64,
        x0: Option<f64>,
        scheme_name: &str,
    ) -> PyResult<PathBundle> {
        let policy = self.policy(policy, 2.0, false)?;
        let system = self.inner.system().map_err(value_err)?;
        let cfg = self.inner.sim_config(horizon, dt, n_paths, seed).with_scheme(scheme(scheme_name)?);
        let x0 = x0.unwrap_or(self.inner.x0);
        let inner = py.detach(|| jumpctl_core::simulate_bundle(&system, &policy, &cfg, x0)).map_err(value_err)?;
        Ok(PathBundle { inner })
    }

    /// The transform G removing the drift discontinuities.
    fn transform(&self) -> PyResult<Transform> {
        let system = self.inner.system().map_err(value_err)?;
        let coeffs = discontinuity_coefficients(&system.drift).map_err(value_err)?;
        Ok(Transform { inner: TransformG::from_coefficients(&coeffs).map_err(value_err)? })
    }

    /// The threshold drift convolved with the `n`-th mollifier.
    fn mollified_drift(&self, n: u32) -> PyResult<Mollified> {
        let system = self.inner.system().map_err(value_err)?;
        Ok(Mollified { inner: mollify::mollify(&system.drift.b2, n).map_err(value_err)? })
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!(
            "SurplusModel(x0={}, delta={}, beta={}, h={}, sigma={}, lam={}, mu={}, tau={}, a_max={})",
            m.x0, m.delta, m.beta, m.h, m.sigma, m.lambda, m.mu, m.tau, m.a_max
        )
    }
}

#[pyclass(module = "jumpctl", frozen)]
struct PathBundle {
    inner: jumpctl_core::PathBundle,
}

#[pymethods]
impl PathBundle {
    /// Reads a binary dump written by `dump`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(io_err)?;
        Ok(Self { inner: read_dump(BufReader::new(file)).map_err(value_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn terminals(&self) -> Vec<f64> {
        self.inner.terminals()
    }

    /// `(times, states)` of path `i`.
    fn path(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = self.inner.paths.get(i).ok_or_else(|| PyValueError::new_err(format!("path index {i} out of range")))?;
        Ok((p.times().to_vec(), p.states().to_vec()))
    }

    /// Hex SHA-256 of the generating configuration.
    fn config_hash(&self) -> String {
        self.inner.config_hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(io_err)?;
        write_csv(&self.inner, BufWriter::new(file)).map_err(io_err)
    }

    fn dump(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(io_err)?;
        write_dump(&self.inner, BufWriter::new(file)).map_err(io_err)
    }
}

#[pyclass(module = "jumpctl", frozen)]
struct Transform {
    inner: TransformG,
}

#[pymethods]
impl Transform {
    #[getter]
    fn c(&self) -> f64 {
        self.inner.c()
    }

    #[getter]
    fn breakpoints(&self) -> Vec<f64> {
        self.inner.breakpoints().to_vec()
    }

    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.inner.alphas().to_vec()
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn prime(&self, x: f64) -> f64 {
        self.inner.prime(x)
    }

    fn inverse(&self, y: f64) -> PyResult<f64> {
        self.inner.inverse(y).map_err(value_err)
    }
}

#[pyclass(module = "jumpctl", frozen)]
struct Mollified {
    inner: MollifiedDrift,
}

#[pymethods]
impl Mollified {
    #[getter]
    fn n(&self) -> u32 {
        self.inner.mollifier().n()
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.value(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.inner.derivative(x)
    }
}

/// `n · B(n, 1/2)`.
#[pyfunction]
fn beta_half(n: u32) -> f64 {
    diagnostics::beta_half(n)
}

/// `(mc_mean, std_err, analytic)` for `E[(t - τ_n)^{-1/2} | N_t = n]`.
#[pyfunction]
#[pyo3(signature = (t, n, n_mc, seed=0))]
fn last_jump_gap_moment(py: Python<'_>, t: f64, n: u32, n_mc: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let c = py.detach(|| diagnostics::last_jump_gap_moment(1.0, t, n, n_mc, seed)).map_err(value_err)?;
    Ok((c.mc_estimate.mean, c.mc_estimate.std_err, c.analytic))
}

#[pymodule]
fn jumpctl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySurplusModel>()?;
    m.add_class::<PathBundle>()?;
    m.add_class::<Transform>()?;
    m.add_class::<Mollified>()?;
    m.add_function(wrap_pyfunction!(beta_half, m)?)?;
    m.add_function(wrap_pyfunction!(last_jump_gap_moment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
