//! Python bindings for the collective-interference simulator: sparse Fock
//! states, disjoint beam-splitter networks with loss and multiplexing, the
//! correlator/click observables, and the cosine fringe fit.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use colliphase::experiment::{
    fit_cosine, generalized_scheme_check, GeneralizedCheckOptions,
};
use colliphase::fock::{self, InternalState, ModeSpace, SparseStateVector};
use colliphase::network::{
    add_multiplex_layer, build_disjoint_scheme, dilate_with_loss, InterferometerSpec, LossModel,
};
use colliphase::observables::{
    self, four_point_closed_form as closed_form, CorrelatorSpec,
};
use colliphase::sources::{self, PhaseSetting};

fn to_py_err(err: colliphase::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// A single-photon polarisation state.
#[pyclass(name = "InternalState", skip_from_py_object)]
#[derive(Clone)]
struct PyInternalState {
    inner: InternalState,
}

#[pymethods]
impl PyInternalState {
    #[staticmethod]
    fn horizontal() -> Self {
        Self {
            inner: InternalState::horizontal(),
        }
    }

    #[staticmethod]
    fn vertical() -> Self {
        Self {
            inner: InternalState::vertical(),
        }
    }

    /// (|H> + e^{i phase}|V>)/sqrt(2).
    #[staticmethod]
    fn superposition(phase: f64) -> Self {
        Self {
            inner: InternalState::superposition(phase),
        }
    }

    /// <self|other>.
    fn overlap(&self, other: &PyInternalState) -> Complex64 {
        self.inner.overlap(&other.inner)
    }
}

/// Sparse multi-photon state over external x internal modes.
#[pyclass(name = "State", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: SparseStateVector,
}

#[pymethods]
impl PyState {
    /// Vacuum state over `n_external` spatial modes with H/V polarisation.
    #[staticmethod]
    #[pyo3(signature = (n_external, n_internal = 2))]
    fn vacuum(n_external: usize, n_internal: usize) -> Self {
        Self {
            inner: SparseStateVector::vacuum(ModeSpace::new(n_external, n_internal)),
        }
    }

    /// Adds one photon in `ext_mode` with the given internal state.
    fn create(&self, ext_mode: usize, internal: &PyInternalState) -> PyResult<Self> {
        Ok(Self {
            inner: fock::create(&self.inner, ext_mode, &internal.inner).map_err(to_py_err)?,
        })
    }

    fn inner_product(&self, other: &PyState) -> PyResult<Complex64> {
        fock::inner_product(&self.inner, &other.inner).map_err(to_py_err)
    }

    fn apply_beam_splitter(&self, mode_a: usize, mode_b: usize, transmissivity: f64) -> PyResult<Self> {
        Ok(Self {
            inner: fock::apply_beam_splitter(&self.inner, mode_a, mode_b, transmissivity)
                .map_err(to_py_err)?,
        })
    }

    fn normalized(&self) -> Self {
        Self {
            inner: self.inner.normalized(),
        }
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn num_terms(&self) -> usize {
        self.inner.num_terms()
    }

    /// Total photon number if it is the same in every term, else None.
    fn photon_number(&self) -> Option<u32> {
        self.inner.definite_photon_number()
    }

    /// (occupations, amplitude) pairs over the combined flat modes.
    fn amplitudes(&self) -> Vec<(Vec<u8>, Complex64)> {
        let mut terms: Vec<(Vec<u8>, Complex64)> = self
            .inner
            .terms()
            .map(|(basis, amp)| (basis.occupations().to_vec(), *amp))
            .collect();
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        terms
    }

    fn __repr__(&self) -> String {
        format!(
            "State({} modes, {} terms, norm {:.6})",
            self.inner.mode_space(),
            self.inner.num_terms(),
            self.inner.norm()
        )
    }
}

/// Disjoint beam-splitter network with optional loss dilation and one
/// multiplex layer.
#[pyclass(name = "Interferometer", skip_from_py_object)]
#[derive(Clone)]
struct PyInterferometer {
    spec: InterferometerSpec,
    rejection_threshold: usize,
}

#[pymethods]
impl PyInterferometer {
    /// One balanced-or-not beam splitter per mode pair (1,2), (3,4), ...
    #[staticmethod]
    #[pyo3(signature = (n_particles, splitting_ratios, rejection_threshold = 4))]
    fn disjoint(
        n_particles: usize,
        splitting_ratios: Vec<f64>,
        rejection_threshold: usize,
    ) -> PyResult<Self> {
        Ok(Self {
            spec: build_disjoint_scheme(n_particles, &splitting_ratios).map_err(to_py_err)?,
            rejection_threshold,
        })
    }

    /// Couples every input and output port to a vacuum ancilla with the given
    /// transmissions (inputs first, then outputs).
    fn with_loss(&self, transmissions: Vec<f64>) -> PyResult<Self> {
        let loss = LossModel::new(transmissions).map_err(to_py_err)?;
        Ok(Self {
            spec: dilate_with_loss(&self.spec, &loss).map_err(to_py_err)?,
            rejection_threshold: self.rejection_threshold,
        })
    }

    /// Splits each detector channel onto two detectors.
    fn with_multiplex(&self) -> PyResult<Self> {
        Ok(Self {
            spec: add_multiplex_layer(&self.spec).map_err(to_py_err)?,
            rejection_threshold: self.rejection_threshold,
        })
    }

    fn total_modes(&self) -> usize {
        self.spec.total_modes()
    }

    fn channels(&self) -> Vec<String> {
        self.spec
            .detector_layout(self.rejection_threshold)
            .channels()
            .to_vec()
    }

    /// Evolves a state defined on the signal modes through the network.
    fn apply(&self, state: &PyState) -> PyResult<PyState> {
        let total = ModeSpace::new(
            self.spec.total_modes(),
            state.inner.mode_space().n_internal(),
        );
        let embedded = if state.inner.mode_space().n_external() == self.spec.total_modes() {
            state.inner.clone()
        } else {
            state.inner.embed(total).map_err(to_py_err)?
        };
        Ok(PyState {
            inner: fock::apply_network(&embedded, &self.spec).map_err(to_py_err)?,
        })
    }

    /// Click-pattern probabilities as (clicked detector ids, probability).
    fn click_probabilities(&self, state: &PyState) -> PyResult<Vec<(Vec<usize>, f64)>> {
        let layout = self.spec.detector_layout(self.rejection_threshold);
        let dist = observables::network_click_distribution(&state.inner, &self.spec, &layout)
            .map_err(to_py_err)?;
        Ok(dist.iter().map(|(e, p)| (e.detectors(), p)).collect())
    }

    /// Expected coincidence counter for the named channels (rejection
    /// applied; detector-aggregated under multiplexing).
    fn coincidence_probability(&self, state: &PyState, channels: Vec<String>) -> PyResult<f64> {
        let layout = self.spec.detector_layout(self.rejection_threshold);
        let indices: Vec<usize> = channels
            .iter()
            .map(|name| layout.channel_index(name))
            .collect::<colliphase::Result<_>>()
            .map_err(to_py_err)?;
        let dist = observables::network_click_distribution(&state.inner, &self.spec, &layout)
            .map_err(to_py_err)?;
        Ok(dist.coincidence_probability(&indices))
    }
}

/// Closed-form ideal four-point correlator `(1/8) cos^2((chi+varphi-theta)/2)`.
#[pyfunction]
fn four_point_closed_form(chi: f64, varphi: f64, theta: f64) -> f64 {
    closed_form(&PhaseSetting::new(chi, varphi, theta))
}

/// Emission probability of exactly `n` pairs, `(1-gamma^2) gamma^(2n)`.
#[pyfunction]
fn pair_probability(gamma: f64, n: u32) -> PyResult<f64> {
    sources::pair_probability(gamma, n).map_err(to_py_err)
}

/// Normalized input state with `r1` entangled and `r2` separable pairs.
#[pyfunction]
#[pyo3(signature = (chi, varphi, theta, r1 = 1, r2 = 1, n_external = 4))]
fn build_input_state(
    chi: f64,
    varphi: f64,
    theta: f64,
    r1: u32,
    r2: u32,
    n_external: usize,
) -> PyResult<PyState> {
    let setting = PhaseSetting::new(chi, varphi, theta);
    Ok(PyState {
        inner: sources::build_input_state(&setting, r1, r2, ModeSpace::new(n_external, 2))
            .map_err(to_py_err)?,
    })
}

/// `<N_{p1} ... N_{pk}>` on distinct external modes.
#[pyfunction]
fn k_point_correlator(state: &PyState, modes: Vec<usize>) -> PyResult<f64> {
    let spec = CorrelatorSpec::new(modes).map_err(to_py_err)?;
    observables::k_point_correlator(&state.inner, &spec).map_err(to_py_err)
}

/// Expectation of the 2P/4P exchange operator `A_{bra,ket}`.
#[pyfunction]
fn a_operator_expectation(
    state: &PyState,
    bra_modes: Vec<usize>,
    ket_modes: Vec<usize>,
) -> PyResult<Complex64> {
    observables::a_operator_expectation(&state.inner, &bra_modes, &ket_modes).map_err(to_py_err)
}

/// Truncated factorial-moment expansion of the threshold product.
#[pyfunction]
fn threshold_series_expectation(
    state: &PyState,
    channels: Vec<usize>,
    max_order: u32,
) -> PyResult<f64> {
    observables::threshold_series_expectation(&state.inner, &channels, max_order)
        .map_err(to_py_err)
}

/// Least-squares cosine fit at unit frequency; returns a dict with keys
/// `offset`, `amplitude`, `phase_offset`, `visibility`, `residual_norm`.
#[pyfunction]
fn cosine_fit(py: Python<'_>, points: Vec<(f64, f64)>) -> PyResult<Py<pyo3::types::PyDict>> {
    let fit = fit_cosine(&points).map_err(to_py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("offset", fit.offset)?;
    dict.set_item("amplitude", fit.amplitude)?;
    dict.set_item("phase_offset", fit.phase_offset)?;
    dict.set_item("visibility", fit.visibility)?;
    dict.set_item("residual_norm", fit.residual_norm)?;
    dict.set_item("n_points", fit.n_points)?;
    Ok(dict.unbind())
}

/// N-particle generalization check; returns a dict with the fringe
/// visibility, extrema, and the largest (N-1)-point deviation.
#[pyfunction]
#[pyo3(signature = (n_particles, grid_points = 31))]
fn generalized_check(py: Python<'_>, n_particles: usize, grid_points: usize) -> PyResult<Py<pyo3::types::PyDict>> {
    let report = generalized_scheme_check(
        n_particles,
        &GeneralizedCheckOptions {
            grid_points,
            budget: 12,
        },
    )
    .map_err(to_py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("n_particles", report.n_particles)?;
    dict.set_item("visibility", report.n_point_visibility())?;
    dict.set_item("minimum", report.n_point_minimum)?;
    dict.set_item("maximum", report.n_point_maximum)?;
    dict.set_item(
        "max_lower_order_deviation",
        report.max_lower_order_deviation,
    )?;
    Ok(dict.unbind())
}

#[pymodule]
fn colliphase_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInternalState>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyInterferometer>()?;
    m.add_function(wrap_pyfunction!(four_point_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(pair_probability, m)?)?;
    m.add_function(wrap_pyfunction!(build_input_state, m)?)?;
    m.add_function(wrap_pyfunction!(k_point_correlator, m)?)?;
    m.add_function(wrap_pyfunction!(a_operator_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_series_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_fit, m)?)?;
    m.add_function(wrap_pyfunction!(generalized_check, m)?)?;
    Ok(())
}
