//! Python bindings: the closed-form Gray-Scott oracle, the target field, and
//! an in-memory pipeline (generate, train, calibrate, locate, score) backed
//! by the psnn crate. Artifacts stay in memory; use the CLI for file output.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use psnn::config::RunConfig;
use psnn::dataset::{build_training_set, generate_observations, ObservationSet, Split};
use psnn::evaluate::psnn_errors;
use psnn::locate::{cut_search, locate as locate_fn, set_distance, SnnCache};
use psnn::network::PsnnModel;
use psnn::system::{
    gray_scott, gray_scott_region, gray_scott_solutions, gray_scott_stability, RegionLabel,
    BOUNDARY_BAND,
};
use psnn::target::{Channel, DeviationConfig, LabeledSolutionSet};
use psnn::training::{init_model, train as train_fn};

fn to_py_err(e: psnn::Error) -> PyErr {
    match e {
        psnn::Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Closed-form steady states for one parameter point, ordered by their first
/// coordinate; empty outside the two-solution region.
#[pyfunction]
fn solutions(theta: Vec<f64>) -> Vec<Vec<f64>> {
    gray_scott_solutions(&theta)
}

/// Stability labels matching `solutions`, as "stable"/"unstable" strings.
#[pyfunction]
fn stability(theta: Vec<f64>) -> Vec<String> {
    gray_scott_stability(&theta)
        .into_iter()
        .map(|f| if f == 0 { "stable".to_string() } else { "unstable".to_string() })
        .collect()
}

/// Region of a parameter point: "no-solution", "two-solutions", or
/// "boundary" within the closed-form fold band.
#[pyfunction]
fn region(theta: Vec<f64>) -> String {
    match gray_scott_region(&theta, BOUNDARY_BAND) {
        RegionLabel::NoSolution => "no-solution",
        RegionLabel::TwoSolutions => "two-solutions",
        RegionLabel::Boundary => "boundary",
    }
    .to_string()
}

/// The analytic target field: Gaussian bumps of width delta around each
/// closed-form solution, evaluated at `u`.
#[pyfunction]
fn target_field(u: Vec<f64>, theta: Vec<f64>) -> PyResult<f64> {
    let sols = gray_scott_solutions(&theta);
    if sols.is_empty() {
        return Ok(0.0);
    }
    let flags = gray_scott_stability(&theta);
    let cfg = DeviationConfig::default_for(&gray_scott().domain);
    let labeled = LabeledSolutionSet::new(sols, flags, &cfg).map_err(to_py_err)?;
    Ok(psnn::target::phi(&u, &labeled))
}

/// Relative distance between two equal-size point sets: the assignment that
/// minimizes the mean pairwise Euclidean distance, divided by the domain
/// diameter.
#[pyfunction]
fn relative_set_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    set_distance(&a, &b, &gray_scott().domain).map_err(to_py_err)
}

/// Parameter box as [(lo, hi), ...] per axis.
#[pyfunction]
fn parameter_box() -> Vec<(f64, f64)> {
    gray_scott().parameter_box.to_pairs().into_iter().map(|[a, b]| (a, b)).collect()
}

/// Solution domain as [(lo, hi), ...] per axis.
#[pyfunction]
fn domain_box() -> Vec<(f64, f64)> {
    gray_scott().domain.to_pairs().into_iter().map(|[a, b]| (a, b)).collect()
}

/// The full pipeline against the Gray-Scott ground truth, held in memory.
#[pyclass]
struct Pipeline {
    cfg: RunConfig,
    l_cut: f64,
    set: Option<ObservationSet>,
    solution: Option<PsnnModel>,
    stability: Option<PsnnModel>,
    cache: Option<SnnCache>,
}

impl Pipeline {
    fn set_ref(&self) -> PyResult<&ObservationSet> {
        self.set.as_ref().ok_or_else(|| PyRuntimeError::new_err("call generate() first"))
    }

    fn models(&self) -> PyResult<(&PsnnModel, &PsnnModel, &SnnCache)> {
        match (&self.solution, &self.stability, &self.cache) {
            (Some(s), Some(t), Some(c)) => Ok((s, t, c)),
            _ => Err(PyRuntimeError::new_err("call train() first")),
        }
    }

    fn train_channel(&self, channel: Channel, epochs: usize) -> PyResult<(PsnnModel, f64, f64)> {
        let set = self.set_ref()?;
        let dev = self.cfg.deviation_config(&set.domain);
        let plan = self.cfg.sampling_plan();
        let (train_set, _) =
            build_training_set(set, Split::Train, channel, &plan, &dev, self.cfg.seeds.data)
                .map_err(to_py_err)?;
        let (test_set, _) =
            build_training_set(set, Split::Test, channel, &plan, &dev, self.cfg.seeds.data)
                .map_err(to_py_err)?;
        let spec = self.cfg.psnn_spec(set.omega.dim(), set.domain.dim());
        let mut model =
            init_model(spec, channel, self.cfg.seeds.train).map_err(to_py_err)?;
        let mut cfg = self.cfg.train_config(channel);
        cfg.epochs = epochs;
        let report = train_fn(&mut model, &train_set.flatten(), Some(&test_set.flatten()), &cfg)
            .map_err(to_py_err)?;
        let final_loss = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
        Ok((model, final_loss, report.test_mse.unwrap_or(f64::NAN)))
    }
}

#[pymethods]
impl Pipeline {
    /// Keyword arguments override the corresponding configuration fields;
    /// everything else keeps the documented defaults.
    #[new]
    #[pyo3(signature = (*, train_count=None, search_count=None, test_count=None, n_random=None,
        epochs=None, batch_size=None, inner_dim=None, pnn_depth=None, pnn_width=None,
        snn_depth=None, snn_width=None, l_cut=None, grid=None, data_seed=None, train_seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        train_count: Option<usize>,
        search_count: Option<usize>,
        test_count: Option<usize>,
        n_random: Option<usize>,
        epochs: Option<usize>,
        batch_size: Option<usize>,
        inner_dim: Option<usize>,
        pnn_depth: Option<usize>,
        pnn_width: Option<usize>,
        snn_depth: Option<usize>,
        snn_width: Option<usize>,
        l_cut: Option<f64>,
        grid: Option<usize>,
        data_seed: Option<u64>,
        train_seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(v) = train_count {
            cfg.dataset.train_count = v;
        }
        if let Some(v) = search_count {
            cfg.dataset.search_count = v;
        }
        if let Some(v) = test_count {
            cfg.dataset.test_count = v;
        }
        if let Some(v) = n_random {
            cfg.sampling.n_random = v;
        }
        if let Some(v) = epochs {
            cfg.training.epochs = v;
        }
        if let Some(v) = batch_size {
            cfg.training.batch_size = v;
        }
        if let Some(v) = inner_dim {
            cfg.network.inner_dim = v;
        }
        if let Some(v) = pnn_depth {
            cfg.network.pnn_depth = v;
        }
        if let Some(v) = pnn_width {
            cfg.network.pnn_width = v;
        }
        if let Some(v) = snn_depth {
            cfg.network.snn_depth = v;
        }
        if let Some(v) = snn_width {
            cfg.network.snn_width = v;
        }
        if let Some(v) = l_cut {
            cfg.locate.l_cut = v;
        }
        if let Some(g) = grid {
            cfg.locate.grid = vec![g, g];
            cfg.cut_search.grid = vec![g, g];
        }
        if let Some(v) = data_seed {
            cfg.seeds.data = v;
        }
        if let Some(v) = train_seed {
            cfg.seeds.train = v;
        }
        cfg.validate().map_err(to_py_err)?;
        let l_cut = cfg.locate.l_cut;
        Ok(Self { cfg, l_cut, set: None, solution: None, stability: None, cache: None })
    }

    /// Draws the observation set from the closed form; returns the record
    /// count.
    fn generate(&mut self) -> usize {
        let set = generate_observations(&self.cfg.dataset_spec(true), self.cfg.seeds.data);
        let n = set.records.len();
        self.set = Some(set);
        self.solution = None;
        self.stability = None;
        self.cache = None;
        n
    }

    /// Trains both channels and prepares the locate cache. Returns losses
    /// and held-out errors per channel.
    #[pyo3(signature = (epochs=None))]
    fn train<'py>(&mut self, py: Python<'py>, epochs: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
        let epochs = epochs.unwrap_or(self.cfg.training.epochs);
        let (solution, sol_loss, sol_mse) = self.train_channel(Channel::Solution, epochs)?;
        let (stability, stb_loss, stb_mse) = self.train_channel(Channel::Stability, epochs)?;
        let domain = &self.set_ref()?.domain;
        let cache =
            SnnCache::build(&solution, &self.cfg.locate_grid(), domain).map_err(to_py_err)?;
        self.solution = Some(solution);
        self.stability = Some(stability);
        self.cache = Some(cache);
        let out = PyDict::new(py);
        out.set_item("solution_final_loss", sol_loss)?;
        out.set_item("solution_test_mse", sol_mse)?;
        out.set_item("stability_final_loss", stb_loss)?;
        out.set_item("stability_test_mse", stb_mse)?;
        Ok(out)
    }

    /// Sweeps candidate collection levels on the search split, stores the
    /// best one, and returns it.
    fn calibrate_cut(&mut self) -> PyResult<f64> {
        let set = self.set_ref()?;
        let (solution, _, _) = self.models()?;
        let cache = SnnCache::build(solution, &self.cfg.cut_search_grid(), &set.domain)
            .map_err(to_py_err)?;
        let result = cut_search(
            solution,
            set,
            Split::Search,
            &cache,
            &self.cfg.cut_search_config(),
            &self.cfg.cluster_params(),
        )
        .map_err(to_py_err)?;
        self.l_cut = result.l_cut;
        Ok(result.l_cut)
    }

    /// Locates steady states for one parameter point. Returns centers,
    /// stability labels, the silhouette score, and the collected-point
    /// count.
    fn locate<'py>(&self, py: Python<'py>, theta: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let (solution, stability, cache) = self.models()?;
        let r = locate_fn(solution, stability, cache, &theta, self.l_cut, &self.cfg.cluster_params())
            .map_err(to_py_err)?;
        let labels: Vec<String> =
            r.stability.unwrap_or_default().iter().map(|s| s.to_string()).collect();
        let out = PyDict::new(py);
        out.set_item("centers", r.centers)?;
        out.set_item("labels", labels)?;
        out.set_item("silhouette", r.silhouette)?;
        out.set_item("n_collected", r.n_collected)?;
        Ok(out)
    }

    /// Scores the trained model on the held-out test split. Returns the
    /// wrong-count fraction, the mean relative distance over matched
    /// parameters, and the wrong-stability fraction.
    fn score_test<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let set = self.set_ref()?;
        let (solution, stability, cache) = self.models()?;
        let records: Vec<_> = set.records.iter().filter(|r| r.split == Split::Test).collect();
        let metrics = psnn_errors(
            solution,
            stability,
            cache,
            self.l_cut,
            &self.cfg.cluster_params(),
            &records,
            &set.domain,
        )
        .map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("n", metrics.n)?;
        out.set_item("n_matched", metrics.n_matched)?;
        out.set_item("wrong_count", metrics.wrong_count)?;
        out.set_item("distance", metrics.distance)?;
        out.set_item("wrong_stability", metrics.wrong_stability)?;
        Ok(out)
    }

    #[getter]
    fn l_cut(&self) -> f64 {
        self.l_cut
    }

    #[setter]
    fn set_l_cut(&mut self, value: f64) -> PyResult<()> {
        if !(value > 0.0 && value < 1.0) {
            return Err(PyValueError::new_err("l_cut must lie strictly between 0 and 1"));
        }
        self.l_cut = value;
        Ok(())
    }
}

#[pymodule]
fn psnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solutions, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(region, m)?)?;
    m.add_function(wrap_pyfunction!(target_field, m)?)?;
    m.add_function(wrap_pyfunction!(relative_set_distance, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_box, m)?)?;
    m.add_function(wrap_pyfunction!(domain_box, m)?)?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
