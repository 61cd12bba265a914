//! Run configuration: one TOML file covering data generation, training,
//! location, and evaluation, with defaults that reproduce the reference
//! Gray-Scott study. Every consumer takes its settings from here through
//! small converter methods, so the CLI and the tests agree on meanings.

use std::path::{Path, PathBuf};

use crate::dataset::{DatasetSpec, SamplingMode, SamplingPlan};
use crate::locate::cluster::ClusterParams;
use crate::locate::meanshift::MeanShiftParams;
use crate::locate::{CutSearchConfig, GridSpec};
use crate::network::PsnnSpec;
use crate::system::AxisBox;
use crate::target::{Channel, DeviationConfig};
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Where generated artifacts land, relative to the working directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Observation-set sizes and the band excluded around the fold curve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train_count: usize,
    pub search_count: usize,
    pub test_count: usize,
    /// Train-split size used when building the masked (incomplete) variant.
    pub incomplete_train_count: usize,
    /// How many train records lose one solution in the masked variant.
    pub mask_count: usize,
    pub boundary_band: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let complete = DatasetSpec::complete();
        let incomplete = DatasetSpec::incomplete();
        Self {
            train_count: complete.train_count,
            search_count: complete.search_count,
            test_count: complete.test_count,
            incomplete_train_count: incomplete.train_count,
            mask_count: 120,
            boundary_band: complete.boundary_band,
        }
    }
}

/// Target bump width rules.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationSection {
    /// Floor for the pairwise-distance width branch.
    pub delta0: f64,
    /// Singleton width as a fraction of the domain diameter.
    pub delta1_fraction: f64,
    /// Neighborhood size for the incomplete-data width estimate.
    pub neighbor_count: usize,
}

impl Default for DeviationSection {
    fn default() -> Self {
        Self { delta0: 0.01, delta1_fraction: 0.1, neighbor_count: 8 }
    }
}

/// Sample-placement policy for training sets.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub mode: SamplingMode,
    pub n_random: usize,
    pub points_per_solution: usize,
    pub radius_multiplier: f64,
    pub shared_random: bool,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let plan = SamplingPlan::uniform(200);
        Self {
            mode: plan.mode,
            n_random: plan.n_random,
            points_per_solution: plan.points_per_solution,
            radius_multiplier: plan.radius_multiplier,
            shared_random: plan.shared_random,
        }
    }
}

/// Architecture of both subnetworks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Shared output dimension of the two subnetworks.
    pub inner_dim: usize,
    pub pnn_depth: usize,
    pub pnn_width: usize,
    pub snn_depth: usize,
    pub snn_width: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { inner_dim: 8, pnn_depth: 4, pnn_width: 30, snn_depth: 3, snn_width: 20 }
    }
}

/// Optimizer settings shared by both channels.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let cfg = TrainConfig::defaults(Channel::Solution, 0);
        Self {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps_adam: cfg.eps_adam,
        }
    }
}

/// K-means settings used wherever collected points are clustered.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub c_max: usize,
    pub sil_threshold: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let p = ClusterParams::new(0);
        Self {
            c_max: p.c_max,
            sil_threshold: p.sil_threshold,
            restarts: p.restarts,
            max_iterations: p.max_iterations,
            tolerance: p.tolerance,
        }
    }
}

/// Level-cut calibration sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutSearchSection {
    pub min: f64,
    pub max: f64,
    pub samples: usize,
    /// Collection grid per domain axis; coarser than the locate grid because
    /// the sweep reclusters every search record at every candidate cut.
    pub grid: Vec<usize>,
}

impl Default for CutSearchSection {
    fn default() -> Self {
        let c = CutSearchConfig::default();
        Self { min: c.min, max: c.max, samples: c.samples, grid: vec![51, 51] }
    }
}

/// Solution location settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocateSection {
    /// Field level above which grid points are collected. Calibrate with the
    /// cut-search subcommand; 0.6 is a reasonable starting point.
    pub l_cut: f64,
    /// Collection grid per domain axis.
    pub grid: Vec<usize>,
}

impl Default for LocateSection {
    fn default() -> Self {
        Self { l_cut: 0.6, grid: vec![101, 101] }
    }
}

/// Parameter-plane scan resolution.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseDiagramSection {
    /// Cell counts per parameter axis; each cell is probed at its midpoint.
    pub cells: Vec<usize>,
}

impl Default for PhaseDiagramSection {
    fn default() -> Self {
        Self { cells: vec![100, 100] }
    }
}

/// Mean-shift baseline settings. Neighborhood widths are fractions of the
/// respective box diameters so they track the geometry.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanShiftSection {
    pub gamma_p_fraction: f64,
    pub gamma_s_fraction: f64,
    pub eps_tol: f64,
    pub n_initial: usize,
    pub max_iterations: usize,
}

impl Default for MeanShiftSection {
    fn default() -> Self {
        Self {
            gamma_p_fraction: 0.02,
            gamma_s_fraction: 0.1,
            eps_tol: 1e-4,
            n_initial: 50,
            max_iterations: 500,
        }
    }
}

/// Low-rank structure check of the target field.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// Quadrature cells per domain axis.
    pub d_grid: Vec<usize>,
    /// Quadrature cells per parameter axis.
    pub omega_grid: Vec<usize>,
    /// Truncation ranks to compare against the eigenvalue tail.
    pub truncation_ranks: Vec<usize>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { d_grid: vec![61, 61], omega_grid: vec![41, 41], truncation_ranks: vec![1, 2, 4, 8, 16] }
    }
}

/// One stream per randomized stage, so regenerating data does not silently
/// reshuffle training and vice versa.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub data: u64,
    pub train: u64,
    pub cluster: u64,
    pub meanshift: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self { data: 1, train: 2, cluster: 3, meanshift: 4 }
    }
}

/// The whole run configuration. Every section and every field is optional in
/// the file; omitted values take the defaults shown by `--help`.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub dataset: DatasetSection,
    pub deviation: DeviationSection,
    pub sampling: SamplingSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub cluster: ClusterSection,
    pub cut_search: CutSearchSection,
    pub locate: LocateSection,
    pub phase_diagram: PhaseDiagramSection,
    pub meanshift: MeanShiftSection,
    pub kernel: KernelSection,
    pub seeds: SeedsSection,
}

fn positive(value: f64, field: &str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must be positive and finite, got {value}")))
    }
}

fn nonzero(value: usize, field: &str) -> Result<()> {
    if value == 0 {
        Err(Error::Config(format!("{field} must be nonzero")))
    } else {
        Ok(())
    }
}

fn axis_counts(counts: &[usize], dim: usize, field: &str) -> Result<()> {
    if counts.len() != dim {
        return Err(Error::Config(format!(
            "{field} must list {dim} axis counts, got {}",
            counts.len()
        )));
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::Config(format!("{field} needs at least 2 cells per axis")));
    }
    Ok(())
}

impl RunConfig {
    /// Parses a TOML document. Unknown keys are rejected so typos fail loudly
    /// instead of silently running on defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Field-by-field sanity checks beyond what the sub-configs enforce,
    /// naming the offending TOML key.
    pub fn validate(&self) -> Result<()> {
        nonzero(self.dataset.train_count, "dataset.train_count")?;
        nonzero(self.dataset.search_count, "dataset.search_count")?;
        nonzero(self.dataset.test_count, "dataset.test_count")?;
        nonzero(self.dataset.incomplete_train_count, "dataset.incomplete_train_count")?;
        positive(self.dataset.boundary_band, "dataset.boundary_band")?;
        positive(self.deviation.delta0, "deviation.delta0")?;
        positive(self.deviation.delta1_fraction, "deviation.delta1_fraction")?;
        nonzero(self.deviation.neighbor_count, "deviation.neighbor_count")?;
        nonzero(self.network.inner_dim, "network.inner_dim")?;
        nonzero(self.network.pnn_depth, "network.pnn_depth")?;
        nonzero(self.network.pnn_width, "network.pnn_width")?;
        nonzero(self.network.snn_depth, "network.snn_depth")?;
        nonzero(self.network.snn_width, "network.snn_width")?;
        if !(self.locate.l_cut > 0.0 && self.locate.l_cut < 1.0) {
            return Err(Error::Config(format!(
                "locate.l_cut must lie strictly between 0 and 1, got {}",
                self.locate.l_cut
            )));
        }
        axis_counts(&self.locate.grid, 2, "locate.grid")?;
        axis_counts(&self.cut_search.grid, 2, "cut_search.grid")?;
        axis_counts(&self.phase_diagram.cells, 2, "phase_diagram.cells")?;
        axis_counts(&self.kernel.d_grid, 2, "kernel.d_grid")?;
        axis_counts(&self.kernel.omega_grid, 2, "kernel.omega_grid")?;
        if self.kernel.truncation_ranks.is_empty() {
            return Err(Error::Config("kernel.truncation_ranks must not be empty".into()));
        }
        positive(self.meanshift.gamma_p_fraction, "meanshift.gamma_p_fraction")?;
        positive(self.meanshift.gamma_s_fraction, "meanshift.gamma_s_fraction")?;
        // Delegate the rest to the structures the sections feed; their
        // messages already name the quantity.
        self.sampling_plan().validate()?;
        self.train_config(Channel::Solution).validate()?;
        self.cluster_params().validate()?;
        self.cut_search_config().validate()?;
        Ok(())
    }

    /// Sizes for the complete or the masked observation set.
    pub fn dataset_spec(&self, complete: bool) -> DatasetSpec {
        DatasetSpec {
            train_count: if complete {
                self.dataset.train_count
            } else {
                self.dataset.incomplete_train_count
            },
            search_count: self.dataset.search_count,
            test_count: self.dataset.test_count,
            boundary_band: self.dataset.boundary_band,
        }
    }

    pub fn deviation_config(&self, domain: &AxisBox) -> DeviationConfig {
        DeviationConfig {
            delta0: self.deviation.delta0,
            delta1: self.deviation.delta1_fraction * domain.diameter(),
            neighbor_count: self.deviation.neighbor_count,
        }
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        SamplingPlan {
            mode: self.sampling.mode,
            n_random: self.sampling.n_random,
            points_per_solution: self.sampling.points_per_solution,
            radius_multiplier: self.sampling.radius_multiplier,
            shared_random: self.sampling.shared_random,
        }
    }

    pub fn psnn_spec(&self, theta_dim: usize, u_dim: usize) -> PsnnSpec {
        PsnnSpec {
            theta_dim,
            u_dim,
            inner_dim: self.network.inner_dim,
            pnn_depth: self.network.pnn_depth,
            pnn_width: self.network.pnn_width,
            snn_depth: self.network.snn_depth,
            snn_width: self.network.snn_width,
        }
    }

    pub fn train_config(&self, channel: Channel) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            beta1: self.training.beta1,
            beta2: self.training.beta2,
            eps_adam: self.training.eps_adam,
            seed: self.seeds.train,
            channel,
        }
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            c_max: self.cluster.c_max,
            sil_threshold: self.cluster.sil_threshold,
            restarts: self.cluster.restarts,
            max_iterations: self.cluster.max_iterations,
            tolerance: self.cluster.tolerance,
            seed: self.seeds.cluster,
        }
    }

    pub fn cut_search_config(&self) -> CutSearchConfig {
        CutSearchConfig {
            min: self.cut_search.min,
            max: self.cut_search.max,
            samples: self.cut_search.samples,
        }
    }

    pub fn cut_search_grid(&self) -> GridSpec {
        GridSpec::with_counts(self.cut_search.grid.clone())
    }

    pub fn locate_grid(&self) -> GridSpec {
        GridSpec::with_counts(self.locate.grid.clone())
    }

    pub fn meanshift_params(&self, omega: &AxisBox, domain: &AxisBox) -> MeanShiftParams {
        MeanShiftParams {
            gamma_p: self.meanshift.gamma_p_fraction * omega.diameter(),
            gamma_s: self.meanshift.gamma_s_fraction * domain.diameter(),
            eps_tol: self.meanshift.eps_tol,
            n_initial: self.meanshift.n_initial,
            max_iterations: self.meanshift.max_iterations,
            seed: self.seeds.meanshift,
        }
    }
}
