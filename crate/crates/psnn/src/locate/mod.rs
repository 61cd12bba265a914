//! Solution location: thresholded field collection, clustering, stability
//! labeling, cut-value calibration, and the mean-shift baseline.
//!
//! Given a trained solution-channel model and a parameter Θ, the pipeline
//! evaluates the model on a grid over the solution domain, keeps the points
//! where the predicted field reaches a cut value, condenses them into
//! cluster centers, and labels each center by the sign of the stability
//! model there. An empty collected set is read as "no solution".

pub mod cluster;
pub mod meanshift;

pub use cluster::{cluster_points, dedupe_centers, kmeans, silhouette, ClusterOutcome, ClusterParams, KMeans};
pub use meanshift::{meanshift_locate, MeanShiftParams};

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{ObservationSet, Split};
use crate::network::PsnnModel;
use crate::numerics::{dot, euclidean_cost_matrix, min_assignment_cost, DenseMatrix};
use crate::system::{AxisBox, StabilityClass};
use crate::target::Channel;
use crate::Error;

/// Centers closer than this in the Euclidean norm collapse to one.
pub const CENTER_DEDUPE_TOL: f64 = 1e-6;

/// Per-dimension point counts of an inclusive evaluation grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub counts: Vec<usize>,
}

impl GridSpec {
    /// The default 101 points per dimension.
    pub fn default_for(domain: &AxisBox) -> Self {
        GridSpec { counts: vec![101; domain.dim()] }
    }

    pub fn with_counts(counts: Vec<usize>) -> Self {
        GridSpec { counts }
    }

    pub fn validate(&self, domain: &AxisBox) -> Result<(), Error> {
        if self.counts.len() != domain.dim() {
            return Err(Error::Config(format!(
                "grid has {} axes but the domain has {}",
                self.counts.len(),
                domain.dim()
            )));
        }
        if self.counts.iter().any(|&c| c < 2) {
            return Err(Error::Config("need at least 2 grid points per axis".into()));
        }
        Ok(())
    }

    /// All grid points including both endpoints of every axis, with the last
    /// axis varying fastest.
    pub fn points(&self, domain: &AxisBox) -> Result<Vec<Vec<f64>>, Error> {
        self.validate(domain)?;
        let dim = self.counts.len();
        let total: usize = self.counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut index = vec![0usize; dim];
        loop {
            let point: Vec<f64> = (0..dim)
                .map(|d| {
                    let t = index[d] as f64 / (self.counts[d] - 1) as f64;
                    domain.lo()[d] + t * (domain.hi()[d] - domain.lo()[d])
                })
                .collect();
            out.push(point);
            let mut d = dim;
            loop {
                if d == 0 {
                    return Ok(out);
                }
                d -= 1;
                index[d] += 1;
                if index[d] < self.counts[d] {
                    break;
                }
                index[d] = 0;
            }
        }
    }
}

/// Solution-net outputs precomputed on a fixed grid.
///
/// The solution net sees only U, so its output at every grid point can be
/// evaluated once per model; each subsequent Θ needs a single parameter-net
/// pass plus one dot product per grid point.
#[derive(Debug, Clone)]
pub struct SnnCache {
    points: Vec<Vec<f64>>,
    outputs: DenseMatrix,
}

impl SnnCache {
    pub fn build(model: &PsnnModel, grid: &GridSpec, domain: &AxisBox) -> Result<Self, Error> {
        let points = grid.points(domain)?;
        let inner = model.spec.inner_dim;
        let mut outputs = DenseMatrix::zeros(points.len(), inner);
        for (i, u) in points.iter().enumerate() {
            let y = model.snn.forward(u);
            outputs.as_mut_slice()[i * inner..(i + 1) * inner].copy_from_slice(&y);
        }
        Ok(SnnCache { points, outputs })
    }

    pub fn grid_points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn inner_dim(&self) -> usize {
        self.outputs.cols()
    }

    /// Model predictions at every grid point for one Θ.
    pub fn field(&self, model: &PsnnModel, theta: &[f64]) -> Result<Vec<f64>, Error> {
        if model.spec.inner_dim != self.inner_dim() {
            return Err(Error::Contract(
                "cache was built for a different inner dimension".into(),
            ));
        }
        let p = model.pnn.forward(theta);
        let out = (0..self.points.len())
            .map(|i| {
                let raw = dot(self.outputs.row(i), &p);
                match model.channel {
                    Channel::Solution => crate::network::scaled_sigmoid(raw, model.eta),
                    Channel::Stability => raw,
                }
            })
            .collect();
        Ok(out)
    }
}

/// Grid points whose predicted field reaches the cut value, in grid order.
pub fn collect(
    model: &PsnnModel,
    cache: &SnnCache,
    theta: &[f64],
    l_cut: f64,
) -> Result<Vec<Vec<f64>>, Error> {
    if !(l_cut > 0.0 && l_cut < 1.0) {
        return Err(Error::Contract(format!(
            "cut value {l_cut} outside (0, 1)"
        )));
    }
    let field = cache.field(model, theta)?;
    Ok(field
        .iter()
        .zip(cache.grid_points())
        .filter(|(&v, _)| v >= l_cut)
        .map(|(_, p)| p.clone())
        .collect())
}

/// Predicted solutions for one parameter value.
#[derive(Debug, Clone)]
pub struct LocateResult {
    pub theta: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    /// One label per center; absent for methods without a stability channel.
    pub stability: Option<Vec<StabilityClass>>,
    /// Best mean silhouette seen during cluster-count selection.
    pub silhouette: f64,
    /// Size of the thresholded point set before clustering.
    pub n_collected: usize,
}

/// Full location pipeline at one Θ: collect, cluster, deduplicate, label.
///
/// An empty collected set yields zero centers. A center is labeled stable
/// exactly when the stability model's output at (Θ, center) is positive.
pub fn locate(
    model: &PsnnModel,
    stability_model: &PsnnModel,
    cache: &SnnCache,
    theta: &[f64],
    l_cut: f64,
    params: &ClusterParams,
) -> Result<LocateResult, Error> {
    if model.channel != Channel::Solution || stability_model.channel != Channel::Stability {
        return Err(Error::Contract(
            "locate needs a solution model and a stability model, in that order".into(),
        ));
    }
    let collected = collect(model, cache, theta, l_cut)?;
    let n_collected = collected.len();
    if collected.is_empty() {
        return Ok(LocateResult {
            theta: theta.to_vec(),
            centers: Vec::new(),
            stability: Some(Vec::new()),
            silhouette: 0.0,
            n_collected,
        });
    }
    let outcome = cluster_points(&collected, params)?;
    let centers = dedupe_centers(outcome.centers, CENTER_DEDUPE_TOL);
    let labels = centers
        .iter()
        .map(|c| {
            if stability_model.forward(theta, c) > 0.0 {
                StabilityClass::Stable
            } else {
                StabilityClass::Unstable
            }
        })
        .collect();
    Ok(LocateResult {
        theta: theta.to_vec(),
        centers,
        stability: Some(labels),
        silhouette: outcome.silhouette,
        n_collected,
    })
}

/// Relative distance between two equal-size point sets: the assignment of
/// predicted to true points minimizing the mean Euclidean distance, divided
/// by the domain diameter. Two empty sets are at distance zero.
pub fn set_distance(predicted: &[Vec<f64>], truth: &[Vec<f64>], domain: &AxisBox) -> Result<f64, Error> {
    if predicted.len() != truth.len() {
        return Err(Error::Contract(format!(
            "set sizes differ: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let cost = euclidean_cost_matrix(predicted, truth);
    let total = min_assignment_cost(&cost)?;
    Ok(total / predicted.len() as f64 / domain.diameter())
}

/// Sampled cut values and the mean per-parameter error at each.
#[derive(Debug, Clone)]
pub struct CutSearch {
    pub l_cut: f64,
    pub cuts: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Range of candidate cut values to sample.
#[derive(Debug, Clone)]
pub struct CutSearchConfig {
    pub min: f64,
    pub max: f64,
    pub samples: usize,
}

impl Default for CutSearchConfig {
    fn default() -> Self {
        CutSearchConfig { min: 0.3, max: 0.9, samples: 11 }
    }
}

impl CutSearchConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.min >= 0.0 && self.max <= 1.0 && self.min < self.max) {
            return Err(Error::Config(
                "cut range must satisfy 0 <= min < max <= 1".into(),
            ));
        }
        if self.samples < 2 {
            return Err(Error::Config("need at least two cut samples".into()));
        }
        Ok(())
    }

    pub fn cuts(&self) -> Vec<f64> {
        (0..self.samples)
            .map(|i| {
                let t = i as f64 / (self.samples - 1) as f64;
                self.min + t * (self.max - self.min)
            })
            .collect()
    }
}

/// Calibrates the cut value on the search split.
///
/// Every record contributes, per cut, either the set distance between the
/// predicted centers and its recorded solutions (when the counts agree) or a
/// flat penalty of one (when they do not). A record with no solutions and an
/// empty collected set contributes zero. The cut minimizing the mean over
/// records wins; ties go to the smallest cut.
pub fn cut_search(
    model: &PsnnModel,
    set: &ObservationSet,
    split: Split,
    cache: &SnnCache,
    config: &CutSearchConfig,
    params: &ClusterParams,
) -> Result<CutSearch, Error> {
    config.validate()?;
    params.validate()?;
    let cuts = config.cuts();
    let records: Vec<_> = set
        .records
        .iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        return Err(Error::Contract(format!("no records in the {split} split")));
    }
    let per_record: Vec<Vec<f64>> = records
        .par_iter()
        .map(|record| {
            let field = cache.field(model, &record.theta)?;
            cuts.iter()
                .map(|&cut| {
                    let collected: Vec<Vec<f64>> = field
                        .iter()
                        .zip(cache.grid_points())
                        .filter(|(&v, _)| v >= cut)
                        .map(|(_, p)| p.clone())
                        .collect();
                    let centers = if collected.is_empty() {
                        Vec::new()
                    } else {
                        dedupe_centers(cluster_points(&collected, params)?.centers, CENTER_DEDUPE_TOL)
                    };
                    if centers.len() == record.solutions.len() {
                        set_distance(&centers, &record.solutions, &set.domain)
                    } else {
                        Ok(1.0)
                    }
                })
                .collect()
        })
        .collect::<Result<_, Error>>()?;
    let mut errors = vec![0.0; cuts.len()];
    for terms in &per_record {
        for (e, t) in errors.iter_mut().zip(terms) {
            *e += t;
        }
    }
    let inv = 1.0 / records.len() as f64;
    for e in &mut errors {
        *e *= inv;
    }
    let mut best = 0;
    for i in 1..cuts.len() {
        if errors[i] < errors[best] {
            best = i;
        }
    }
    Ok(CutSearch { l_cut: cuts[best], cuts, errors })
}

/// Writes location results as CSV rows of the form
/// `theta…, n_centers, center coords…, stability labels…, silhouette,
/// n_collected`. Center and label fields repeat per center, so rows vary in
/// width; methods without stability labels omit the label fields.
pub fn write_locate_csv(path: &Path, results: &[LocateResult]) -> Result<(), Error> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in results {
        let mut fields: Vec<String> = r.theta.iter().map(|v| v.to_string()).collect();
        fields.push(r.centers.len().to_string());
        for c in &r.centers {
            for v in c {
                fields.push(v.to_string());
            }
        }
        if let Some(labels) = &r.stability {
            for l in labels {
                fields.push(l.to_string());
            }
        }
        fields.push(r.silhouette.to_string());
        fields.push(r.n_collected.to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
