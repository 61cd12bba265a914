//! Mean-shift baseline: locates solutions directly from the labeled training
//! samples, without a trained model.
//!
//! Starts scattered over the solution domain are pulled toward the weighted
//! mean of nearby sample points, weighting each sample by its field label.
//! Converged modes with enough label mass survive and are condensed by the
//! same clustering stage the model-based path uses. The method produces no
//! stability labels.

use crate::dataset::TrainingSet;
use crate::locate::cluster::{cluster_points, dedupe_centers, ClusterParams};
use crate::locate::{LocateResult, CENTER_DEDUPE_TOL};
use crate::numerics::RandomSource;
use crate::system::AxisBox;
use crate::Error;

/// Neighborhood widths and iteration controls for the mean-shift baseline.
#[derive(Debug, Clone)]
pub struct MeanShiftParams {
    /// Per-axis half-width of the parameter neighborhood (∞-norm).
    pub gamma_p: f64,
    /// Per-axis half-width of the solution neighborhood (∞-norm).
    pub gamma_s: f64,
    /// Movement below which the iteration is considered converged.
    pub eps_tol: f64,
    /// Number of random starting points.
    pub n_initial: usize,
    /// Hard cap on shift iterations per start.
    pub max_iterations: usize,
    pub seed: u64,
}

impl MeanShiftParams {
    /// Widths scaled to the given boxes: 2% of the parameter-box diameter
    /// and 10% of the domain diameter.
    pub fn default_for(omega: &AxisBox, domain: &AxisBox, seed: u64) -> Self {
        MeanShiftParams {
            gamma_p: 0.02 * omega.diameter(),
            gamma_s: 0.1 * domain.diameter(),
            eps_tol: 1e-4,
            n_initial: 50,
            max_iterations: 500,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.gamma_p > 0.0 && self.gamma_s > 0.0) {
            return Err(Error::Config("neighborhood widths must be positive".into()));
        }
        if !(self.eps_tol > 0.0) {
            return Err(Error::Config("movement tolerance must be positive".into()));
        }
        if self.n_initial == 0 {
            return Err(Error::Config("need at least one starting point".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        Ok(())
    }
}

fn within_inf(a: &[f64], b: &[f64], radius: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < radius)
}

/// One sample relevant to the current Θ neighborhood.
struct Neighbor<'a> {
    point: &'a [f64],
    label: f64,
}

/// Runs the shift iteration from one start. Returns the converged mode, or
/// `None` when the weight mass vanishes or the mode lacks label support.
fn shift_mode(
    start: &[f64],
    neighbors: &[Neighbor<'_>],
    l_cut: f64,
    params: &MeanShiftParams,
) -> Option<Vec<f64>> {
    let dim = start.len();
    let mut u = start.to_vec();
    for _ in 0..params.max_iterations {
        let mut y_sum = 0.0;
        let mut weighted = vec![0.0; dim];
        for nb in neighbors {
            if within_inf(nb.point, &u, params.gamma_s) {
                y_sum += nb.label;
                for (w, &x) in weighted.iter_mut().zip(nb.point) {
                    *w += nb.label * x;
                }
            }
        }
        if y_sum <= 0.0 {
            return None;
        }
        let mut movement = 0.0;
        for (slot, w) in u.iter_mut().zip(&weighted) {
            let next = w / y_sum;
            let d = next - *slot;
            movement += d * d;
            *slot = next;
        }
        if movement.sqrt() < params.eps_tol {
            break;
        }
    }
    // A mode only counts when the labels around it average at least the cut
    // value, mirroring the collection threshold of the model-based path.
    let mut count = 0usize;
    let mut label_sum = 0.0;
    for nb in neighbors {
        if within_inf(nb.point, &u, params.gamma_s) {
            count += 1;
            label_sum += nb.label;
        }
    }
    if count > 0 && label_sum / count as f64 >= l_cut {
        Some(u)
    } else {
        None
    }
}

/// Locates solutions at Θ by mean-shift over the labeled samples.
///
/// Samples from records with parameters within `gamma_p` of Θ form the
/// neighborhood pool. Each of `n_initial` uniform starts in the domain is
/// shifted to the label-weighted mean of the nearby pool points until it
/// moves less than `eps_tol`; starts whose neighborhood label mass is not
/// positive are discarded, and converged modes are kept only where the mean
/// neighborhood label reaches `l_cut`. Kept modes are clustered exactly like
/// collected grid points. The result carries no stability labels.
pub fn meanshift_locate(
    training: &TrainingSet,
    theta: &[f64],
    domain: &AxisBox,
    l_cut: f64,
    params: &MeanShiftParams,
    cluster: &ClusterParams,
) -> Result<LocateResult, Error> {
    params.validate()?;
    cluster.validate()?;
    if training.records.is_empty() {
        return Err(Error::Contract("training set has no records".into()));
    }
    let neighbors: Vec<Neighbor<'_>> = training
        .records
        .iter()
        .filter(|r| within_inf(&r.theta, theta, params.gamma_p))
        .flat_map(|r| {
            r.points
                .iter()
                .zip(&r.targets)
                .map(|(p, &y)| Neighbor { point: p.as_slice(), label: y })
        })
        .collect();
    let mut rng = RandomSource::from_seed(params.seed);
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for _ in 0..params.n_initial {
        let start = domain.sample(&mut rng);
        if let Some(mode) = shift_mode(&start, &neighbors, l_cut, params) {
            modes.push(mode);
        }
    }
    let n_collected = modes.len();
    if modes.is_empty() {
        return Ok(LocateResult {
            theta: theta.to_vec(),
            centers: Vec::new(),
            stability: None,
            silhouette: 0.0,
            n_collected,
        });
    }
    let outcome = cluster_points(&modes, cluster)?;
    let centers = dedupe_centers(outcome.centers, CENTER_DEDUPE_TOL);
    Ok(LocateResult {
        theta: theta.to_vec(),
        centers,
        stability: None,
        silhouette: outcome.silhouette,
        n_collected,
    })
}
