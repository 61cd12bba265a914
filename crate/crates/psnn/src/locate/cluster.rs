//! K-means clustering with silhouette-based cluster-count selection.
//!
//! The collection stage produces an unlabeled cloud of points in the solution
//! domain; this module condenses such a cloud into representative centers.
//! The cluster count is chosen by maximizing the mean silhouette over a small
//! range of candidate counts, falling back to a single center when no
//! candidate scores above the configured threshold.

use crate::numerics::RandomSource;
use crate::Error;

/// Controls for the clustering stage.
#[derive(Debug, Clone)]
pub struct ClusterParams {
    /// Largest cluster count considered.
    pub c_max: usize,
    /// Minimum mean silhouette required to accept a multi-cluster split.
    pub sil_threshold: f64,
    /// Independent seeding restarts per cluster count; best inertia wins.
    pub restarts: usize,
    /// Hard cap on Lloyd iterations per restart.
    pub max_iterations: usize,
    /// Relative inertia improvement below which iteration stops.
    pub tolerance: f64,
    /// Seed for the seeding draws.
    pub seed: u64,
}

impl ClusterParams {
    pub fn new(seed: u64) -> Self {
        ClusterParams {
            c_max: 5,
            sil_threshold: 0.6,
            restarts: 10,
            max_iterations: 100,
            tolerance: 1e-6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.c_max < 2 {
            return Err(Error::Config("cluster count cap must be at least 2".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("need at least one restart".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(self.sil_threshold > 0.0 && self.sil_threshold < 1.0) {
            return Err(Error::Config(
                "silhouette threshold must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one k-means run.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn mean_point(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for &i in members {
        for (m, &x) in mean.iter_mut().zip(&points[i]) {
            *m += x;
        }
    }
    let inv = 1.0 / members.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    mean
}

/// Distance-weighted seeding: the first center is a uniformly chosen point,
/// each later center is drawn with probability proportional to the squared
/// distance to the nearest center chosen so far.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.index(n)].clone());
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.unit() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // Every point coincides with an existing center; any choice works.
            rng.index(n)
        };
        let center = points[chosen].clone();
        for (slot, p) in nearest.iter_mut().zip(points) {
            let d = squared_distance(p, &center);
            if d < *slot {
                *slot = d;
            }
        }
        centers.push(center);
    }
    centers
}

fn assign_points(points: &[Vec<f64>], centers: &[Vec<f64>], assignment: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (slot, p) in assignment.iter_mut().zip(points) {
        let mut best = 0;
        let mut best_d = squared_distance(p, &centers[0]);
        for (c, center) in centers.iter().enumerate().skip(1) {
            let d = squared_distance(p, center);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *slot = best;
        inertia += best_d;
    }
    inertia
}

fn lloyd(points: &[Vec<f64>], initial: Vec<Vec<f64>>, params: &ClusterParams) -> KMeans {
    let n = points.len();
    let k = initial.len();
    let mut centers = initial;
    let mut assignment = vec![0usize; n];
    let mut inertia = assign_points(points, &centers, &mut assignment);
    let mut history = vec![inertia];
    for _ in 0..params.max_iterations {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        // An emptied cluster is reseeded to the point farthest from its
        // current center so every requested center survives.
        for c in 0..k {
            if members[c].is_empty() {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = squared_distance(&points[a], &centers[assignment[a]]);
                        let db = squared_distance(&points[b], &centers[assignment[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers[c] = points[far].clone();
            } else {
                centers[c] = mean_point(points, &members[c]);
            }
        }
        let next = assign_points(points, &centers, &mut assignment);
        let improved = inertia - next;
        let done = improved <= params.tolerance * inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        history.push(inertia);
        if done {
            break;
        }
    }
    KMeans {
        centers,
        assignment,
        inertia,
        inertia_history: history,
    }
}

/// Lloyd's algorithm with distance-weighted seeding and restarts.
///
/// `k = 1` needs no iteration: the center is the mean of the points. For
/// larger `k` the best of `params.restarts` runs by final inertia is kept,
/// with ties resolved in favor of the earliest restart.
pub fn kmeans(points: &[Vec<f64>], k: usize, params: &ClusterParams) -> Result<KMeans, Error> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::Contract("kmeans needs at least one point".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Contract(format!(
            "cluster count {k} invalid for {} points",
            points.len()
        )));
    }
    if k == 1 {
        let members: Vec<usize> = (0..points.len()).collect();
        let center = mean_point(points, &members);
        let inertia: f64 = points.iter().map(|p| squared_distance(p, &center)).sum();
        return Ok(KMeans {
            centers: vec![center],
            assignment: vec![0; points.len()],
            inertia,
            inertia_history: vec![inertia],
        });
    }
    let base = RandomSource::from_seed(params.seed).child(k as u64);
    let mut best: Option<KMeans> = None;
    for restart in 0..params.restarts {
        let mut rng = base.child(restart as u64);
        let initial = seed_centers(points, k, &mut rng);
        let run = lloyd(points, initial, params);
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Mean silhouette coefficient of a clustering. Cluster labels must cover
/// `0..=max(assignment)` with no empty cluster.
///
/// For each point, `a` is the mean distance to the other members of its own
/// cluster and `b` the smallest mean distance to any other cluster; the
/// point's score is `(b - a) / max(a, b)`. Points in singleton clusters score
/// zero, as do points where both means vanish (coincident data).
pub fn silhouette(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64, Error> {
    if points.len() != assignment.len() || points.is_empty() {
        return Err(Error::Contract(
            "assignment length must match a nonempty point count".into(),
        ));
    }
    let k = assignment.iter().max().unwrap() + 1;
    if k < 2 {
        return Err(Error::Contract(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let n = points.len();
    let mut counts = vec![0usize; k];
    for &c in assignment {
        counts[c] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Contract("every cluster must be nonempty".into()));
    }
    // sums[i * k + c] accumulates the distance from point i to cluster c.
    let mut sums = vec![0.0; n * k];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(&points[i], &points[j]).sqrt();
            sums[i * k + assignment[j]] += d;
            sums[j * k + assignment[i]] += d;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = assignment[i];
        if counts[own] == 1 {
            continue;
        }
        let a = sums[i * k + own] / (counts[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != own {
                let mean = sums[i * k + c] / counts[c] as f64;
                if mean < b {
                    b = mean;
                }
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Outcome of the cluster-count selection.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub centers: Vec<Vec<f64>>,
    /// Best mean silhouette found, zero when fewer than two points were given.
    pub silhouette: f64,
}

/// Condenses a point cloud into centers.
///
/// Cluster counts from two up to `min(c_max, n)` are tried; the count with
/// the highest mean silhouette wins if that silhouette reaches the threshold,
/// otherwise the whole cloud is summarized by its single mean. Fewer than two
/// points are returned as they are.
pub fn cluster_points(points: &[Vec<f64>], params: &ClusterParams) -> Result<ClusterOutcome, Error> {
    params.validate()?;
    if points.len() < 2 {
        return Ok(ClusterOutcome {
            centers: points.to_vec(),
            silhouette: 0.0,
        });
    }
    let mut best_sil = f64::NEG_INFINITY;
    let mut best_centers: Option<Vec<Vec<f64>>> = None;
    for k in 2..=params.c_max.min(points.len()) {
        let run = kmeans(points, k, params)?;
        // Heavily duplicated data can leave a cluster empty in the final
        // assignment; such a k is unsupported by the data and is skipped.
        let mut occupied = vec![false; k];
        for &c in &run.assignment {
            occupied[c] = true;
        }
        if occupied.iter().any(|&o| !o) {
            continue;
        }
        let sil = silhouette(points, &run.assignment)?;
        if sil > best_sil {
            best_sil = sil;
            best_centers = Some(run.centers);
        }
    }
    match best_centers {
        Some(centers) if best_sil >= params.sil_threshold => Ok(ClusterOutcome {
            centers,
            silhouette: best_sil,
        }),
        _ => {
            let run = kmeans(points, 1, params)?;
            Ok(ClusterOutcome {
                centers: run.centers,
                silhouette: best_sil.max(0.0),
            })
        }
    }
}

/// Removes centers that duplicate an earlier one to within `tol` in the
/// Euclidean norm, keeping first occurrences.
pub fn dedupe_centers(centers: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(centers.len());
    for c in centers {
        let duplicate = kept
            .iter()
            .any(|k| squared_distance(k, &c).sqrt() < tol);
        if !duplicate {
            kept.push(c);
        }
    }
    kept
}
