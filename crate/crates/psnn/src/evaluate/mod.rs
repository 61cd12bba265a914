//! End-to-end evaluation: parameter-space phase diagrams, the method error
//! table, and a spectral check of the target field's kernel decomposition.

pub mod kernel;
pub mod svg;

pub use kernel::{gray_scott_field, kernel_check, midpoint_grid, KernelCheckReport, TruncationRow};
pub use svg::phase_diagram_svg;

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{ObservationRecord, TrainingSet};
use crate::locate::meanshift::MeanShiftParams;
use crate::locate::{locate, meanshift_locate, ClusterParams, LocateResult, SnnCache};
use crate::network::PsnnModel;
use crate::numerics::{assignment, euclidean_cost_matrix};
use crate::system::{
    gray_scott_region, gray_scott_solutions, gray_scott_stability, AxisBox, RegionLabel,
    StabilityClass, BOUNDARY_BAND,
};
use crate::Error;

/// Stability signature of one parameter cell, summarizing the per-center
/// labels into the handful of classes the phase diagram distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignatureClass {
    /// No centers.
    None,
    TwoUnstable,
    OneStableOneUnstable,
    TwoStable,
    /// Any combination outside the classes above.
    Other,
}

impl SignatureClass {
    pub const ALL: [SignatureClass; 5] = [
        SignatureClass::None,
        SignatureClass::TwoUnstable,
        SignatureClass::OneStableOneUnstable,
        SignatureClass::TwoStable,
        SignatureClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignatureClass::None => "none",
            SignatureClass::TwoUnstable => "2-unstable",
            SignatureClass::OneStableOneUnstable => "1-stable-1-unstable",
            SignatureClass::TwoStable => "2-stable",
            SignatureClass::Other => "other",
        }
    }
}

impl std::fmt::Display for SignatureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Collapses per-center stability labels into a signature class.
pub fn signature_of(labels: &[StabilityClass]) -> SignatureClass {
    let stable = labels.iter().filter(|&&l| l == StabilityClass::Stable).count();
    let unstable = labels.iter().filter(|&&l| l == StabilityClass::Unstable).count();
    match (labels.len(), stable, unstable) {
        (0, _, _) => SignatureClass::None,
        (2, 0, 2) => SignatureClass::TwoUnstable,
        (2, 1, 1) => SignatureClass::OneStableOneUnstable,
        (2, 2, 0) => SignatureClass::TwoStable,
        _ => SignatureClass::Other,
    }
}

/// One evaluated parameter cell of a phase diagram.
#[derive(Debug, Clone)]
pub struct PhaseCell {
    pub theta: Vec<f64>,
    pub pred_count: usize,
    pub true_count: usize,
    pub signature: SignatureClass,
    pub true_signature: SignatureClass,
    pub region: RegionLabel,
}

/// Predicted and analytic solution counts and stability signatures over a
/// uniform cell grid covering the parameter box.
#[derive(Debug, Clone)]
pub struct PhaseDiagram {
    pub omega: AxisBox,
    pub counts: Vec<usize>,
    pub cells: Vec<PhaseCell>,
}

/// Midpoints of a uniform cell partition of the box, last axis fastest. The
/// parameter box is open, so midpoints (rather than an inclusive grid) keep
/// every evaluation point strictly inside.
pub fn cell_midpoints(bounds: &AxisBox, counts: &[usize]) -> Result<Vec<Vec<f64>>, Error> {
    if counts.len() != bounds.dim() {
        return Err(Error::Config("cell counts must match the box dimension".into()));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Config("need at least one cell per axis".into()));
    }
    let dim = counts.len();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut index = vec![0usize; dim];
    loop {
        let point: Vec<f64> = (0..dim)
            .map(|d| {
                let width = (bounds.hi()[d] - bounds.lo()[d]) / counts[d] as f64;
                bounds.lo()[d] + (index[d] as f64 + 0.5) * width
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
            if index[d] < counts[d] {
                break;
            }
            index[d] = 0;
        }
    }
}

fn oracle_signature(theta: &[f64]) -> SignatureClass {
    let labels: Vec<StabilityClass> = gray_scott_stability(theta)
        .iter()
        .map(|&s| if s == 0 { StabilityClass::Stable } else { StabilityClass::Unstable })
        .collect();
    signature_of(&labels)
}

/// Builds a phase diagram from an arbitrary per-parameter predictor. Each
/// cell gets the predictor's count and signature next to the analytic count,
/// signature and region label.
pub fn phase_diagram_with<F>(
    predict: F,
    omega: &AxisBox,
    counts: &[usize],
) -> Result<PhaseDiagram, Error>
where
    F: Fn(&[f64]) -> Result<(usize, SignatureClass), Error> + Sync,
{
    let thetas = cell_midpoints(omega, counts)?;
    let cells: Vec<PhaseCell> = thetas
        .par_iter()
        .map(|theta| {
            let (pred_count, signature) = predict(theta)?;
            let region = gray_scott_region(theta, BOUNDARY_BAND);
            let true_count = gray_scott_solutions(theta).len();
            Ok(PhaseCell {
                theta: theta.clone(),
                pred_count,
                true_count,
                signature,
                true_signature: oracle_signature(theta),
                region,
            })
        })
        .collect::<Result<_, Error>>()?;
    Ok(PhaseDiagram { omega: omega.clone(), counts: counts.to_vec(), cells })
}

/// Runs the full location pipeline on every cell of a parameter grid.
pub fn phase_diagram(
    model: &PsnnModel,
    stability_model: &PsnnModel,
    cache: &SnnCache,
    l_cut: f64,
    params: &ClusterParams,
    omega: &AxisBox,
    counts: &[usize],
) -> Result<PhaseDiagram, Error> {
    phase_diagram_with(
        |theta| {
            let r = locate(model, stability_model, cache, theta, l_cut, params)?;
            let labels = r.stability.as_deref().unwrap_or(&[]);
            Ok((r.centers.len(), signature_of(labels)))
        },
        omega,
        counts,
    )
}

impl PhaseDiagram {
    /// Fraction of off-boundary cells whose predicted count matches the
    /// analytic count.
    pub fn count_agreement(&self) -> f64 {
        let off: Vec<&PhaseCell> = self
            .cells
            .iter()
            .filter(|c| c.region != RegionLabel::Boundary)
            .collect();
        if off.is_empty() {
            return 1.0;
        }
        let hits = off.iter().filter(|c| c.pred_count == c.true_count).count();
        hits as f64 / off.len() as f64
    }

    /// Fraction of two-solution-region cells whose predicted signature
    /// matches the analytic one.
    pub fn signature_agreement(&self) -> f64 {
        let region1: Vec<&PhaseCell> = self
            .cells
            .iter()
            .filter(|c| c.region == RegionLabel::TwoSolutions)
            .collect();
        if region1.is_empty() {
            return 1.0;
        }
        let hits = region1
            .iter()
            .filter(|c| c.signature == c.true_signature)
            .count();
        hits as f64 / region1.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "f,k,pred_count,true_count,signature,true_signature")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                c.theta[0], c.theta[1], c.pred_count, c.true_count, c.signature, c.true_signature
            )?;
        }
        Ok(())
    }
}

/// Error statistics of one method on one record list.
///
/// `distance` and the stability rates are aggregated only over records whose
/// count was predicted correctly and which have at least one true solution;
/// empty-set matches carry no distance or label information. A parameter
/// counts as stability-wrong when any of its matched centers is mislabeled;
/// `wrong_stability_solutions` is the companion per-solution rate.
#[derive(Debug, Clone)]
pub struct ErrorMetrics {
    /// Records evaluated.
    pub n: usize,
    /// Records whose count was predicted correctly and have solutions.
    pub n_matched: usize,
    pub wrong_count: f64,
    pub distance: f64,
    pub wrong_stability: Option<f64>,
    pub wrong_stability_solutions: Option<f64>,
}

/// Scores located results against recorded truth. Results must align
/// one-to-one with the records.
pub fn score_results(
    results: &[LocateResult],
    records: &[&ObservationRecord],
    domain: &AxisBox,
) -> Result<ErrorMetrics, Error> {
    if results.len() != records.len() || records.is_empty() {
        return Err(Error::Contract(
            "need one located result per record, and at least one record".into(),
        ));
    }
    let n = records.len();
    let mut wrong = 0usize;
    let mut matched = 0usize;
    let mut dist_sum = 0.0;
    let mut labeled = false;
    let mut stb_wrong_params = 0usize;
    let mut stb_pairs = 0usize;
    let mut stb_wrong_pairs = 0usize;
    for (res, rec) in results.iter().zip(records) {
        if res.centers.len() != rec.solutions.len() {
            wrong += 1;
            continue;
        }
        if rec.solutions.is_empty() {
            continue;
        }
        matched += 1;
        let cost = euclidean_cost_matrix(&res.centers, &rec.solutions);
        let (perm, total) = assignment(&cost)?;
        dist_sum += total / rec.solutions.len() as f64 / domain.diameter();
        if let Some(labels) = &res.stability {
            labeled = true;
            let mut any = false;
            for (ci, &ti) in perm.iter().enumerate() {
                let truth = if rec.stability[ti] == 0 {
                    StabilityClass::Stable
                } else {
                    StabilityClass::Unstable
                };
                stb_pairs += 1;
                if labels[ci] != truth {
                    any = true;
                    stb_wrong_pairs += 1;
                }
            }
            if any {
                stb_wrong_params += 1;
            }
        }
    }
    let (wrong_stability, wrong_stability_solutions) = if labeled {
        (
            Some(if matched > 0 { stb_wrong_params as f64 / matched as f64 } else { 0.0 }),
            Some(if stb_pairs > 0 { stb_wrong_pairs as f64 / stb_pairs as f64 } else { 0.0 }),
        )
    } else {
        (None, None)
    };
    Ok(ErrorMetrics {
        n,
        n_matched: matched,
        wrong_count: wrong as f64 / n as f64,
        distance: if matched > 0 { dist_sum / matched as f64 } else { 0.0 },
        wrong_stability,
        wrong_stability_solutions,
    })
}

/// Locates every record's parameter with the trained model pair and scores
/// the results.
pub fn psnn_errors(
    model: &PsnnModel,
    stability_model: &PsnnModel,
    cache: &SnnCache,
    l_cut: f64,
    params: &ClusterParams,
    records: &[&ObservationRecord],
    domain: &AxisBox,
) -> Result<ErrorMetrics, Error> {
    let results: Vec<LocateResult> = records
        .par_iter()
        .map(|rec| locate(model, stability_model, cache, &rec.theta, l_cut, params))
        .collect::<Result<_, Error>>()?;
    score_results(&results, records, domain)
}

/// Scores the mean-shift baseline on the same records. The baseline carries
/// no stability labels, so the stability rates are absent.
pub fn meanshift_errors(
    training: &TrainingSet,
    l_cut: f64,
    ms: &MeanShiftParams,
    cluster: &ClusterParams,
    records: &[&ObservationRecord],
    domain: &AxisBox,
) -> Result<ErrorMetrics, Error> {
    let results: Vec<LocateResult> = records
        .par_iter()
        .map(|rec| meanshift_locate(training, &rec.theta, domain, l_cut, ms, cluster))
        .collect::<Result<_, Error>>()?;
    score_results(&results, records, domain)
}

/// Means each metric over per-run measurements.
pub fn average_metrics(runs: &[ErrorMetrics]) -> Result<ErrorMetrics, Error> {
    if runs.is_empty() {
        return Err(Error::Contract("no runs to average".into()));
    }
    let inv = 1.0 / runs.len() as f64;
    let mean_opt = |take: fn(&ErrorMetrics) -> Option<f64>| -> Option<f64> {
        if runs.iter().all(|r| take(r).is_some()) {
            Some(runs.iter().map(|r| take(r).unwrap()).sum::<f64>() * inv)
        } else {
            None
        }
    };
    Ok(ErrorMetrics {
        n: runs.iter().map(|r| r.n).sum::<usize>() / runs.len(),
        n_matched: runs.iter().map(|r| r.n_matched).sum::<usize>() / runs.len(),
        wrong_count: runs.iter().map(|r| r.wrong_count).sum::<f64>() * inv,
        distance: runs.iter().map(|r| r.distance).sum::<f64>() * inv,
        wrong_stability: mean_opt(|r| r.wrong_stability),
        wrong_stability_solutions: mean_opt(|r| r.wrong_stability_solutions),
    })
}

/// One labeled row of the method comparison table.
#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub method: String,
    pub dataset: String,
    pub split: String,
    pub metrics: ErrorMetrics,
}

/// The assembled method comparison, one row per (method, dataset, split).
#[derive(Debug, Clone, Default)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    /// Writes `method,dataset,split,wrong_soln,distance,wrong_stb` rows; the
    /// stability column stays empty for methods without labels.
    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "method,dataset,split,wrong_soln,distance,wrong_stb")?;
        for row in &self.rows {
            let stb = row
                .metrics
                .wrong_stability
                .map(|v| v.to_string())
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.method,
                row.dataset,
                row.split,
                row.metrics.wrong_count,
                row.metrics.distance,
                stb
            )?;
        }
        Ok(())
    }
}
