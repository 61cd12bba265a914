//! Target fields encoding labeled solution sets.
//!
//! For a parameter with solutions {U_j} the solution-channel target is a sum
//! of unit Gaussian bumps exp(-|U - U_j|^2 / delta), and the stability channel
//! flips the sign of each bump for unstable solutions. The width delta is a
//! quarter of the minimum pairwise solution distance (floored at delta0), or
//! delta1 for singleton sets. Incomplete records estimate a width delta-tilde
//! from neighboring parameters instead, since their own observed set is
//! missing solutions.

use crate::system::{AxisBox, SolutionPoint};
use crate::numerics::euclidean_distance;
use crate::{Error, Result};

/// Which of the two target fields a model or sample refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Unsigned bump field used to locate solutions.
    Solution,
    /// Signed bump field whose sign classifies stability.
    Stability,
}

impl Channel {
    /// Evaluates the channel's target field at a point.
    pub fn target(self, u: &[f64], labeled: &LabeledSolutionSet) -> f64 {
        match self {
            Channel::Solution => phi(u, labeled),
            Channel::Stability => phi_s(u, labeled),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Solution => "solution",
            Channel::Stability => "stability",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solution" => Ok(Channel::Solution),
            "stability" => Ok(Channel::Stability),
            other => Err(Error::Config(format!("unknown channel {other:?}"))),
        }
    }
}

/// Width configuration for the Gaussian bumps.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeviationConfig {
    /// Floor for the pairwise-distance width branch.
    pub delta0: f64,
    /// Width used for singleton solution sets.
    pub delta1: f64,
    /// Neighborhood size for the incomplete-data width estimate.
    pub neighbor_count: usize,
}

impl DeviationConfig {
    /// Defaults: delta0 = 0.01, delta1 = 0.1 * diam(D), 8 neighbors.
    pub fn default_for(domain: &AxisBox) -> Self {
        Self { delta0: 0.01, delta1: 0.1 * domain.diameter(), neighbor_count: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta1 > 0.0) {
            return Err(Error::Config("deviation widths must be positive".into()));
        }
        if self.delta1 < self.delta0 {
            return Err(Error::Config(
                "singleton width delta1 must not be below the floor delta0".into(),
            ));
        }
        if self.neighbor_count == 0 {
            return Err(Error::Config("neighbor_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gaussian width for a solution set: max(min pairwise distance / 4, delta0)
/// for two or more solutions, delta1 for exactly one. Empty sets carry no
/// width and are rejected.
pub fn deviation(solutions: &[SolutionPoint], cfg: &DeviationConfig) -> Result<f64> {
    match solutions.len() {
        0 => Err(Error::Contract("deviation is undefined for an empty solution set".into())),
        1 => Ok(cfg.delta1),
        _ => {
            let mut min_dist = f64::INFINITY;
            for i in 0..solutions.len() {
                for j in i + 1..solutions.len() {
                    min_dist = min_dist.min(euclidean_distance(&solutions[i], &solutions[j]));
                }
            }
            Ok((0.25 * min_dist).max(cfg.delta0))
        }
    }
}

/// A parameter's solution set with stability flags and its bump width.
#[derive(Debug, Clone)]
pub struct LabeledSolutionSet {
    solutions: Vec<SolutionPoint>,
    /// 0 = stable, 1 = unstable, aligned with `solutions`.
    flags: Vec<u8>,
    /// Absent only for the empty set (whose fields are identically zero).
    deviation: Option<f64>,
}

impl LabeledSolutionSet {
    /// Builds the set computing the width from the solutions themselves.
    pub fn new(solutions: Vec<SolutionPoint>, flags: Vec<u8>, cfg: &DeviationConfig) -> Result<Self> {
        let deviation =
            if solutions.is_empty() { None } else { Some(deviation(&solutions, cfg)?) };
        Self::with_deviation(solutions, flags, deviation)
    }

    /// Builds the set with an externally estimated width (the incomplete-data
    /// path, where the own observed set would misstate delta).
    pub fn with_deviation(
        solutions: Vec<SolutionPoint>,
        flags: Vec<u8>,
        deviation: Option<f64>,
    ) -> Result<Self> {
        if solutions.len() != flags.len() {
            return Err(Error::Contract(format!(
                "stability flags ({}) must align with solutions ({})",
                flags.len(),
                solutions.len()
            )));
        }
        if !solutions.is_empty() && deviation.is_none() {
            return Err(Error::Contract("nonempty solution set requires a width".into()));
        }
        if let Some(d) = deviation {
            if !(d > 0.0) {
                return Err(Error::Contract("width must be positive".into()));
            }
        }
        Ok(Self { solutions, flags, deviation })
    }

    pub fn solutions(&self) -> &[SolutionPoint] {
        &self.solutions
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    pub fn deviation(&self) -> Option<f64> {
        self.deviation
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }
}

/// Solution-channel field: sum of unit Gaussian bumps, zero for empty sets.
pub fn phi(u: &[f64], labeled: &LabeledSolutionSet) -> f64 {
    let Some(delta) = labeled.deviation else { return 0.0 };
    labeled
        .solutions
        .iter()
        .map(|s| {
            let d = euclidean_distance(u, s);
            (-d * d / delta).exp()
        })
        .sum()
}

/// Stability-channel field: bumps signed by (-1)^flag, zero for empty sets.
pub fn phi_s(u: &[f64], labeled: &LabeledSolutionSet) -> f64 {
    let Some(delta) = labeled.deviation else { return 0.0 };
    labeled
        .solutions
        .iter()
        .zip(&labeled.flags)
        .map(|(s, &flag)| {
            let d = euclidean_distance(u, s);
            let sign = if flag == 0 { 1.0 } else { -1.0 };
            sign * (-d * d / delta).exp()
        })
        .sum()
}

/// A neighboring parameter's observed solutions, input to
/// [`deviation_incomplete`].
#[derive(Debug, Clone)]
pub struct ObservedNeighbor<'a> {
    pub theta: &'a [f64],
    pub solutions: &'a [SolutionPoint],
}

/// Width estimate and whether the no-informative-neighbor fallback fired.
#[derive(Debug, Clone, Copy)]
pub struct IncompleteDeviation {
    pub value: f64,
    pub fallback: bool,
}

/// Estimates the width for a parameter whose record is incomplete.
///
/// Takes the `neighbor_count` nearest candidates by Euclidean parameter
/// distance, finds the maximum observed solution count among them, and
/// averages the widths of exactly the neighbors achieving that count (each
/// width computed from that neighbor's own observed set). When no neighbor
/// has any solutions the estimate falls back to delta1 and says so.
pub fn deviation_incomplete(
    theta: &[f64],
    candidates: &[ObservedNeighbor<'_>],
    cfg: &DeviationConfig,
) -> Result<IncompleteDeviation> {
    if candidates.is_empty() {
        return Err(Error::Contract("incomplete-width estimate needs neighbors".into()));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // Stable tie-break on index keeps the neighborhood deterministic.
    order.sort_by(|&a, &b| {
        let da = euclidean_distance(theta, candidates[a].theta);
        let db = euclidean_distance(theta, candidates[b].theta);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let neighborhood = &order[..cfg.neighbor_count.min(order.len())];
    let max_count =
        neighborhood.iter().map(|&i| candidates[i].solutions.len()).max().unwrap_or(0);
    if max_count == 0 {
        return Ok(IncompleteDeviation { value: cfg.delta1, fallback: true });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for &i in neighborhood {
        if candidates[i].solutions.len() == max_count {
            sum += deviation(candidates[i].solutions, cfg)?;
            n += 1;
        }
    }
    Ok(IncompleteDeviation { value: sum / n as f64, fallback: false })
}
