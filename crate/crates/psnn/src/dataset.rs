//! Observation records, split assignment, masking, and training samples.
//!
//! An observation set holds parameter points with their observed steady
//! states and stability flags, partitioned into train, search, and test
//! splits. Masking removes one solution from chosen train records to model
//! incomplete data. Training samples pair each record's parameter with points
//! in the solution domain and the target field value there, drawn either
//! uniformly or concentrated in balls around the observed solutions.

use rayon::prelude::*;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use crate::numerics::{euclidean_distance, DenseMatrix, RandomSource};
use crate::system::{
    gray_scott, gray_scott_region, gray_scott_solutions, gray_scott_stability, AxisBox,
    RegionLabel, SolutionPoint, BOUNDARY_BAND,
};
use crate::target::{
    deviation, deviation_incomplete, Channel, DeviationConfig, IncompleteDeviation,
    LabeledSolutionSet, ObservedNeighbor,
};
use crate::{Error, Result};

/// Which role a record plays: model fitting, cut calibration, or held-out
/// error measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Search,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Search => "search",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "search" => Ok(Split::Search),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One parameter point with its observed solution set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObservationRecord {
    pub theta: Vec<f64>,
    pub solutions: Vec<SolutionPoint>,
    /// 0 = stable, 1 = unstable, aligned with `solutions`.
    pub stability: Vec<u8>,
    /// False once a solution has been masked out.
    pub complete: bool,
    pub split: Split,
}

impl ObservationRecord {
    fn validate(&self, index: usize) -> Result<()> {
        if self.stability.len() != self.solutions.len() {
            return Err(Error::Contract(format!(
                "record {index}: {} stability flags for {} solutions",
                self.stability.len(),
                self.solutions.len()
            )));
        }
        for i in 0..self.solutions.len() {
            for j in i + 1..self.solutions.len() {
                if euclidean_distance(&self.solutions[i], &self.solutions[j]) <= 1e-12 {
                    return Err(Error::Contract(format!(
                        "record {index}: solutions {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A full collection of observation records with the boxes they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub omega: AxisBox,
    pub domain: AxisBox,
    pub records: Vec<ObservationRecord>,
}

impl ObservationSet {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            r.validate(i)?;
        }
        Ok(())
    }

    /// Indices of records belonging to a split, in record order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count_in(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }
}

/// Sizes of the three splits plus the resampling band around the fold curve.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSpec {
    pub train_count: usize,
    pub search_count: usize,
    pub test_count: usize,
    /// Parameters with |fold margin| below this are redrawn.
    pub boundary_band: f64,
}

impl DatasetSpec {
    /// Default sizes for the complete-data experiments.
    pub fn complete() -> Self {
        Self { train_count: 1000, search_count: 100, test_count: 600, boundary_band: BOUNDARY_BAND }
    }

    /// Default sizes for the incomplete-data experiments (a larger train
    /// split so that masking 120 records still leaves dense coverage).
    pub fn incomplete() -> Self {
        Self { train_count: 1200, ..Self::complete() }
    }

    pub fn total(&self) -> usize {
        self.train_count + self.search_count + self.test_count
    }
}

/// Draws parameter points uniformly over the parameter box, redrawing any
/// that land inside the fold-boundary band, and attaches the closed-form
/// solution set and stability flags. Records are complete and assigned to
/// splits by position: train first, then search, then test. Each record's
/// draws come from its own child random source, so the result depends only
/// on the seed and the sizes, not on worker count.
pub fn generate_observations(spec: &DatasetSpec, seed: u64) -> ObservationSet {
    let sys = gray_scott();
    let base = RandomSource::from_seed(seed);
    let total = spec.total();
    let records: Vec<ObservationRecord> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.child(i as u64);
            let theta = loop {
                let t = sys.parameter_box.sample(&mut rng);
                if gray_scott_region(&t, spec.boundary_band) != RegionLabel::Boundary {
                    break t;
                }
            };
            let solutions = gray_scott_solutions(&theta);
            let stability = gray_scott_stability(&theta);
            let split = if i < spec.train_count {
                Split::Train
            } else if i < spec.train_count + spec.search_count {
                Split::Search
            } else {
                Split::Test
            };
            ObservationRecord { theta, solutions, stability, complete: true, split }
        })
        .collect();
    ObservationSet { omega: sys.parameter_box, domain: sys.domain, records }
}

/// What masking removed from one record, kept outside the observation set so
/// that downstream consumers never see withheld truth.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RemovedSolution {
    pub record_index: usize,
    pub solution: SolutionPoint,
    pub flag: u8,
}

/// Removes one uniformly chosen solution from `count` uniformly chosen train
/// records that have at least two, clearing their completeness marker.
/// Returns the masked set together with what was removed.
pub fn mask_incomplete(
    set: &ObservationSet,
    count: usize,
    seed: u64,
) -> Result<(ObservationSet, Vec<RemovedSolution>)> {
    let mut eligible: Vec<usize> = set
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Train && r.solutions.len() >= 2)
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < count {
        return Err(Error::Config(format!(
            "cannot mask {count} records: only {} train records have 2 or more solutions",
            eligible.len()
        )));
    }
    let mut rng = RandomSource::from_seed(seed).child(0x6d61736b);
    rng.shuffle(&mut eligible);
    let mut chosen: Vec<usize> = eligible[..count].to_vec();
    chosen.sort_unstable();
    let mut masked = set.clone();
    let mut removed = Vec::with_capacity(count);
    for &i in &chosen {
        let record = &mut masked.records[i];
        let j = rng.index(record.solutions.len());
        removed.push(RemovedSolution {
            record_index: i,
            solution: record.solutions.remove(j),
            flag: record.stability.remove(j),
        });
        record.complete = false;
    }
    Ok((masked, removed))
}

/// Width estimate for one record of an incomplete set, from the train-split
/// neighbors other than the record itself.
pub fn incomplete_deviation_for(
    set: &ObservationSet,
    index: usize,
    cfg: &DeviationConfig,
) -> Result<IncompleteDeviation> {
    let theta = &set.records[index].theta;
    let candidates: Vec<ObservedNeighbor<'_>> = set
        .records
        .iter()
        .enumerate()
        .filter(|(i, r)| *i != index && r.split == Split::Train)
        .map(|(_, r)| ObservedNeighbor { theta: &r.theta, solutions: &r.solutions })
        .collect();
    deviation_incomplete(theta, &candidates, cfg)
}

/// How domain points are drawn for each record's training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Fresh uniform draws over the whole domain.
    Uniform,
    /// Draws inside balls of radius `radius_multiplier * width` around each
    /// observed solution.
    Concentrated,
}

/// Sample-placement policy for assembling training sets.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplingPlan {
    pub mode: SamplingMode,
    /// Domain points per record in uniform mode (also the fallback count for
    /// records with no observed solutions in concentrated mode).
    pub n_random: usize,
    /// Ball draws per observed solution in concentrated mode.
    pub points_per_solution: usize,
    /// Ball radius as a multiple of the record's width.
    pub radius_multiplier: f64,
    /// Reuse one shared set of uniform points for every record instead of
    /// fresh per-record draws.
    pub shared_random: bool,
}

impl SamplingPlan {
    pub fn uniform(n_random: usize) -> Self {
        Self {
            mode: SamplingMode::Uniform,
            n_random,
            points_per_solution: 100,
            radius_multiplier: 2.0,
            shared_random: false,
        }
    }

    pub fn concentrated(points_per_solution: usize) -> Self {
        Self {
            mode: SamplingMode::Concentrated,
            n_random: 200,
            points_per_solution,
            radius_multiplier: 2.0,
            shared_random: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_random == 0 {
            return Err(Error::Config("n_random must be positive".into()));
        }
        if self.mode == SamplingMode::Concentrated && self.points_per_solution == 0 {
            return Err(Error::Config("points_per_solution must be positive".into()));
        }
        if !(self.radius_multiplier > 0.0) {
            return Err(Error::Config("radius_multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// All samples contributed by one record: domain points with target values,
/// plus the width used to compute them.
#[derive(Debug, Clone)]
pub struct RecordSamples {
    pub theta: Vec<f64>,
    pub points: Vec<SolutionPoint>,
    pub targets: Vec<f64>,
    pub deviation: Option<f64>,
}

/// A channel's assembled training (or search or test) samples, grouped by
/// record so neighborhood methods can scan them contiguously.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub channel: Channel,
    pub records: Vec<RecordSamples>,
}

/// Record-flattened sample arrays for the optimizer's batch loops.
#[derive(Debug, Clone)]
pub struct FlatSamples {
    /// One row per sample.
    pub thetas: DenseMatrix,
    /// One row per sample, aligned with `thetas`.
    pub points: DenseMatrix,
    pub targets: Vec<f64>,
}

impl TrainingSet {
    pub fn sample_count(&self) -> usize {
        self.records.iter().map(|r| r.points.len()).sum()
    }

    pub fn flatten(&self) -> FlatSamples {
        let n = self.sample_count();
        let theta_dim = self.records.first().map_or(0, |r| r.theta.len());
        let point_dim =
            self.records.iter().find_map(|r| r.points.first().map(|p| p.len())).unwrap_or(0);
        let mut thetas = DenseMatrix::zeros(n, theta_dim);
        let mut points = DenseMatrix::zeros(n, point_dim);
        let mut targets = Vec::with_capacity(n);
        let mut row = 0;
        for rec in &self.records {
            for (p, &t) in rec.points.iter().zip(&rec.targets) {
                thetas.as_mut_slice()[row * theta_dim..(row + 1) * theta_dim]
                    .copy_from_slice(&rec.theta);
                points.as_mut_slice()[row * point_dim..(row + 1) * point_dim].copy_from_slice(p);
                targets.push(t);
                row += 1;
            }
        }
        FlatSamples { thetas, points, targets }
    }
}

/// Draws a point uniformly from the ball around `center` intersected with the
/// domain box, by rejection. After a generous attempt budget the draw is
/// clamped into the box instead; with the radii in use the ball always
/// overlaps the box around an interior center, so the clamp is a guard, not a
/// code path seen in practice.
fn ball_sample(
    rng: &mut RandomSource,
    center: &[f64],
    radius: f64,
    domain: &AxisBox,
) -> SolutionPoint {
    for _ in 0..1000 {
        // Uniform in the ball: normal direction, radius by inverse cdf.
        let mut dir: Vec<f64> = (0..center.len()).map(|_| rng.normal()).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let r = radius * rng.unit().powf(1.0 / center.len() as f64);
        for (d, c) in dir.iter_mut().zip(center) {
            *d = c + *d / norm * r;
        }
        if domain.contains(&dir) {
            return dir;
        }
    }
    let mut clamped = center.to_vec();
    for i in 0..clamped.len() {
        clamped[i] = clamped[i].clamp(domain.lo()[i], domain.hi()[i]);
    }
    clamped
}

/// Assembles one channel's samples for every record of a split.
///
/// Each record contributes a sample at each of its observed solutions plus
/// the planned domain points, every target evaluated from the record's own
/// observed set and width. Complete records use the width computed from
/// their solutions; incomplete records estimate it from neighbors, and the
/// indices of records that had to fall back to the singleton width (no
/// informative neighbors) are returned for warning display.
pub fn build_training_set(
    set: &ObservationSet,
    split: Split,
    channel: Channel,
    plan: &SamplingPlan,
    cfg: &DeviationConfig,
    seed: u64,
) -> Result<(TrainingSet, Vec<usize>)> {
    plan.validate()?;
    cfg.validate()?;
    let indices = set.split_indices(split);
    if indices.is_empty() {
        return Err(Error::Contract(format!("split {split} has no records")));
    }

    let mut widths = Vec::with_capacity(indices.len());
    let mut fallback = Vec::new();
    for &i in &indices {
        let r = &set.records[i];
        let w = if r.solutions.is_empty() {
            None
        } else if r.complete {
            Some(deviation(&r.solutions, cfg)?)
        } else {
            let est = incomplete_deviation_for(set, i, cfg)?;
            if est.fallback {
                fallback.push(i);
            }
            Some(est.value)
        };
        widths.push(w);
    }

    let base = RandomSource::from_seed(seed);
    let shared: Option<Vec<SolutionPoint>> = plan.shared_random.then(|| {
        let mut rng = base.child(set.records.len() as u64);
        (0..plan.n_random).map(|_| set.domain.sample(&mut rng)).collect()
    });

    let records: Result<Vec<RecordSamples>> = indices
        .par_iter()
        .zip(&widths)
        .map(|(&i, &width)| {
            let r = &set.records[i];
            let mut rng = base.child(i as u64);
            let labeled =
                LabeledSolutionSet::with_deviation(r.solutions.clone(), r.stability.clone(), width)?;
            let mut points: Vec<SolutionPoint> = r.solutions.clone();
            match plan.mode {
                SamplingMode::Uniform => match &shared {
                    Some(s) => points.extend(s.iter().cloned()),
                    None => points.extend((0..plan.n_random).map(|_| set.domain.sample(&mut rng))),
                },
                SamplingMode::Concentrated => {
                    if r.solutions.is_empty() {
                        // Nothing to concentrate around; fall back to uniform
                        // coverage so empty-region records still contribute.
                        points.extend((0..plan.n_random).map(|_| set.domain.sample(&mut rng)));
                    } else {
                        let radius = plan.radius_multiplier * width.unwrap();
                        for s in &r.solutions {
                            points.extend(
                                (0..plan.points_per_solution)
                                    .map(|_| ball_sample(&mut rng, s, radius, &set.domain)),
                            );
                        }
                    }
                }
            }
            let targets: Vec<f64> = points.iter().map(|p| channel.target(p, &labeled)).collect();
            Ok(RecordSamples { theta: r.theta.clone(), points, targets, deviation: width })
        })
        .collect();

    Ok((TrainingSet { channel, records: records? }, fallback))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct FileHeader {
    schema: u32,
    omega: Vec<[f64; 2]>,
    domain: Vec<[f64; 2]>,
}

const SCHEMA_VERSION: u32 = 1;

/// Writes an observation set as JSON lines: a header object with the boxes,
/// then one record per line. All floats round-trip exactly.
pub fn save_observations(path: &Path, set: &ObservationSet) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = FileHeader {
        schema: SCHEMA_VERSION,
        omega: set.omega.to_pairs(),
        domain: set.domain.to_pairs(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::Contract(e.to_string()))?;
    out.write_all(b"\n")?;
    for r in &set.records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Contract(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an observation file written by [`save_observations`]. Malformed
/// lines report their 1-based line number; records are validated on load.
pub fn load_observations(path: &Path) -> Result<ObservationSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty observation file".into() })??;
    let header: FileHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Parse { line: 1, message: format!("header: {e}") })?;
    if header.schema != SCHEMA_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("schema {} not supported (expected {SCHEMA_VERSION})", header.schema),
        });
    }
    let omega = AxisBox::from_pairs(&header.omega)?;
    let domain = AxisBox::from_pairs(&header.domain)?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ObservationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 2, message: format!("record {i}: {e}") })?;
        record
            .validate(i)
            .map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        records.push(record);
    }
    Ok(ObservationSet { omega, domain, records })
}

/// Writes the masking record as JSON lines, one removed solution per line.
/// This file is evaluation-side truth; nothing in the training path reads it.
pub fn save_removed(path: &Path, removed: &[RemovedSolution]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in removed {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Contract(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_removed(path: &Path) -> Result<Vec<RemovedSolution>> {
    let reader = BufReader::new(File::open(path)?);
    let mut removed = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RemovedSolution = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        removed.push(r);
    }
    Ok(removed)
}

/// Writes one channel's samples as CSV with dimension-indexed coordinate
/// columns, one row per sample.
pub fn export_training_csv(path: &Path, set: &TrainingSet) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let theta_dim = set.records.first().map_or(0, |r| r.theta.len());
    let point_dim =
        set.records.iter().find_map(|r| r.points.first().map(|p| p.len())).unwrap_or(0);
    let mut header = String::new();
    for d in 0..theta_dim {
        header.push_str(&format!("theta_{d},"));
    }
    for d in 0..point_dim {
        header.push_str(&format!("u_{d},"));
    }
    header.push_str("target,channel\n");
    out.write_all(header.as_bytes())?;
    for rec in &set.records {
        for (p, t) in rec.points.iter().zip(&rec.targets) {
            let mut row = String::new();
            for x in &rec.theta {
                row.push_str(&format!("{x},"));
            }
            for x in p {
                row.push_str(&format!("{x},"));
            }
            row.push_str(&format!("{t},{}\n", set.channel));
            out.write_all(row.as_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::gray_scott_margin;

    fn small_spec() -> DatasetSpec {
        DatasetSpec { train_count: 60, search_count: 10, test_count: 20, ..DatasetSpec::complete() }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = generate_observations(&small_spec(), 7);
        let b = generate_observations(&small_spec(), 7);
        assert_eq!(a, b);
        let c = generate_observations(&small_spec(), 8);
        assert_ne!(a, c);
    }

    #[test]
    fn splits_partition_by_position() {
        let set = generate_observations(&small_spec(), 1);
        assert_eq!(set.count_in(Split::Train), 60);
        assert_eq!(set.count_in(Split::Search), 10);
        assert_eq!(set.count_in(Split::Test), 20);
        assert_eq!(set.records.len(), 90);
        set.validate().unwrap();
    }

    #[test]
    fn no_record_sits_in_the_boundary_band() {
        let set = generate_observations(&small_spec(), 2);
        for r in &set.records {
            assert!(gray_scott_margin(&r.theta).abs() >= BOUNDARY_BAND);
        }
    }

    #[test]
    fn two_solution_fraction_matches_region_area() {
        // Monte-Carlo check against the independently computed area fraction
        // of the two-solution region, 0.43402777..., within +-3%.
        let spec = DatasetSpec {
            train_count: 100_000,
            search_count: 0,
            test_count: 0,
            ..DatasetSpec::complete()
        };
        let set = generate_observations(&spec, 3);
        let frac = set.records.iter().filter(|r| r.solutions.len() == 2).count() as f64 / 1e5;
        assert!((frac - 0.43402777777777778).abs() < 0.03, "fraction {frac}");
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let set = generate_observations(&small_spec(), 5);
        save_observations(&p1, &set).unwrap();
        let loaded = load_observations(&p1).unwrap();
        assert_eq!(set, loaded);
        save_observations(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_solution_lists_serialize_as_lists() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.jsonl");
        let set = generate_observations(&small_spec(), 5);
        save_observations(&p, &set).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"solutions\":[]"));
        assert!(!text.contains("null"));
    }

    #[test]
    fn malformed_lines_report_their_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.jsonl");
        let set = generate_observations(&small_spec(), 5);
        save_observations(&p, &set).unwrap();
        let mut lines: Vec<String> =
            std::fs::read_to_string(&p).unwrap().lines().map(String::from).collect();
        lines[3] = lines[3].replace("\"solutions\"", "\"solutionz\"");
        std::fs::write(&p, lines.join("\n")).unwrap();
        match load_observations(&p) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("record 2"), "{message}");
                assert!(message.contains("solutions"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.jsonl");
        let set = generate_observations(&small_spec(), 5);
        save_observations(&p, &set).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replacen("\"schema\":1", "\"schema\":9", 1)).unwrap();
        match load_observations(&p) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn masking_removes_exactly_one_solution_each() {
        let spec = DatasetSpec {
            train_count: 300,
            search_count: 20,
            test_count: 30,
            ..DatasetSpec::complete()
        };
        let set = generate_observations(&spec, 11);
        let (masked, removed) = mask_incomplete(&set, 40, 11).unwrap();
        assert_eq!(removed.len(), 40);
        let incomplete: Vec<usize> = masked
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.complete)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(incomplete.len(), 40);
        for rem in &removed {
            let before = &set.records[rem.record_index];
            let after = &masked.records[rem.record_index];
            assert_eq!(after.split, Split::Train);
            assert_eq!(after.solutions.len(), before.solutions.len() - 1);
            assert!(before.solutions.contains(&rem.solution));
            assert!(!after.solutions.contains(&rem.solution));
            for s in &after.solutions {
                assert!(before.solutions.contains(s));
            }
        }
        // Untouched records are bitwise unchanged.
        for (i, (b, a)) in set.records.iter().zip(&masked.records).enumerate() {
            if !incomplete.contains(&i) {
                assert_eq!(b, a);
            }
        }
    }

    #[test]
    fn masking_more_than_eligible_fails() {
        let set = generate_observations(&small_spec(), 11);
        assert!(matches!(mask_incomplete(&set, 1000, 1), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_sample_counts_per_record() {
        let set = generate_observations(&small_spec(), 13);
        let cfg = DeviationConfig::default_for(&set.domain);
        let (ts, fallback) = build_training_set(
            &set,
            Split::Train,
            Channel::Solution,
            &SamplingPlan::uniform(200),
            &cfg,
            13,
        )
        .unwrap();
        assert!(fallback.is_empty());
        let idx = set.split_indices(Split::Train);
        for (rec, &i) in ts.records.iter().zip(&idx) {
            let m = set.records[i].solutions.len();
            assert_eq!(rec.points.len(), m + 200);
            if m == 0 {
                assert!(rec.targets.iter().all(|&t| t == 0.0));
            }
        }
    }

    #[test]
    fn targets_recompute_from_the_record() {
        let set = generate_observations(&small_spec(), 17);
        let cfg = DeviationConfig::default_for(&set.domain);
        for channel in [Channel::Solution, Channel::Stability] {
            let (ts, _) = build_training_set(
                &set,
                Split::Train,
                channel,
                &SamplingPlan::uniform(20),
                &cfg,
                17,
            )
            .unwrap();
            let idx = set.split_indices(Split::Train);
            for (rec, &i) in ts.records.iter().zip(&idx) {
                let r = &set.records[i];
                let labeled = LabeledSolutionSet::with_deviation(
                    r.solutions.clone(),
                    r.stability.clone(),
                    rec.deviation,
                )
                .unwrap();
                for (p, &t) in rec.points.iter().zip(&rec.targets) {
                    assert!((channel.target(p, &labeled) - t).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn shared_random_mode_reuses_one_point_set() {
        let set = generate_observations(&small_spec(), 19);
        let cfg = DeviationConfig::default_for(&set.domain);
        let mut plan = SamplingPlan::uniform(50);
        plan.shared_random = true;
        let (ts, _) =
            build_training_set(&set, Split::Train, Channel::Solution, &plan, &cfg, 19).unwrap();
        let first = &ts.records[0];
        let tail0 = &first.points[first.points.len() - 50..];
        for rec in &ts.records[1..] {
            assert_eq!(&rec.points[rec.points.len() - 50..], tail0);
        }
    }

    #[test]
    fn concentrated_samples_stay_in_the_balls() {
        let set = generate_observations(&small_spec(), 23);
        let cfg = DeviationConfig::default_for(&set.domain);
        let plan = SamplingPlan::concentrated(100);
        let (ts, _) =
            build_training_set(&set, Split::Train, Channel::Solution, &plan, &cfg, 23).unwrap();
        let idx = set.split_indices(Split::Train);
        for (rec, &i) in ts.records.iter().zip(&idx) {
            let r = &set.records[i];
            let m = r.solutions.len();
            if m == 0 {
                assert_eq!(rec.points.len(), plan.n_random);
                continue;
            }
            assert_eq!(rec.points.len(), m + m * 100);
            let radius = 2.0 * rec.deviation.unwrap();
            for p in &rec.points {
                assert!(set.domain.contains(p) || r.solutions.contains(p));
                let nearest = r
                    .solutions
                    .iter()
                    .map(|s| euclidean_distance(p, s))
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest <= radius + 1e-12, "point {nearest} outside radius {radius}");
            }
        }
    }

    #[test]
    fn flatten_preserves_order_and_values() {
        let set = generate_observations(&small_spec(), 29);
        let cfg = DeviationConfig::default_for(&set.domain);
        let (ts, _) = build_training_set(
            &set,
            Split::Search,
            Channel::Solution,
            &SamplingPlan::uniform(10),
            &cfg,
            29,
        )
        .unwrap();
        let flat = ts.flatten();
        assert_eq!(flat.targets.len(), ts.sample_count());
        let mut row = 0;
        for rec in &ts.records {
            for (p, &t) in rec.points.iter().zip(&rec.targets) {
                assert_eq!(flat.thetas.row(row), rec.theta.as_slice());
                assert_eq!(flat.points.row(row), p.as_slice());
                assert_eq!(flat.targets[row], t);
                row += 1;
            }
        }
    }

    #[test]
    fn csv_export_has_one_row_per_sample() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.csv");
        let set = generate_observations(&small_spec(), 31);
        let cfg = DeviationConfig::default_for(&set.domain);
        let (ts, _) = build_training_set(
            &set,
            Split::Search,
            Channel::Stability,
            &SamplingPlan::uniform(5),
            &cfg,
            31,
        )
        .unwrap();
        export_training_csv(&p, &ts).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "theta_0,theta_1,u_0,u_1,target,channel");
        assert_eq!(text.lines().count(), 1 + ts.sample_count());
        assert!(text.lines().nth(1).unwrap().ends_with(",stability"));
    }

    #[test]
    fn incomplete_width_estimates_track_the_premask_width() {
        // For a masked record whose 8 nearest train neighbors are untouched
        // two-solution records, the neighbor-based width approximates the
        // width the full solution set would have given: within 10% for at
        // least 90% of such records, pooled over several seeds. Records
        // bordering the fold curve or other masked records are excluded
        // because their neighborhoods are systematically wider.
        let mut good = 0usize;
        let mut total = 0usize;
        for seed in [41u64, 43, 101, 202, 303] {
            let spec = DatasetSpec {
                train_count: 1200,
                search_count: 100,
                test_count: 100,
                ..DatasetSpec::complete()
            };
            let set = generate_observations(&spec, seed);
            let (masked, removed) = mask_incomplete(&set, 120, seed).unwrap();
            let cfg = DeviationConfig::default_for(&set.domain);
            let train_idx = masked.split_indices(Split::Train);
            for rem in &removed {
                let theta = &masked.records[rem.record_index].theta;
                let mut others: Vec<usize> =
                    train_idx.iter().copied().filter(|&i| i != rem.record_index).collect();
                others.sort_by(|&a, &b| {
                    let da = euclidean_distance(theta, &masked.records[a].theta);
                    let db = euclidean_distance(theta, &masked.records[b].theta);
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                });
                let interior = others[..8].iter().all(|&i| {
                    masked.records[i].complete && masked.records[i].solutions.len() == 2
                });
                if !interior {
                    continue;
                }
                total += 1;
                let true_width =
                    deviation(&set.records[rem.record_index].solutions, &cfg).unwrap();
                let est = incomplete_deviation_for(&masked, rem.record_index, &cfg).unwrap();
                assert!(!est.fallback);
                if (est.value - true_width).abs() <= 0.1 * true_width {
                    good += 1;
                }
            }
        }
        assert!(total >= 30, "conditioned sample too small: {total}");
        assert!(good as f64 >= 0.9 * total as f64, "only {good} of {total}");
    }

    #[test]
    fn incomplete_fallback_fires_without_informative_neighbors() {
        // A train split of bare region-0 records plus one masked-looking
        // record leaves the width estimate nothing to average.
        let sys = gray_scott();
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(ObservationRecord {
                theta: vec![0.01 + 0.001 * i as f64, 0.05],
                solutions: vec![],
                stability: vec![],
                complete: true,
                split: Split::Train,
            });
        }
        records.push(ObservationRecord {
            theta: vec![0.012, 0.051],
            solutions: vec![vec![0.5, 0.3]],
            stability: vec![1],
            complete: false,
            split: Split::Train,
        });
        let set =
            ObservationSet { omega: sys.parameter_box, domain: sys.domain, records };
        let cfg = DeviationConfig::default_for(&set.domain);
        let (_, fallback) = build_training_set(
            &set,
            Split::Train,
            Channel::Solution,
            &SamplingPlan::uniform(5),
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(fallback, vec![5]);
    }

    #[test]
    fn masked_records_leave_a_gap_at_the_removed_solution() {
        // Concentrated sampling places a masked record's own samples around
        // its remaining solution only. The removed solution sits 4 widths
        // away, so its neighborhood stays empty up to the thin overlap sliver
        // that appears when the neighbor-estimated width overshoots the true
        // one; measured at 2.4% to 3.6% of the masked records' samples over
        // several seeds, bounded here at 5%.
        let spec = DatasetSpec {
            train_count: 1200,
            search_count: 100,
            test_count: 100,
            ..DatasetSpec::complete()
        };
        let set = generate_observations(&spec, 43);
        let (masked, removed) = mask_incomplete(&set, 120, 43).unwrap();
        let cfg = DeviationConfig::default_for(&set.domain);
        let (ts, _) = build_training_set(
            &masked,
            Split::Train,
            Channel::Solution,
            &SamplingPlan::concentrated(100),
            &cfg,
            43,
        )
        .unwrap();
        let idx = masked.split_indices(Split::Train);
        let mut total = 0usize;
        let mut inside = 0usize;
        for rem in &removed {
            let pos = idx.iter().position(|&i| i == rem.record_index).unwrap();
            let rec = &ts.records[pos];
            let radius = 2.0 * rec.deviation.unwrap();
            total += rec.points.len();
            inside += rec
                .points
                .iter()
                .filter(|p| euclidean_distance(p, &rem.solution) < radius)
                .count();
        }
        assert!(total >= 120 * 101);
        let frac = inside as f64 / total as f64;
        assert!(frac <= 0.05, "gap violated for {inside} of {total} samples ({frac:.4})");
    }
}

