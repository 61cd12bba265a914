//! Parameterized steady-state systems and the Gray-Scott oracle.
//!
//! The library is generic over a `SystemDefinition` (residual plus optional
//! analytic Jacobian on boxed solution/parameter domains), but every shipped
//! experiment uses the Gray-Scott reaction kinetics, whose steady states,
//! region split and stability classification all have closed forms. Those
//! closed forms are the ground truth that data generation and evaluation
//! lean on.

use serde::{Deserialize, Serialize};

use crate::numerics::{DenseMatrix, RandomSource};
use crate::{Error, Result};

/// A point in parameter space Omega.
pub type ParameterPoint = Vec<f64>;
/// A point in solution space D.
pub type SolutionPoint = Vec<f64>;

/// Axis-aligned box, used for both the solution domain and the parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Dimension("box bounds must share a nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Config("box lower bounds must be strictly below upper bounds".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Euclidean diameter (corner to corner).
    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    /// Uniform draw from the interior.
    pub fn sample(&self, rng: &mut RandomSource) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&a, &b)| rng.uniform(a, b)).collect()
    }

    /// Serialized as `[[lo, hi], ...]` per axis (observation-file header form).
    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.lo.iter().zip(&self.hi).map(|(&a, &b)| [a, b]).collect()
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p[0]).collect(), pairs.iter().map(|p| p[1]).collect())
    }
}

impl Serialize for AxisBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_pairs().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AxisBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        AxisBox::from_pairs(&pairs).map_err(serde::de::Error::custom)
    }
}

type ResidualFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;
type JacobianFn = dyn Fn(&[f64], &[f64]) -> DenseMatrix + Send + Sync;

/// A parameterized system G(U, Theta) with its domain boxes.
pub struct SystemDefinition {
    pub name: &'static str,
    pub solution_dim: usize,
    pub parameter_dim: usize,
    /// Solution domain D.
    pub domain: AxisBox,
    /// Parameter box Omega.
    pub parameter_box: AxisBox,
    residual: Box<ResidualFn>,
    jacobian: Option<Box<JacobianFn>>,
}

impl SystemDefinition {
    pub fn new(
        name: &'static str,
        domain: AxisBox,
        parameter_box: AxisBox,
        residual: Box<ResidualFn>,
        jacobian: Option<Box<JacobianFn>>,
    ) -> Self {
        Self {
            name,
            solution_dim: domain.dim(),
            parameter_dim: parameter_box.dim(),
            domain,
            parameter_box,
            residual,
            jacobian,
        }
    }

    fn check_dims(&self, u: &[f64], theta: &[f64]) -> Result<()> {
        if u.len() != self.solution_dim || theta.len() != self.parameter_dim {
            return Err(Error::Dimension(format!(
                "{} expects U of dim {} and Theta of dim {}, got {} and {}",
                self.name,
                self.solution_dim,
                self.parameter_dim,
                u.len(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// G(U, Theta).
    pub fn residual(&self, u: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(u, theta)?;
        Ok((self.residual)(u, theta))
    }

    /// Jacobian dG/dU, analytic when registered, otherwise central finite
    /// differences with step 1e-6 * (1 + |U|_inf).
    pub fn jacobian(&self, u: &[f64], theta: &[f64]) -> Result<DenseMatrix> {
        self.check_dims(u, theta)?;
        if let Some(j) = &self.jacobian {
            return Ok(j(u, theta));
        }
        let n = self.solution_dim;
        let h = 1e-6 * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut out = DenseMatrix::zeros(n, n);
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        for col in 0..n {
            up[col] = u[col] + h;
            um[col] = u[col] - h;
            let gp = (self.residual)(&up, theta);
            let gm = (self.residual)(&um, theta);
            for row in 0..n {
                out.set(row, col, (gp[row] - gm[row]) / (2.0 * h));
            }
            up[col] = u[col];
            um[col] = u[col];
        }
        Ok(out)
    }
}

/// Linear stability classification of a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityClass {
    Stable,
    Unstable,
    /// Largest eigenvalue real part within the tolerance band of zero.
    Marginal,
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StabilityClass::Stable => write!(f, "stable"),
            StabilityClass::Unstable => write!(f, "unstable"),
            StabilityClass::Marginal => write!(f, "marginal"),
        }
    }
}

/// Default tolerance on eigenvalue real parts in [`linear_stability`].
pub const EIGENVALUE_TOL: f64 = 1e-9;

/// Classifies U by the real parts of the Jacobian eigenvalues at (U, Theta):
/// stable if all are below -tol, unstable if any exceeds +tol, marginal
/// otherwise.
pub fn linear_stability(
    sys: &SystemDefinition,
    u: &[f64],
    theta: &[f64],
    tol: f64,
) -> Result<StabilityClass> {
    let j = sys.jacobian(u, theta)?;
    let n = j.rows();
    let m = nalgebra::DMatrix::from_row_slice(n, n, j.as_slice());
    let eigs = m.complex_eigenvalues();
    let max_re = eigs.iter().fold(f64::NEG_INFINITY, |acc, e| acc.max(e.re));
    Ok(if max_re < -tol {
        StabilityClass::Stable
    } else if max_re > tol {
        StabilityClass::Unstable
    } else {
        StabilityClass::Marginal
    })
}

/// Parameter-space region of the Gray-Scott system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    /// No nontrivial steady states (f below the fold).
    NoSolution,
    /// Two nontrivial steady states.
    TwoSolutions,
    /// Within the numerical band around the fold curve f = 4(f+k)^2; excluded
    /// from data generation and evaluation.
    Boundary,
}

/// Half-width of the numerical band around the fold curve inside which
/// parameters are treated as on-boundary.
pub const BOUNDARY_BAND: f64 = 1e-10;

/// Gray-Scott kinetics: G = (-u v^2 + f(1-u), u v^2 - (f+k) v) on
/// D = (0,1)^2 with (f,k) in Omega = (0,0.3) x (0,0.08). The trivial steady
/// state (1,0) exists for every parameter and is excluded throughout.
pub fn gray_scott() -> SystemDefinition {
    let domain = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).expect("static box");
    let omega = AxisBox::new(vec![0.0, 0.0], vec![0.3, 0.08]).expect("static box");
    SystemDefinition::new(
        "gray-scott",
        domain,
        omega,
        Box::new(|u, th| {
            let (uu, v) = (u[0], u[1]);
            let (f, k) = (th[0], th[1]);
            vec![-uu * v * v + f * (1.0 - uu), uu * v * v - (f + k) * v]
        }),
        Some(Box::new(|u, th| {
            let (uu, v) = (u[0], u[1]);
            let (f, k) = (th[0], th[1]);
            DenseMatrix::from_vec(
                2,
                2,
                vec![-v * v - f, -2.0 * uu * v, v * v, 2.0 * uu * v - (f + k)],
            )
            .expect("static shape")
        })),
    )
}

/// Signed distance-like margin to the fold: f - 4(f+k)^2. Positive inside the
/// two-solution region.
pub fn gray_scott_margin(theta: &[f64]) -> f64 {
    let (f, k) = (theta[0], theta[1]);
    f - 4.0 * (f + k) * (f + k)
}

/// Region split by the sign of the fold margin, with a `Boundary` band of
/// half-width `band` (use [`BOUNDARY_BAND`] by default).
pub fn gray_scott_region(theta: &[f64], band: f64) -> RegionLabel {
    let m = gray_scott_margin(theta);
    if m.abs() < band {
        RegionLabel::Boundary
    } else if m > 0.0 {
        RegionLabel::TwoSolutions
    } else {
        RegionLabel::NoSolution
    }
}

/// Closed-form nontrivial steady states; empty when the fold margin is
/// non-positive, otherwise the two branch solutions ordered by u-coordinate.
pub fn gray_scott_solutions(theta: &[f64]) -> Vec<SolutionPoint> {
    let (f, k) = (theta[0], theta[1]);
    let disc = f * f - 4.0 * f * (f + k) * (f + k);
    if disc <= 0.0 || f <= 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    vec![
        vec![(f - s) / (2.0 * f), (f + s) / (2.0 * (f + k))],
        vec![(f + s) / (2.0 * f), (f - s) / (2.0 * (f + k))],
    ]
}

/// Sign expression splitting the two-solution region by stability: positive
/// means the low-u branch is stable and the high-u branch unstable, negative
/// means both are unstable.
pub fn gray_scott_stability_margin(theta: &[f64]) -> f64 {
    let (f, k) = (theta[0], theta[1]);
    let disc = f * f - 4.0 * f * (f + k) * (f + k);
    if disc <= 0.0 {
        return f64::NAN;
    }
    f * disc.sqrt() + f * f - 2.0 * (f + k) * (f + k) * (f + k)
}

/// Per-solution stability flags (0 = stable, 1 = unstable) matching the order
/// of [`gray_scott_solutions`]. Empty outside the two-solution region.
pub fn gray_scott_stability(theta: &[f64]) -> Vec<u8> {
    let solutions = gray_scott_solutions(theta);
    if solutions.is_empty() {
        return Vec::new();
    }
    if gray_scott_stability_margin(theta) > 0.0 {
        vec![0, 1]
    } else {
        vec![1, 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THETA: [f64; 2] = [0.1, 0.05];

    #[test]
    fn residual_worked_example() {
        let sys = gray_scott();
        let g = sys.residual(&[0.5, 0.5], &THETA).unwrap();
        assert!((g[0] - (-0.075)).abs() < 1e-15);
        assert!((g[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn trivial_state_is_always_a_steady_state() {
        let sys = gray_scott();
        for theta in [[0.1, 0.05], [0.01, 0.07], [0.25, 0.001]] {
            let g = sys.residual(&[1.0, 0.0], &theta).unwrap();
            assert_eq!(g, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn jacobian_at_trivial_state() {
        // At (u,v)=(1,0) the off-diagonal terms vanish: [[-f, 0], [0, -(f+k)]].
        let sys = gray_scott();
        let j = sys.jacobian(&[1.0, 0.0], &THETA).unwrap();
        assert_eq!(j.get(0, 0), -0.1);
        assert_eq!(j.get(0, 1), 0.0);
        assert_eq!(j.get(1, 0), 0.0);
        assert_eq!(j.get(1, 1), -(0.1 + 0.05));
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        let analytic = gray_scott();
        let fd = SystemDefinition::new(
            "gray-scott-fd",
            analytic.domain.clone(),
            analytic.parameter_box.clone(),
            Box::new(|u, th| {
                let (uu, v) = (u[0], u[1]);
                let (f, k) = (th[0], th[1]);
                vec![-uu * v * v + f * (1.0 - uu), uu * v * v - (f + k) * v]
            }),
            None,
        );
        let mut rng = RandomSource::from_seed(5);
        for _ in 0..50 {
            let u = analytic.domain.sample(&mut rng);
            let a = analytic.jacobian(&u, &THETA).unwrap();
            let b = fd.jacobian(&u, &THETA).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let scale = 1.0 + a.get(i, j).abs();
                    assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-5 * scale);
                }
            }
        }
    }

    #[test]
    fn closed_form_solutions_at_reference_parameter() {
        let sols = gray_scott_solutions(&THETA);
        assert_eq!(sols.len(), 2);
        assert!((sols[0][0] - 0.34188611699158103).abs() < 1e-15);
        assert!((sols[0][1] - 0.43874258867227931).abs() < 1e-15);
        assert!((sols[1][0] - 0.65811388300841897).abs() < 1e-15);
        assert!((sols[1][1] - 0.22792407799438736).abs() < 1e-15);
    }

    #[test]
    fn region_examples() {
        assert_eq!(gray_scott_region(&[0.01, 0.05], BOUNDARY_BAND), RegionLabel::NoSolution);
        assert_eq!(gray_scott_region(&[0.04, 0.05], BOUNDARY_BAND), RegionLabel::TwoSolutions);
        assert_eq!(gray_scott_region(&[0.29, 0.079], BOUNDARY_BAND), RegionLabel::NoSolution);
        assert!((gray_scott_margin(&[0.29, 0.079]) - (-0.254644)).abs() < 1e-12);
        // (0.09, 0.06) sits on the fold curve exactly in real arithmetic.
        assert_eq!(gray_scott_region(&[0.09, 0.06], BOUNDARY_BAND), RegionLabel::Boundary);
    }

    #[test]
    fn no_solutions_outside_fold() {
        assert!(gray_scott_solutions(&[0.29, 0.079]).is_empty());
        assert!(gray_scott_solutions(&[0.01, 0.05]).is_empty());
    }

    #[test]
    fn stability_margin_and_flags_at_reference_parameter() {
        let e = gray_scott_stability_margin(&THETA);
        assert!((e - 0.0064122776601683793).abs() < 1e-15);
        assert_eq!(gray_scott_stability(&THETA), vec![0, 1]);
    }

    #[test]
    fn branch_sum_identity_and_residual_exactness() {
        // The two branch u-coordinates always sum to 1, and both branches are
        // genuine steady states of the kinetics.
        let sys = gray_scott();
        let mut rng = RandomSource::from_seed(11);
        let mut seen = 0;
        while seen < 500 {
            let theta = sys.parameter_box.sample(&mut rng);
            if gray_scott_region(&theta, BOUNDARY_BAND) != RegionLabel::TwoSolutions {
                continue;
            }
            seen += 1;
            let sols = gray_scott_solutions(&theta);
            assert!((sols[0][0] + sols[1][0] - 1.0).abs() < 1e-12);
            for s in &sols {
                let g = sys.residual(s, &theta).unwrap();
                assert!(g[0].abs() < 1e-10 && g[1].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closed_form_stability_agrees_with_eigenvalues() {
        let sys = gray_scott();
        let mut rng = RandomSource::from_seed(13);
        let mut seen = 0;
        while seen < 500 {
            let theta = sys.parameter_box.sample(&mut rng);
            if gray_scott_region(&theta, BOUNDARY_BAND) != RegionLabel::TwoSolutions {
                continue;
            }
            if gray_scott_stability_margin(&theta).abs() <= 1e-8 {
                continue;
            }
            seen += 1;
            let sols = gray_scott_solutions(&theta);
            let flags = gray_scott_stability(&theta);
            for (s, &flag) in sols.iter().zip(&flags) {
                let class = linear_stability(&sys, s, &theta, EIGENVALUE_TOL).unwrap();
                let expected =
                    if flag == 0 { StabilityClass::Stable } else { StabilityClass::Unstable };
                assert_eq!(class, expected, "theta {theta:?}");
            }
        }
    }

    #[test]
    fn linear_stability_classifies_trivial_state_stable() {
        let sys = gray_scott();
        let class = linear_stability(&sys, &[1.0, 0.0], &THETA, EIGENVALUE_TOL).unwrap();
        assert_eq!(class, StabilityClass::Stable);
    }

    #[test]
    fn box_roundtrip_and_diameter() {
        let b = AxisBox::new(vec![0.0, 0.0], vec![0.3, 0.08]).unwrap();
        assert_eq!(AxisBox::from_pairs(&b.to_pairs()).unwrap(), b);
        assert!((b.diameter() - (0.3f64 * 0.3 + 0.08 * 0.08).sqrt()).abs() < 1e-15);
        assert!(b.contains(&[0.15, 0.04]));
        assert!(!b.contains(&[0.31, 0.04]));
        assert!(AxisBox::new(vec![1.0], vec![1.0]).is_err());
    }
}
