//! Spectral check of the target field's kernel decomposition.
//!
//! The parameter-integrated self-correlation of the target field defines a
//! symmetric positive semi-definite kernel on the solution domain, and the
//! squared error of the best rank-N approximation of the field equals the
//! kernel's eigenvalue tail sum beyond N. Discretized with midpoint
//! quadrature this identity is exact up to eigensolver noise, which makes it
//! a sharp end-to-end test of the target construction. The eigenvalue decay
//! also indicates how wide the networks' inner product needs to be.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::numerics::{symmetric_eigen, DenseMatrix};
use crate::system::{gray_scott_solutions, gray_scott_stability, AxisBox};
use crate::target::{DeviationConfig, LabeledSolutionSet};
use crate::Error;

/// Midpoint-rule quadrature nodes for a uniform cell partition of the box,
/// plus the shared cell weight (volume / cell count).
pub fn midpoint_grid(bounds: &AxisBox, counts: &[usize]) -> Result<(Vec<Vec<f64>>, f64), Error> {
    let points = super::cell_midpoints(bounds, counts)?;
    let mut volume = 1.0;
    for d in 0..bounds.dim() {
        volume *= bounds.hi()[d] - bounds.lo()[d];
    }
    Ok((points.clone(), volume / points.len() as f64))
}

/// One rank-N truncation comparison.
#[derive(Debug, Clone)]
pub struct TruncationRow {
    pub n: usize,
    /// Squared discrete L² error of the explicit rank-N reconstruction.
    pub err_sq: f64,
    /// Tail eigenvalue sum beyond N.
    pub tail: f64,
}

impl TruncationRow {
    /// Relative mismatch between the two independently computed sides.
    pub fn relative_gap(&self) -> f64 {
        let denom = self.err_sq.abs().max(self.tail.abs());
        if denom == 0.0 {
            0.0
        } else {
            (self.err_sq - self.tail).abs() / denom
        }
    }
}

/// Output of [`kernel_check`].
#[derive(Debug, Clone)]
pub struct KernelCheckReport {
    pub d_counts: Vec<usize>,
    pub omega_counts: Vec<usize>,
    /// Operator eigenvalues, sorted descending.
    pub eigenvalues: Vec<f64>,
    pub truncations: Vec<TruncationRow>,
    /// Least-squares slope of log eigenvalue against log index over the
    /// middle of the spectrum; absent when too few eigenvalues stand above
    /// the rank cutoff.
    pub decay_exponent: Option<f64>,
    /// Count of eigenvalues above `1e-12` times the largest.
    pub rank: usize,
}

impl KernelCheckReport {
    pub fn write_eigenvalue_csv(&self, path: &Path) -> Result<(), Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "k,lambda")?;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, l)?;
        }
        Ok(())
    }

    pub fn write_truncation_csv(&self, path: &Path) -> Result<(), Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "N,trunc_err_sq,tail_sum")?;
        for t in &self.truncations {
            writeln!(out, "{},{},{}", t.n, t.err_sq, t.tail)?;
        }
        Ok(())
    }
}

fn decay_fit(eigenvalues: &[f64], rank: usize) -> Option<f64> {
    // Exclude the flat head and the noise tail.
    let lo = 3;
    let hi = rank / 2;
    if hi < lo + 1 {
        return None;
    }
    let mut n = 0.0;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for k in lo..=hi {
        let lambda = eigenvalues[k - 1];
        if lambda <= 0.0 {
            continue;
        }
        let x = (k as f64).ln();
        let y = lambda.ln();
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    if n < 2.0 {
        return None;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Verifies the truncation identity of the field's kernel decomposition.
///
/// The field is sampled on midpoint grids over the domain and the parameter
/// box into a matrix `B` scaled by the square-rooted cell weights, so that
/// `B·Bᵀ` is the discrete kernel operator. Its nonzero eigenvalues are
/// computed from the smaller Gram matrix `BᵀB` (the spectra agree), and for
/// each requested N the squared Frobenius error of the explicitly
/// reconstructed rank-N approximation `B·V_N·V_Nᵀ` is compared against the
/// eigenvalue tail sum, two routes that agree only if sampling, quadrature
/// scaling and eigendecomposition are all consistent.
pub fn kernel_check(
    field: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    domain: &AxisBox,
    d_counts: &[usize],
    omega: &AxisBox,
    omega_counts: &[usize],
    n_list: &[usize],
) -> Result<KernelCheckReport, Error> {
    let (d_points, w_d) = midpoint_grid(domain, d_counts)?;
    let (o_points, w_o) = midpoint_grid(omega, omega_counts)?;
    let n_d = d_points.len();
    let n_o = o_points.len();
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    if max_n > n_d.min(n_o) {
        return Err(Error::Config(format!(
            "truncation rank {max_n} exceeds the grid sizes {n_d}x{n_o}"
        )));
    }
    let scale = (w_d * w_o).sqrt();
    let b = DMatrix::from_fn(n_d, n_o, |i, j| scale * field(&d_points[i], &o_points[j]));
    let gram_na = b.tr_mul(&b);
    // The Gram product comes back numerically symmetric but not bitwise so;
    // average the halves before decomposing.
    let mut gram = DenseMatrix::zeros(n_o, n_o);
    for i in 0..n_o {
        for j in 0..n_o {
            gram.set(i, j, 0.5 * (gram_na[(i, j)] + gram_na[(j, i)]));
        }
    }
    let eigen = symmetric_eigen(&gram)?;
    let eigenvalues = eigen.eigenvalues;
    if eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("eigendecomposition produced non-finite values".into()));
    }
    let top = eigenvalues[0].max(0.0);
    let rank = eigenvalues.iter().filter(|&&l| l > top * 1e-12).count();
    let mut truncations = Vec::with_capacity(n_list.len());
    for &n in n_list {
        // Tail summed smallest-first for accuracy.
        let tail: f64 = eigenvalues[n..].iter().rev().sum();
        let v_n = DMatrix::from_fn(n_o, n, |r, c| eigen.vectors.get(r, c));
        let approx = (&b * &v_n) * v_n.transpose();
        let err_sq = (&b - approx).iter().map(|x| x * x).sum();
        truncations.push(TruncationRow { n, err_sq, tail });
    }
    Ok(KernelCheckReport {
        d_counts: d_counts.to_vec(),
        omega_counts: omega_counts.to_vec(),
        decay_exponent: decay_fit(&eigenvalues, rank),
        eigenvalues,
        truncations,
        rank,
    })
}

/// The analytic Gray-Scott target field: solution-bump mixture per
/// parameter, zero where no solutions exist.
pub fn gray_scott_field(domain: &AxisBox) -> impl Fn(&[f64], &[f64]) -> f64 + Sync {
    let cfg = DeviationConfig::default_for(domain);
    move |u: &[f64], theta: &[f64]| {
        let solutions = gray_scott_solutions(theta);
        if solutions.is_empty() {
            return 0.0;
        }
        let flags = gray_scott_stability(theta);
        match LabeledSolutionSet::new(solutions, flags, &cfg) {
            Ok(labeled) => crate::target::phi(u, &labeled),
            Err(_) => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> AxisBox {
        AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    fn omega_box() -> AxisBox {
        AxisBox::new(vec![0.0, 0.0], vec![0.3, 0.08]).unwrap()
    }

    #[test]
    fn midpoint_weights_integrate_constants_exactly() {
        let omega = omega_box();
        let (points, w) = midpoint_grid(&omega, &[6, 5]).unwrap();
        assert_eq!(points.len(), 30);
        let integral: f64 = points.iter().map(|_| w).sum();
        assert!((integral - 0.3 * 0.08).abs() < 1e-15);
    }

    /// The truncation identity must hold to eigensolver precision at any
    /// resolution; a small grid keeps the unit test fast while the acceptance
    /// suite runs the full-size check.
    #[test]
    fn truncation_identity_on_small_grids() {
        let domain = unit_square();
        let omega = omega_box();
        let field = gray_scott_field(&domain);
        let report = kernel_check(
            &field,
            &domain,
            &[21, 21],
            &omega,
            &[13, 13],
            &[1, 2, 4, 8],
        )
        .unwrap();
        assert_eq!(report.eigenvalues.len(), 169);
        for w in report.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for t in &report.truncations {
            assert!(
                t.relative_gap() < 1e-8,
                "N={} err_sq={} tail={}",
                t.n,
                t.err_sq,
                t.tail
            );
        }
        let min = report.eigenvalues.last().unwrap();
        assert!(*min > -1e-10, "most negative eigenvalue {min}");
        assert!(report.rank > 8);
        let slope = report.decay_exponent.unwrap();
        assert!(slope < 0.0, "decay exponent {slope}");
    }

    /// A parameter-independent single bump separates, so the kernel has rank
    /// one and every eigenvalue beyond the first is numerical noise.
    #[test]
    fn separable_field_has_rank_one() {
        let domain = unit_square();
        let omega = omega_box();
        let field = |u: &[f64], _theta: &[f64]| {
            let dx = u[0] - 0.4;
            let dy = u[1] - 0.6;
            (-(dx * dx + dy * dy) / 0.05).exp()
        };
        let report =
            kernel_check(&field, &domain, &[15, 15], &omega, &[7, 7], &[1, 2]).unwrap();
        let ratio = report.eigenvalues[1].abs() / report.eigenvalues[0];
        assert!(ratio < 1e-10, "second eigenvalue ratio {ratio}");
        assert_eq!(report.rank, 1);
        // Rank-1 truncation of a rank-1 field leaves only roundoff.
        assert!(report.truncations[0].err_sq < report.eigenvalues[0] * 1e-10);
    }

    #[test]
    fn rejects_rank_beyond_grid() {
        let domain = unit_square();
        let omega = omega_box();
        let field = gray_scott_field(&domain);
        assert!(kernel_check(&field, &domain, &[3, 3], &omega, &[2, 2], &[16]).is_err());
    }

    #[test]
    fn report_csv_files_round_trip() {
        let domain = unit_square();
        let omega = omega_box();
        let field = gray_scott_field(&domain);
        let report =
            kernel_check(&field, &domain, &[9, 9], &omega, &[5, 5], &[1, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ev = dir.path().join("eigenvalues.csv");
        let tr = dir.path().join("truncation.csv");
        report.write_eigenvalue_csv(&ev).unwrap();
        report.write_truncation_csv(&tr).unwrap();
        let ev_text = std::fs::read_to_string(&ev).unwrap();
        assert!(ev_text.starts_with("k,lambda\n1,"));
        assert_eq!(ev_text.lines().count(), 26);
        let tr_text = std::fs::read_to_string(&tr).unwrap();
        assert!(tr_text.starts_with("N,trunc_err_sq,tail_sum\n1,"));
        assert_eq!(tr_text.lines().count(), 3);
    }
}
