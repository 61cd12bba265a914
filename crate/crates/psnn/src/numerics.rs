//! Minimal dense linear algebra, seeded randomness and optimal assignment.
//!
//! Everything here is 64-bit floating point with a fixed evaluation order, so
//! results are bit-identical across platforms and across worker counts.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows in matrix constructor".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Dot product with a fixed four-lane accumulation order: fast enough for the
/// training loop while staying deterministic (no reassociation left to the
/// compiler).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `M x + b`. Dimensions are enforced; the training loop uses the unchecked
/// in-place variant below.
pub fn affine(m: &DenseMatrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.cols() || b.len() != m.rows() {
        return Err(Error::Dimension(format!(
            "affine: matrix is {}x{}, x has {}, b has {}",
            m.rows(),
            m.cols(),
            x.len(),
            b.len()
        )));
    }
    let mut out = vec![0.0; m.rows()];
    affine_into(m, x, b, &mut out);
    Ok(out)
}

pub(crate) fn affine_into(m: &DenseMatrix, x: &[f64], b: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(r), x) + b[r];
    }
}

/// Elementwise max(x, 0).
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}


const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded random stream used by every stochastic stage of the pipeline.
///
/// Backed by the ChaCha8 counter-mode generator, whose output for a given key
/// is fixed by the cipher definition, so identical seeds give identical draw
/// sequences on every platform. Parallel code must not share one source;
/// derive per-task sources with [`RandomSource::child`].
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn from_seed(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { seed, rng: ChaCha8Rng::from_seed(key) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream for a tagged subtask (seed-splitting).
    pub fn child(&self, tag: u64) -> Self {
        let mut state = self.seed ^ tag.wrapping_mul(GOLDEN);
        Self::from_seed(splitmix64(&mut state))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw from [0, 1) with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Standard normal draw via Box-Muller (cosine branch only, so one draw
    /// consumes exactly two uniforms).
    pub fn normal(&mut self) -> f64 {
        let mut u1 = self.unit();
        if u1 == 0.0 {
            u1 = f64::MIN_POSITIVE;
        }
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection-free modulo bias is negligible for the n used here (< 2^32),
        // but take the cheap widening-multiply route anyway.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Minimal assignment cost between equal-size point sets, given the pairwise
/// cost matrix (rows index A, columns index B).
///
/// Exact: brute-force permutation search up to size 8, Hungarian method above.
/// Both paths recompute the final cost as an ascending-row sum so they agree
/// bitwise whenever they pick the same bijection.
pub fn min_assignment_cost(cost: &DenseMatrix) -> Result<f64> {
    Ok(assignment(cost)?.1)
}

/// Optimal bijection (row -> column) and its total cost.
pub fn assignment(cost: &DenseMatrix) -> Result<(Vec<usize>, f64)> {
    if cost.rows() != cost.cols() {
        return Err(Error::Contract(format!(
            "assignment requires equal-size sets, got {}x{} costs",
            cost.rows(),
            cost.cols()
        )));
    }
    if cost.rows() == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let perm =
        if cost.rows() <= 8 { brute_force_assignment(cost) } else { hungarian_assignment(cost) };
    let total = perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok((perm, total))
}

fn brute_force_assignment(cost: &DenseMatrix) -> Vec<usize> {
    let n = cost.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let eval = |p: &[usize], best: &mut Vec<usize>, best_cost: &mut f64| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        if total < *best_cost {
            *best_cost = total;
            best.copy_from_slice(p);
        }
    };
    eval(&perm, &mut best, &mut best_cost);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            eval(&perm, &mut best, &mut best_cost);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// O(n^3) Hungarian method with potentials and shortest augmenting paths.
/// Indices are offset by one internally; column 0 is the virtual root.
fn hungarian_assignment(cost: &DenseMatrix) -> Vec<usize> {
    let n = cost.rows();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // row matched to each column
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    perm
}

/// Pairwise Euclidean cost matrix between two equal-dimension point lists.
pub fn euclidean_cost_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(a.len(), b.len());
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            m.set(i, j, euclidean_distance(p, q));
        }
    }
    m
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Eigendecomposition of a real symmetric matrix: `a = V diag(λ) Vᵀ` with
/// eigenvalues sorted descending and eigenvectors in the matching columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigenDecomp {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub vectors: DenseMatrix,
}

/// Householder tridiagonalization followed by implicit-shift QL iteration,
/// the classical dense symmetric eigensolver. Robust across the extreme
/// dynamic ranges kernel spectra produce, where off-the-shelf iterations can
/// fail to converge.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<SymmetricEigenDecomp> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Contract(format!(
            "symmetric eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if n == 0 {
        return Ok(SymmetricEigenDecomp {
            eigenvalues: Vec::new(),
            vectors: DenseMatrix::zeros(0, 0),
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (a.get(i, j) - a.get(j, i)).abs();
            let scale = a.get(i, j).abs().max(a.get(j, i).abs()).max(1.0);
            if gap > 1e-12 * scale {
                return Err(Error::Contract("matrix is not symmetric".into()));
            }
        }
    }
    let mut z = a.clone();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tridiagonalize(&mut z, &mut d, &mut e);
    ql_implicit(&mut d, &mut e, &mut z)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| d[q].partial_cmp(&d[p]).unwrap_or(std::cmp::Ordering::Equal));
    let mut vectors = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, z.get(row, src));
        }
    }
    Ok(SymmetricEigenDecomp {
        eigenvalues: order.iter().map(|&i| d[i]).collect(),
        vectors,
    })
}

/// Householder reduction to tridiagonal form with accumulated transforms.
/// On return `d` holds the diagonal, `e` the subdiagonal (in `e[1..]`), and
/// `z` the orthogonal accumulation matrix.
fn tridiagonalize(z: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| z.get(i, k).abs()).sum();
            if scale == 0.0 {
                e[i] = z.get(i, l);
            } else {
                for k in 0..=l {
                    let v = z.get(i, k) / scale;
                    z.set(i, k, v);
                    h += v * v;
                }
                let f = z.get(i, l);
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z.set(i, l, f - g);
                let mut f_acc = 0.0;
                for j in 0..=l {
                    z.set(j, i, z.get(i, j) / h);
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += z.get(j, k) * z.get(i, k);
                    }
                    for k in (j + 1)..=l {
                        g_acc += z.get(k, j) * z.get(i, k);
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * z.get(i, j);
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = z.get(i, j);
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let v = z.get(j, k) - (f * e[k] + g * z.get(i, k));
                        z.set(j, k, v);
                    }
                }
            }
        } else {
            e[i] = z.get(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z.get(i, k) * z.get(k, j);
                }
                for k in 0..i {
                    let v = z.get(k, j) - g * z.get(k, i);
                    z.set(k, j, v);
                }
            }
        }
        d[i] = z.get(i, i);
        z.set(i, i, 1.0);
        for j in 0..i {
            z.set(j, i, 0.0);
            z.set(i, j, 0.0);
        }
    }
}

/// QL iteration with implicit Wilkinson shifts on a tridiagonal matrix,
/// rotations accumulated into `z`.
///
/// This follows the classical EISPACK scheme: a running-maximum deflation
/// threshold so negligible couplings deflate at the scale of the largest
/// block seen, and an accumulated total shift applied once per eigenvalue.
/// Both are needed for convergence on spectra spanning many orders of
/// magnitude.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut DenseMatrix) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        let mut iter = 0usize;
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        loop {
            // The trailing zero in e guarantees this search terminates.
            let mut m = l;
            while m < n {
                if tst1 + e[m].abs() == tst1 {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            if iter == 50 {
                return Err(Error::Numerical(format!(
                    "QL iteration failed to converge at eigenvalue {l}"
                )));
            }
            iter += 1;
            // Form the implicit shift.
            let g = d[l];
            let p0 = (d[l + 1] - g) / (2.0 * e[l]);
            let r0 = p0.hypot(1.0);
            let denom = p0 + r0.copysign(p0);
            d[l] = e[l] / denom;
            d[l + 1] = e[l] * denom;
            let dl1 = d[l + 1];
            let h = g - d[l];
            for item in d.iter_mut().take(n).skip(l + 2) {
                *item -= h;
            }
            f += h;
            // One QL sweep of plane rotations from m-1 down to l.
            let mut p = d[m];
            let mut c = 1.0f64;
            let mut c2 = c;
            let mut c3;
            let el1 = e[l + 1];
            let mut s = 0.0f64;
            #[allow(unused_assignments)]
            let mut s2 = 0.0f64;
            for i in (l..m).rev() {
                c3 = c2;
                c2 = c;
                s2 = s;
                let g = c * e[i];
                let h = c * p;
                let r = p.hypot(e[i]);
                e[i + 1] = s * r;
                s = e[i] / r;
                c = p / r;
                p = c * d[i] - s * g;
                d[i + 1] = h + s * (c * g + s * d[i]);
                for k in 0..n {
                    let hk = z.get(k, i + 1);
                    z.set(k, i + 1, s * z.get(k, i) + c * hk);
                    z.set(k, i, c * z.get(k, i) - s * hk);
                }
                if i == l {
                    p = -s * s2 * c3 * el1 * e[l] / dl1;
                }
            }
            e[l] = s * p;
            d[l] = c * p;
            if tst1 + e[l].abs() == tst1 {
                break;
            }
        }
        d[l] += f;
    }
    Ok(())
}
