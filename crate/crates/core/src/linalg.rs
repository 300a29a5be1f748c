//! Dense linear-algebra helpers that nalgebra does not ship: a complex QZ
//! iteration for generalised eigenvalues, SVD-based rank and null spaces,
//! and a small discrete Lyapunov solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const EPS: f64 = f64::EPSILON;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetric part of `m`. Empty matrices give `-inf`.
pub fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Singular values of a complex matrix, descending.
pub fn singular_values_c(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with threshold `tol * max(1, σ_max)`.
pub fn rank_c(m: &CMatrix, tol: f64) -> usize {
    let s = singular_values_c(m);
    let top = s.first().copied().unwrap_or(0.0).max(1.0);
    s.iter().filter(|&&v| v > tol * top).count()
}

pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    rank_c(&to_complex(m), tol)
}

/// Orthonormal basis (as columns) of the right null space of `m`, using the
/// threshold `tol * max(1, σ_max)` on singular values.
pub fn null_space_c(m: &CMatrix, tol: f64) -> CMatrix {
    let cols = m.ncols();
    if cols == 0 {
        return CMatrix::zeros(0, 0);
    }
    // Pad wide matrices with zero rows so the SVD returns a full V.
    let padded = if m.nrows() < cols {
        let mut p = CMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let top = svd
        .singular_values
        .iter()
        .copied()
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= tol * top)
        .collect();
    let mut basis = CMatrix::zeros(cols, idx.len());
    for (k, &i) in idx.iter().enumerate() {
        for r in 0..cols {
            basis[(r, k)] = v_t[(i, r)].conj();
        }
    }
    basis
}

/// Solves `Aᵀ X A − X = −Q` for symmetric `X` through the Kronecker form.
/// Requires every pair of eigenvalues of `A` to satisfy `λᵢλⱼ ≠ 1`.
pub fn dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch("dlyap expects square operands".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let at = a.transpose();
    // vec(Aᵀ X A) = (Aᵀ ⊗ Aᵀ) vec(X) for column-major vec.
    let kron = at.kronecker(&at);
    let lhs = kron - DMatrix::<f64>::identity(n * n, n * n);
    let rhs = DVector::from_iterator(n * n, (-q).iter().copied());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular Lyapunov operator".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x))
}

/// Condition number in the 2-norm (infinite for singular or empty-rank input).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let max = s.iter().copied().fold(0.0_f64, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A generalised eigenvalue in homogeneous form: `λ = alpha / beta`.
#[derive(Debug, Clone, Copy)]
pub struct GenEig {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl GenEig {
    /// Normalised so that `|alpha|² + |beta|² = 1`.
    pub fn normalized(self) -> Self {
        let n = (self.alpha.norm_sqr() + self.beta.norm_sqr()).sqrt();
        if n == 0.0 {
            self
        } else {
            GenEig {
                alpha: self.alpha / n,
                beta: self.beta / n,
            }
        }
    }
}

// Rotation G = [c s; -conj(s) c] with G [a; b] = [r; 0].
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if an == 0.0 {
        return (0.0, b.conj() / bn);
    }
    let nrm = an.hypot(bn);
    let c = an / nrm;
    let s = (a / an) * b.conj() / nrm;
    (c, s)
}

fn rot_rows(m: &mut CMatrix, p: usize, q: usize, c: f64, s: Complex64) {
    for j in 0..m.ncols() {
        let x = m[(p, j)];
        let y = m[(q, j)];
        m[(p, j)] = x * c + s * y;
        m[(q, j)] = -s.conj() * x + y * c;
    }
}

// Column rotation keeping column `keep` and zeroing the entry that was
// used to build (c, s) in column `zero`.
fn rot_cols(m: &mut CMatrix, keep: usize, zero: usize, c: f64, s: Complex64) {
    for i in 0..m.nrows() {
        let x = m[(i, keep)];
        let y = m[(i, zero)];
        m[(i, keep)] = x * c + s * y;
        m[(i, zero)] = -s.conj() * x + y * c;
    }
}

/// Generalised eigenvalues of the square pencil `M − λN` by the complex QZ
/// algorithm (Hessenberg–triangular reduction followed by single-shift
/// implicit QZ sweeps with deflation of infinite eigenvalues).
pub fn qz_eigenvalues(m: &CMatrix, n: &CMatrix) -> Result<Vec<GenEig>> {
    let k = m.nrows();
    if m.ncols() != k || n.nrows() != k || n.ncols() != k {
        return Err(Error::DimensionMismatch("QZ expects square pencils of equal size".into()));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut h = m.clone();
    let mut t = n.clone();

    // Triangularise N with Givens rotations (column by column).
    for j in 0..k {
        for i in (j + 1..k).rev() {
            if t[(i, j)].norm() == 0.0 {
                continue;
            }
            let (c, s) = givens(t[(i - 1, j)], t[(i, j)]);
            rot_rows(&mut t, i - 1, i, c, s);
            rot_rows(&mut h, i - 1, i, c, s);
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    // Hessenberg–triangular reduction.
    for j in 0..k.saturating_sub(2) {
        for i in (j + 2..k).rev() {
            if h[(i, j)].norm() != 0.0 {
                let (c, s) = givens(h[(i - 1, j)], h[(i, j)]);
                rot_rows(&mut h, i - 1, i, c, s);
                rot_rows(&mut t, i - 1, i, c, s);
                h[(i, j)] = Complex64::new(0.0, 0.0);
            }
            if t[(i, i - 1)].norm() != 0.0 {
                let (c, s) = givens(t[(i, i)], t[(i, i - 1)]);
                rot_cols(&mut t, i, i - 1, c, s);
                rot_cols(&mut h, i, i - 1, c, s);
                t[(i, i - 1)] = Complex64::new(0.0, 0.0);
            }
        }
    }

    let h_norm = h.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let t_norm = t.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let zero = Complex64::new(0.0, 0.0);

    let mut out = vec![
        GenEig {
            alpha: zero,
            beta: zero
        };
        k
    ];
    let mut hi = k - 1;
    let mut iter_since_deflation = 0usize;
    let max_iter = 60 * k.max(2);
    let mut total_iter = 0usize;

    loop {
        if hi == 0 {
            out[0] = GenEig {
                alpha: h[(0, 0)],
                beta: t[(0, 0)],
            };
            break;
        }
        // Negligible subdiagonal entries.
        for i in 1..=hi {
            let scale = h[(i - 1, i - 1)].norm() + h[(i, i)].norm();
            let thr = if scale > 0.0 { EPS * scale } else { EPS * h_norm };
            if h[(i, i - 1)].norm() <= thr {
                h[(i, i - 1)] = zero;
            }
        }
        if h[(hi, hi - 1)] == zero {
            out[hi] = GenEig {
                alpha: h[(hi, hi)],
                beta: t[(hi, hi)],
            };
            hi -= 1;
            iter_since_deflation = 0;
            continue;
        }
        let mut lo = hi - 1;
        while lo > 0 && h[(lo, lo - 1)] != zero {
            lo -= 1;
        }

        // Zero on the diagonal of T: chase it to the bottom and deflate an
        // infinite eigenvalue.
        let mut zero_diag = None;
        for j in lo..=hi {
            if t[(j, j)].norm() <= EPS * t_norm {
                t[(j, j)] = zero;
                zero_diag = Some(j);
                break;
            }
        }
        if let Some(j) = zero_diag {
            for tt in j..hi {
                let (c, s) = givens(t[(tt, tt + 1)], t[(tt + 1, tt + 1)]);
                rot_rows(&mut t, tt, tt + 1, c, s);
                rot_rows(&mut h, tt, tt + 1, c, s);
                t[(tt + 1, tt + 1)] = zero;
                if tt > lo {
                    let (c, s) = givens(h[(tt + 1, tt)], h[(tt + 1, tt - 1)]);
                    rot_cols(&mut h, tt, tt - 1, c, s);
                    rot_cols(&mut t, tt, tt - 1, c, s);
                    h[(tt + 1, tt - 1)] = zero;
                }
            }
            let (c, s) = givens(h[(hi, hi)], h[(hi, hi - 1)]);
            rot_cols(&mut h, hi, hi - 1, c, s);
            rot_cols(&mut t, hi, hi - 1, c, s);
            h[(hi, hi - 1)] = zero;
            continue;
        }

        total_iter += 1;
        iter_since_deflation += 1;
        if total_iter > max_iter {
            return Err(Error::NumericalFailure("QZ iteration did not converge".into()));
        }

        // Wilkinson-type shift from the trailing 2x2 pencil.
        let (m11, m12, m21, m22) = (h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)]);
        let (n11, n12, n22) = (t[(hi - 1, hi - 1)], t[(hi - 1, hi)], t[(hi, hi)]);
        let qa = n11 * n22;
        let qb = -(m11 * n22 + m22 * n11) + m21 * n12;
        let qc = m11 * m22 - m12 * m21;
        let target = m22 / n22;
        let mut shift = if qa.norm() > 0.0 {
            let disc = (qb * qb - qa * qc * 4.0).sqrt();
            let r1 = (-qb + disc) / (qa * 2.0);
            let r2 = (-qb - disc) / (qa * 2.0);
            if (r1 - target).norm() < (r2 - target).norm() {
                r1
            } else {
                r2
            }
        } else {
            target
        };
        if iter_since_deflation % 11 == 10 {
            // Exceptional shift.
            shift = target + Complex64::new(m21.norm() * 1.5, m21.norm() * 0.7);
        }
        if !shift.re.is_finite() || !shift.im.is_finite() {
            shift = target;
        }

        let x = h[(lo, lo)] - shift * t[(lo, lo)];
        let y = h[(lo + 1, lo)];
        let (c, s) = givens(x, y);
        rot_rows(&mut h, lo, lo + 1, c, s);
        rot_rows(&mut t, lo, lo + 1, c, s);
        for j in lo..hi {
            let (c, s) = givens(t[(j + 1, j + 1)], t[(j + 1, j)]);
            rot_cols(&mut t, j + 1, j, c, s);
            rot_cols(&mut h, j + 1, j, c, s);
            t[(j + 1, j)] = zero;
            if j + 2 <= hi {
                let (c, s) = givens(h[(j + 1, j)], h[(j + 2, j)]);
                rot_rows(&mut h, j + 1, j + 2, c, s);
                rot_rows(&mut t, j + 1, j + 2, c, s);
                h[(j + 2, j)] = zero;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn qz_matches_standard_eigenproblem() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.0, 1.0, -0.7]);
        let eig = qz_eigenvalues(&to_complex(&a), &CMatrix::identity(3, 3)).unwrap();
        let mut got: Vec<Complex64> = eig.iter().map(|e| e.alpha / e.beta).collect();
        let mut want = eigenvalues(&a);
        let key = |z: &Complex64| (z.re * 1e6).round() as i64 * 1_000_000 + (z.im * 1e6).round() as i64;
        got.sort_by_key(key);
        want.sort_by_key(key);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).norm() < 1e-10, "{g} vs {w}");
        }
    }

    #[test]
    fn qz_separates_infinite_eigenvalues() {
        // det([2 1; 1 0] - λ[1 0; 0 0]) = -1: no finite eigenvalue.
        let m = CMatrix::from_row_slice(2, 2, &[c(2.0), c(1.0), c(1.0), c(0.0)]);
        let n = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
        let eig = qz_eigenvalues(&m, &n).unwrap();
        assert!(eig.iter().all(|e| e.normalized().beta.norm() < 1e-12));
    }

    #[test]
    fn dlyap_solves_scalar_case() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = dlyap(&a, &q).unwrap();
        assert!((x[(0, 0)] - 1.0 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = to_complex(&DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]));
        let ns = null_space_c(&m, 1e-10);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).norm() < 1e-12);
    }
}
