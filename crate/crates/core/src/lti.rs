//! Discrete-time LTI systems in state-space form.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

/// Feedthrough matrices with a larger 2-norm condition number are treated as singular.
pub const MAX_FEEDTHROUGH_CONDITION: f64 = 1e12;
/// Stability requires a spectral radius below `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;
/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// `x⁺ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

fn check_finite(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEntry(name))
    }
}

impl StateSpace {
    /// Validates dimensions and finiteness.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let (p, m) = d.shape();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("A is {}x{}", n, a.ncols())));
        }
        if b.shape() != (n, m) {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                n,
                m
            )));
        }
        if c.shape() != (p, n) {
            return Err(Error::DimensionMismatch(format!(
                "C is {}x{}, expected {}x{}",
                c.nrows(),
                c.ncols(),
                p,
                n
            )));
        }
        check_finite(&a, "A")?;
        check_finite(&b, "B")?;
        check_finite(&c, "C")?;
        check_finite(&d, "D")?;
        Ok(Self { a, b, c, d })
    }

    /// Builds a system from row-major slices.
    pub fn from_rows(n: usize, m: usize, p: usize, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Self> {
        let len_ok = a.len() == n * n && b.len() == n * m && c.len() == p * n && d.len() == p * m;
        if !len_ok {
            return Err(Error::DimensionMismatch("slice lengths do not match n, m, p".into()));
        }
        Self::new(
            DMatrix::from_row_slice(n, n, a),
            DMatrix::from_row_slice(n, m, b),
            DMatrix::from_row_slice(p, n, c),
            DMatrix::from_row_slice(p, m, d),
        )
    }

    /// Static gain `y = D u`.
    pub fn static_gain(d: DMatrix<f64>) -> Result<Self> {
        let (p, m) = d.shape();
        Self::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, m), DMatrix::zeros(p, 0), d)
    }

    pub fn identity(m: usize) -> Self {
        Self::static_gain(DMatrix::identity(m, m)).expect("identity is valid")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.d.ncols()
    }
    pub fn p(&self) -> usize {
        self.d.nrows()
    }

    /// Rows `rows` of the output map.
    pub fn select_outputs(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.p()) {
            return Err(Error::DimensionMismatch("output row out of range".into()));
        }
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.select_rows(rows),
            self.d.select_rows(rows),
        )
    }

    /// Transfer function `C (zI − A)⁻¹ B + D`.
    pub fn eval_tf(&self, z: Complex64) -> Result<CMatrix> {
        let poles = self.poles();
        self.eval_tf_with_poles(z, &poles)
    }

    fn eval_tf_with_poles(&self, z: Complex64, poles: &[Complex64]) -> Result<CMatrix> {
        let n = self.n();
        if n == 0 {
            return Ok(linalg::to_complex(&self.d));
        }
        let scale = 1.0 + z.norm();
        if poles.iter().any(|p| (p - z).norm() <= 1e-10 * scale) {
            return Err(Error::PoleAtEvaluationPoint { re: z.re, im: z.im });
        }
        let mut zi_a = -linalg::to_complex(&self.a);
        for i in 0..n {
            zi_a[(i, i)] += z;
        }
        let x = zi_a
            .lu()
            .solve(&linalg::to_complex(&self.b))
            .ok_or(Error::PoleAtEvaluationPoint { re: z.re, im: z.im })?;
        Ok(linalg::to_complex(&self.c) * x + linalg::to_complex(&self.d))
    }

    /// Eigenvalues of `A` with multiplicity.
    pub fn poles(&self) -> Vec<Complex64> {
        linalg::eigenvalues(&self.a)
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0 - STABILITY_MARGIN
    }

    /// Rosenbrock pencil `(M, N)` with `M − λN = [A − λI, B; −C, −D]`.
    pub fn rosenbrock_pencil(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m, p) = (self.n(), self.m(), self.p());
        let mut mm = DMatrix::zeros(n + p, n + m);
        mm.view_mut((0, 0), (n, n)).copy_from(&self.a);
        mm.view_mut((0, n), (n, m)).copy_from(&self.b);
        mm.view_mut((n, 0), (p, n)).copy_from(&(-&self.c));
        mm.view_mut((n, n), (p, m)).copy_from(&(-&self.d));
        let mut nn = DMatrix::zeros(n + p, n + m);
        for i in 0..n {
            nn[(i, i)] = 1.0;
        }
        (mm, nn)
    }

    /// `[λI − A, −B; C, D]` evaluated at `λ`.
    pub fn rosenbrock_at(&self, lambda: Complex64) -> CMatrix {
        let (mm, nn) = self.rosenbrock_pencil();
        linalg::to_complex(&nn) * lambda - linalg::to_complex(&mm)
    }

    /// Finite invariant zeros of a square system, with multiplicity.
    ///
    /// The infinite structure of the Rosenbrock pencil is deflated first by
    /// alternately compressing `D` and the outputs it does not reach, so that
    /// the remaining zeros are the eigenvalues of `A_r − B_r D_r⁻¹ C_r`.
    /// Systems whose pencil is singular (`det G ≡ 0`) report no zeros.
    pub fn zeros(&self) -> Result<Vec<Complex64>> {
        if self.p() != self.m() {
            return Err(Error::NonSquare {
                outputs: self.p(),
                inputs: self.m(),
            });
        }
        let Some((a, b, c, d)) = self.deflate_infinite() else {
            log::warn!("system pencil is singular; no isolated zeros");
            return Ok(Vec::new());
        };
        if a.nrows() == 0 {
            return Ok(Vec::new());
        }
        let lu = d.lu();
        let dinv_c = lu.solve(&c).expect("full-rank feedthrough after deflation");
        Ok(linalg::eigenvalues(&(a - b * dinv_c)))
    }

    // Returns `(A_r, B_r, C_r, D_r)` with the same finite zeros and `D_r`
    // square invertible, or `None` when the pencil is not regular.
    fn deflate_infinite(&self) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let m = self.m();
        let scale = [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .flat_map(|x| x.iter())
            .fold(1.0f64, |acc, v| acc.max(v.abs()));
        let tol = RANK_TOL * scale * (self.n() + m) as f64;
        let (mut a, mut b, mut c, mut d) = (self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone());
        loop {
            let (n, p) = (a.nrows(), c.nrows());
            // Rows of [C D] split so that D has full row rank on top.
            let (ud, sigma) = left_basis(&d, tol);
            let cu = ud.transpose() * &c;
            let du = ud.transpose() * &d;
            if sigma == p {
                return (p == m).then_some((a, b, c, d));
            }
            let c2 = cu.rows(sigma, p - sigma).into_owned();
            let (vc, rho) = left_basis(&c2.transpose(), tol);
            if rho < p - sigma {
                // Some output combination vanishes identically.
                return None;
            }
            // States ordered [kernel of C2, range of C2ᵀ]; the second block is
            // forced to zero along any zero direction.
            let mut v = DMatrix::zeros(n, n);
            v.columns_mut(0, n - rho).copy_from(&vc.columns(rho, n - rho));
            v.columns_mut(n - rho, rho).copy_from(&vc.columns(0, rho));
            let at = v.transpose() * &a * &v;
            let bt = v.transpose() * &b;
            let c1 = cu.rows(0, sigma) * &v;
            let keep = n - rho;
            let mut c_new = DMatrix::zeros(sigma + rho, keep);
            c_new.rows_mut(0, sigma).copy_from(&c1.columns(0, keep));
            c_new.rows_mut(sigma, rho).copy_from(&at.view((keep, 0), (rho, keep)));
            let mut d_new = DMatrix::zeros(sigma + rho, m);
            d_new.rows_mut(0, sigma).copy_from(&du.rows(0, sigma));
            d_new.rows_mut(sigma, rho).copy_from(&bt.rows(keep, rho));
            a = at.view((0, 0), (keep, keep)).into_owned();
            b = bt.rows(0, keep).into_owned();
            c = c_new;
            d = d_new;
        }
    }

    /// `(A − B D⁻¹ C, −B D⁻¹, D⁻¹ C, D⁻¹)`.
    pub fn invert(&self) -> Result<Self> {
        if self.p() != self.m() {
            return Err(Error::NonSquare {
                outputs: self.p(),
                inputs: self.m(),
            });
        }
        let condition = linalg::condition_number(&self.d);
        if !(condition <= MAX_FEEDTHROUGH_CONDITION) {
            return Err(Error::NonInvertibleFeedthrough { condition });
        }
        let d_inv = self
            .d
            .clone()
            .try_inverse()
            .ok_or(Error::NonInvertibleFeedthrough { condition })?;
        let b_dinv = &self.b * &d_inv;
        Self::new(&self.a - &b_dinv * &self.c, -b_dinv, &d_inv * &self.c, d_inv)
    }

    /// Singular values of the frequency response at each grid point, descending.
    pub fn sv_sweep(&self, grid: &FrequencyGrid) -> Result<Vec<Vec<f64>>> {
        let poles = self.poles();
        grid.omegas()
            .iter()
            .map(|&w| {
                let z = Complex64::from_polar(1.0, w * grid.sample_period());
                let g = self.eval_tf_with_poles(z, &poles)?;
                Ok(linalg::singular_values_c(&g))
            })
            .collect()
    }
}

/// `S2 ∘ S1`: the output of `s1` drives `s2`. State is `[x₂; x₁]`.
pub fn series(s2: &StateSpace, s1: &StateSpace) -> Result<StateSpace> {
    if s1.p() != s2.m() {
        return Err(Error::DimensionMismatch(format!(
            "series: first system has {} outputs, second has {} inputs",
            s1.p(),
            s2.m()
        )));
    }
    let (n1, n2) = (s1.n(), s2.n());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n2, n2)).copy_from(&s2.a);
    a.view_mut((0, n2), (n2, n1)).copy_from(&(&s2.b * &s1.c));
    a.view_mut((n2, n2), (n1, n1)).copy_from(&s1.a);
    let mut b = DMatrix::zeros(n, s1.m());
    b.view_mut((0, 0), (n2, s1.m())).copy_from(&(&s2.b * &s1.d));
    b.view_mut((n2, 0), (n1, s1.m())).copy_from(&s1.b);
    let mut c = DMatrix::zeros(s2.p(), n);
    c.view_mut((0, 0), (s2.p(), n2)).copy_from(&s2.c);
    c.view_mut((0, n2), (s2.p(), n1)).copy_from(&(&s2.d * &s1.c));
    StateSpace::new(a, b, c, &s2.d * &s1.d)
}

/// `S1 + S2` driven by the same input. State is `[x₁; x₂]`.
pub fn parallel(s1: &StateSpace, s2: &StateSpace) -> Result<StateSpace> {
    if s1.m() != s2.m() || s1.p() != s2.p() {
        return Err(Error::DimensionMismatch("parallel: input/output sizes differ".into()));
    }
    let (n1, n2) = (s1.n(), s2.n());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(&s1.a);
    a.view_mut((n1, n1), (n2, n2)).copy_from(&s2.a);
    let mut b = DMatrix::zeros(n, s1.m());
    b.view_mut((0, 0), (n1, s1.m())).copy_from(&s1.b);
    b.view_mut((n1, 0), (n2, s1.m())).copy_from(&s2.b);
    let mut c = DMatrix::zeros(s1.p(), n);
    c.view_mut((0, 0), (s1.p(), n1)).copy_from(&s1.c);
    c.view_mut((0, n1), (s1.p(), n2)).copy_from(&s2.c);
    StateSpace::new(a, b, c, &s1.d + &s2.d)
}

/// `-S`.
pub fn negate(s: &StateSpace) -> StateSpace {
    StateSpace {
        a: s.a.clone(),
        b: s.b.clone(),
        c: -&s.c,
        d: -&s.d,
    }
}

/// Controllability matrix `[B, AB, …, Aⁿ⁻¹B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    n == 0 || linalg::rank(&controllability_matrix(a, b), RANK_TOL) == n
}

pub fn is_observable(c: &DMatrix<f64>, a: &DMatrix<f64>) -> bool {
    is_controllable(&a.transpose(), &c.transpose())
}

/// Sample period and ascending angular frequencies in `[0, π/T_s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    sample_period: f64,
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(sample_period: f64, omegas: Vec<f64>) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidGrid(format!("sample period {sample_period}")));
        }
        let nyquist = std::f64::consts::PI / sample_period;
        if omegas.iter().any(|&w| !(0.0..=nyquist * (1.0 + 1e-12)).contains(&w)) {
            return Err(Error::InvalidGrid("frequency outside [0, π/T_s]".into()));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("frequencies not strictly ascending".into()));
        }
        Ok(Self { sample_period, omegas })
    }

    /// `points` evenly spaced frequencies on `[0, π/T_s]`.
    pub fn linear(sample_period: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        let nyquist = std::f64::consts::PI / sample_period;
        let omegas = (0..points)
            .map(|i| nyquist * i as f64 / (points - 1) as f64)
            .collect();
        Self::new(sample_period, omegas)
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }
    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], ncols_hint: usize) -> std::result::Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(ncols_hint);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct RawStateSpace {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
}

impl Serialize for StateSpace {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RawStateSpace {
            a: matrix_to_rows(&self.a),
            b: matrix_to_rows(&self.b),
            c: matrix_to_rows(&self.c),
            d: matrix_to_rows(&self.d),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateSpace {
    fn deserialize<De: Deserializer<'de>>(deserializer: De) -> std::result::Result<Self, De::Error> {
        use serde::de::Error as _;
        let raw = RawStateSpace::deserialize(deserializer)?;
        // D fixes (p, m); A fixes n. Empty blocks take their width from these.
        let d = rows_to_matrix(&raw.d, 0).map_err(De::Error::custom)?;
        let a = rows_to_matrix(&raw.a, 0).map_err(De::Error::custom)?;
        let n = a.nrows();
        let b = if raw.b.is_empty() {
            DMatrix::zeros(0, d.ncols())
        } else {
            rows_to_matrix(&raw.b, d.ncols()).map_err(De::Error::custom)?
        };
        let c = if n == 0 {
            DMatrix::zeros(d.nrows(), 0)
        } else {
            rows_to_matrix(&raw.c, n).map_err(De::Error::custom)?
        };
        let a = if n == 0 { DMatrix::zeros(0, 0) } else { a };
        StateSpace::new(a, b, c, d).map_err(De::Error::custom)
    }
}

/// Orthogonal `U` (rows × rows) whose leading `r` columns span the range of
/// `m`, with `r` the numerical rank at absolute tolerance `tol`.
fn left_basis(m: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, usize) {
    let rows = m.nrows();
    if rows == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    // Padding to a square matrix makes the SVD return a full basis.
    let k = rows.max(m.ncols());
    let mut padded = DMatrix::zeros(rows, k);
    padded.columns_mut(0, m.ncols()).copy_from(m);
    let mut sq = DMatrix::zeros(k, k);
    sq.rows_mut(0, rows).copy_from(&padded);
    let svd = sq.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();
    let mut basis = DMatrix::zeros(rows, rows);
    for (dst, &src) in order.iter().enumerate().take(rows) {
        basis.set_column(dst, &u.column(src).rows(0, rows));
    }
    (basis, rank.min(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
        StateSpace::from_rows(1, 1, 1, &[a], &[b], &[c], &[d]).unwrap()
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let r = StateSpace::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn rejects_nan() {
        let r = StateSpace::from_rows(1, 1, 1, &[f64::NAN], &[1.0], &[1.0], &[0.0]);
        assert_eq!(r, Err(Error::NonFiniteEntry("A")));
    }

    #[test]
    fn pure_feedthrough_is_allowed() {
        let s = StateSpace::static_gain(DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!((s.n(), s.m(), s.p()), (0, 1, 1));
        let g = s.eval_tf(Complex64::new(0.3, 0.1)).unwrap();
        assert_eq!(g[(0, 0)], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn inversion_by_substitution() {
        let w = scalar(0.6714, 1.0, 1.0, 1.0).invert().unwrap();
        assert!((w.a()[(0, 0)] + 0.3286).abs() < 1e-15);
        assert_eq!(w.b()[(0, 0)], -1.0);
        assert_eq!(w.c()[(0, 0)], 1.0);
        assert_eq!(w.d()[(0, 0)], 1.0);
        assert!(matches!(
            scalar(0.5, 1.0, 1.0, 0.0).invert(),
            Err(Error::NonInvertibleFeedthrough { .. })
        ));
    }

    #[test]
    fn pole_at_evaluation_point() {
        let s = scalar(0.5, 1.0, 1.0, 0.0);
        assert!(matches!(
            s.eval_tf(Complex64::new(0.5, 0.0)),
            Err(Error::PoleAtEvaluationPoint { .. })
        ));
    }

    #[test]
    fn scalar_zeros() {
        let z = scalar(0.5, 1.0, 1.0, 1.0).zeros().unwrap();
        assert_eq!(z.len(), 1);
        assert!((z[0] - Complex64::new(-0.5, 0.0)).norm() < 1e-12);
        let z = scalar(0.5, 1.0, -1.5, 1.0).zeros().unwrap();
        assert!((z[0] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        let z = scalar(0.5, 1.0, 1.0, 0.0).zeros().unwrap();
        assert!(z.is_empty());
    }

    #[test]
    fn marginal_is_unstable() {
        assert!(!scalar(1.0, 1.0, 1.0, 0.0).is_stable());
        assert!(scalar(0.999, 1.0, 1.0, 0.0).is_stable());
    }

    #[test]
    fn json_round_trip_with_empty_state() {
        let s = StateSpace::static_gain(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: StateSpace = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        let s = scalar(0.5, 1.0, 2.0, 0.0);
        let back: StateSpace = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::new(0.1, vec![0.0, 40.0]).is_err());
        assert!(FrequencyGrid::new(0.1, vec![1.0, 1.0]).is_err());
        assert!(FrequencyGrid::new(-1.0, vec![]).is_err());
        let g = FrequencyGrid::linear(0.1, 512).unwrap();
        assert_eq!(g.omegas().len(), 512);
        assert!((g.omegas()[511] - std::f64::consts::PI / 0.1).abs() < 1e-12);
    }
}
