//! Fixtures and independent oracles shared by the integration tests.
//!
//! Nothing here calls into the library's interconnection, inversion or
//! transfer-evaluation code: transfer functions come from Faddeev–LeVerrier
//! polynomial expansions, roots from Durand–Kerner iteration, and loop
//! responses from stepping every component separately.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmlab_core::{AttackMode, Controller, Plant, StateSpace, WatermarkPair};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn reference_plant() -> Plant {
    Plant::new(
        mat(2, 2, &[0.9191, 0.3277, -0.0768, 0.4269]),
        mat(2, 1, &[0.0, 1.0]),
        mat(1, 2, &[1.0, 0.0]),
        mat(1, 2, &[2.0, 0.0]),
        DMatrix::zeros(1, 1),
    )
    .unwrap()
}

pub fn reference_controller() -> Controller {
    Controller::new(mat(1, 2, &[-0.3405, -0.3987]), mat(2, 1, &[0.5956, -0.0253]))
}

/// First-order scalar pair with remover `(a, 1, 1, 1)`.
pub fn scalar_pair(a: f64) -> WatermarkPair {
    WatermarkPair::new(StateSpace::new(scalar(a), scalar(1.0), scalar(1.0), scalar(1.0)).unwrap()).unwrap()
}

pub fn reference_pairs() -> (WatermarkPair, WatermarkPair) {
    (scalar_pair(0.5201), scalar_pair(0.6714))
}

// ---------------------------------------------------------------- polynomials
// Coefficients in ascending powers.

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect()
}

pub fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

pub fn poly_eval(a: &[f64], z: Complex64) -> Complex64 {
    a.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
}

/// Drops leading coefficients below `tol · max|coef|`.
pub fn poly_trim(a: &[f64], tol: f64) -> Vec<f64> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut v = a.to_vec();
    while v.len() > 1 && v.last().unwrap().abs() <= tol * scale {
        v.pop();
    }
    v
}

pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i + 1] += v;
            next[i] -= v * r;
        }
        c = next;
    }
    c.iter().map(|v| v.re).collect()
}

/// Durand–Kerner roots followed by Newton polishing.
pub fn poly_roots(a: &[f64]) -> Vec<Complex64> {
    let a = poly_trim(a, 1e-14);
    let deg = a.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = a[deg];
    let monic: Vec<f64> = a.iter().map(|v| v / lead).collect();
    let seed = Complex64::new(0.4, 0.9);
    let mut r: Vec<Complex64> = (0..deg).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..deg {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    den *= r[i] - r[j];
                }
            }
            let step = poly_eval(&monic, r[i]) / den;
            r[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    let deriv: Vec<f64> = (1..=deg).map(|k| k as f64 * monic[k]).collect();
    for z in &mut r {
        for _ in 0..3 {
            let d = poly_eval(&deriv, *z);
            if d.norm() > 0.0 {
                *z -= poly_eval(&monic, *z) / d;
            }
        }
    }
    r
}

/// Pairs two root sets greedily and returns the largest mismatch.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut left = b.to_vec();
    let mut worst = 0.0f64;
    for x in a {
        let (idx, d) = left
            .iter()
            .enumerate()
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        worst = worst.max(d);
        left.remove(idx);
    }
    worst
}

// ------------------------------------------------------------ transfer oracle

/// Faddeev–LeVerrier: `adj(zI − A) = Σ_k M[k] z^k` and `det(zI − A) = Σ_k c[k] z^k`.
pub fn resolvent_expansion(a: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<f64>) {
    let n = a.nrows();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut adj = vec![DMatrix::zeros(n, n); n.max(1)];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * c[n - k + 1];
        adj[n - k] = m.clone();
        c[n - k] = -(a * &m).trace() / k as f64;
    }
    (adj, c)
}

/// Numerator polynomial of entry `(i, j)` over the characteristic polynomial.
pub fn tf_entry_poly(ss: &StateSpace, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let n = ss.n();
    let (adj, den) = resolvent_expansion(ss.a());
    let mut num = poly_scale(&den, ss.d()[(i, j)]);
    for k in 0..n {
        let v = (ss.c().row(i) * &adj[k] * ss.b().column(j))[(0, 0)];
        num[k] += v;
    }
    (num, den)
}

/// `C adj(zI − A) B / det(zI − A) + D`, entrywise from the expansion.
pub fn tf_eval(ss: &StateSpace, z: Complex64) -> DMatrix<Complex64> {
    let (adj, den) = resolvent_expansion(ss.a());
    let det = poly_eval(&den, z);
    let n = ss.n();
    let mut r = DMatrix::<Complex64>::zeros(n, n);
    for (k, m) in adj.iter().enumerate().take(n) {
        r += m.map(|v| Complex64::new(v, 0.0)) * z.powu(k as u32);
    }
    let c = ss.c().map(|v| Complex64::new(v, 0.0));
    let b = ss.b().map(|v| Complex64::new(v, 0.0));
    let d = ss.d().map(|v| Complex64::new(v, 0.0));
    if n == 0 {
        return d;
    }
    c * r * b / det + d
}

pub fn max_abs_c(m: &DMatrix<Complex64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.norm()))
}

/// Random point in the annulus `1.05 ≤ |z| ≤ 2`.
pub fn random_z(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(rng.random_range(1.05..2.0), rng.random_range(0.0..std::f64::consts::TAU))
}

// ---------------------------------------------------------------- generators

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.norm()))
}

/// Random matrix rescaled to spectral radius `rho`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> DMatrix<f64> {
    loop {
        let a = random_matrix(rng, n, n, 1.0);
        let r = spectral_radius(&a);
        if r > 1e-3 {
            return a * (rho / r);
        }
    }
}

/// Random remover of dimension `dim` with well-conditioned feedthrough; both
/// the remover and its generator are stable.
pub fn random_pair(rng: &mut ChaCha8Rng, dim: usize, states: usize) -> WatermarkPair {
    loop {
        let rho = rng.random_range(0.2..0.85);
        let a = random_stable(rng, states, rho);
        let b = random_matrix(rng, states, dim, 1.0);
        let c = random_matrix(rng, dim, states, 1.0);
        let d = DMatrix::identity(dim, dim) + random_matrix(rng, dim, dim, 0.3);
        if let Ok(pair) = StateSpace::new(a, b, c, d).and_then(WatermarkPair::new) {
            if spectral_radius(pair.generator().a()) < 0.95 {
                return pair;
            }
        }
    }
}

pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize, pj: usize) -> Plant {
    loop {
        let rho = rng.random_range(0.5..0.95);
        let a = random_stable(rng, n, rho);
        let b = random_matrix(rng, n, m, 1.0);
        let c = random_matrix(rng, p, n, 1.0);
        let cj = random_matrix(rng, pj, n, 1.0);
        if let Ok(pl) = Plant::new(a, b, c, cj, DMatrix::zeros(pj, m)) {
            return pl;
        }
    }
}

/// Small random gains accepted once both the state-feedback and observer
/// matrices are stable.
pub fn random_controller(rng: &mut ChaCha8Rng, plant: &Plant) -> Controller {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    loop {
        let k = random_matrix(rng, m, n, 0.3);
        let l = random_matrix(rng, n, p, 0.3);
        let ok_k = spectral_radius(&(plant.a() + plant.b() * &k)) < 0.97;
        let ok_l = spectral_radius(&(plant.a() - &l * plant.c())) < 0.97;
        if ok_k && ok_l {
            return Controller::new(k, l);
        }
    }
}

// -------------------------------------------------------- component stepping

struct Filter {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    x: DVector<f64>,
}

impl Filter {
    fn new(ss: &StateSpace) -> Self {
        Self {
            a: ss.a().clone(),
            b: ss.b().clone(),
            c: ss.c().clone(),
            d: ss.d().clone(),
            x: DVector::zeros(ss.n()),
        }
    }

    fn step(&mut self, u: &DVector<f64>) -> DVector<f64> {
        let y = &self.c * &self.x + &self.d * u;
        self.x = &self.a * &self.x + &self.b * u;
        y
    }

    /// Runs the filter as its own left inverse: picks the input whose output
    /// is `v`, then advances with that input.
    fn step_inverse(&mut self, v: &DVector<f64>) -> DVector<f64> {
        let rhs = v - &self.c * &self.x;
        let u = self.d.clone().lu().solve(&rhs).expect("invertible feedthrough");
        self.x = &self.a * &self.x + &self.b * &u;
        u
    }
}

/// Loop response stepped one component at a time in natural coordinates.
/// Rows are steps; columns are `[y_r, y_J, u_c, u_h, y_p, y_q]`.
/// `attack` rows are `φ_u` (covert) or `[φ_u, φ_y]` (generic).
pub fn component_simulation(
    plant: &Plant,
    controller: &Controller,
    input_pair: &WatermarkPair,
    output_pair: &WatermarkPair,
    mode: AttackMode,
    attack: &DMatrix<f64>,
    x_p0: Option<&DVector<f64>>,
    x_hat0: Option<&DVector<f64>>,
) -> DMatrix<f64> {
    let (n, m, p, pj) = (plant.n(), plant.m(), plant.p(), plant.p_j());
    let b_c = controller.b_c.clone().unwrap_or_else(|| plant.b().clone());
    let mut x_p = x_p0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut x_hat = x_hat0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut x_a = DVector::<f64>::zeros(n);
    // Generators are stepped as inverses of the removers.
    let mut g = Filter::new(input_pair.remover());
    let mut h = Filter::new(input_pair.remover());
    let mut w = Filter::new(output_pair.remover());
    let mut q = Filter::new(output_pair.remover());
    let cols = p + pj + m + m + p + p;
    let mut out = DMatrix::zeros(attack.nrows(), cols);
    for k in 0..attack.nrows() {
        let a = attack.row(k).transpose();
        let phi_u = a.rows(0, m).into_owned();
        let u_c = &controller.k * &x_hat;
        let u_g = g.step_inverse(&u_c);
        let u_tilde = &u_g + &phi_u;
        let u_h = h.step(&u_tilde);
        let y_p = plant.c() * &x_p;
        let y_j = plant.c_j() * &x_p + plant.d_j() * &u_h;
        let y_w = w.step_inverse(&y_p);
        let phi_y = match mode {
            AttackMode::Covert => -(plant.c() * &x_a),
            AttackMode::Generic => a.rows(m, p).into_owned(),
        };
        let y_q = q.step(&(&y_w + &phi_y));
        let y_r = &y_q - plant.c() * &x_hat;

        let row: Vec<f64> = y_r
            .iter()
            .chain(y_j.iter())
            .chain(u_c.iter())
            .chain(u_h.iter())
            .chain(y_p.iter())
            .chain(y_q.iter())
            .copied()
            .collect();
        out.row_mut(k).copy_from_slice(&row);

        x_hat = plant.a() * &x_hat + &b_c * &u_c + &controller.l * &y_r;
        x_p = plant.a() * &x_p + plant.b() * &u_h;
        x_a = plant.a() * &x_a + plant.b() * &phi_u;
    }
    out
}

pub fn sup_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn energy(signal: &DMatrix<f64>) -> f64 {
    signal.iter().map(|v| v * v).sum()
}

// ------------------------------------------------------------- SISO OOG oracle

/// Bounded SISO instance `y₁ = N₁/D a`, `y₂ = N₂/D a` with every zero of `N₁`
/// inside radius 0.8, realized in a randomly transformed companion basis.
pub struct SisoInstance {
    pub ss: StateSpace,
    pub num1: Vec<f64>,
    pub num2: Vec<f64>,
}

fn random_roots(rng: &mut ChaCha8Rng, count: usize, radius: f64) -> Vec<Complex64> {
    let mut roots = Vec::new();
    while roots.len() < count {
        if count - roots.len() >= 2 && rng.random_bool(0.5) {
            let z = Complex64::from_polar(rng.random_range(0.05..radius), rng.random_range(0.2..3.0));
            roots.push(z);
            roots.push(z.conj());
        } else {
            roots.push(Complex64::new(rng.random_range(-radius..radius), 0.0));
        }
    }
    roots
}

pub fn random_siso_instance(rng: &mut ChaCha8Rng) -> SisoInstance {
    let n = rng.random_range(1..=3);
    let den = poly_from_roots(&random_roots(rng, n, 0.9));
    // Companion form: x⁺ = A x + e_n a, y = c x with y/a = (Σ c_k z^k)/den.
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -den[j];
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;

    let with_feedthrough = rng.random_bool(0.5);
    let (c1, d1, num1) = if with_feedthrough {
        let d1 = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let num1 = poly_scale(&poly_from_roots(&random_roots(rng, n, 0.8)), d1);
        let c1 = poly_sub(&num1, &poly_scale(&den, d1));
        (c1[..n].to_vec(), d1, num1)
    } else {
        let g = rng.random_range(0.5..2.0);
        let mut num1 = poly_scale(&poly_from_roots(&random_roots(rng, n - 1, 0.8)), g);
        num1.resize(n, 0.0);
        (num1.clone(), 0.0, num1)
    };
    let mut c2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    if c2.iter().all(|v| v.abs() < 1e-3) {
        c2[0] = 1.0;
    }
    let num2 = c2.clone();

    let t = loop {
        let t = DMatrix::identity(n, n) + random_matrix(rng, n, n, 0.5);
        if t.clone().try_inverse().is_some() && t.determinant().abs() > 0.1 {
            break t;
        }
    };
    let ti = t.clone().try_inverse().unwrap();
    let mut c = DMatrix::zeros(2, n);
    for j in 0..n {
        c[(0, j)] = c1[j];
        c[(1, j)] = c2[j];
    }
    let d = mat(2, 1, &[d1, 0.0]);
    let ss = StateSpace::new(&ti * a * &t, ti * b, c * t, d).unwrap();
    SisoInstance { ss, num1, num2 }
}

/// `max_ω |N₂/N₁|²` over `points` samples of `[0, π]`.
pub fn frequency_ratio_oracle(num1: &[f64], num2: &[f64], points: usize) -> f64 {
    (0..points)
        .map(|i| {
            let w = std::f64::consts::PI * i as f64 / (points - 1) as f64;
            let z = Complex64::from_polar(1.0, w);
            (poly_eval(num2, z) / poly_eval(num1, z)).norm_sqr()
        })
        .fold(0.0, f64::max)
}
