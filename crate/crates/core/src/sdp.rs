//! Linear matrix inequality problems and a primal-dual interior-point solver.
//!
//! A problem minimises a linear objective over scalar coordinates `y`
//! subject to affine matrix constraints `F(y) ⪯ 0` or `F(y) ⪰ 0`. Internally
//! it is solved as the dual of a block-diagonal standard-form SDP using the
//! Nesterov–Todd search direction with Mehrotra predictor-corrector steps and an
//! infeasible starting point.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::{max_sym_eigenvalue, symmetrize};

pub const DEFAULT_STRICTNESS: f64 = 1e-8;
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-7;
pub const DEFAULT_GAP_TOL: f64 = 1e-7;
pub const DEFAULT_CERTIFICATE_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 500;

/// Largest eigenvalue of the symmetric part of `m`.
pub fn psd_residual(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    max_sym_eigenvalue(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarKind {
    Scalar,
    Symmetric(usize),
}

/// Handle to a declared decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    offset: usize,
    kind: VarKind,
}

impl Var {
    pub fn kind(&self) -> VarKind {
        self.kind
    }

    fn len(&self) -> usize {
        match self.kind {
            VarKind::Scalar => 1,
            VarKind::Symmetric(n) => n * (n + 1) / 2,
        }
    }

    /// Basis matrices `E_k` such that the variable equals `Σ y_k E_k`.
    fn basis(&self) -> Vec<DMatrix<f64>> {
        match self.kind {
            VarKind::Scalar => vec![DMatrix::from_element(1, 1, 1.0)],
            VarKind::Symmetric(n) => {
                let mut out = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    for j in i..n {
                        let mut e = DMatrix::zeros(n, n);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        out.push(e);
                    }
                }
                out
            }
        }
    }
}

/// Symmetric matrix expression `F₀ + Σ yₖ Fₖ`.
#[derive(Debug, Clone)]
pub struct AffineExpr {
    size: usize,
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineExpr {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            constant: DMatrix::zeros(size, size),
            terms: Vec::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "constraint blocks must be square");
        Self {
            size: m.nrows(),
            constant: symmetrize(&m),
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn add_constant(mut self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.shape(), (self.size, self.size));
        self.constant += symmetrize(m);
        self
    }

    /// Adds `f(V)` where `V` is the value of `var` and `f` is linear.
    /// For a scalar variable `f` receives the 1x1 matrix `[1]`.
    pub fn add_linear<F>(mut self, var: Var, f: F) -> Self
    where
        F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    {
        for (k, e) in var.basis().iter().enumerate() {
            let m = f(e);
            assert_eq!(m.shape(), (self.size, self.size), "term has wrong shape");
            if m.iter().any(|v| *v != 0.0) {
                self.terms.push((var.offset + k, symmetrize(&m)));
            }
        }
        self
    }

    /// Adds `v · coef` for a scalar variable.
    pub fn add_scalar(self, var: Var, coef: &DMatrix<f64>) -> Self {
        assert_eq!(var.kind, VarKind::Scalar);
        self.add_linear(var, |_| coef.clone())
    }

    /// Value at the coordinate vector `y`.
    pub fn evaluate(&self, y: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            out += m * y[*k];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    /// `F(y) ⪯ 0`
    Nsd,
    /// `F(y) ⪰ 0`
    Psd,
}

#[derive(Debug, Clone)]
struct Constraint {
    name: String,
    sense: Sense,
    strict: bool,
    expr: AffineExpr,
}

#[derive(Debug, Clone, Serialize)]
struct VarDecl {
    name: String,
    kind: VarKind,
    offset: usize,
}

/// Solver options.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    /// Residual allowed on the primal certificate `X`.
    pub certificate_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
            gap_tol: DEFAULT_GAP_TOL,
            certificate_tol: DEFAULT_CERTIFICATE_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    vars: Vec<VarDecl>,
    nvars: usize,
    objective: Vec<(usize, f64)>,
    constraints: Vec<Constraint>,
    strictness: f64,
    options: SolverOptions,
}

impl Default for LmiProblem {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: SdpStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    /// Largest eigenvalue of any constraint written as `G(y) ⪯ 0`, including the strictness shift.
    pub max_violation: f64,
    pub iterations: usize,
}

impl LmiSolution {
    pub fn scalar(&self, var: Var) -> f64 {
        assert_eq!(var.kind, VarKind::Scalar);
        self.values[var.offset]
    }

    pub fn matrix(&self, var: Var) -> DMatrix<f64> {
        match var.kind {
            VarKind::Scalar => DMatrix::from_element(1, 1, self.values[var.offset]),
            VarKind::Symmetric(n) => {
                let mut m = DMatrix::zeros(n, n);
                let mut k = var.offset;
                for i in 0..n {
                    for j in i..n {
                        m[(i, j)] = self.values[k];
                        m[(j, i)] = self.values[k];
                        k += 1;
                    }
                }
                m
            }
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

impl LmiProblem {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            nvars: 0,
            objective: Vec::new(),
            constraints: Vec::new(),
            strictness: DEFAULT_STRICTNESS,
            options: SolverOptions::default(),
        }
    }

    pub fn with_strictness(mut self, eps: f64) -> Self {
        self.strictness = eps;
        self
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn strictness(&self) -> f64 {
        self.strictness
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> Var {
        let var = Var {
            offset: self.nvars,
            kind,
        };
        self.nvars += var.len();
        self.vars.push(VarDecl {
            name: name.to_string(),
            kind,
            offset: var.offset,
        });
        var
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.declare(name, VarKind::Scalar)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Var {
        self.declare(name, VarKind::Symmetric(n))
    }

    pub fn num_coordinates(&self) -> usize {
        self.nvars
    }

    /// Adds `weight · v` (scalar) or `weight · tr(V)` (matrix) to the objective.
    pub fn minimize(&mut self, var: Var, weight: f64) {
        match var.kind {
            VarKind::Scalar => self.objective.push((var.offset, weight)),
            VarKind::Symmetric(n) => {
                let mut k = var.offset;
                for i in 0..n {
                    for j in i..n {
                        if i == j {
                            self.objective.push((k, weight));
                        }
                        k += 1;
                    }
                }
            }
        }
    }

    /// `expr ⪯ 0`, or `expr ⪯ −ε·I` when strict.
    pub fn nsd(&mut self, name: &str, expr: AffineExpr, strict: bool) {
        self.push(name, Sense::Nsd, expr, strict);
    }

    /// `expr ⪰ 0`, or `expr ⪰ ε·I` when strict.
    pub fn psd(&mut self, name: &str, expr: AffineExpr, strict: bool) {
        self.push(name, Sense::Psd, expr, strict);
    }

    fn push(&mut self, name: &str, sense: Sense, expr: AffineExpr, strict: bool) {
        assert!(
            expr.terms.iter().all(|(k, _)| *k < self.nvars),
            "constraint references an undeclared variable"
        );
        self.constraints.push(Constraint {
            name: name.to_string(),
            sense,
            strict,
            expr,
        });
    }

    /// Each constraint rewritten as `G(y) ⪯ 0`, including the strictness shift.
    fn nsd_forms(&self) -> Vec<AffineExpr> {
        self.constraints
            .iter()
            .map(|c| {
                let mut e = c.expr.clone();
                if c.sense == Sense::Psd {
                    e.constant = -e.constant;
                    for (_, m) in e.terms.iter_mut() {
                        *m = -&*m;
                    }
                }
                if c.strict {
                    for i in 0..e.size {
                        e.constant[(i, i)] += self.strictness;
                    }
                }
                e
            })
            .collect()
    }

    /// Largest eigenvalue over all constraints at `y`, each written as `G(y) ⪯ 0`.
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        self.nsd_forms()
            .iter()
            .map(|e| psd_residual(&e.evaluate(y)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().map(|(k, w)| w * y[*k]).sum()
    }

    pub fn solve(&self) -> LmiSolution {
        let forms = self.nsd_forms();
        let mut c = DVector::zeros(self.nvars);
        for (k, w) in &self.objective {
            c[*k] += *w;
        }
        // Dual standard form: max bᵀy s.t. Σ yᵢAᵢ + Z = C, Z ⪰ 0 with C = −G₀, Aᵢ = Gᵢ.
        let blocks: Vec<Block> = forms
            .iter()
            .filter(|e| e.size > 0)
            .map(|e| Block {
                c: -&e.constant,
                a: e.terms.clone(),
            })
            .collect();
        let data = SdpData {
            m: self.nvars,
            b: -c,
            blocks,
        };
        let raw = interior_point(&data, &self.options);
        let mut values: Vec<f64> = raw.y.iter().copied().collect();
        values.resize(self.nvars, 0.0);
        let max_violation = if forms.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.max_violation(&values)
        };
        let mut status = raw.status;
        if status == SdpStatus::Optimal && max_violation > self.options.feasibility_tol {
            log::debug!("solver optimum violates constraints by {max_violation:e}");
            status = SdpStatus::NumericalFailure;
        }
        LmiSolution {
            status,
            objective: self.objective_value(&values),
            values,
            max_violation,
            iterations: raw.iterations,
        }
    }

    /// Self-describing JSON description of the posed problem.
    pub fn debug_json(&self) -> serde_json::Value {
        let constraints: Vec<serde_json::Value> = self
            .constraints
            .iter()
            .map(|c| {
                serde_json::json!({
                    "name": c.name,
                    "sense": c.sense,
                    "strict": c.strict,
                    "size": c.expr.size,
                    "constant": crate::lti::matrix_to_rows(&c.expr.constant),
                    "terms": c.expr.terms.iter().map(|(k, m)| serde_json::json!({
                        "coordinate": k,
                        "matrix": crate::lti::matrix_to_rows(m),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "variables": self.vars,
            "coordinates": self.nvars,
            "objective": self.objective,
            "strictness": self.strictness,
            "constraints": constraints,
        })
    }
}

struct Block {
    c: DMatrix<f64>,
    a: Vec<(usize, DMatrix<f64>)>,
}

struct SdpData {
    m: usize,
    b: DVector<f64>,
    blocks: Vec<Block>,
}

struct RawResult {
    status: SdpStatus,
    y: DVector<f64>,
    iterations: usize,
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

// tr(A G) for symmetric A.
fn trace_prod_sym(a: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    inner(a, g)
}

impl SdpData {
    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (blk, xb) in self.blocks.iter().zip(x) {
            for (k, a) in &blk.a {
                out[*k] += trace_prod_sym(a, xb);
            }
        }
        out
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|blk| {
                let mut s = DMatrix::zeros(blk.c.nrows(), blk.c.ncols());
                for (k, a) in &blk.a {
                    if y[*k] != 0.0 {
                        s += a * y[*k];
                    }
                }
                s
            })
            .collect()
    }
}

fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let chol = x.clone().cholesky()?;
    let l = chol.l();
    let l_inv = l.try_inverse()?;
    let s = symmetrize(&(&l_inv * dx * l_inv.transpose()));
    let lmin = s.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    Some(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

fn step_length(xs: &[DMatrix<f64>], dxs: &[DMatrix<f64>]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (x, dx) in xs.iter().zip(dxs) {
        alpha = alpha.min(max_step(x, dx)?);
    }
    Some(alpha)
}

/// Nesterov–Todd scaling `W = G Gᵀ` with `W Z W = X` and
/// `G⁻¹ X G⁻ᵀ = Gᵀ Z G = Λ`.
struct NtScaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl NtScaling {
    fn new(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let l = x.clone().cholesky()?.l();
        let r = z.clone().cholesky()?.l();
        let svd = (r.transpose() * &l).svd(true, true);
        let v = svd.v_t?.transpose();
        let lambda = svd.singular_values;
        if lambda.iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        let l_inv = l.clone().try_inverse()?;
        let g = &l * &v * DMatrix::from_diagonal(&lambda.map(|s| 1.0 / s.sqrt()));
        let g_inv = DMatrix::from_diagonal(&lambda.map(f64::sqrt)) * v.transpose() * l_inv;
        let w = symmetrize(&(&g * g.transpose()));
        Some(Self { g, g_inv, w, lambda })
    }
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    dz: Vec<DMatrix<f64>>,
}

fn interior_point(data: &SdpData, opts: &SolverOptions) -> RawResult {
    let m = data.m;
    let nb = data.blocks.len();
    let total_dim: usize = data.blocks.iter().map(|b| b.c.nrows()).sum();
    if nb == 0 {
        // No constraints: bounded only if the objective vanishes.
        let status = if data.b.iter().all(|v| *v == 0.0) {
            SdpStatus::Optimal
        } else {
            SdpStatus::Unbounded
        };
        return RawResult {
            status,
            y: DVector::zeros(m),
            iterations: 0,
        };
    }

    let c_norm = data.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>().sqrt();
    let b_norm = data.b.norm();

    let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    let mut z: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    for blk in &data.blocks {
        let n = blk.c.nrows();
        let sn = (n as f64).sqrt();
        let mut xi = 10.0f64.max(sn);
        let mut zi = 10.0f64.max(sn).max(blk.c.norm());
        for (k, a) in &blk.a {
            let an = a.norm();
            xi = xi.max(sn * (1.0 + data.b[*k].abs()) / (1.0 + an));
            zi = zi.max(an);
        }
        let zi = zi.max(c_norm.min(1e6));
        x.push(DMatrix::identity(n, n) * xi);
        z.push(DMatrix::identity(n, n) * zi);
    }
    let mut y = DVector::zeros(m);

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut stall = 0usize;
    let target = (opts.feasibility_tol.min(opts.gap_tol) * 1e-2).max(1e-10);

    for iter in 0..opts.max_iters {
        let scaling: Option<Vec<NtScaling>> = x.iter().zip(&z).map(|(xb, zb)| NtScaling::new(xb, zb)).collect();
        let Some(scaling) = scaling else {
            return finish(best, iter, opts);
        };

        let ax = data.apply(&x);
        let rp = &data.b - &ax;
        let aty = data.adjoint(&y);
        let rd: Vec<DMatrix<f64>> = data
            .blocks
            .iter()
            .zip(z.iter().zip(&aty))
            .map(|(blk, (zb, ab))| &blk.c - zb - ab)
            .collect();
        let pobj: f64 = data.blocks.iter().zip(&x).map(|(b, xb)| inner(&b.c, xb)).sum();
        let dobj = data.b.dot(&y);
        let xz: f64 = x.iter().zip(&z).map(|(a, b)| inner(a, b)).sum();
        let mu = xz / total_dim as f64;

        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + c_norm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let gap = gap.min(xz.abs() / (1.0 + pobj.abs() + dobj.abs()));
        log::trace!("iter {iter}: pobj {pobj:.6e} dobj {dobj:.6e} pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e}");

        // The X iterate only certifies optimality; its residual is checked
        // against the looser certificate tolerance.
        let merit = (pinf * opts.feasibility_tol / opts.certificate_tol).max(dinf).max(gap);
        if pinf <= opts.certificate_tol && dinf <= opts.feasibility_tol && gap <= opts.gap_tol {
            if best.as_ref().map_or(true, |(bm, _)| merit < *bm) {
                best = Some((merit, y.clone()));
            }
        }
        if pinf <= target && dinf <= target && gap <= target {
            return RawResult {
                status: SdpStatus::Optimal,
                y,
                iterations: iter,
            };
        }

        // Certificates of infeasibility.
        if iter > 5 {
            let ax_norm = ax.norm();
            if pobj < 0.0 && ax_norm <= 1e-8 * (-pobj) && -pobj > 1e-8 * (1.0 + c_norm) {
                let xt: f64 = x.iter().map(|xb| xb.trace()).sum();
                if xt > 1e6 || ax_norm == 0.0 {
                    return RawResult {
                        status: SdpStatus::Infeasible,
                        y,
                        iterations: iter,
                    };
                }
            }
            if dobj > 0.0 {
                let resid: f64 = data
                    .blocks
                    .iter()
                    .zip(&rd)
                    .map(|(b, r)| (&b.c - r).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                let ynorm = y.norm();
                if resid <= 1e-8 * dobj && ynorm > 1e6 {
                    return RawResult {
                        status: SdpStatus::Unbounded,
                        y,
                        iterations: iter,
                    };
                }
            }
        }

        // Schur complement matrix M_ij = tr(Aᵢ W Aⱼ W).
        let mut mm = DMatrix::<f64>::zeros(m, m);
        for (blk, sc) in data.blocks.iter().zip(&scaling) {
            let g: Vec<DMatrix<f64>> = blk.a.iter().map(|(_, a)| symmetrize(&(&sc.w * a * &sc.w))).collect();
            for (p, (i, ai)) in blk.a.iter().enumerate() {
                for (q, (j, _)) in blk.a.iter().enumerate().skip(p) {
                    let v = inner(ai, &g[q]);
                    mm[(*i, *j)] += v;
                    if p != q {
                        mm[(*j, *i)] += v;
                    }
                }
            }
        }
        let Some(schur) = SchurSolver::new(symmetrize(&mm)) else {
            return finish(best, iter, opts);
        };

        let wrw: Vec<DMatrix<f64>> = scaling.iter().zip(&rd).map(|(sc, r)| symmetrize(&(&sc.w * r * &sc.w))).collect();
        let a_wrw = data.apply(&wrw);

        // ΔX = T − W ΔZ W with T = G H Gᵀ.
        let solve_dir = |t: &[DMatrix<f64>]| -> Direction {
            let rhs = &rp - data.apply(t) + &a_wrw;
            let dy = schur.solve(&rhs);
            let ady = data.adjoint(&dy);
            let dz: Vec<DMatrix<f64>> = rd.iter().zip(&ady).map(|(r, a)| r - a).collect();
            let dx: Vec<DMatrix<f64>> = t
                .iter()
                .zip(dz.iter().zip(&scaling))
                .map(|(tb, (dzb, sc))| symmetrize(&(tb - &sc.w * dzb * &sc.w)))
                .collect();
            Direction { dx, dy, dz }
        };

        // Predictor: H = −Λ, so T = −X.
        let t0: Vec<DMatrix<f64>> = x.iter().map(|xb| -xb).collect();
        let pred = solve_dir(&t0);
        let (Some(ap), Some(ad)) = (step_length(&x, &pred.dx), step_length(&z, &pred.dz)) else {
            return finish(best, iter, opts);
        };
        let ap = ap.min(1.0);
        let ad = ad.min(1.0);
        let mut xz_aff = 0.0;
        for b in 0..nb {
            xz_aff += inner(&(&x[b] + &pred.dx[b] * ap), &(&z[b] + &pred.dz[b] * ad));
        }
        let mu_aff = xz_aff / total_dim as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        // Corrector: Λ(Dx + Dz) + (Dx + Dz)Λ = 2σμI − 2Λ² − (DxᵃDzᵃ + DzᵃDxᵃ).
        let t1: Vec<DMatrix<f64>> = (0..nb)
            .map(|b| {
                let sc = &scaling[b];
                let dxa = &sc.g_inv * &pred.dx[b] * sc.g_inv.transpose();
                let dza = sc.g.transpose() * &pred.dz[b] * &sc.g;
                let cross = &dxa * &dza + &dza * &dxa;
                let k = sc.lambda.len();
                let h = DMatrix::from_fn(k, k, |i, j| {
                    let mut r = -cross[(i, j)];
                    if i == j {
                        r += 2.0 * sigma * mu - 2.0 * sc.lambda[i] * sc.lambda[i];
                    }
                    r / (sc.lambda[i] + sc.lambda[j])
                });
                symmetrize(&(&sc.g * h * sc.g.transpose()))
            })
            .collect();
        let corr = solve_dir(&t1);
        let (Some(ap), Some(ad)) = (step_length(&x, &corr.dx), step_length(&z, &corr.dz)) else {
            return finish(best, iter, opts);
        };
        let tau = if iter < 3 { 0.9 } else { 0.98 };
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stall += 1;
            if stall > 3 {
                return finish(best, iter, opts);
            }
        } else {
            stall = 0;
        }
        for b in 0..nb {
            x[b] = symmetrize(&(&x[b] + &corr.dx[b] * ap));
            z[b] = symmetrize(&(&z[b] + &corr.dz[b] * ad));
        }
        y += &corr.dy * ad;
    }
    finish(best, opts.max_iters, opts)
}

// Jacobi-scaled factorisation of the Schur matrix with iterative refinement.
enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

struct SchurSolver {
    scale: DVector<f64>,
    scaled: DMatrix<f64>,
    factor: Factor,
}

impl SchurSolver {
    fn new(mut mm: DMatrix<f64>) -> Option<Self> {
        let m = mm.nrows();
        // Variables absent from every constraint get a unit pivot.
        for i in 0..m {
            if mm.row(i).iter().all(|v| *v == 0.0) {
                mm[(i, i)] = 1.0;
            }
        }
        let scale = DVector::from_fn(m, |i, _| {
            let d = mm[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        });
        let scaled = DMatrix::from_fn(m, m, |i, j| mm[(i, j)] * scale[i] * scale[j]);
        let factor = match scaled.clone().cholesky() {
            Some(c) => Factor::Chol(c),
            None => {
                let lu = scaled.clone().lu();
                if !lu.is_invertible() {
                    return None;
                }
                Factor::Lu(lu)
            }
        };
        Some(Self { scale, scaled, factor })
    }

    fn solve_scaled(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Chol(c) => c.solve(r),
            Factor::Lu(lu) => lu.solve(r).unwrap_or_else(|| DVector::zeros(r.len())),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let r = rhs.component_mul(&self.scale);
        let mut x = self.solve_scaled(&r);
        for _ in 0..2 {
            let res = &r - &self.scaled * &x;
            x += self.solve_scaled(&res);
        }
        x.component_mul(&self.scale)
    }
}

fn finish(best: Option<(f64, DVector<f64>)>, iterations: usize, _opts: &SolverOptions) -> RawResult {
    match best {
        Some((_, y)) => RawResult {
            status: SdpStatus::Optimal,
            y,
            iterations,
        },
        None => RawResult {
            status: SdpStatus::NumericalFailure,
            y: DVector::zeros(0),
            iterations,
        },
    }
}
