//! Alternating LMI design of watermark remover parameters.
//!
//! The remover output maps `C̄_s`, `D̄_s` stay fixed, which makes the closed
//! loop affine in the free entries of `A_s` and `B_s`. Each iteration fixes
//! the storage matrix `P` and minimises γ over the remover parameters, then
//! re-optimises `P` at the new parameters.
//!
//! The design model equalises the relative degree of every monitored row with
//! delay chains and appends `δ·a` to the residual output so that the
//! dissipation LMI is regular. Reported gains are always recomputed with
//! [`compute_oog`] on the exact loop.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cps::{assemble_watermarked, AttackMode, ClosedLoop, Controller, Plant, WatermarkPair};
use crate::error::{Error, Result};
use crate::linalg::{self, dlyap};
use crate::lti::{self, StateSpace};
use crate::oog::{align_outputs, boundedness_check, compute_oog, storage_form, OogStatus};
use crate::sdp::{AffineExpr, LmiProblem, SdpStatus, Var, DEFAULT_STRICTNESS};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_REGULARIZATION: f64 = 1e-3;
pub const DEFAULT_RADIUS_BOUND: f64 = 0.95;
pub const DEFAULT_PARAM_BOUND: f64 = 10.0;

const AFFINE_TOL: f64 = 1e-9;
const RADIUS_SLACK: f64 = 1e-6;
const MAX_EXTRAPOLATION: u32 = 30;

/// Which remover blocks are decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeMask {
    #[serde(rename = "A")]
    pub a: bool,
    #[serde(rename = "B")]
    pub b: bool,
}

impl Default for FreeMask {
    fn default() -> Self {
        Self { a: true, b: true }
    }
}

impl FreeMask {
    pub const NONE: FreeMask = FreeMask { a: false, b: false };
    pub const A_ONLY: FreeMask = FreeMask { a: true, b: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub input_mask: FreeMask,
    pub output_mask: FreeMask,
    pub strictness: f64,
    /// Weight `δ` of the attack row appended to the residual in the design model.
    pub regularization: f64,
    /// Spectral radius allowed for removers and repaired generators.
    pub radius_bound: f64,
    /// Box on every free parameter; `None` leaves them unbounded.
    pub param_bound: Option<f64>,
    pub mode: AttackMode,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            input_mask: FreeMask::default(),
            output_mask: FreeMask::default(),
            strictness: DEFAULT_STRICTNESS,
            regularization: DEFAULT_REGULARIZATION,
            radius_bound: DEFAULT_RADIUS_BOUND,
            param_bound: Some(DEFAULT_PARAM_BOUND),
            mode: AttackMode::Covert,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if !(self.strictness >= 0.0) || !(self.regularization > 0.0) {
            return Err(Error::InvalidArgument("strictness and regularization must be positive".into()));
        }
        if !(self.radius_bound > 0.0 && self.radius_bound < 1.0) {
            return Err(Error::InvalidArgument("radius_bound must lie in (0, 1)".into()));
        }
        if let Some(b) = self.param_bound {
            if !(b > 0.0) {
                return Err(Error::InvalidArgument("param_bound must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    Converged,
    MaxIters,
    InfeasibleAtInit,
    StepFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub input_pair: WatermarkPair,
    pub output_pair: WatermarkPair,
    /// Design-model γ after every accepted iteration, starting at the initial pairs.
    pub gamma_trace: Vec<f64>,
    /// Exact gain of the final loop.
    pub gamma: f64,
    /// Exact gain of the initial loop.
    pub gamma_initial: f64,
    #[serde(rename = "P", serialize_with = "crate::io::ser_matrix")]
    pub p: DMatrix<f64>,
    pub certificate_status: OogStatus,
    pub certificate_residual: f64,
    pub iterations: usize,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl DesignReport {
    /// CSV with header `iter,gamma`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["iter", "gamma"]).map_err(io_err)?;
        for (k, g) in self.gamma_trace.iter().enumerate() {
            w.write_record([k.to_string(), crate::io::fmt_f64(*g)]).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    A,
    B,
}

#[derive(Debug, Clone, Copy)]
struct Param {
    side: Side,
    block: Block,
    row: usize,
    col: usize,
}

/// Result of the storage step.
#[derive(Debug, Clone)]
pub struct PStep {
    pub p: DMatrix<f64>,
    pub gamma: f64,
}

/// Result of the watermark step.
#[derive(Debug, Clone)]
pub struct WStep {
    pub theta: Vec<f64>,
    pub gamma: f64,
}

/// Affine model `S(θ) = S₀ + Σ θᵢ Sᵢ` of the design system `[A B; C D]`.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    plant: Plant,
    controller: Controller,
    mode: AttackMode,
    config: DesignConfig,
    base_input: StateSpace,
    base_output: StateSpace,
    params: Vec<Param>,
    theta0: Vec<f64>,
    delays: Vec<usize>,
    rows_y1: usize,
    n: usize,
    m: usize,
    s0: DMatrix<f64>,
    slopes: Vec<DMatrix<f64>>,
}

fn collect_params(side: Side, remover: &StateSpace, mask: FreeMask) -> (Vec<Param>, Vec<f64>) {
    let mut params = Vec::new();
    let mut values = Vec::new();
    let blocks = [(Block::A, mask.a, remover.a()), (Block::B, mask.b, remover.b())];
    for (block, free, mat) in blocks {
        if !free {
            continue;
        }
        for row in 0..mat.nrows() {
            for col in 0..mat.ncols() {
                params.push(Param { side, block, row, col });
                values.push(mat[(row, col)]);
            }
        }
    }
    (params, values)
}

/// Appends delay chains so that row `i` of `ss` is delayed by `delays[i]`, then
/// appends `δ·I` rows right after the first `rows_y1` outputs.
fn design_system(ss: &StateSpace, rows_y1: usize, delays: &[usize], delta: f64) -> DMatrix<f64> {
    let (n, m, p) = (ss.n(), ss.m(), ss.p());
    let extra: usize = delays.iter().sum();
    let nn = n + extra;
    let pp = p + m;
    let mut s = DMatrix::zeros(nn + pp, nn + m);
    s.view_mut((0, 0), (n, n)).copy_from(ss.a());
    s.view_mut((0, nn), (n, m)).copy_from(ss.b());
    let mut off = n;
    for i in 0..p {
        let out_row = if i < rows_y1 { nn + i } else { nn + m + i };
        let d = delays[i];
        if d == 0 {
            s.view_mut((out_row, 0), (1, n)).copy_from(&ss.c().row(i));
            s.view_mut((out_row, nn), (1, m)).copy_from(&ss.d().row(i));
            continue;
        }
        s.view_mut((off, 0), (1, n)).copy_from(&ss.c().row(i));
        s.view_mut((off, nn), (1, m)).copy_from(&ss.d().row(i));
        for j in 1..d {
            s[(off + j, off + j - 1)] = 1.0;
        }
        s[(out_row, off + d - 1)] = 1.0;
        off += d;
    }
    for j in 0..m {
        s[(nn + rows_y1 + j, nn + j)] = delta;
    }
    s
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        0.0
    } else {
        linalg::spectral_radius(a)
    }
}

impl DesignProblem {
    pub fn new(
        plant: &Plant,
        controller: &Controller,
        input_pair: &WatermarkPair,
        output_pair: &WatermarkPair,
        config: &DesignConfig,
    ) -> Result<Self> {
        config.validate()?;
        for (pair, name) in [(input_pair, "input"), (output_pair, "output")] {
            let r = pair.remover().spectral_radius();
            if pair.remover().n() > 0 && r >= 1.0 - lti::STABILITY_MARGIN {
                return Err(Error::UnstableRemover { radius: r });
            }
            let g = pair.generator().spectral_radius();
            if pair.generator().n() > 0 && g >= 1.0 - lti::STABILITY_MARGIN {
                log::warn!("{name} generator has spectral radius {g}");
                return Err(Error::UnstableGenerator { radius: g });
            }
        }
        let (mut params, mut theta0) = collect_params(Side::Input, input_pair.remover(), config.input_mask);
        let (p_out, t_out) = collect_params(Side::Output, output_pair.remover(), config.output_mask);
        params.extend(p_out);
        theta0.extend(t_out);

        let loop0 = assemble_watermarked(plant, controller, input_pair, output_pair, config.mode)?;
        let shifts = align_outputs(loop0.ss()).shifts;
        let top = shifts.iter().flatten().copied().max().unwrap_or(0);
        let delays: Vec<usize> = shifts.iter().map(|s| s.map_or(0, |r| top - r)).collect();
        let m = loop0.ss().m();

        let mut prob = Self {
            plant: plant.clone(),
            controller: controller.clone(),
            mode: config.mode,
            config: config.clone(),
            base_input: input_pair.remover().clone(),
            base_output: output_pair.remover().clone(),
            params,
            theta0,
            delays,
            rows_y1: loop0.rows_y1() + m,
            n: loop0.ss().n(),
            m,
            s0: DMatrix::zeros(0, 0),
            slopes: Vec::new(),
        };
        prob.n += prob.delays.iter().sum::<usize>();

        let zero = vec![0.0; prob.params.len()];
        prob.s0 = prob.exact_system(&zero)?;
        for i in 0..prob.params.len() {
            let mut e = zero.clone();
            e[i] = 1.0;
            prob.slopes.push(prob.exact_system(&e)? - &prob.s0);
        }
        let exact = prob.exact_system(&prob.theta0)?;
        let err = (&exact - prob.system(&prob.theta0)).amax();
        if err > AFFINE_TOL * (1.0 + exact.amax()) {
            return Err(Error::NumericalFailure(format!(
                "loop is not affine in the free parameters (deviation {err:e})"
            )));
        }
        let n = prob.n;
        for (i, s) in prob.slopes.iter().enumerate() {
            if s.rows(n, s.nrows() - n).amax() > AFFINE_TOL {
                return Err(Error::InvalidArgument(format!(
                    "monitored outputs depend on free parameter {i}; fix C and D of the remover"
                )));
            }
        }
        Ok(prob)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn initial_theta(&self) -> &[f64] {
        &self.theta0
    }

    fn removers(&self, theta: &[f64]) -> Result<(StateSpace, StateSpace)> {
        if theta.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                theta.len()
            )));
        }
        let mut mats = [
            (self.base_input.a().clone(), self.base_input.b().clone()),
            (self.base_output.a().clone(), self.base_output.b().clone()),
        ];
        for (p, v) in self.params.iter().zip(theta) {
            let k = match p.side {
                Side::Input => 0,
                Side::Output => 1,
            };
            match p.block {
                Block::A => mats[k].0[(p.row, p.col)] = *v,
                Block::B => mats[k].1[(p.row, p.col)] = *v,
            }
        }
        let [(ai, bi), (ao, bo)] = mats;
        Ok((
            StateSpace::new(ai, bi, self.base_input.c().clone(), self.base_input.d().clone())?,
            StateSpace::new(ao, bo, self.base_output.c().clone(), self.base_output.d().clone())?,
        ))
    }

    fn unchecked_pairs(&self, theta: &[f64]) -> Result<(WatermarkPair, WatermarkPair)> {
        let (ri, ro) = self.removers(theta)?;
        Ok((WatermarkPair::unchecked(ri)?, WatermarkPair::unchecked(ro)?))
    }

    /// Validated pairs at `theta`.
    pub fn pairs(&self, theta: &[f64]) -> Result<(WatermarkPair, WatermarkPair)> {
        let (ri, ro) = self.removers(theta)?;
        Ok((WatermarkPair::new(ri)?, WatermarkPair::new(ro)?))
    }

    /// Exact closed loop at `theta`.
    pub fn closed_loop(&self, theta: &[f64]) -> Result<ClosedLoop> {
        let (pi, po) = self.unchecked_pairs(theta)?;
        assemble_watermarked(&self.plant, &self.controller, &pi, &po, self.mode)
    }

    fn exact_system(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let cl = self.closed_loop(theta)?;
        Ok(design_system(cl.ss(), cl.rows_y1(), &self.delays, self.config.regularization))
    }

    fn system(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut s = self.s0.clone();
        for (t, si) in theta.iter().zip(&self.slopes) {
            s += si * *t;
        }
        s
    }

    fn split(&self, s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.n, self.m);
        let a = s.view((0, 0), (n, n)).into_owned();
        let b = s.view((0, n), (n, m)).into_owned();
        let p = s.nrows() - n;
        let mut n1 = DMatrix::zeros(self.rows_y1, n + m);
        n1.copy_from(&s.view((n, 0), (self.rows_y1, n + m)));
        let n2 = s.view((n + self.rows_y1, 0), (p - self.rows_y1, n + m)).into_owned();
        (a, b, n1, n2)
    }

    /// Radius imposed on a filter whose incumbent radius is `r`.
    fn radius_limit(&self, r: f64) -> f64 {
        if r < self.config.radius_bound {
            self.config.radius_bound
        } else {
            r + RADIUS_SLACK
        }
    }

    /// Spectral radii of (input remover, input generator, output remover, output generator).
    fn radii(&self, theta: &[f64]) -> Result<[f64; 4]> {
        let (pi, po) = self.unchecked_pairs(theta)?;
        Ok([
            spectral_radius(pi.remover().a()),
            spectral_radius(pi.generator().a()),
            spectral_radius(po.remover().a()),
            spectral_radius(po.generator().a()),
        ])
    }

    /// Minimises γ over the storage matrix with the watermark frozen at `theta`.
    pub fn p_step(&self, theta: &[f64]) -> Result<PStep> {
        let verdict = boundedness_check(&self.closed_loop(theta)?)?;
        if !verdict.is_bounded() {
            return Err(Error::StepInfeasible(format!("loop gain is unbounded: {verdict:?}")));
        }
        let (a, b, n1, n2) = self.split(&self.system(theta));
        let n = self.n;
        let q1 = n1.transpose() * &n1;
        let q2 = n2.transpose() * &n2;
        let mut prob = LmiProblem::new().with_strictness(self.config.strictness);
        let pv = prob.symmetric("P", n);
        let gv = prob.scalar("gamma");
        prob.minimize(gv, 1.0);
        prob.psd("P > 0", AffineExpr::zeros(n).add_linear(pv, |e| e.clone()), true);
        prob.psd("gamma > 0", AffineExpr::zeros(1).add_scalar(gv, &DMatrix::from_element(1, 1, 1.0)), true);
        let lmi = AffineExpr::constant(q2)
            .add_scalar(gv, &(-q1))
            .add_linear(pv, |e| storage_form(&a, &b, e));
        prob.nsd("dissipation", lmi, false);
        let sol = prob.solve();
        if sol.status != SdpStatus::Optimal {
            return Err(Error::StepInfeasible(format!("storage step returned {:?}", sol.status)));
        }
        Ok(PStep {
            p: sol.matrix(pv),
            gamma: sol.scalar(gv),
        })
    }

    /// Minimises γ over the free parameters with `P` frozen.
    pub fn w_step(&self, theta: &[f64], p: &DMatrix<f64>) -> Result<WStep> {
        if p.shape() != (self.n, self.n) {
            return Err(Error::DimensionMismatch("storage matrix has the wrong size".into()));
        }
        if self.params.is_empty() {
            let gamma = self.p_step(theta)?.gamma;
            return Ok(WStep {
                theta: theta.to_vec(),
                gamma,
            });
        }
        let radii = self.radii(theta)?;
        let first = self.solve_w(theta, p, &radii, false)?;
        let new_radii = self.radii(&first.theta)?;
        let limit = 1.0 - lti::STABILITY_MARGIN;
        if new_radii[1] < limit && new_radii[3] < limit {
            return Ok(first);
        }
        log::debug!("generator radius {:?} after watermark step, re-solving", new_radii);
        let second = self.solve_w(theta, p, &radii, true)?;
        let r = self.radii(&second.theta)?;
        let worst = r[1].max(r[3]);
        if worst >= limit {
            return Err(Error::UnstableGenerator { radius: worst });
        }
        Ok(second)
    }

    fn solve_w(&self, theta: &[f64], p: &DMatrix<f64>, radii: &[f64; 4], with_generator: bool) -> Result<WStep> {
        let (n, m, k) = (self.n, self.m, self.params.len());
        let s0 = self.system(&vec![0.0; k]);
        let (a0, b0, n1, n2) = self.split(&s0);
        let size = 2 * n + m;
        let embed = |g: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(size, size);
            out.view_mut((0, 0), (n + m, n + m)).copy_from(g);
            out
        };
        let coupling = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(size, size);
            let pa = p * a;
            let pb = p * b;
            out.view_mut((n + m, 0), (n, n)).copy_from(&pa);
            out.view_mut((n + m, n), (n, m)).copy_from(&pb);
            out.view_mut((0, n + m), (n, n)).copy_from(&pa.transpose());
            out.view_mut((n, n + m), (m, n)).copy_from(&pb.transpose());
            out
        };
        let mut g0 = coupling(&a0, &b0) + embed(&(n2.transpose() * &n2));
        {
            let mut top = g0.view_mut((0, 0), (n, n));
            top -= p;
        }
        {
            let mut bottom = g0.view_mut((n + m, n + m), (n, n));
            bottom -= p;
        }

        let mut prob = LmiProblem::new().with_strictness(self.config.strictness);
        let gv = prob.scalar("gamma");
        let tv: Vec<_> = (0..k).map(|i| prob.scalar(&format!("theta_{i}"))).collect();
        prob.minimize(gv, 1.0);
        let mut lmi = AffineExpr::constant(g0).add_scalar(gv, &(-embed(&(n1.transpose() * &n1))));
        for (i, v) in tv.iter().enumerate() {
            let (ai, bi, _, _) = self.split(&self.slopes[i]);
            lmi = lmi.add_scalar(*v, &coupling(&ai, &bi));
        }
        prob.nsd("dissipation", lmi, false);
        prob.psd("gamma > 0", AffineExpr::zeros(1).add_scalar(gv, &DMatrix::from_element(1, 1, 1.0)), true);
        if let Some(bound) = self.config.param_bound {
            let one = DMatrix::from_element(1, 1, 1.0);
            for (i, v) in tv.iter().enumerate() {
                let c = DMatrix::from_element(1, 1, -bound);
                prob.nsd(&format!("theta_{i} <= bound"), AffineExpr::constant(c.clone()).add_scalar(*v, &one), false);
                prob.nsd(&format!("theta_{i} >= -bound"), AffineExpr::constant(c).add_scalar(*v, &(-&one)), false);
            }
        }

        let (rem_i, rem_o) = self.removers(theta)?;
        let (gen_i, gen_o) = (rem_i.invert()?, rem_o.invert()?);
        let sides = [(Side::Input, &rem_i, &gen_i, radii[0], radii[1]), (Side::Output, &rem_o, &gen_o, radii[2], radii[3])];
        for (side, rem, gen, r_rem, r_gen) in sides {
            let idx: Vec<usize> = (0..k).filter(|i| self.params[*i].side == side).collect();
            if idx.is_empty() || rem.n() == 0 {
                continue;
            }
            // A_s(θ) and the generator state matrix A_s − B_s D̄⁻¹ C̄ are affine in θ.
            let dinv_c = rem.d().clone().try_inverse().ok_or_else(|| {
                Error::NonInvertibleFeedthrough {
                    condition: f64::INFINITY,
                }
            })? * rem.c();
            let mut terms_rem = Vec::new();
            let mut terms_gen = Vec::new();
            for &i in &idx {
                let prm = self.params[i];
                let ns = rem.n();
                match prm.block {
                    Block::A => {
                        let mut e = DMatrix::zeros(ns, ns);
                        e[(prm.row, prm.col)] = 1.0;
                        terms_rem.push((tv[i], e.clone()));
                        terms_gen.push((tv[i], e));
                    }
                    Block::B => {
                        let mut e = DMatrix::zeros(ns, rem.m());
                        e[(prm.row, prm.col)] = 1.0;
                        terms_gen.push((tv[i], -(e * &dinv_c)));
                    }
                }
            }
            let mut a_fixed = rem.a().clone();
            let mut b_fixed = rem.b().clone();
            for &i in &idx {
                let prm = self.params[i];
                match prm.block {
                    Block::A => a_fixed[(prm.row, prm.col)] = 0.0,
                    Block::B => b_fixed[(prm.row, prm.col)] = 0.0,
                }
            }
            if !terms_rem.is_empty() {
                let rho = self.radius_limit(r_rem);
                prob.nsd("remover stability", stability_lmi(&a_fixed, rem.a(), &terms_rem, rho)?, false);
            }
            if with_generator {
                let rho = self.radius_limit(r_gen);
                let g_fixed = &a_fixed - &b_fixed * &dinv_c;
                prob.nsd("generator stability", stability_lmi(&g_fixed, gen.a(), &terms_gen, rho)?, false);
            }
        }

        let sol = prob.solve();
        if sol.status != SdpStatus::Optimal {
            return Err(Error::StepInfeasible(format!("watermark step returned {:?}", sol.status)));
        }
        Ok(WStep {
            theta: tv.iter().map(|v| sol.scalar(*v)).collect(),
            gamma: sol.scalar(gv),
        })
    }
}

/// `[−ρ²X, AᵀX; XA, −X] ⪯ 0` for `A = A_fixed + Σ θᵢ Eᵢ` with `X` frozen from
/// the incumbent `A_inc`.
fn stability_lmi(
    a_fixed: &DMatrix<f64>,
    a_inc: &DMatrix<f64>,
    terms: &[(Var, DMatrix<f64>)],
    rho: f64,
) -> Result<AffineExpr> {
    let ns = a_fixed.nrows();
    let x = dlyap(&(a_inc / rho), &DMatrix::identity(ns, ns))?;
    let x = &x / linalg::max_sym_eigenvalue(&x);
    let block = |a: &DMatrix<f64>, diag: bool| {
        let mut out = DMatrix::zeros(2 * ns, 2 * ns);
        let xa = &x * a;
        out.view_mut((ns, 0), (ns, ns)).copy_from(&xa);
        out.view_mut((0, ns), (ns, ns)).copy_from(&xa.transpose());
        if diag {
            out.view_mut((0, 0), (ns, ns)).copy_from(&(&x * (-rho * rho)));
            out.view_mut((ns, ns), (ns, ns)).copy_from(&(-&x));
        }
        out
    };
    let mut expr = AffineExpr::constant(block(a_fixed, true));
    for (v, e) in terms {
        expr = expr.add_scalar(*v, &block(e, false));
    }
    Ok(expr)
}

/// Alternates storage and watermark steps until γ settles.
pub fn run_algorithm1(
    plant: &Plant,
    controller: &Controller,
    input_pair: &WatermarkPair,
    output_pair: &WatermarkPair,
    config: &DesignConfig,
) -> Result<DesignReport> {
    let prob = DesignProblem::new(plant, controller, input_pair, output_pair, config)?;
    let exact_initial = compute_oog(&prob.closed_loop(prob.initial_theta())?)?;
    let mut theta = prob.initial_theta().to_vec();

    let mut incumbent = match prob.p_step(&theta) {
        Ok(ps) => ps,
        Err(Error::StepInfeasible(msg)) => {
            return finish(&prob, theta, Vec::new(), exact_initial.gamma, 0, Termination::InfeasibleAtInit, Some(msg));
        }
        Err(e) => return Err(e),
    };
    let mut trace = vec![incumbent.gamma];
    let mut termination = Termination::MaxIters;
    let mut message = None;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let ws = match prob.w_step(&theta, &incumbent.p) {
            Ok(ws) => ws,
            Err(e @ (Error::StepInfeasible(_) | Error::UnstableGenerator { .. })) => {
                termination = Termination::StepFailure;
                message = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let (mut cand_theta, mut cand) = match prob.p_step(&ws.theta) {
            Ok(ps) => (ws.theta.clone(), ps),
            Err(Error::StepInfeasible(msg)) => {
                termination = Termination::StepFailure;
                message = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        if !prob.params.is_empty() {
            extrapolate(&prob, &theta, &mut cand_theta, &mut cand)?;
        }
        let previous = incumbent.gamma;
        if cand.gamma <= previous {
            theta = cand_theta;
            incumbent = cand;
        }
        trace.push(incumbent.gamma);
        log::info!("iteration {iterations}: gamma {:.10e}", incumbent.gamma);
        if (incumbent.gamma - previous).abs() <= config.epsilon {
            termination = Termination::Converged;
            break;
        }
    }
    finish(&prob, theta, trace, exact_initial.gamma, iterations, termination, message)
}

/// Pushes the step direction further while the storage-step γ keeps dropping
/// and all filters stay within the radius bound.
fn extrapolate(prob: &DesignProblem, theta: &[f64], cand_theta: &mut Vec<f64>, cand: &mut PStep) -> Result<()> {
    let step: Vec<f64> = cand_theta.iter().zip(theta).map(|(c, t)| c - t).collect();
    let base = prob.radii(theta)?;
    let reached = prob.radii(cand_theta)?;
    let limits: Vec<f64> = base
        .iter()
        .zip(&reached)
        .map(|(b, r)| prob.radius_limit(*b).max(*r))
        .collect();
    for j in 1..=MAX_EXTRAPOLATION {
        let scale = 2f64.powi(j as i32);
        let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
        if let Some(bound) = prob.config.param_bound {
            if trial.iter().any(|v| v.abs() > bound) {
                break;
            }
        }
        let Ok(r) = prob.radii(&trial) else { break };
        if r.iter().zip(&limits).any(|(ri, li)| ri > li) {
            break;
        }
        match prob.p_step(&trial) {
            Ok(ps) if ps.gamma < cand.gamma => {
                *cand_theta = trial;
                *cand = ps;
            }
            _ => break,
        }
    }
    Ok(())
}

fn finish(
    prob: &DesignProblem,
    theta: Vec<f64>,
    trace: Vec<f64>,
    gamma_initial: f64,
    iterations: usize,
    termination: Termination,
    message: Option<String>,
) -> Result<DesignReport> {
    let (input_pair, output_pair) = prob.pairs(&theta)?;
    let cert = compute_oog(&prob.closed_loop(&theta)?)?;
    Ok(DesignReport {
        input_pair,
        output_pair,
        gamma_trace: trace,
        gamma: cert.gamma,
        gamma_initial,
        p: cert.p,
        certificate_status: cert.status,
        certificate_residual: cert.residual,
        iterations,
        termination,
        message,
    })
}
