//! Plant, observer-based controller, watermark pairs and the closed loops
//! built from them.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interconnect::{Network, Source};
use crate::linalg;
use crate::lti::{self, StateSpace};

/// `x⁺ = A x + B u`, `y_p = C x`, `y_J = C_J x + D_J u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlant", into = "RawPlant")]
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    c_j: DMatrix<f64>,
    d_j: DMatrix<f64>,
}

impl Plant {
    /// Requires `(A, B)` controllable and `(C, A)` observable.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        c_j: DMatrix<f64>,
        d_j: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if c_j.ncols() != n || d_j.shape() != (c_j.nrows(), m) {
            return Err(Error::DimensionMismatch("performance output does not match the plant".into()));
        }
        // Validates A, B, C shapes and finiteness.
        StateSpace::new(a.clone(), b.clone(), c.clone(), DMatrix::zeros(c.nrows(), m))?;
        StateSpace::new(a.clone(), b.clone(), c_j.clone(), d_j.clone())?;
        if !lti::is_controllable(&a, &b) {
            return Err(Error::InvalidArgument("(A_p, B_p) is not controllable".into()));
        }
        if !lti::is_observable(&c, &a) {
            return Err(Error::InvalidArgument("(C_p, A_p) is not observable".into()));
        }
        if d_j.iter().any(|v| *v != 0.0) {
            log::warn!("plant has a nonzero performance feedthrough D_J");
        }
        Ok(Self { a, b, c, c_j, d_j })
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
    pub fn c_j(&self) -> &DMatrix<f64> {
        &self.c_j
    }
    pub fn d_j(&self) -> &DMatrix<f64> {
        &self.d_j
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Measured output rows.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    /// Performance output rows.
    pub fn p_j(&self) -> usize {
        self.c_j.nrows()
    }

    /// `(A_p, B_p, [C_p; C_J], [0; D_J])`.
    pub fn ss(&self) -> StateSpace {
        let (p, pj, n, m) = (self.p(), self.p_j(), self.n(), self.m());
        let mut c = DMatrix::zeros(p + pj, n);
        c.view_mut((0, 0), (p, n)).copy_from(&self.c);
        c.view_mut((p, 0), (pj, n)).copy_from(&self.c_j);
        let mut d = DMatrix::zeros(p + pj, m);
        d.view_mut((p, 0), (pj, m)).copy_from(&self.d_j);
        StateSpace::new(self.a.clone(), self.b.clone(), c, d).expect("validated at construction")
    }

    /// Measured output channel `(A_p, B_p, C_p, 0)`.
    pub fn measured(&self) -> StateSpace {
        StateSpace::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            DMatrix::zeros(self.p(), self.m()),
        )
        .expect("validated at construction")
    }
}

#[derive(Serialize, Deserialize)]
struct RawPlant {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "CJ")]
    c_j: Vec<Vec<f64>>,
    #[serde(rename = "DJ", default)]
    d_j: Option<Vec<Vec<f64>>>,
}

impl TryFrom<RawPlant> for Plant {
    type Error = String;
    fn try_from(r: RawPlant) -> std::result::Result<Self, String> {
        let a = lti::rows_to_matrix(&r.a, 0)?;
        let b = lti::rows_to_matrix(&r.b, 0)?;
        let c = lti::rows_to_matrix(&r.c, a.nrows())?;
        let c_j = lti::rows_to_matrix(&r.c_j, a.nrows())?;
        let d_j = match r.d_j {
            Some(rows) => lti::rows_to_matrix(&rows, b.ncols())?,
            None => DMatrix::zeros(c_j.nrows(), b.ncols()),
        };
        Plant::new(a, b, c, c_j, d_j).map_err(|e| e.to_string())
    }
}

impl From<Plant> for RawPlant {
    fn from(p: Plant) -> Self {
        RawPlant {
            a: lti::matrix_to_rows(&p.a),
            b: lti::matrix_to_rows(&p.b),
            c: lti::matrix_to_rows(&p.c),
            c_j: lti::matrix_to_rows(&p.c_j),
            d_j: Some(lti::matrix_to_rows(&p.d_j)),
        }
    }
}

/// `x̂⁺ = A_p x̂ + B_c u_c + L y_r`, `u_c = K x̂`, `y_r = y_q − C_p x̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawController", into = "RawController")]
pub struct Controller {
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// Defaults to `B_p` when absent.
    pub b_c: Option<DMatrix<f64>>,
}

impl Controller {
    pub fn new(k: DMatrix<f64>, l: DMatrix<f64>) -> Self {
        Self { k, l, b_c: None }
    }

    fn check(&self, plant: &Plant) -> Result<DMatrix<f64>> {
        let (n, m, p) = (plant.n(), plant.m(), plant.p());
        if self.k.shape() != (m, n) || self.l.shape() != (n, p) {
            return Err(Error::DimensionMismatch("controller gains do not match the plant".into()));
        }
        let b_c = self.b_c.clone().unwrap_or_else(|| plant.b.clone());
        if b_c.shape() != (n, m) {
            return Err(Error::DimensionMismatch("B_c does not match the plant".into()));
        }
        let rho = linalg::spectral_radius(&(plant.a() + plant.b() * &self.k));
        if rho >= 1.0 - lti::STABILITY_MARGIN {
            return Err(Error::UnstableGain {
                which: "A_p + B_p K",
                radius: rho,
            });
        }
        let rho = linalg::spectral_radius(&(plant.a() - &self.l * plant.c()));
        if rho >= 1.0 - lti::STABILITY_MARGIN {
            return Err(Error::UnstableGain {
                which: "A_p - L C_p",
                radius: rho,
            });
        }
        Ok(b_c)
    }
}

#[derive(Serialize, Deserialize)]
struct RawController {
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    #[serde(rename = "Bc", default, skip_serializing_if = "Option::is_none")]
    b_c: Option<Vec<Vec<f64>>>,
}

impl TryFrom<RawController> for Controller {
    type Error = String;
    fn try_from(r: RawController) -> std::result::Result<Self, String> {
        let k = lti::rows_to_matrix(&r.k, 0)?;
        let l = lti::rows_to_matrix(&r.l, 0)?;
        let b_c = match r.b_c {
            Some(rows) => Some(lti::rows_to_matrix(&rows, k.nrows())?),
            None => None,
        };
        if k.iter().chain(l.iter()).any(|v| !v.is_finite()) {
            return Err("controller gains must be finite".into());
        }
        Ok(Controller { k, l, b_c })
    }
}

impl From<Controller> for RawController {
    fn from(c: Controller) -> Self {
        RawController {
            k: lti::matrix_to_rows(&c.k),
            l: lti::matrix_to_rows(&c.l),
            b_c: c.b_c.as_ref().map(lti::matrix_to_rows),
        }
    }
}

/// A remover and the generator obtained by exact inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair", into = "RawPair")]
pub struct WatermarkPair {
    remover: StateSpace,
    generator: StateSpace,
}

impl WatermarkPair {
    /// The remover must be stable and square with invertible feedthrough.
    pub fn new(remover: StateSpace) -> Result<Self> {
        let radius = remover.spectral_radius();
        if remover.n() > 0 && radius >= 1.0 - lti::STABILITY_MARGIN {
            return Err(Error::UnstableRemover { radius });
        }
        let generator = remover.invert()?;
        Ok(Self { remover, generator })
    }

    /// Inverts `remover` without the stability check.
    pub(crate) fn unchecked(remover: StateSpace) -> Result<Self> {
        let generator = remover.invert()?;
        Ok(Self { remover, generator })
    }

    /// Pass-through pair used for the loop without watermarking.
    pub fn identity(dim: usize) -> Self {
        Self {
            remover: StateSpace::identity(dim),
            generator: StateSpace::identity(dim),
        }
    }

    pub fn remover(&self) -> &StateSpace {
        &self.remover
    }
    pub fn generator(&self) -> &StateSpace {
        &self.generator
    }
    pub fn dim(&self) -> usize {
        self.remover.m()
    }
}

#[derive(Serialize, Deserialize)]
struct RawPair {
    remover: StateSpace,
    #[serde(default, skip_deserializing)]
    generator: Option<StateSpace>,
}

impl TryFrom<RawPair> for WatermarkPair {
    type Error = String;
    fn try_from(r: RawPair) -> std::result::Result<Self, String> {
        WatermarkPair::new(r.remover).map_err(|e| e.to_string())
    }
}

impl From<WatermarkPair> for RawPair {
    fn from(p: WatermarkPair) -> Self {
        RawPair {
            remover: p.remover,
            generator: Some(p.generator),
        }
    }
}

/// Builds a pair from remover matrices `(A_s, B_s, C̄_s, D̄_s)`.
pub fn make_watermark_pair(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
) -> Result<WatermarkPair> {
    WatermarkPair::new(StateSpace::new(a, b, c, d)?)
}

/// How the attack enters the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Attack input is `φ_u`; `φ_y` comes from an embedded plant copy.
    Covert,
    /// Attack input is `[φ_u; φ_y]`.
    Generic,
}

/// Named signals available from a loop beyond `y₁` and `y₂`.
pub const MONITOR_SIGNALS: [&str; 6] = ["y_r", "y_J", "u_c", "u_h", "y_p", "y_q"];

/// Attacked closed loop with outputs `[y₁; y₂]`.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    ss: StateSpace,
    rows_y1: usize,
    rows_y2: usize,
    layout: Vec<(String, usize)>,
    mode: AttackMode,
    monitor: StateSpace,
    monitor_rows: Vec<(String, usize)>,
}

impl ClosedLoop {
    /// Wraps an arbitrary system whose first `rows_y1` outputs form `y₁`.
    pub fn from_parts(ss: StateSpace, rows_y1: usize) -> Result<Self> {
        if rows_y1 > ss.p() {
            return Err(Error::DimensionMismatch("rows_y1 exceeds output count".into()));
        }
        let rows_y2 = ss.p() - rows_y1;
        let layout = vec![("x".to_string(), ss.n())];
        let monitor_rows = vec![("y_1".to_string(), rows_y1), ("y_2".to_string(), rows_y2)];
        Ok(Self {
            monitor: ss.clone(),
            ss,
            rows_y1,
            rows_y2,
            layout,
            mode: AttackMode::Generic,
            monitor_rows,
        })
    }

    pub fn ss(&self) -> &StateSpace {
        &self.ss
    }
    pub fn rows_y1(&self) -> usize {
        self.rows_y1
    }
    pub fn rows_y2(&self) -> usize {
        self.rows_y2
    }
    pub fn mode(&self) -> AttackMode {
        self.mode
    }
    pub fn state_layout(&self) -> &[(String, usize)] {
        &self.layout
    }

    /// State index range of a named block.
    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        let mut off = 0;
        for (n, s) in &self.layout {
            if n == name {
                return Some(off..off + s);
            }
            off += s;
        }
        None
    }

    pub fn c1(&self) -> DMatrix<f64> {
        self.ss.c().rows(0, self.rows_y1).into_owned()
    }
    pub fn d1(&self) -> DMatrix<f64> {
        self.ss.d().rows(0, self.rows_y1).into_owned()
    }
    pub fn c2(&self) -> DMatrix<f64> {
        self.ss.c().rows(self.rows_y1, self.rows_y2).into_owned()
    }
    pub fn d2(&self) -> DMatrix<f64> {
        self.ss.d().rows(self.rows_y1, self.rows_y2).into_owned()
    }

    /// `(A, B, C₁, D₁)`.
    pub fn residual_channel(&self) -> StateSpace {
        StateSpace::new(self.ss.a().clone(), self.ss.b().clone(), self.c1(), self.d1()).expect("sub-block")
    }

    /// `(A, B, C₂, D₂)`.
    pub fn performance_channel(&self) -> StateSpace {
        StateSpace::new(self.ss.a().clone(), self.ss.b().clone(), self.c2(), self.d2()).expect("sub-block")
    }

    /// System sharing `(A, B)` whose outputs are the monitored signals.
    pub fn monitor(&self) -> &StateSpace {
        &self.monitor
    }

    /// Monitored signal names with their row counts, in output order.
    pub fn monitor_rows(&self) -> &[(String, usize)] {
        &self.monitor_rows
    }

    /// Output rows of a monitored signal.
    pub fn monitor_range(&self, name: &str) -> Option<Range<usize>> {
        let mut off = 0;
        for (n, s) in &self.monitor_rows {
            if n == name {
                return Some(off..off + s);
            }
            off += s;
        }
        None
    }
}

fn block_gain(rows: usize, cols: usize, row_off: usize, col_off: usize, size: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(rows, cols);
    for i in 0..size {
        g[(row_off + i, col_off + i)] = 1.0;
    }
    g
}

/// Loop without watermarking and with the generic attack `[φ_u; φ_y]`.
/// State is `[x_p, e]` with `e = x_p − x̂_p`.
pub fn assemble_nominal(plant: &Plant, controller: &Controller) -> Result<ClosedLoop> {
    let id_in = WatermarkPair::identity(plant.m());
    let id_out = WatermarkPair::identity(plant.p());
    assemble_watermarked(plant, controller, &id_in, &id_out, AttackMode::Generic)
}

/// Signal path `u_c → G → (+φ_u) → H → plant → W → (+φ_y) → Q → observer`.
/// State is `[x_p, e, x_g, x_h, x_w, x_q, x_a]`, with `x_a` present only in
/// covert mode.
pub fn assemble_watermarked(
    plant: &Plant,
    controller: &Controller,
    input_pair: &WatermarkPair,
    output_pair: &WatermarkPair,
    mode: AttackMode,
) -> Result<ClosedLoop> {
    let b_c = controller.check(plant)?;
    let (n, m, p, pj) = (plant.n(), plant.m(), plant.p(), plant.p_j());
    if input_pair.dim() != m || output_pair.dim() != p {
        return Err(Error::DimensionMismatch("watermark pair sizes do not match the plant".into()));
    }
    let ext = match mode {
        AttackMode::Covert => m,
        AttackMode::Generic => m + p,
    };

    // Observer with input y_q and outputs [u_c; y_r].
    let obs_a = plant.a() + &b_c * &controller.k - &controller.l * plant.c();
    let mut obs_c = DMatrix::zeros(m + p, n);
    obs_c.view_mut((0, 0), (m, n)).copy_from(&controller.k);
    obs_c.view_mut((m, 0), (p, n)).copy_from(&(-plant.c()));
    let observer = StateSpace::new(obs_a, controller.l.clone(), obs_c, block_gain(m + p, p, m, 0, p))?;

    let mut net = Network::new(ext);
    let np = net.add("x_p", plant.ss());
    let nc = net.add("e", observer);
    let ng = net.add("x_g", input_pair.generator().clone());
    let nh = net.add("x_h", input_pair.remover().clone());
    let nw = net.add("x_w", output_pair.generator().clone());
    let nq = net.add("x_q", output_pair.remover().clone());
    let na = match mode {
        AttackMode::Covert => {
            let attacker = StateSpace::new(
                plant.a().clone(),
                plant.b().clone(),
                -plant.c(),
                DMatrix::zeros(p, m),
            )?;
            Some(net.add("x_a", attacker))
        }
        AttackMode::Generic => None,
    };

    let obs_uc = block_gain(m, m + p, 0, 0, m);
    let plant_yp = block_gain(p, p + pj, 0, 0, p);
    net.feed(ng, Source::output(nc, obs_uc))?;
    net.feed(nh, Source::output(ng, DMatrix::identity(m, m)))?;
    net.feed(nh, Source::external(block_gain(m, ext, 0, 0, m)))?;
    net.feed(np, Source::output(nh, DMatrix::identity(m, m)))?;
    net.feed(nw, Source::output(np, plant_yp))?;
    net.feed(nq, Source::output(nw, DMatrix::identity(p, p)))?;
    match na {
        Some(na) => {
            net.feed(na, Source::external(DMatrix::identity(m, m)))?;
            net.feed(nq, Source::output(na, DMatrix::identity(p, p)))?;
        }
        None => net.feed(nq, Source::external(block_gain(p, ext, 0, m, p)))?,
    }
    net.feed(nc, Source::output(nq, DMatrix::identity(p, p)))?;

    // Monitored outputs: y_r, y_J, u_c, u_h, y_p, y_q.
    let rows = [p, pj, m, m, p, p];
    let total: usize = rows.iter().sum();
    let offs: Vec<usize> = rows
        .iter()
        .scan(0, |acc, r| {
            let o = *acc;
            *acc += r;
            Some(o)
        })
        .collect();
    let mut g = DMatrix::zeros(total, m + p);
    g.view_mut((offs[0], 0), (p, m + p)).copy_from(&block_gain(p, m + p, 0, m, p));
    g.view_mut((offs[2], 0), (m, m + p)).copy_from(&block_gain(m, m + p, 0, 0, m));
    net.output(Source::output(nc, g))?;
    let mut g = DMatrix::zeros(total, p + pj);
    g.view_mut((offs[1], 0), (pj, p + pj)).copy_from(&block_gain(pj, p + pj, 0, p, pj));
    g.view_mut((offs[4], 0), (p, p + pj)).copy_from(&block_gain(p, p + pj, 0, 0, p));
    net.output(Source::output(np, g))?;
    net.output(Source::output(nh, block_gain(total, m, offs[3], 0, m)))?;
    net.output(Source::output(nq, block_gain(total, p, offs[5], 0, p)))?;

    let composite = net.build()?;
    let natural = composite.ss;

    // Change of coordinates x̂ → e = x_p − x̂ (an involution).
    let nx = natural.n();
    let mut t = DMatrix::<f64>::identity(nx, nx);
    for i in 0..n {
        t[(n + i, n + i)] = -1.0;
        t[(n + i, i)] = 1.0;
    }
    let monitor = StateSpace::new(
        &t * natural.a() * &t,
        &t * natural.b(),
        natural.c() * &t,
        natural.d().clone(),
    )?;
    let ss = monitor.select_outputs(&(0..p + pj).collect::<Vec<_>>())?;
    let monitor_rows = MONITOR_SIGNALS
        .iter()
        .zip(rows)
        .map(|(s, r)| (s.to_string(), r))
        .collect();
    Ok(ClosedLoop {
        ss,
        rows_y1: p,
        rows_y2: pj,
        layout: composite.layout,
        mode,
        monitor,
        monitor_rows,
    })
}

/// Attack channel from `φ_u` to `W(P(H φ_u)) − P(φ_u)`, with state
/// `[x_h, x_p, x_w, x_a]`.
pub fn assemble_attack_channel(
    input_pair: &WatermarkPair,
    plant: &Plant,
    output_pair: &WatermarkPair,
) -> Result<StateSpace> {
    let (m, p) = (plant.m(), plant.p());
    if input_pair.dim() != m || output_pair.dim() != p {
        return Err(Error::DimensionMismatch("watermark pair sizes do not match the plant".into()));
    }
    let mut net = Network::new(m);
    let nh = net.add("x_h", input_pair.remover().clone());
    let np = net.add("x_p", plant.measured());
    let nw = net.add("x_w", output_pair.generator().clone());
    let na = net.add("x_a", plant.measured());
    net.feed(nh, Source::external(DMatrix::identity(m, m)))?;
    net.feed(np, Source::output(nh, DMatrix::identity(m, m)))?;
    net.feed(nw, Source::output(np, DMatrix::identity(p, p)))?;
    net.feed(na, Source::external(DMatrix::identity(m, m)))?;
    net.output(Source::output(nw, DMatrix::identity(p, p)))?;
    net.output(Source::output(na, -DMatrix::identity(p, p)))?;
    Ok(net.build()?.ss)
}
