//! Attack sequences, time-domain simulation, signal energies and the
//! residual-energy detector.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cps::{AttackMode, ClosedLoop, Plant};
use crate::error::{Error, Result};

/// States with a magnitude above this flag a divergent simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// `0` before onset, `1 − b^(k−K_a)` afterwards, with `0⁰ = 0`.
pub fn activation(k: usize, onset: usize, base: f64) -> f64 {
    if k < onset {
        return 0.0;
    }
    let e = k - onset;
    if base == 0.0 {
        return 1.0;
    }
    1.0 - base.powi(e as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// `φ_y` is produced by the attacker's copy of the plant.
    Covert,
    /// Both `φ_u` and `φ_y` are supplied.
    RawAdditive,
}

/// Attack sequences are stored one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    pub kind: AttackKind,
    pub phi_u: DMatrix<f64>,
    pub phi_y: Option<DMatrix<f64>>,
    pub onset: usize,
    /// Activation bases for the `φ_u` channels; empty means all zero.
    pub base_u: Vec<f64>,
    /// Activation bases for the `φ_y` channels; empty means all zero.
    pub base_y: Vec<f64>,
}

impl AttackScenario {
    pub fn covert(phi_u: DMatrix<f64>, onset: usize) -> Self {
        Self {
            kind: AttackKind::Covert,
            phi_u,
            phi_y: None,
            onset,
            base_u: Vec::new(),
            base_y: Vec::new(),
        }
    }

    pub fn raw(phi_u: DMatrix<f64>, phi_y: DMatrix<f64>, onset: usize) -> Self {
        Self {
            kind: AttackKind::RawAdditive,
            phi_u,
            phi_y: Some(phi_y),
            onset,
            base_u: Vec::new(),
            base_y: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.phi_u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry("phi_u"));
        }
        match (self.kind, &self.phi_y) {
            (AttackKind::Covert, Some(_)) => {
                Err(Error::InvalidArgument("covert attacks generate phi_y themselves".into()))
            }
            (AttackKind::RawAdditive, None) => Err(Error::InvalidArgument("raw attack needs phi_y".into())),
            (AttackKind::RawAdditive, Some(y)) => {
                if y.nrows() != self.phi_u.nrows() {
                    return Err(Error::DimensionMismatch("phi_u and phi_y lengths differ".into()));
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteEntry("phi_y"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn base(bases: &[f64], l: usize) -> f64 {
        bases.get(l).copied().unwrap_or(0.0)
    }

    /// `β[k] · φ_u[k]` with zero rows past the supplied sequence.
    pub fn activated_u(&self, steps: usize) -> DMatrix<f64> {
        activate(&self.phi_u, steps, self.onset, &self.base_u)
    }

    pub fn activated_y(&self, steps: usize) -> Option<DMatrix<f64>> {
        self.phi_y.as_ref().map(|y| activate(y, steps, self.onset, &self.base_y))
    }
}

fn activate(seq: &DMatrix<f64>, steps: usize, onset: usize, bases: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(steps, seq.ncols());
    for k in 0..steps.min(seq.nrows()) {
        for l in 0..seq.ncols() {
            out[(k, l)] = activation(k, onset, AttackScenario::base(bases, l)) * seq[(k, l)];
        }
    }
    out
}

/// `φ_y` from the attacker's plant copy `x_a⁺ = A_p x_a + B_p φ_u`,
/// `φ_y = −C_p x_a`, with `x_a[K_a] = 0`.
pub fn covert_phi_y(plant: &Plant, phi_u: &DMatrix<f64>, onset: usize) -> DMatrix<f64> {
    let steps = phi_u.nrows();
    let mut out = DMatrix::zeros(steps, plant.p());
    let mut xa = DVector::zeros(plant.n());
    for k in onset..steps {
        let y = -(plant.c() * &xa);
        out.row_mut(k).copy_from(&y.transpose());
        xa = plant.a() * &xa + plant.b() * phi_u.row(k).transpose();
    }
    out
}

/// Time histories of a simulation, one row per step `k = 0..=N`.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub horizon: usize,
    pub x: DMatrix<f64>,
    pub state_layout: Vec<(String, usize)>,
    /// Signals in [`crate::cps::MONITOR_SIGNALS`] order, or `y_1`/`y_2` for bare loops.
    pub signals: Vec<(String, DMatrix<f64>)>,
    pub attack: DMatrix<f64>,
    pub diverged: bool,
}

impl SimResult {
    pub fn signal(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.signals.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Residual `y₁`.
    pub fn y_r(&self) -> &DMatrix<f64> {
        self.signal("y_r").or_else(|| self.signal("y_1")).expect("residual signal")
    }

    /// Performance output `y₂`.
    pub fn y_j(&self) -> &DMatrix<f64> {
        self.signal("y_J").or_else(|| self.signal("y_2")).expect("performance signal")
    }

    /// CSV with header `k, y_r_*, y_J_*, u_c_*, y_p_*`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let names = ["y_r", "y_J", "u_c", "y_p"];
        let cols: Vec<(&str, &DMatrix<f64>)> = names
            .iter()
            .filter_map(|n| self.signal(n).map(|m| (*n, m)))
            .collect();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string()];
        for (n, m) in &cols {
            header.extend((1..=m.ncols()).map(|i| format!("{n}_{i}")));
        }
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..=self.horizon {
            let mut rec = vec![k.to_string()];
            for (_, m) in &cols {
                rec.extend(m.row(k).iter().map(|v| crate::io::fmt_f64(*v)));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::NumericalFailure(format!("write failed: {e}")))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

/// Reads `k, phi_u_*, phi_y_*` columns into `(φ_u, φ_y)`.
pub fn read_attack_csv<R: Read>(reader: R) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(csv_err)?.clone();
    let u_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("phi_u_")).collect();
    let y_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("phi_y_")).collect();
    if u_cols.is_empty() {
        return Err(Error::InvalidArgument("attack csv needs phi_u_* columns".into()));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut steps = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("attack csv: {e}")))
        };
        for &i in &u_cols {
            u.push(parse(i)?);
        }
        for &i in &y_cols {
            y.push(parse(i)?);
        }
        steps += 1;
    }
    let phi_u = DMatrix::from_row_slice(steps, u_cols.len(), &u);
    let phi_y = (!y_cols.is_empty()).then(|| DMatrix::from_row_slice(steps, y_cols.len(), &y));
    Ok((phi_u, phi_y))
}

/// Exact recursion of the loop over `k = 0..=N` driven by the activated attack.
pub fn simulate(
    cl: &ClosedLoop,
    scenario: &AttackScenario,
    horizon: usize,
    x0: Option<&DVector<f64>>,
) -> Result<SimResult> {
    scenario.validate()?;
    let sys = cl.monitor();
    let steps = horizon + 1;
    let m_u = scenario.phi_u.ncols();
    let attack = match (cl.mode(), scenario.kind) {
        (AttackMode::Covert, AttackKind::Covert) => scenario.activated_u(steps),
        (AttackMode::Generic, AttackKind::RawAdditive) => {
            let u = scenario.activated_u(steps);
            let y = scenario.activated_y(steps).expect("validated");
            let mut a = DMatrix::zeros(steps, u.ncols() + y.ncols());
            a.view_mut((0, 0), (steps, u.ncols())).copy_from(&u);
            a.view_mut((0, u.ncols()), (steps, y.ncols())).copy_from(&y);
            a
        }
        (AttackMode::Generic, AttackKind::Covert) => {
            return Err(Error::InvalidArgument(
                "covert scenarios need a covert loop; precompute phi_y for a generic loop".into(),
            ))
        }
        (AttackMode::Covert, AttackKind::RawAdditive) => {
            return Err(Error::InvalidArgument("a covert loop takes phi_u only".into()))
        }
    };
    if attack.ncols() != sys.m() {
        return Err(Error::DimensionMismatch(format!(
            "attack has {} channels, loop expects {} (phi_u has {m_u})",
            attack.ncols(),
            sys.m()
        )));
    }
    simulate_inputs(cl, &attack, x0)
}

/// Simulation with an explicit per-step loop input (rows = steps).
pub fn simulate_inputs(cl: &ClosedLoop, inputs: &DMatrix<f64>, x0: Option<&DVector<f64>>) -> Result<SimResult> {
    let sys = cl.monitor();
    let n = sys.n();
    if inputs.ncols() != sys.m() || inputs.nrows() == 0 {
        return Err(Error::DimensionMismatch("input sequence does not match the loop".into()));
    }
    let steps = inputs.nrows();
    let mut x = match x0 {
        Some(v) if v.len() != n => return Err(Error::DimensionMismatch("x0 has the wrong length".into())),
        Some(v) => v.clone(),
        None => DVector::zeros(n),
    };
    let mut xs = DMatrix::zeros(steps, n);
    let mut ys = DMatrix::zeros(steps, sys.p());
    let mut diverged = false;
    for k in 0..steps {
        let a = inputs.row(k).transpose();
        xs.row_mut(k).copy_from(&x.transpose());
        let y = sys.c() * &x + sys.d() * &a;
        ys.row_mut(k).copy_from(&y.transpose());
        x = sys.a() * &x + sys.b() * &a;
        if !diverged && x.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            log::warn!("simulation diverged at step {k}");
            diverged = true;
        }
    }
    let mut signals = Vec::new();
    let mut off = 0;
    for (name, rows) in cl.monitor_rows() {
        signals.push((name.clone(), ys.columns(off, *rows).into_owned()));
        off += rows;
    }
    Ok(SimResult {
        horizon: steps - 1,
        x: xs,
        state_layout: cl.state_layout().to_vec(),
        signals,
        attack: inputs.clone(),
        diverged,
    })
}

/// `Σ_{k=start}^{end} ‖s[k]‖²` over rows of `signal`.
pub fn energy(signal: &DMatrix<f64>, window: (usize, usize)) -> Result<f64> {
    let (start, end) = window;
    if start > end || end >= signal.nrows() {
        return Err(Error::WindowOutOfRange {
            start,
            end,
            len: signal.nrows(),
        });
    }
    Ok((start..=end).map(|k| signal.row(k).norm_squared()).sum())
}

/// Energy over the whole signal.
pub fn total_energy(signal: &DMatrix<f64>) -> f64 {
    signal.norm_squared()
}

/// Alarm iff the residual energy over the window reaches `θ_r`.
/// `None` uses the full signal.
pub fn detect(y_r: &DMatrix<f64>, theta_r: f64, window: Option<(usize, usize)>) -> Result<bool> {
    let e = match window {
        Some(w) => energy(y_r, w)?,
        None => total_energy(y_r),
    };
    Ok(e >= theta_r)
}

/// Cumulative energy divided by the final total, per step.
pub fn normalized_cumulative_energy(signal: &DMatrix<f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let cum: Vec<f64> = (0..signal.nrows())
        .map(|k| {
            acc += signal.row(k).norm_squared();
            acc
        })
        .collect();
    let total = acc;
    cum.into_iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect()
}
