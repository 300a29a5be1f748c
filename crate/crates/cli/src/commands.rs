//! Pipelines behind the `wmlab` subcommands. Every command writes its
//! artifacts into the output directory and returns the written paths.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use wmlab_core::attack::{energy, normalized_cumulative_energy};
use wmlab_core::io::{fmt_f64, to_json_string};
use wmlab_core::lti::{is_controllable, is_observable};
use wmlab_core::num_complex::Complex64;
use wmlab_core::{
    assemble_watermarked, boundedness_check, compute_oog, detect, run_algorithm1, simulate, undetectability_check,
    ClosedLoop, FrequencyGrid, OogStatus, Termination, WatermarkPair,
};

use crate::error::CliError;
use crate::scenario::Scenario;

pub const DESIGN_REPORT: &str = "design_report.json";
pub const GAMMA_TRACE: &str = "gamma_trace.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    /// Loop without watermarking.
    None,
    /// Watermark from the scenario file.
    Initial,
    /// Watermark from the design report.
    Optimized,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Initial => "initial",
            Variant::Optimized => "optimized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Channel {
    /// Attack to residual.
    Residual,
    /// Attack to performance output.
    Performance,
}

/// Outcome of a command: files written plus an optional non-success verdict.
#[derive(Debug)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub summary: String,
    pub verdict: Option<CliError>,
}

impl Outcome {
    fn ok(written: Vec<PathBuf>, summary: String) -> Self {
        Self {
            written,
            summary,
            verdict: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict.as_ref().map_or(0, CliError::exit_code)
    }
}

/// Resolves where artifacts go and loads the design report if needed.
pub struct Context {
    pub scenario: Scenario,
    pub out_dir: PathBuf,
    pub design_path: Option<PathBuf>,
}

impl Context {
    pub fn new(scenario: Scenario, out: Option<PathBuf>, design: Option<PathBuf>) -> Result<Self, CliError> {
        let out_dir = out
            .or_else(|| scenario.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("wmlab-out"));
        fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
        Ok(Self {
            scenario,
            out_dir,
            design_path: design,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    pub fn pairs(&self, variant: Variant) -> Result<(WatermarkPair, WatermarkPair), CliError> {
        let plant = &self.scenario.plant;
        match variant {
            Variant::None => Ok((WatermarkPair::identity(plant.m()), WatermarkPair::identity(plant.p()))),
            Variant::Initial => self.scenario.initial_pairs(),
            Variant::Optimized => {
                let path = self.design_path.clone().unwrap_or_else(|| self.path(DESIGN_REPORT));
                load_design_pairs(&path)
            }
        }
    }

    pub fn closed_loop(&self, variant: Variant) -> Result<ClosedLoop, CliError> {
        let (pi, po) = self.pairs(variant)?;
        let sc = &self.scenario;
        Ok(assemble_watermarked(&sc.plant, &sc.controller, &pi, &po, sc.loop_mode)?)
    }
}

#[derive(Deserialize)]
struct StoredPairs {
    input_pair: WatermarkPair,
    output_pair: WatermarkPair,
}

pub fn load_design_pairs(path: &Path) -> Result<(WatermarkPair, WatermarkPair), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("design report {} unavailable: {e}", path.display())))?;
    let stored: StoredPairs = serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("design report {}: {e}", path.display())))?;
    Ok((stored.input_pair, stored.output_pair))
}

fn complex_list(v: &[Complex64]) -> Value {
    Value::Array(v.iter().map(|z| json!([z.re, z.im])).collect())
}

fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

fn loop_verdicts(ctx: &Context, variant: Variant) -> Result<Value, CliError> {
    let (pi, po) = ctx.pairs(variant)?;
    let cl = ctx.closed_loop(variant)?;
    let bounded = boundedness_check(&cl)?;
    let stealth = undetectability_check(&pi, &ctx.scenario.plant, &po)?;
    let stealth = match stealth {
        wmlab_core::Undetectability::DetectableOnly => json!({"verdict": "DetectableOnly"}),
        wmlab_core::Undetectability::StealthyZeroExists { mu, phi } => json!({
            "verdict": "StealthyZeroExists",
            "mu": [mu.re, mu.im],
            "phi": phi.iter().map(|z| json!([z.re, z.im])).collect::<Vec<_>>(),
        }),
    };
    Ok(json!({
        "boundedness": serde_json::to_value(bounded)?,
        "undetectability": stealth,
        "spectral_radius": cl.ss().spectral_radius(),
    }))
}

pub fn cmd_inspect(ctx: &Context) -> Result<Outcome, CliError> {
    let plant = &ctx.scenario.plant;
    let ss = plant.measured();
    let poles = sorted(ss.poles());
    let mut warnings = Vec::new();
    let zeros = if ss.m() == ss.p() { Some(sorted(ss.zeros()?)) } else { None };
    let unstable: Vec<Complex64> = zeros
        .iter()
        .flatten()
        .copied()
        .filter(|z| z.norm() >= 1.0)
        .collect();
    if !unstable.is_empty() {
        let msg = format!(
            "plant has {} zero(s) outside the open unit disk; a watermark cannot bound the attack gain",
            unstable.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if zeros.is_none() {
        warnings.push("plant is not square; zeros not computed".to_string());
    }
    let mut report = json!({
        "plant": {
            "poles": complex_list(&poles),
            "spectral_radius": ss.spectral_radius(),
            "stable": ss.is_stable(),
            "controllable": is_controllable(plant.a(), plant.b()),
            "observable": is_observable(plant.c(), plant.a()),
            "zeros": zeros.as_deref().map(complex_list),
            "unstable_zeros": complex_list(&unstable),
            "zero_dynamics_limitation": !unstable.is_empty(),
        },
        "warnings": warnings,
    });
    let mut loops = serde_json::Map::new();
    loops.insert("none".into(), loop_verdicts(ctx, Variant::None)?);
    if ctx.scenario.watermark.is_some() {
        loops.insert("initial".into(), loop_verdicts(ctx, Variant::Initial)?);
    }
    report["loops"] = Value::Object(loops);
    let body = to_json_string(&report)?;
    let path = ctx.write("inspect.json", &body)?;
    Ok(Outcome::ok(vec![path], body))
}

pub fn cmd_design(ctx: &Context) -> Result<Outcome, CliError> {
    let sc = &ctx.scenario;
    let (pi, po) = sc.initial_pairs()?;
    let report = run_algorithm1(&sc.plant, &sc.controller, &pi, &po, &sc.design_config())?;
    let json_path = ctx.write(DESIGN_REPORT, &to_json_string(&report)?)?;
    let mut csv = Vec::new();
    report.write_trace_csv(&mut csv)?;
    let csv_path = ctx.write(GAMMA_TRACE, &String::from_utf8(csv).expect("csv is UTF-8"))?;
    let summary = format!(
        "termination {:?} after {} iterations; gamma {} (initial {})",
        report.termination,
        report.iterations,
        fmt_f64(report.gamma),
        fmt_f64(report.gamma_initial)
    );
    let verdict = match report.termination {
        Termination::Converged | Termination::MaxIters => None,
        Termination::InfeasibleAtInit => Some(CliError::Verdict(format!(
            "initial watermark is infeasible: {}",
            report.message.clone().unwrap_or_default()
        ))),
        Termination::StepFailure => Some(CliError::Numerical(report.message.clone().unwrap_or_default())),
    };
    Ok(Outcome {
        written: vec![json_path, csv_path],
        summary,
        verdict,
    })
}

fn energies_for(ctx: &Context, variant: Variant) -> Result<(Value, wmlab_core::SimResult), CliError> {
    let sc = &ctx.scenario;
    let cl = ctx.closed_loop(variant)?;
    let sim = simulate(&cl, &sc.attack_scenario()?, sc.horizon, None)?;
    let window = sc.window.unwrap_or((0, sc.horizon));
    let e_r = energy(sim.y_r(), window)?;
    let e_j = energy(sim.y_j(), window)?;
    let detected = detect(sim.y_r(), sc.theta_r, Some(window))?;
    let v = json!({
        "energy_y_r": e_r,
        "energy_y_J": e_j,
        "detected": detected,
        "diverged": sim.diverged,
        "normalized_y_r": normalized_cumulative_energy(sim.y_r()),
        "normalized_y_J": normalized_cumulative_energy(sim.y_j()),
    });
    Ok((v, sim))
}

pub fn cmd_simulate(ctx: &Context, variant: Variant) -> Result<Outcome, CliError> {
    let (entry, sim) = energies_for(ctx, variant)?;
    let mut csv = Vec::new();
    sim.write_csv(&mut csv)?;
    let csv_path = ctx.write(&format!("sim_{}.csv", variant.name()), &String::from_utf8(csv).expect("csv is UTF-8"))?;

    let mut variants = serde_json::Map::new();
    variants.insert(variant.name().into(), entry);
    // Ratios need the initial loop next to the optimized one.
    if variant == Variant::Optimized && ctx.scenario.watermark.is_some() {
        let (initial, _) = energies_for(ctx, Variant::Initial)?;
        variants.insert("initial".into(), initial);
    }
    let mut report = json!({
        "window": ctx.scenario.window.unwrap_or((0, ctx.scenario.horizon)),
        "theta_r": ctx.scenario.theta_r,
        "variants": variants,
    });
    if let (Some(o), Some(i)) = (report["variants"].get("optimized"), report["variants"].get("initial")) {
        let ratio = |key: &str| {
            let (a, b) = (o[key].as_f64().unwrap_or(f64::NAN), i[key].as_f64().unwrap_or(f64::NAN));
            if b > 0.0 {
                a / b
            } else {
                f64::NAN
            }
        };
        report["ratios"] = json!({
            "y_r_optimized_over_initial": ratio("energy_y_r"),
            "y_J_optimized_over_initial": ratio("energy_y_J"),
        });
    }
    let en_path = ctx.write("energies.json", &to_json_string(&report)?)?;
    let o = &report["variants"][variant.name()];
    let summary = format!(
        "{}: energy y_r {}, energy y_J {}, detected {}",
        variant.name(),
        fmt_f64(o["energy_y_r"].as_f64().unwrap_or(f64::NAN)),
        fmt_f64(o["energy_y_J"].as_f64().unwrap_or(f64::NAN)),
        o["detected"]
    );
    Ok(Outcome::ok(vec![csv_path, en_path], summary))
}

pub fn cmd_freqresp(ctx: &Context, channel: Channel, variant: Variant) -> Result<Outcome, CliError> {
    let cl = ctx.closed_loop(variant)?;
    let sys = match channel {
        Channel::Residual => cl.residual_channel(),
        Channel::Performance => cl.performance_channel(),
    };
    let grid = FrequencyGrid::linear(ctx.scenario.sample_period, ctx.scenario.frequency_points)?;
    let sv = sys.sv_sweep(&grid)?;
    let k = sv.first().map_or(0, Vec::len);
    let mut body = String::from("omega_rad_s");
    for i in 1..=k {
        body.push_str(&format!(",sigma_{i}"));
    }
    body.push('\n');
    for (w, row) in grid.omegas().iter().zip(&sv) {
        body.push_str(&fmt_f64(*w));
        for s in row {
            body.push(',');
            body.push_str(&fmt_f64(*s));
        }
        body.push('\n');
    }
    let name = match channel {
        Channel::Residual => "residual",
        Channel::Performance => "performance",
    };
    let path = ctx.write(&format!("freqresp_{name}_{}.csv", variant.name()), &body)?;
    let peak = sv.iter().flatten().copied().fold(0.0, f64::max);
    Ok(Outcome::ok(vec![path], format!("{name} channel, {}: peak singular value {}", variant.name(), fmt_f64(peak))))
}

pub fn cmd_oog(ctx: &Context, variant: Variant) -> Result<Outcome, CliError> {
    let cl = ctx.closed_loop(variant)?;
    let cert = compute_oog(&cl)?;
    let path = ctx.write(&format!("oog_{}.json", variant.name()), &to_json_string(&cert)?)?;
    let summary = format!("{}: {:?}, gamma {}", variant.name(), cert.status, fmt_f64(cert.gamma));
    let verdict = match cert.status {
        OogStatus::Optimal => None,
        OogStatus::Unbounded | OogStatus::Infeasible => Some(CliError::Verdict(format!(
            "output-to-output gain is {:?}",
            cert.status
        ))),
        OogStatus::NumericalFailure => Some(CliError::Numerical("SDP solver failed".into())),
    };
    Ok(Outcome {
        written: vec![path],
        summary,
        verdict,
    })
}
