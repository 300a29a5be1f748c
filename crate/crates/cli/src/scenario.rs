//! Scenario files: one JSON document bundling plant, controller, watermark,
//! attack and run settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wmlab_core::attack::read_attack_csv;
use wmlab_core::design::{DesignConfig, FreeMask};
use wmlab_core::nalgebra::DMatrix;
use wmlab_core::{
    covert_phi_y, AttackKind, AttackMode, AttackScenario, Controller, Plant, StateSpace, WatermarkPair,
};

use crate::error::CliError;

pub const DEFAULT_HORIZON: usize = 500;
pub const DEFAULT_SAMPLE_PERIOD: f64 = 0.1;
pub const DEFAULT_THETA_R: f64 = 1.0;
pub const DEFAULT_FREQUENCY_POINTS: usize = 512;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub remover: StateSpace,
    /// Free remover blocks for design.
    #[serde(default)]
    pub free: FreeMask,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSpec {
    pub input: PairSpec,
    pub output: PairSpec,
}

/// Attack signal source. Sinusoids are `offset + amplitude·sin(frequency·k + phase)`
/// on every channel, `k` in samples.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Sinusoid {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    Values(Vec<Vec<f64>>),
    /// Path relative to the scenario file.
    Csv(PathBuf),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default = "covert_kind")]
    pub kind: AttackKind,
    #[serde(default)]
    pub onset: usize,
    #[serde(default)]
    pub base_u: Vec<f64>,
    #[serde(default)]
    pub base_y: Vec<f64>,
    pub phi_u: SignalSpec,
    #[serde(default)]
    pub phi_y: Option<SignalSpec>,
}

fn covert_kind() -> AttackKind {
    AttackKind::Covert
}

/// Design settings; the free-parameter masks come from the watermark section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSettings {
    pub epsilon: f64,
    pub max_iters: usize,
    pub strictness: f64,
    pub regularization: f64,
    pub radius_bound: f64,
    pub param_bound: Option<f64>,
}

impl Default for DesignSettings {
    fn default() -> Self {
        let c = DesignConfig::default();
        Self {
            epsilon: c.epsilon,
            max_iters: c.max_iters,
            strictness: c.strictness,
            regularization: c.regularization,
            radius_bound: c.radius_bound,
            param_bound: c.param_bound,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub plant: Plant,
    pub controller: Controller,
    #[serde(default)]
    pub watermark: Option<WatermarkSpec>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_sample_period")]
    pub sample_period: f64,
    #[serde(default = "default_theta_r")]
    pub theta_r: f64,
    #[serde(default)]
    pub window: Option<(usize, usize)>,
    #[serde(default = "covert_mode")]
    pub loop_mode: AttackMode,
    #[serde(default)]
    pub design: DesignSettings,
    #[serde(default = "default_frequency_points")]
    pub frequency_points: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}
fn default_sample_period() -> f64 {
    DEFAULT_SAMPLE_PERIOD
}
fn default_theta_r() -> f64 {
    DEFAULT_THETA_R
}
fn default_frequency_points() -> usize {
    DEFAULT_FREQUENCY_POINTS
}
fn covert_mode() -> AttackMode {
    AttackMode::Covert
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut sc = Self::parse(&text)?;
        sc.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(sc)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| CliError::ScenarioParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Invalid(m.to_string()));
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return bad("sample_period must be positive");
        }
        if !(self.theta_r > 0.0) {
            return bad("theta_r must be positive");
        }
        if self.frequency_points < 2 {
            return bad("frequency_points must be at least 2");
        }
        if let Some((s, e)) = self.window {
            if s > e || e > self.horizon {
                return bad("window must satisfy start <= end <= horizon");
            }
        }
        if let Some(w) = &self.watermark {
            if w.input.remover.m() != self.plant.m() || w.output.remover.m() != self.plant.p() {
                return bad("watermark dimensions do not match the plant");
            }
        }
        Ok(())
    }

    /// Initial pairs from the watermark section.
    pub fn initial_pairs(&self) -> Result<(WatermarkPair, WatermarkPair), CliError> {
        let w = self
            .watermark
            .as_ref()
            .ok_or_else(|| CliError::Invalid("scenario has no watermark section".into()))?;
        Ok((
            WatermarkPair::new(w.input.remover.clone())?,
            WatermarkPair::new(w.output.remover.clone())?,
        ))
    }

    pub fn design_config(&self) -> DesignConfig {
        let d = &self.design;
        let (input_mask, output_mask) = match &self.watermark {
            Some(w) => (w.input.free, w.output.free),
            None => (FreeMask::NONE, FreeMask::NONE),
        };
        DesignConfig {
            epsilon: d.epsilon,
            max_iters: d.max_iters,
            input_mask,
            output_mask,
            strictness: d.strictness,
            regularization: d.regularization,
            radius_bound: d.radius_bound,
            param_bound: d.param_bound,
            mode: self.loop_mode,
        }
    }

    /// Attack matching the loop mode. A covert attack on a generic loop is
    /// converted into its explicit `(φ_u, φ_y)` form.
    pub fn attack_scenario(&self) -> Result<AttackScenario, CliError> {
        let spec = self
            .attack
            .as_ref()
            .ok_or_else(|| CliError::Invalid("scenario has no attack section".into()))?;
        let steps = self.horizon + 1;
        let phi_u = self.signal(&spec.phi_u, steps, self.plant.m(), false)?;
        let mut sc = match spec.kind {
            AttackKind::Covert => {
                if spec.phi_y.is_some() {
                    return Err(CliError::Invalid("covert attacks generate phi_y".into()));
                }
                AttackScenario::covert(phi_u, spec.onset)
            }
            AttackKind::RawAdditive => {
                let y = spec
                    .phi_y
                    .as_ref()
                    .ok_or_else(|| CliError::Invalid("raw attacks need phi_y".into()))?;
                AttackScenario::raw(phi_u, self.signal(y, steps, self.plant.p(), true)?, spec.onset)
            }
        };
        sc.base_u = spec.base_u.clone();
        sc.base_y = spec.base_y.clone();
        if self.loop_mode == AttackMode::Generic && sc.kind == AttackKind::Covert {
            let u = sc.activated_u(steps);
            let y = covert_phi_y(&self.plant, &u, 0);
            sc = AttackScenario::raw(u, y, 0);
        }
        Ok(sc)
    }

    fn signal(&self, spec: &SignalSpec, steps: usize, channels: usize, output: bool) -> Result<DMatrix<f64>, CliError> {
        let m = match spec {
            SignalSpec::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => DMatrix::from_fn(steps, channels, |k, _| offset + amplitude * (frequency * k as f64 + phase).sin()),
            SignalSpec::Values(rows) => {
                if rows.iter().any(|r| r.len() != channels) {
                    return Err(CliError::Invalid(format!("attack rows must have {channels} entries")));
                }
                DMatrix::from_fn(rows.len(), channels, |i, j| rows[i][j])
            }
            SignalSpec::Csv(path) => {
                let full = self.base_dir.join(path);
                let file = std::fs::File::open(&full).map_err(|e| CliError::Io(format!("{}: {e}", full.display())))?;
                let (u, y) = read_attack_csv(file)?;
                let m = if output {
                    y.ok_or_else(|| CliError::Invalid("attack csv has no phi_y columns".into()))?
                } else {
                    u
                };
                if m.ncols() != channels {
                    return Err(CliError::Invalid(format!("attack csv must have {channels} channels")));
                }
                m
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Invalid("attack values must be finite".into()));
        }
        Ok(m)
    }
}
