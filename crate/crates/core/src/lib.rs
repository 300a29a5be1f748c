//! Design and analysis of multiplicative watermarking for discrete-time
//! control loops under covert attacks.

pub mod attack;
pub mod cps;
pub mod design;
pub mod error;
pub mod interconnect;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod oog;
pub mod sdp;

pub use nalgebra;
pub use num_complex;

pub use attack::{activation, covert_phi_y, detect, energy, simulate, AttackKind, AttackScenario, SimResult};
pub use cps::{
    assemble_attack_channel, assemble_nominal, assemble_watermarked, make_watermark_pair, AttackMode, ClosedLoop,
    Controller, Plant, WatermarkPair,
};
pub use design::{run_algorithm1, DesignConfig, DesignProblem, DesignReport, FreeMask, Termination};
pub use error::{Error, Result};
pub use lti::{series, FrequencyGrid, StateSpace};
pub use oog::{
    boundedness_check, compute_oog, undetectability_check, verify_dissipativity, Boundedness, OogCertificate,
    OogStatus, Undetectability,
};
pub use sdp::{AffineExpr, LmiProblem, LmiSolution, SdpStatus};
