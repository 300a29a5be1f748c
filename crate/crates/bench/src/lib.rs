//! Fixtures shared by the benchmarks.

use wmlab_core::nalgebra::DMatrix;
use wmlab_core::{make_watermark_pair, Controller, Plant, WatermarkPair};

pub fn two_state_plant() -> Plant {
    Plant::new(
        DMatrix::from_row_slice(2, 2, &[0.9191, 0.3277, -0.0768, 0.4269]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[2.0, 0.0]),
        DMatrix::zeros(1, 1),
    )
    .expect("valid plant")
}

pub fn two_state_controller() -> Controller {
    Controller::new(
        DMatrix::from_row_slice(1, 2, &[-0.3405, -0.3987]),
        DMatrix::from_row_slice(2, 1, &[0.5956, -0.0253]),
    )
}

/// First-order pair with unit `B`, `C`, `D`.
pub fn scalar_pair(a: f64) -> WatermarkPair {
    let one = || DMatrix::from_element(1, 1, 1.0);
    make_watermark_pair(DMatrix::from_element(1, 1, a), one(), one(), one()).expect("stable pair")
}
