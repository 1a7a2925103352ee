//! Electro-thermal cell model: double-capacitor electrical circuit, lumped
//! core/surface thermal network, optional neural output heads, and exact
//! constant-input state propagation.

mod hybrid;
mod ocv;
mod params;
mod propagate;

pub use hybrid::{
    CurrentProfile, HybridModel, ModelScratch, ProfileSegment, TempInputMask, Trajectory,
    TrajectoryPoint,
};
pub use ocv::OcvCurve;
pub use params::{ModelParams, NdcParams, ThermalParams, DEFAULT_PARAMS_JSON};
pub use propagate::{propagate, state_derivative, CellStateDerivative, StepPropagator};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rest OCV defining the "fully charged" state convention.
pub const FULL_CHARGE_OCV: f64 = 4.2;
/// Rest OCV defining the "empty" end of the state-of-charge scale. Matches
/// the default discharge voltage floor.
pub const EMPTY_OCV: f64 = 3.0;

/// The five-dimensional model state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// Bulk diffusion capacitor voltage (V).
    pub v_b: f64,
    /// Surface diffusion capacitor voltage (V).
    pub v_s: f64,
    /// Charge-transfer RC-pair voltage (V).
    pub v_1: f64,
    /// Core temperature (degC).
    pub t_core: f64,
    /// Surface temperature (degC).
    pub t_surf: f64,
}

impl CellState {
    pub fn new(v_b: f64, v_s: f64, v_1: f64, t_core: f64, t_surf: f64) -> Self {
        Self {
            v_b,
            v_s,
            v_1,
            t_core,
            t_surf,
        }
    }

    /// Electrical equilibrium at a uniform temperature: both diffusion
    /// capacitors at `v`, RC pair relaxed, cell at ambient.
    pub fn rest(v: f64, t_amb: f64) -> Self {
        Self::new(v, v, 0.0, t_amb, t_amb)
    }

    pub fn is_finite(&self) -> bool {
        self.v_b.is_finite()
            && self.v_s.is_finite()
            && self.v_1.is_finite()
            && self.t_core.is_finite()
            && self.t_surf.is_finite()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("cell state {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.v_b, self.v_s, self.v_1, self.t_core, self.t_surf]
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }
}

/// Rest state for a state of charge in [0, 1], using the linear-in-charge
/// convention: soc 1 sits at the v_s with rest OCV 4.2 V, soc 0 at 3.0 V.
pub fn rest_state_for_soc(params: &ModelParams, soc: f64, t_amb: f64) -> CellState {
    let v_full = params.ndc.ocv.inverse(FULL_CHARGE_OCV);
    let v_empty = params.ndc.ocv.inverse(EMPTY_OCV);
    let v = v_empty + soc.clamp(0.0, 1.0) * (v_full - v_empty);
    CellState::rest(v, t_amb)
}

/// Charge-based state-of-charge proxy for an arbitrary state, 1.0 at the
/// full-charge rest convention and 0.0 at the empty one. Not clamped.
pub fn soc_proxy(params: &ModelParams, state: &CellState) -> f64 {
    let v_full = params.ndc.ocv.inverse(FULL_CHARGE_OCV);
    let v_empty = params.ndc.ocv.inverse(EMPTY_OCV);
    let q = params.ndc.c_b * state.v_b + params.ndc.c_s * state.v_s;
    let q_full = (params.ndc.c_b + params.ndc.c_s) * v_full;
    let q_empty = (params.ndc.c_b + params.ndc.c_s) * v_empty;
    (q - q_empty) / (q_full - q_empty)
}
