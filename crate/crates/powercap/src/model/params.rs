//! Circuit and thermal constants for the cell model, plus the parameter
//! file (JSON) they are shipped in.

use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ocv::OcvCurve;

/// Double-capacitor electrical circuit constants.
///
/// `c_b`/`c_s` are the bulk and surface diffusion capacitors coupled through
/// `r_b`; `r_0` is the ohmic resistance and `r_1`/`c_1` the charge-transfer
/// RC pair on the output branch. The OCV source is `ocv(v_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcParams {
    pub r_b: f64,
    pub c_b: f64,
    pub c_s: f64,
    pub r_0: f64,
    pub r_1: f64,
    pub c_1: f64,
    pub ocv: OcvCurve,
}

impl NdcParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_b", self.r_b),
            ("c_b", self.c_b),
            ("c_s", self.c_s),
            ("r_0", self.r_0),
            ("r_1", self.r_1),
            ("c_1", self.c_1),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "NDC constant {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Electrical state matrix for x_e = (v_b, v_s, v_1).
    pub fn a_matrix(&self) -> Matrix3<f64> {
        let k_b = 1.0 / (self.c_b * self.r_b);
        let k_s = 1.0 / (self.c_s * self.r_b);
        let k_1 = 1.0 / (self.r_1 * self.c_1);
        Matrix3::new(
            -k_b, k_b, 0.0, //
            k_s, -k_s, 0.0, //
            0.0, 0.0, -k_1,
        )
    }

    /// Electrical input vector (per ampere of discharge current).
    pub fn b_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, -1.0 / self.c_s, -1.0 / self.c_1)
    }

    /// Terminal voltage of the bare circuit under current `i`.
    pub fn output_voltage(&self, v_s: f64, v_1: f64, i: f64) -> f64 {
        self.ocv.eval(v_s) + v_1 - self.r_0 * i
    }
}

/// Two-node (core/surface) thermal network constants. Heat enters as Joule
/// loss `r_0 * i^2` at the core; the surface convects to ambient through
/// `r_surf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    pub r_core: f64,
    pub r_surf: f64,
    pub c_core: f64,
    pub c_surf: f64,
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_core", self.r_core),
            ("r_surf", self.r_surf),
            ("c_core", self.c_core),
            ("c_surf", self.c_surf),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "thermal constant {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Thermal state matrix for x_t = (t_core, t_surf).
    pub fn a_matrix(&self) -> Matrix2<f64> {
        let a = 1.0 / (self.r_core * self.c_core);
        let b = 1.0 / (self.r_core * self.c_surf);
        let c = 1.0 / (self.r_surf * self.c_surf);
        Matrix2::new(
            -a, a, //
            b, -c - b,
        )
    }

    /// Thermal input matrix applied to (i^2, t_amb). `r_0` is the ohmic
    /// resistance generating the Joule heat.
    pub fn b_matrix(&self, r_0: f64) -> Matrix2<f64> {
        Matrix2::new(
            r_0 / self.c_core,
            0.0,
            0.0,
            1.0 / (self.r_surf * self.c_surf),
        )
    }

    /// Thermal forcing vector for a fixed current and ambient.
    pub fn b_input(&self, r_0: f64, i: f64, t_amb: f64) -> Vector2<f64> {
        self.b_matrix(r_0) * Vector2::new(i * i, t_amb)
    }
}

/// Full parameter set backing the cell model, as stored in the parameter
/// file: sections `ndc`, `thermal`, `ocv` (inside `ndc`), `capacity_ah`
/// and `t_amb`. All values are SI units (ohms, farads, K/W, J/K, Ah, degC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub ndc: NdcParams,
    pub thermal: ThermalParams,
    /// Nominal capacity used to convert C-rates to amperes at API edges.
    pub capacity_ah: f64,
    /// Default ambient temperature in degC.
    pub t_amb: f64,
}

/// Bundled default parameter file, calibrated against the synthetic
/// reference cell (see the `datagen` module and `data/default_params.json`).
pub const DEFAULT_PARAMS_JSON: &str = include_str!("../../data/default_params.json");

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.ndc.validate()?;
        self.thermal.validate()?;
        if !self.capacity_ah.is_finite() || self.capacity_ah <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "capacity_ah must be finite and > 0, got {}",
                self.capacity_ah
            )));
        }
        if !self.t_amb.is_finite() {
            return Err(Error::NonFinite("t_amb".into()));
        }
        Ok(())
    }

    /// Nominal capacity in ampere-seconds.
    pub fn capacity_as(&self) -> f64 {
        self.capacity_ah * 3600.0
    }

    /// Amperes corresponding to a C-rate.
    pub fn c_rate_to_amps(&self, c_rate: f64) -> f64 {
        c_rate * self.capacity_ah
    }

    /// Calibrated defaults shipped with the crate.
    pub fn default_calibrated() -> Self {
        let p: Self =
            serde_json::from_str(DEFAULT_PARAMS_JSON).expect("bundled parameter file parses");
        p.validate().expect("bundled parameter file is valid");
        p
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
