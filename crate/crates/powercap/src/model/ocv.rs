//! Open-circuit voltage curve: a strictly increasing piecewise-linear map
//! from the surface-capacitor voltage to the cell's OCV.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear OCV table. Breakpoints are `(v_s, u)` pairs, strictly
/// increasing in both coordinates. Evaluation clamps outside the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OcvCurve {
    breakpoints: Vec<(f64, f64)>,
}

impl OcvCurve {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidParameter(
                "OCV curve needs at least 2 breakpoints".into(),
            ));
        }
        for pair in breakpoints.windows(2) {
            let (x0, u0) = pair[0];
            let (x1, u1) = pair[1];
            if !(x0.is_finite() && u0.is_finite() && x1.is_finite() && u1.is_finite()) {
                return Err(Error::NonFinite("OCV breakpoint".into()));
            }
            if x1 <= x0 || u1 <= u0 {
                return Err(Error::InvalidParameter(format!(
                    "OCV breakpoints must be strictly increasing in both coordinates \
                     (({x0}, {u0}) then ({x1}, {u1}))"
                )));
            }
        }
        Ok(Self { breakpoints })
    }

    /// Lower edge of the v_s domain.
    pub fn vs_lo(&self) -> f64 {
        self.breakpoints[0].0
    }

    /// Upper edge of the v_s domain.
    pub fn vs_hi(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1].0
    }

    /// Smallest OCV value on the table.
    pub fn u_min(&self) -> f64 {
        self.breakpoints[0].1
    }

    /// Largest OCV value on the table.
    pub fn u_max(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1].1
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Interpolated OCV at `v_s`, clamped to the table ends outside the domain.
    pub fn eval(&self, v_s: f64) -> f64 {
        let pts = &self.breakpoints;
        if v_s <= pts[0].0 {
            return pts[0].1;
        }
        if v_s >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        // partition_point returns the first breakpoint with x > v_s; the
        // guards above keep idx in 1..len.
        let idx = pts.partition_point(|&(x, _)| x <= v_s);
        let (x0, u0) = pts[idx - 1];
        let (x1, u1) = pts[idx];
        u0 + (v_s - x0) * (u1 - u0) / (x1 - x0)
    }

    /// Inverse lookup: the v_s at which the curve reaches OCV `u`, clamped to
    /// the domain ends. Well defined because the table is strictly monotone.
    pub fn inverse(&self, u: f64) -> f64 {
        let pts = &self.breakpoints;
        if u <= pts[0].1 {
            return pts[0].0;
        }
        if u >= pts[pts.len() - 1].1 {
            return pts[pts.len() - 1].0;
        }
        let idx = pts.partition_point(|&(_, y)| y <= u);
        let (x0, u0) = pts[idx - 1];
        let (x1, u1) = pts[idx];
        x0 + (u - u0) * (x1 - x0) / (u1 - u0)
    }
}
