//! Exact constant-input propagation of the linear state dynamics.
//!
//! The electrical A-matrix is singular (its diffusion pair conserves charge),
//! so the discrete transition is computed from the exponential of the
//! augmented matrix `[[A, B*u], [0, 0]]` applied to `[x; 1]` rather than the
//! `A^-1 (e^{A dt} - I) B` form, which does not exist here.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{CellState, ModelParams};

type Matrix4 = SMatrix<f64, 4, 4>;

/// Time derivative of the state under current `i` and ambient `t_amb`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStateDerivative {
    pub v_b: f64,
    pub v_s: f64,
    pub v_1: f64,
    pub t_core: f64,
    pub t_surf: f64,
}

/// Right-hand side of the model ODE.
pub fn state_derivative(
    x: &CellState,
    i: f64,
    t_amb: f64,
    p: &ModelParams,
) -> CellStateDerivative {
    let a_e = p.ndc.a_matrix();
    let b_e = p.ndc.b_vector();
    let xe = Vector3::new(x.v_b, x.v_s, x.v_1);
    let de = a_e * xe + b_e * i;

    let a_t = p.thermal.a_matrix();
    let xt = Vector2::new(x.t_core, x.t_surf);
    let dt = a_t * xt + p.thermal.b_input(p.ndc.r_0, i, t_amb);

    CellStateDerivative {
        v_b: de[0],
        v_s: de[1],
        v_1: de[2],
        t_core: dt[0],
        t_surf: dt[1],
    }
}

/// Precomputed discrete transition for a fixed `(params, i, t_amb, dt)`.
///
/// `step` applies the exact constant-input solution; repeated steps are
/// bit-identical to repeated `propagate` calls with the same arguments, the
/// matrix exponentials are just not recomputed.
#[derive(Debug, Clone)]
pub struct StepPropagator {
    m_elec: Matrix4,
    m_therm: Matrix3<f64>,
    dt: f64,
}

impl StepPropagator {
    pub fn new(p: &ModelParams, i: f64, t_amb: f64, dt: f64) -> Result<Self> {
        if !i.is_finite() || !t_amb.is_finite() || !dt.is_finite() {
            return Err(Error::NonFinite(format!(
                "propagation input (i={i}, t_amb={t_amb}, dt={dt})"
            )));
        }
        if dt < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "propagation requires dt >= 0, got {dt}"
            )));
        }

        // Augmented electrical block: [[A_e, B_e * i], [0, 0]] * dt.
        let a_e = p.ndc.a_matrix();
        let b_e = p.ndc.b_vector() * i;
        let mut aug_e = Matrix4::zeros();
        aug_e.fixed_view_mut::<3, 3>(0, 0).copy_from(&a_e);
        aug_e.fixed_view_mut::<3, 1>(0, 3).copy_from(&b_e);
        let m_elec = (aug_e * dt).exp();

        // Augmented thermal block: [[A_t, B_t * (i^2, t_amb)], [0, 0]] * dt.
        let a_t = p.thermal.a_matrix();
        let b_t = p.thermal.b_input(p.ndc.r_0, i, t_amb);
        let mut aug_t = Matrix3::zeros();
        aug_t.fixed_view_mut::<2, 2>(0, 0).copy_from(&a_t);
        aug_t.fixed_view_mut::<2, 1>(0, 2).copy_from(&b_t);
        let m_therm = (aug_t * dt).exp();

        Ok(Self {
            m_elec,
            m_therm,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, x: &CellState) -> CellState {
        if self.dt == 0.0 {
            return *x;
        }
        let xe = SVector::<f64, 4>::new(x.v_b, x.v_s, x.v_1, 1.0);
        let ye = self.m_elec * xe;
        let xt = Vector3::new(x.t_core, x.t_surf, 1.0);
        let yt = self.m_therm * xt;
        CellState::new(ye[0], ye[1], ye[2], yt[0], yt[1])
    }
}

/// Exact solution of the state ODE after `dt` seconds of constant current
/// `i` and ambient `t_amb`. Deterministic: identical inputs give
/// bit-identical outputs.
pub fn propagate(x: &CellState, i: f64, t_amb: f64, dt: f64, p: &ModelParams) -> Result<CellState> {
    x.ensure_finite()?;
    let prop = StepPropagator::new(p, i, t_amb, dt)?;
    Ok(prop.step(x))
}
