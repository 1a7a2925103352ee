//! Remaining-discharge-time (RDT) prediction.
//!
//! How long can the cell keep discharging at a constant current before the
//! voltage floor or the temperature ceiling is hit? The voltage-limited time
//! comes either from a trained net or from the forward-simulation oracle;
//! the temperature-limited time is found by checkpointing the exact
//! propagated temperature and bisecting the first bracketing interval. The
//! reported RDT is whichever limit comes first.

use serde::{Deserialize, Serialize};

use crate::datagen::RdtSample;
use crate::error::{Error, Result};
use crate::mlp::{self, Activation, LossRecord, NeuralNet, TrainConfig};
use crate::model::{CellState, HybridModel};

/// Which limit produced an RDT value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RdtBranch {
    Voltage,
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdtEstimate {
    pub seconds: f64,
    pub branch: RdtBranch,
}

/// Outcome of the temperature-limit search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TmaxOutcome {
    Reached { time_s: f64, iterations: usize },
    NotReached,
}

/// Voltage-limited RDT source: a trained net, or the simulation oracle.
#[derive(Debug, Clone)]
pub enum VminSource {
    Net(NeuralNet),
    Oracle,
}

/// RDT feature order fed to the net: the five states, the applied current,
/// and the ambient temperature.
pub fn rdt_features(state: &CellState, i: f64, t_amb: f64) -> [f64; 7] {
    let x = state.as_array();
    [x[0], x[1], x[2], x[3], x[4], i, t_amb]
}

/// Ground truth for the voltage-limited RDT: constant-current forward
/// simulation at 1 s steps with sub-second refinement by bisection on the
/// exact propagation. Errors with `CapExceeded` if the cutoff is not
/// reached within `cap_s`.
pub fn rdt_vmin_oracle(
    model: &HybridModel,
    x: &CellState,
    i: f64,
    t_amb: f64,
    v_min: f64,
    cap_s: f64,
) -> Result<f64> {
    if !(i > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "RDT oracle requires i > 0, got {i}"
        )));
    }
    x.ensure_finite()?;
    let mut scratch = model.scratch();
    if model.voltage_with(x, i, &mut scratch)? < v_min {
        return Ok(0.0);
    }
    let prop = crate::model::StepPropagator::new(model.params(), i, t_amb, 1.0)?;
    let mut prev = *x;
    let mut t_prev = 0.0f64;
    loop {
        if t_prev >= cap_s {
            return Err(Error::CapExceeded {
                cap_s,
                current_a: i,
            });
        }
        let next = prop.step(&prev);
        next.ensure_finite()?;
        let v = model.voltage_with(&next, i, &mut scratch)?;
        if v < v_min {
            // Crossing inside (t_prev, t_prev + 1]; refine on the exact
            // propagation from the last good state.
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            while hi - lo > 0.01 {
                let mid = 0.5 * (lo + hi);
                let xm = crate::model::propagate(&prev, i, t_amb, mid, model.params())?;
                if model.voltage_with(&xm, i, &mut scratch)? < v_min {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(t_prev + 0.5 * (lo + hi));
        }
        prev = next;
        t_prev += 1.0;
    }
}

/// Ground truth for the temperature-limited RDT: 1 s scan of the exact
/// propagation with sub-second bisection refinement, up to `scan_limit_s`.
/// Returns `None` if the ceiling is not reached within the scan window.
pub fn rdt_tmax_oracle(
    model: &HybridModel,
    x: &CellState,
    i: f64,
    t_amb: f64,
    t_max: f64,
    scan_limit_s: f64,
) -> Result<Option<f64>> {
    let mut scratch = model.scratch();
    if model.temperature_with(x, &mut scratch)? > t_max {
        return Ok(Some(0.0));
    }
    let prop = crate::model::StepPropagator::new(model.params(), i, t_amb, 1.0)?;
    let mut prev = *x;
    let mut t_prev = 0.0f64;
    while t_prev < scan_limit_s {
        let next = prop.step(&prev);
        let t_val = model.temperature_with(&next, &mut scratch)?;
        if t_val > t_max {
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            while hi - lo > 0.01 {
                let mid = 0.5 * (lo + hi);
                let xm = crate::model::propagate(&prev, i, t_amb, mid, model.params())?;
                if model.temperature_with(&xm, &mut scratch)? > t_max {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(t_prev + 0.5 * (lo + hi)));
        }
        prev = next;
        t_prev += 1.0;
    }
    Ok(None)
}

/// Dual-limit simulation oracle: the smaller of the voltage- and
/// temperature-limited times, both from forward simulation.
pub fn rdt_dual_oracle(
    model: &HybridModel,
    x: &CellState,
    i: f64,
    t_amb: f64,
    v_min: f64,
    t_max: f64,
    cap_s: f64,
) -> Result<f64> {
    let dt_v = rdt_vmin_oracle(model, x, i, t_amb, v_min, cap_s)?;
    if dt_v <= 0.0 {
        return Ok(0.0);
    }
    match rdt_tmax_oracle(model, x, i, t_amb, t_max, dt_v)? {
        Some(dt_t) => Ok(dt_t.min(dt_v)),
        None => Ok(dt_v),
    }
}

/// The RDT predictor: a voltage-limit head (net or oracle) combined with a
/// checkpoint-plus-bisection search on the exactly propagated temperature.
/// The voltage floor and temperature ceiling are fixed at construction.
#[derive(Debug, Clone)]
pub struct RdtPredictor {
    source: VminSource,
    v_min: f64,
    t_max: f64,
    checkpoints_m: usize,
    temp_tol_c: f64,
    time_tol_s: f64,
    horizon_cap_s: f64,
}

impl RdtPredictor {
    /// Build a predictor for the given limits, validated against the model
    /// it will run on.
    pub fn new(source: VminSource, model: &HybridModel, v_min: f64, t_max: f64) -> Result<Self> {
        let ocv = &model.params().ndc.ocv;
        if !(v_min >= ocv.u_min() && v_min <= ocv.u_max()) {
            return Err(Error::InvalidParameter(format!(
                "v_min {v_min} outside the OCV range [{}, {}]",
                ocv.u_min(),
                ocv.u_max()
            )));
        }
        if t_max.is_nan() {
            return Err(Error::NonFinite("t_max".into()));
        }
        if let VminSource::Net(net) = &source {
            if net.input_dim() != 7 {
                return Err(Error::DimensionMismatch {
                    expected: 7,
                    got: net.input_dim(),
                    context: "RDT net input (5 states + current + ambient)".into(),
                });
            }
            if net.output_dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: net.output_dim(),
                    context: "RDT net output".into(),
                });
            }
        }
        Ok(Self {
            source,
            v_min,
            t_max,
            checkpoints_m: 16,
            temp_tol_c: 0.05,
            time_tol_s: 0.5,
            horizon_cap_s: 7200.0,
        })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Same predictor with a different temperature ceiling (used by the
    /// ablation runs; `f64::INFINITY` disables the branch).
    pub fn with_t_max(&self, t_max: f64) -> Self {
        let mut p = self.clone();
        p.t_max = t_max;
        p
    }

    pub fn checkpoints_m(&self) -> usize {
        self.checkpoints_m
    }

    pub fn time_tol_s(&self) -> f64 {
        self.time_tol_s
    }

    pub fn set_checkpoints_m(&mut self, m: usize) -> Result<()> {
        if m < 2 {
            return Err(Error::InvalidParameter(
                "need at least 2 temperature checkpoints".into(),
            ));
        }
        self.checkpoints_m = m;
        Ok(())
    }

    pub fn set_horizon_cap(&mut self, cap_s: f64) {
        self.horizon_cap_s = cap_s;
    }

    pub fn horizon_cap_s(&self) -> f64 {
        self.horizon_cap_s
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self.source, VminSource::Oracle)
    }

    pub fn net(&self) -> Option<&NeuralNet> {
        match &self.source {
            VminSource::Net(n) => Some(n),
            VminSource::Oracle => None,
        }
    }

    /// Voltage-limited RDT, clamped at zero.
    pub fn predict_rdt_vmin(
        &self,
        model: &HybridModel,
        x: &CellState,
        i: f64,
        t_amb: f64,
    ) -> Result<f64> {
        match &self.source {
            VminSource::Net(net) => {
                let feats = rdt_features(x, i, t_amb);
                Ok(net.forward_scalar(&feats)?.max(0.0))
            }
            VminSource::Oracle => {
                rdt_vmin_oracle(model, x, i, t_amb, self.v_min, self.horizon_cap_s)
            }
        }
    }

    /// Search for the temperature-ceiling crossing inside `(0, upper]`:
    /// evaluate the exactly propagated temperature at `checkpoints_m`
    /// evenly spaced checkpoints; if none exceeds the ceiling the limit is
    /// not reached, otherwise bisect the first bracketing interval down to
    /// the temperature or time tolerance, whichever is met first.
    pub fn find_rdt_tmax(
        &self,
        model: &HybridModel,
        x: &CellState,
        i: f64,
        t_amb: f64,
        upper: f64,
    ) -> Result<TmaxOutcome> {
        if !(upper > 0.0 && upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature search upper bound must be finite and > 0, got {upper}"
            )));
        }
        if self.t_max == f64::INFINITY {
            return Ok(TmaxOutcome::NotReached);
        }
        let mut scratch = model.scratch();
        let delta = upper / self.checkpoints_m as f64;
        let prop = crate::model::StepPropagator::new(model.params(), i, t_amb, delta)?;

        // Checkpoint scan; propagator steps chain exactly.
        let mut bracket = None;
        let mut cur = *x;
        if model.temperature_with(&cur, &mut scratch)? > self.t_max {
            bracket = Some(0usize); // already above at dt = 0
        } else {
            for k in 1..=self.checkpoints_m {
                cur = prop.step(&cur);
                if model.temperature_with(&cur, &mut scratch)? > self.t_max {
                    bracket = Some(k);
                    break;
                }
            }
        }
        let Some(k_star) = bracket else {
            return Ok(TmaxOutcome::NotReached);
        };

        let mut lo = k_star.saturating_sub(1) as f64 * delta;
        let mut hi = k_star.max(1) as f64 * delta;
        let mut iterations = 0usize;
        let mut tau = 0.5 * (lo + hi);
        while hi - lo > self.time_tol_s {
            tau = 0.5 * (lo + hi);
            let xm = crate::model::propagate(x, i, t_amb, tau, model.params())?;
            let t_val = model.temperature_with(&xm, &mut scratch)?;
            iterations += 1;
            if (t_val - self.t_max).abs() < self.temp_tol_c {
                return Ok(TmaxOutcome::Reached {
                    time_s: tau,
                    iterations,
                });
            }
            if t_val > self.t_max {
                hi = tau;
            } else {
                lo = tau;
            }
            tau = 0.5 * (lo + hi);
        }
        Ok(TmaxOutcome::Reached {
            time_s: tau,
            iterations,
        })
    }

    /// Full RDT with the limiting branch: the voltage-limited time, cut
    /// down by the temperature crossing if one occurs earlier.
    pub fn predict_rdt_detail(
        &self,
        model: &HybridModel,
        x: &CellState,
        i: f64,
        t_amb: f64,
    ) -> Result<RdtEstimate> {
        if !(i > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "RDT prediction requires i > 0, got {i}"
            )));
        }
        let dt_v = self.predict_rdt_vmin(model, x, i, t_amb)?;
        if dt_v <= 0.0 {
            return Ok(RdtEstimate {
                seconds: 0.0,
                branch: RdtBranch::Voltage,
            });
        }
        match self.find_rdt_tmax(model, x, i, t_amb, dt_v)? {
            TmaxOutcome::Reached { time_s, .. } => Ok(RdtEstimate {
                seconds: time_s.min(dt_v),
                branch: RdtBranch::Temperature,
            }),
            TmaxOutcome::NotReached => Ok(RdtEstimate {
                seconds: dt_v,
                branch: RdtBranch::Voltage,
            }),
        }
    }

    /// Full RDT in seconds.
    pub fn predict_rdt(
        &self,
        model: &HybridModel,
        x: &CellState,
        i: f64,
        t_amb: f64,
    ) -> Result<f64> {
        Ok(self.predict_rdt_detail(model, x, i, t_amb)?.seconds)
    }
}

/// Default RDT net architecture.
pub fn default_rdt_net(seed: u64) -> NeuralNet {
    NeuralNet::glorot(&[7, 64, 64, 1], Activation::Tanh, seed)
}

/// Training pairs from labelled samples.
pub fn training_pairs(samples: &[RdtSample]) -> Vec<(Vec<f64>, Vec<f64>)> {
    samples
        .iter()
        .map(|s| {
            (
                rdt_features(&s.state, s.current_a, s.t_amb).to_vec(),
                vec![s.rdt_vmin_s],
            )
        })
        .collect()
}

/// Train the voltage-limit head on labelled samples.
pub fn train_rdt_net(
    samples: &[RdtSample],
    cfg: &TrainConfig,
) -> Result<(NeuralNet, Vec<LossRecord>)> {
    let pairs = training_pairs(samples);
    let net = default_rdt_net(cfg.seed);
    mlp::train(&net, &pairs, cfg)
}

/// One row of the predictor validation report.
#[derive(Debug, Clone, Copy)]
pub struct RdtValidationRow {
    pub state: CellState,
    pub current_a: f64,
    pub t_amb: f64,
    pub oracle_s: f64,
    pub predicted_s: f64,
    pub branch: RdtBranch,
}

#[derive(Debug, Clone)]
pub struct RdtValidation {
    pub rows: Vec<RdtValidationRow>,
    pub mean_abs_err_s: f64,
    /// Fraction of rows within max(2% of oracle, 5 s).
    pub within_tolerance: f64,
}

/// Compare the predictor against the dual-simulation oracle on held-out
/// samples.
pub fn validate_predictor(
    model: &HybridModel,
    predictor: &RdtPredictor,
    samples: &[RdtSample],
    cap_s: f64,
) -> Result<RdtValidation> {
    let mut rows = Vec::with_capacity(samples.len());
    let mut abs_sum = 0.0;
    let mut ok = 0usize;
    for s in samples {
        let oracle = rdt_dual_oracle(
            model,
            &s.state,
            s.current_a,
            s.t_amb,
            predictor.v_min(),
            predictor.t_max(),
            cap_s,
        )?;
        let est = predictor.predict_rdt_detail(model, &s.state, s.current_a, s.t_amb)?;
        let err = (est.seconds - oracle).abs();
        abs_sum += err;
        if err <= (0.02 * oracle).max(5.0) {
            ok += 1;
        }
        rows.push(RdtValidationRow {
            state: s.state,
            current_a: s.current_a,
            t_amb: s.t_amb,
            oracle_s: oracle,
            predicted_s: est.seconds,
            branch: est.branch,
        });
    }
    let n = rows.len().max(1) as f64;
    Ok(RdtValidation {
        mean_abs_err_s: abs_sum / n,
        within_tolerance: ok as f64 / n,
        rows,
    })
}

pub const RDT_VALIDATION_CSV_HEADER: &str =
    "v_b,v_s,v_1,t_core,t_surf,current_a,t_amb,oracle_s,predicted_s,branch";

pub fn write_validation_csv(v: &RdtValidation, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{RDT_VALIDATION_CSV_HEADER}")?;
    for r in &v.rows {
        let x = r.state;
        writeln!(
            w,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.3},{:.3},{}",
            x.v_b,
            x.v_s,
            x.v_1,
            x.t_core,
            x.t_surf,
            r.current_a,
            r.t_amb,
            r.oracle_s,
            r.predicted_s,
            match r.branch {
                RdtBranch::Voltage => "voltage",
                RdtBranch::Temperature => "temperature",
            }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rest_state_for_soc, CurrentProfile, ModelParams};

    fn model() -> HybridModel {
        HybridModel::physics_only(ModelParams::default_calibrated()).unwrap()
    }

    fn oracle_predictor(m: &HybridModel) -> RdtPredictor {
        RdtPredictor::new(VminSource::Oracle, m, 3.0, 50.0).unwrap()
    }

    #[test]
    fn oracle_is_zero_at_the_cutoff() {
        let m = model();
        let x = CellState::rest(3.0, 25.0); // rest OCV exactly at the floor
        let rdt = rdt_vmin_oracle(&m, &x, 5.0, 25.0, 3.0, 7200.0).unwrap();
        assert_eq!(rdt, 0.0);
    }

    #[test]
    fn oracle_matches_simulated_crossing_at_1c() {
        let m = model();
        let x0 = rest_state_for_soc(m.params(), 1.0, 25.0);
        let i = m.c_rate_to_amps(1.0);
        let rdt = rdt_vmin_oracle(&m, &x0, i, 25.0, 3.0, 7200.0).unwrap();
        let traj = m
            .simulate(&x0, &CurrentProfile::constant(i, 4000.0), 1.0)
            .unwrap();
        let crossing = traj.first_voltage_crossing(3.0).expect("1C run crosses 3 V");
        assert!(
            (rdt - crossing).abs() <= 0.02 * crossing,
            "oracle {rdt} vs simulate crossing {crossing}"
        );
    }

    #[test]
    fn oracle_decreases_when_current_doubles() {
        let m = model();
        let x0 = rest_state_for_soc(m.params(), 0.9, 25.0);
        let two = rdt_vmin_oracle(&m, &x0, m.c_rate_to_amps(2.0), 25.0, 3.0, 7200.0).unwrap();
        let four = rdt_vmin_oracle(&m, &x0, m.c_rate_to_amps(4.0), 25.0, 3.0, 7200.0).unwrap();
        assert!(four < two, "RDT at 4C ({four}) not below 2C ({two})");
    }

    #[test]
    fn oracle_errors_past_the_cap() {
        let m = model();
        let x0 = rest_state_for_soc(m.params(), 1.0, 25.0);
        let tiny = m.c_rate_to_amps(0.1);
        match rdt_vmin_oracle(&m, &x0, tiny, 25.0, 3.0, 7200.0) {
            Err(Error::CapExceeded { .. }) => {}
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn oracle_rejects_nonpositive_current() {
        let m = model();
        let x0 = rest_state_for_soc(m.params(), 1.0, 25.0);
        assert!(rdt_vmin_oracle(&m, &x0, 0.0, 25.0, 3.0, 7200.0).is_err());
    }

    #[test]
    fn tmax_not_reached_at_low_current() {
        let m = model();
        let p = oracle_predictor(&m);
        let x0 = rest_state_for_soc(m.params(), 1.0, 25.0);
        let out = p
            .find_rdt_tmax(&m, &x0, m.c_rate_to_amps(0.5), 25.0, 600.0)
            .unwrap();
        assert_eq!(out, TmaxOutcome::NotReached);
    }

    #[test]
    fn tmax_crossing_matches_fine_step_reference() {
        // 8C from a warm state; compare the checkpoint+bisection crossing
        // against a 10 ms RK4 integration of the same (linear) dynamics.
        let m = model();
        let p = oracle_predictor(&m);
        let x0 = CellState::new(4.05, 4.0, -0.1, 34.0, 31.0);
        let i = m.c_rate_to_amps(8.0);
        let out = p.find_rdt_tmax(&m, &x0, i, 25.0, 400.0).unwrap();
        let TmaxOutcome::Reached { time_s, iterations } = out else {
            panic!("expected a crossing");
        };
        assert!(iterations >= 1);

        let cell = crate::datagen::ReferenceCell::ideal(m.params().clone());
        let fine = crate::datagen::reference_simulate(
            &cell,
            &x0,
            &CurrentProfile::constant(i, 400.0),
            0.01,
            25.0,
            0.25,
        )
        .unwrap();
        let rk4_crossing = fine
            .points
            .iter()
            .find(|pt| pt.t_true > 50.0)
            .map(|pt| pt.time_s)
            .expect("fine-step run crosses 50 degC");
        assert!(
            (time_s - rk4_crossing).abs() <= 1.0,
            "bisection {time_s} vs fine-step {rk4_crossing}"
        );
        // The temperature at the returned time sits at the ceiling.
        let x_at = crate::model::propagate(&x0, i, 25.0, time_s, m.params()).unwrap();
        let t_at = m.temperature(&x_at).unwrap();
        assert!((t_at - 50.0).abs() < 0.5, "T at crossing {t_at}");
    }

    #[test]
    fn tmax_immediate_violation_returns_near_zero() {
        let m = model();
        let p = oracle_predictor(&m);
        let x_hot = CellState::new(4.0, 3.95, -0.05, 58.0, 54.0);
        let out = p
            .find_rdt_tmax(&m, &x_hot, m.c_rate_to_amps(2.0), 25.0, 300.0)
            .unwrap();
        let TmaxOutcome::Reached { time_s, .. } = out else {
            panic!("expected immediate crossing");
        };
        assert!(time_s <= 1.0, "immediate violation reported at {time_s} s");
    }

    #[test]
    fn tmax_bisection_iteration_count_is_bounded() {
        let m = model();
        let p = oracle_predictor(&m);
        let x0 = CellState::new(4.05, 4.0, -0.1, 34.0, 31.0);
        let i = m.c_rate_to_amps(8.0);
        for upper in [120.0, 300.0, 777.0, 2000.0] {
            if let TmaxOutcome::Reached { iterations, .. } =
                p.find_rdt_tmax(&m, &x0, i, 25.0, upper).unwrap()
            {
                let interval = upper / p.checkpoints_m() as f64;
                let bound = (interval / p.time_tol_s()).log2().ceil() as usize + 1;
                assert!(
                    iterations <= bound,
                    "{iterations} bisection steps for interval {interval} (bound {bound})"
                );
            }
        }
    }

    #[test]
    fn combined_rdt_never_exceeds_voltage_branch() {
        let m = model();
        let p = oracle_predictor(&m);
        for (soc, c) in [(1.0, 2.0), (0.8, 5.0), (0.6, 8.0), (0.4, 3.0)] {
            let x = rest_state_for_soc(m.params(), soc, 25.0);
            let i = m.c_rate_to_amps(c);
            let both = p.predict_rdt(&m, &x, i, 25.0).unwrap();
            let v_only = p.predict_rdt_vmin(&m, &x, i, 25.0).unwrap();
            assert!(both <= v_only + 1e-9);
        }
    }

    #[test]
    fn hot_state_is_temperature_limited() {
        let m = model();
        let p = oracle_predictor(&m);
        let x = CellState::new(4.1, 4.05, -0.05, 46.0, 43.0);
        let i = m.c_rate_to_amps(7.0);
        let est = p.predict_rdt_detail(&m, &x, i, 25.0).unwrap();
        assert_eq!(est.branch, RdtBranch::Temperature);
        let v_limited = p.predict_rdt_vmin(&m, &x, i, 25.0).unwrap();
        assert!(est.seconds < v_limited);
        // And the value is the temperature-branch crossing.
        let TmaxOutcome::Reached { time_s, .. } =
            p.find_rdt_tmax(&m, &x, i, 25.0, v_limited).unwrap()
        else {
            panic!("ceiling should be hit");
        };
        assert_eq!(est.seconds, time_s);
    }

    #[test]
    fn oracle_mode_agrees_with_dual_simulation_on_a_grid() {
        // The predictor with the oracle voltage branch is the reference
        // implementation of the min structure; sweep a grid and compare
        // against the plain dual-simulation oracle.
        let m = model();
        let mut p = oracle_predictor(&m);
        p.set_horizon_cap(30_000.0); // low-rate corners exceed the 2 h default
        let mut checked = 0usize;
        for soc_step in 0..10 {
            let soc = 0.25 + 0.075 * soc_step as f64;
            for c_step in 0..20 {
                let c = 0.4 + 0.38 * c_step as f64;
                let x = rest_state_for_soc(m.params(), soc, 25.0);
                let i = m.c_rate_to_amps(c);
                let combined = p.predict_rdt(&m, &x, i, 25.0).unwrap();
                let dual = rdt_dual_oracle(&m, &x, i, 25.0, 3.0, 50.0, 30_000.0).unwrap();
                let tol = (0.02 * dual).max(5.0);
                assert!(
                    (combined - dual).abs() <= tol,
                    "soc {soc} c {c}: predictor {combined} vs dual oracle {dual}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 200);
    }

    #[test]
    fn net_source_clamps_negative_outputs() {
        let m = model();
        // A net with zero weights and strongly negative bias predicts a
        // negative time; the predictor clamps it.
        let mut net = default_rdt_net(1);
        for layer in &mut net.layers {
            layer.weights.fill(0.0);
            layer.biases.fill(0.0);
        }
        net.layers.last_mut().unwrap().biases[0] = -500.0;
        let p = RdtPredictor::new(VminSource::Net(net), &m, 3.0, 50.0).unwrap();
        let x = rest_state_for_soc(m.params(), 0.7, 25.0);
        let rdt = p.predict_rdt_vmin(&m, &x, 5.0, 25.0).unwrap();
        assert_eq!(rdt, 0.0);
    }

    #[test]
    fn predictor_rejects_wrong_net_width() {
        let m = model();
        let bad = NeuralNet::glorot(&[5, 8, 1], Activation::Tanh, 0);
        assert!(RdtPredictor::new(VminSource::Net(bad), &m, 3.0, 50.0).is_err());
    }
}
