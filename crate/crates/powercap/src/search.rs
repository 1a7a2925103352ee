//! Maximum-discharge-current search over a prediction horizon plus a
//! mandatory emergency-landing segment.
//!
//! Two solvers share the same bisection bracketing:
//! - [`shortcut_search`] verifies each candidate current by simulating the
//!   whole window at 1 s resolution and checking the limits at every step;
//! - [`rdt_guided_search`] compares remaining-discharge-time predictions
//!   against the two horizon lengths, with a single exact horizon jump per
//!   iteration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellState, HybridModel, StepPropagator};
use crate::rdt::{RdtBranch, RdtPredictor};

/// Horizons, limits and bisection tolerance for a search. Currents are in
/// amperes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Prediction horizon H in seconds.
    pub h: f64,
    /// Emergency-landing horizon in seconds (0 disables the segment).
    pub h_el: f64,
    /// Emergency-landing current in amperes.
    pub i_el: f64,
    /// Lower edge of the current search range.
    pub i_min: f64,
    /// Upper edge of the current search range.
    pub i_max_bound: f64,
    /// Discharge voltage floor.
    pub v_min: f64,
    /// Temperature ceiling (`f64::INFINITY` disables it).
    pub t_max: f64,
    /// Bisection tolerance on current.
    pub eps: f64,
}

impl SearchConfig {
    /// Default flight constraints for the 2.5 Ah cell: search 0..8C,
    /// 3.0 V floor, 50 degC ceiling, 5C/105 s emergency segment, 0.01C
    /// tolerance.
    pub fn default_for(model: &HybridModel) -> Self {
        Self {
            h: 10.0,
            h_el: 105.0,
            i_el: model.c_rate_to_amps(5.0),
            i_min: 0.0,
            i_max_bound: model.c_rate_to_amps(8.0),
            v_min: 3.0,
            t_max: 50.0,
            eps: 0.025,
        }
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i_min < self.i_max_bound) {
            return Err(Error::InvalidParameter(format!(
                "need i_min < i_max_bound, got [{}, {}]",
                self.i_min, self.i_max_bound
            )));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be > 0, got {}",
                self.h
            )));
        }
        if !(self.h_el >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "emergency horizon must be >= 0, got {}",
                self.h_el
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bisection tolerance must be > 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    /// Worst-case bisection iteration count for this bracket and tolerance.
    pub fn iteration_bound(&self) -> usize {
        ((self.i_max_bound - self.i_min) / self.eps).log2().ceil() as usize + 1
    }
}

/// Which limit blocks any further current increase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BindingConstraint {
    Voltage,
    Temperature,
    /// The search topped out at the configured current bound.
    CurrentBound,
    /// Probing above the result stayed feasible (within tolerance noise).
    None,
}

/// Feasibility verdict for one candidate current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feasibility {
    Feasible,
    Violated {
        time_s: f64,
        constraint: BindingConstraint,
    },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible)
    }
}

/// Search outcome. `wall_time_s` covers the bisection loop only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub i_max: f64,
    pub p_max: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub binding: BindingConstraint,
}

/// Simulate the full window at 1 s resolution (`[0, H]` at `i`, then
/// `(H, H + H_el]` at the emergency current) and report the first limit
/// violation, if any.
pub fn feasible_over_horizon(
    model: &HybridModel,
    x: &CellState,
    i: f64,
    cfg: &SearchConfig,
) -> Result<Feasibility> {
    cfg.validate()?;
    x.ensure_finite()?;
    let mut scratch = model.scratch();
    let t_amb = model.t_amb();

    let mut cur = *x;
    let mut t = 0.0f64;
    for (current, duration) in [(i, cfg.h), (cfg.i_el, cfg.h_el)] {
        if duration <= 0.0 {
            continue;
        }
        let n_full = (duration / 1.0).floor() as usize;
        let remainder = duration - n_full as f64;
        let prop = StepPropagator::new(model.params(), current, t_amb, 1.0)?;
        for _ in 0..n_full {
            cur = prop.step(&cur);
            t += 1.0;
            if let Some(v) = violation(model, &cur, current, cfg, &mut scratch, t)? {
                return Ok(v);
            }
        }
        if remainder > 1e-9 {
            cur = crate::model::propagate(&cur, current, t_amb, remainder, model.params())?;
            t += remainder;
            if let Some(v) = violation(model, &cur, current, cfg, &mut scratch, t)? {
                return Ok(v);
            }
        }
    }
    Ok(Feasibility::Feasible)
}

fn violation(
    model: &HybridModel,
    x: &CellState,
    current: f64,
    cfg: &SearchConfig,
    scratch: &mut crate::model::ModelScratch,
    t: f64,
) -> Result<Option<Feasibility>> {
    if model.voltage_with(x, current, scratch)? < cfg.v_min {
        return Ok(Some(Feasibility::Violated {
            time_s: t,
            constraint: BindingConstraint::Voltage,
        }));
    }
    if model.temperature_with(x, scratch)? > cfg.t_max {
        return Ok(Some(Feasibility::Violated {
            time_s: t,
            constraint: BindingConstraint::Temperature,
        }));
    }
    Ok(None)
}

/// Shared bisection skeleton. `feasible` decides each candidate; the loop
/// terminates inside the feasible branch once the candidate sits within
/// `eps` of the upper bracket, or when the bracket itself collapses (which
/// covers the all-infeasible case).
fn bisect_current<F: FnMut(f64) -> Result<bool>>(
    cfg: &SearchConfig,
    mut feasible: F,
) -> Result<(f64, bool, usize)> {
    let mut lo = cfg.i_min;
    let mut hi = cfg.i_max_bound;
    let mut lo_verified = false;
    let mut iterations = 0usize;
    loop {
        let i = 0.5 * (lo + hi);
        iterations += 1;
        if feasible(i)? {
            if (i - hi).abs() < cfg.eps {
                return Ok((i, true, iterations));
            }
            lo = i;
            lo_verified = true;
        } else {
            hi = i;
        }
        if hi - lo < cfg.eps {
            return Ok((lo, lo_verified, iterations));
        }
    }
}

/// Bisection on the candidate current with full-window simulation as the
/// feasibility check.
pub fn shortcut_search(
    model: &HybridModel,
    x: &CellState,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let start = Instant::now();
    let (i_max, feasible, iterations) =
        bisect_current(cfg, |i| Ok(feasible_over_horizon(model, x, i, cfg)?.is_feasible()))?;
    let wall_time_s = start.elapsed().as_secs_f64();

    let (i_max, p_max) = finish(model, x, cfg, i_max, feasible)?;
    let binding = if !feasible {
        shortcut_binding(model, x, cfg, i_max)?
    } else if i_max + 2.0 * cfg.eps > cfg.i_max_bound {
        BindingConstraint::CurrentBound
    } else {
        shortcut_binding(model, x, cfg, i_max)?
    };
    Ok(SearchResult {
        i_max,
        p_max,
        feasible,
        iterations,
        wall_time_s,
        binding,
    })
}

fn shortcut_binding(
    model: &HybridModel,
    x: &CellState,
    cfg: &SearchConfig,
    i_max: f64,
) -> Result<BindingConstraint> {
    let probe = (i_max + 2.0 * cfg.eps).min(cfg.i_max_bound);
    match feasible_over_horizon(model, x, probe, cfg)? {
        Feasibility::Violated { constraint, .. } => Ok(constraint),
        Feasibility::Feasible => Ok(BindingConstraint::None),
    }
}

/// Bisection guided by RDT predictions: a candidate is accepted when the
/// predicted RDT at the present state covers the horizon AND, after one
/// exact jump to the horizon end, the predicted RDT at the emergency
/// current covers the landing segment.
pub fn rdt_guided_search(
    model: &HybridModel,
    predictor: &RdtPredictor,
    x: &CellState,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let t_amb = model.t_amb();
    let start = Instant::now();
    let (i_max, feasible, iterations) = bisect_current(cfg, |i| {
        Ok(rdt_feasible(model, predictor, x, i, cfg, t_amb)?.is_none())
    })?;
    let wall_time_s = start.elapsed().as_secs_f64();

    let (i_max, p_max) = finish(model, x, cfg, i_max, feasible)?;
    let binding = if i_max + 2.0 * cfg.eps > cfg.i_max_bound && feasible {
        BindingConstraint::CurrentBound
    } else {
        let probe = (i_max + 2.0 * cfg.eps).min(cfg.i_max_bound);
        match rdt_feasible(model, predictor, x, probe, cfg, t_amb)? {
            Some(branch) => match branch {
                RdtBranch::Voltage => BindingConstraint::Voltage,
                RdtBranch::Temperature => BindingConstraint::Temperature,
            },
            None => BindingConstraint::None,
        }
    };
    Ok(SearchResult {
        i_max,
        p_max,
        feasible,
        iterations,
        wall_time_s,
        binding,
    })
}

/// `None` when the candidate is feasible; otherwise the branch that cut the
/// RDT short.
fn rdt_feasible(
    model: &HybridModel,
    predictor: &RdtPredictor,
    x: &CellState,
    i: f64,
    cfg: &SearchConfig,
    t_amb: f64,
) -> Result<Option<RdtBranch>> {
    if i <= 0.0 {
        // Zero draw cannot violate anything over the main horizon; only the
        // emergency tail can.
        let x_h = crate::model::propagate(x, i, t_amb, cfg.h, model.params())?;
        return tail_check(model, predictor, &x_h, cfg, t_amb);
    }
    let first = predictor.predict_rdt_detail(model, x, i, t_amb)?;
    if first.seconds < cfg.h {
        return Ok(Some(first.branch));
    }
    let x_h = crate::model::propagate(x, i, t_amb, cfg.h, model.params())?;
    tail_check(model, predictor, &x_h, cfg, t_amb)
}

fn tail_check(
    model: &HybridModel,
    predictor: &RdtPredictor,
    x_h: &CellState,
    cfg: &SearchConfig,
    t_amb: f64,
) -> Result<Option<RdtBranch>> {
    if cfg.h_el <= 0.0 || cfg.i_el <= 0.0 {
        return Ok(None);
    }
    let second = predictor.predict_rdt_detail(model, x_h, cfg.i_el, t_amb)?;
    if second.seconds < cfg.h_el {
        Ok(Some(second.branch))
    } else {
        Ok(None)
    }
}

/// Clamp the infeasible outcome and evaluate the resulting power limit.
fn finish(
    model: &HybridModel,
    x: &CellState,
    cfg: &SearchConfig,
    i_max: f64,
    feasible: bool,
) -> Result<(f64, f64)> {
    if !feasible {
        // Nothing in the bracket was verified; report the conservative
        // floor with zero power.
        let i = cfg.i_min.max(0.0);
        return Ok((i, 0.0));
    }
    let p = power_limit(model, x, i_max, cfg)?;
    Ok((i_max, p))
}

/// Power limit for a chosen current: propagate to the horizon end under
/// that current and evaluate `i * V(t + H)`.
pub fn power_limit(model: &HybridModel, x: &CellState, i_max: f64, cfg: &SearchConfig) -> Result<f64> {
    if i_max == 0.0 {
        return Ok(0.0);
    }
    let x_h = crate::model::propagate(x, i_max, model.t_amb(), cfg.h, model.params())?;
    let v = model.voltage(&x_h, i_max)?;
    Ok(i_max * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::{mission_states, MissionProfile};
    use crate::model::{rest_state_for_soc, ModelParams};
    use crate::rdt::VminSource;

    fn model() -> HybridModel {
        HybridModel::physics_only(ModelParams::default_calibrated()).unwrap()
    }

    fn cfg(model: &HybridModel) -> SearchConfig {
        SearchConfig::default_for(model)
    }

    fn oracle_predictor(m: &HybridModel, c: &SearchConfig) -> RdtPredictor {
        let mut p = RdtPredictor::new(VminSource::Oracle, m, c.v_min, c.t_max).unwrap();
        p.set_horizon_cap(30_000.0);
        p
    }

    fn twenty_mission_states(m: &HybridModel) -> Vec<CellState> {
        mission_states(m, &MissionProfile::default_evtol(), 54)
            .unwrap()
            .into_iter()
            .map(|(_, x)| x)
            .collect()
    }

    #[test]
    fn no_load_is_feasible_on_a_fresh_cell() {
        let m = model();
        let mut c = cfg(&m);
        c.h_el = 0.0;
        let x = rest_state_for_soc(m.params(), 1.0, 25.0);
        assert!(feasible_over_horizon(&m, &x, 0.0, &c).unwrap().is_feasible());
    }

    #[test]
    fn top_current_on_a_depleted_cell_violates_voltage() {
        let m = model();
        let c = cfg(&m).with_h(10.0);
        let x = rest_state_for_soc(m.params(), 0.04, 25.0);
        match feasible_over_horizon(&m, &x, c.i_max_bound, &c).unwrap() {
            Feasibility::Violated { constraint, .. } => {
                assert_eq!(constraint, BindingConstraint::Voltage)
            }
            Feasibility::Feasible => panic!("depleted cell should not sustain 8C"),
        }
    }

    #[test]
    fn feasibility_matches_a_direct_trajectory_scan() {
        // The verdict must agree with scanning a plainly simulated
        // trajectory of the same schedule for violating samples.
        let m = model();
        let c = cfg(&m).with_h(120.0);
        for (soc, i_c) in [(1.0, 8.0), (0.7, 6.0), (0.45, 5.0), (0.25, 3.0), (0.12, 2.0)] {
            let x = rest_state_for_soc(m.params(), soc, 25.0);
            let i = m.c_rate_to_amps(i_c);
            let verdict = feasible_over_horizon(&m, &x, i, &c).unwrap().is_feasible();

            let profile = crate::model::CurrentProfile::new(vec![
                crate::model::ProfileSegment { current_a: i, duration_s: c.h },
                crate::model::ProfileSegment { current_a: c.i_el, duration_s: c.h_el },
            ]);
            let traj = m.simulate(&x, &profile, 1.0).unwrap();
            let clean = traj
                .points
                .iter()
                .skip(1) // feasibility checks (0, H+H_el], not the instant 0
                .all(|p| p.v_hybrid >= c.v_min && p.t_hybrid <= c.t_max);
            assert_eq!(verdict, clean, "soc {soc}, {i_c}C");
        }
    }

    #[test]
    fn fresh_cell_short_horizon_tops_out() {
        let m = model();
        let c = cfg(&m).with_h(10.0);
        let x = rest_state_for_soc(m.params(), 1.0, 25.0);
        let r = shortcut_search(&m, &x, &c).unwrap();
        assert!(r.feasible);
        assert!(
            r.i_max >= c.i_max_bound - c.eps,
            "fresh cell i_max {} below the 8C bound",
            r.i_max
        );
        assert_eq!(r.binding, BindingConstraint::CurrentBound);
    }

    #[test]
    fn depleted_cell_is_infeasible_or_near_floor() {
        let m = model();
        let c = cfg(&m).with_h(60.0);
        let x = rest_state_for_soc(m.params(), 0.02, 25.0);
        let r = shortcut_search(&m, &x, &c).unwrap();
        assert!(!r.feasible || r.i_max <= c.i_min + 4.0 * c.eps);
        if !r.feasible {
            assert_eq!(r.i_max, 0.0);
            assert_eq!(r.p_max, 0.0);
        }
    }

    #[test]
    fn bisection_matches_exhaustive_grid_search() {
        let m = model();
        let c = cfg(&m).with_h(60.0);
        let states = twenty_mission_states(&m);
        for x in states.iter().take(10) {
            let r = shortcut_search(&m, x, &c).unwrap();
            // Exhaustive scan at eps/4 granularity.
            let mut best = None;
            let steps = ((c.i_max_bound - c.i_min) / (c.eps / 4.0)) as usize;
            for k in (0..=steps).rev() {
                let i = c.i_min + k as f64 * (c.eps / 4.0);
                if feasible_over_horizon(&m, x, i, &c).unwrap().is_feasible() {
                    best = Some(i);
                    break;
                }
            }
            let best = best.expect("grid search found nothing feasible");
            assert!(
                (r.i_max - best).abs() <= c.eps,
                "bisection {} vs grid {}",
                r.i_max,
                best
            );
        }
    }

    #[test]
    fn rdt_guided_with_oracle_matches_shortcut() {
        let m = model();
        let c = cfg(&m).with_h(180.0);
        let p = oracle_predictor(&m, &c);
        for (k, x) in twenty_mission_states(&m).iter().enumerate() {
            let a = shortcut_search(&m, x, &c).unwrap();
            let b = rdt_guided_search(&m, &p, x, &c).unwrap();
            assert!(
                (a.i_max - b.i_max).abs() <= c.eps,
                "state {k}: shortcut {} vs rdt-guided {}",
                a.i_max,
                b.i_max
            );
            assert_eq!(a.feasible, b.feasible, "state {k}");
        }
    }

    #[test]
    fn power_limit_zero_current_is_zero_watts() {
        let m = model();
        let c = cfg(&m);
        let x = rest_state_for_soc(m.params(), 0.8, 25.0);
        assert_eq!(power_limit(&m, &x, 0.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn power_limit_voltage_stays_bracketed() {
        let m = model();
        let c = cfg(&m).with_h(10.0);
        let x = rest_state_for_soc(m.params(), 1.0, 25.0);
        let r = shortcut_search(&m, &x, &c).unwrap();
        let v_implied = r.p_max / r.i_max;
        assert!(v_implied >= c.v_min, "implied voltage {v_implied}");
        assert!(v_implied <= m.params().ndc.ocv.u_max());
        // 8C at or above the floor voltage means at least 60 W.
        assert!(r.p_max >= 60.0, "fresh-cell p_max {}", r.p_max);
    }

    #[test]
    fn iteration_count_respects_the_bound() {
        let m = model();
        let c = cfg(&m).with_h(60.0);
        let bound = c.iteration_bound();
        assert_eq!(bound, 11);
        let p = oracle_predictor(&m, &c);
        for x in twenty_mission_states(&m) {
            let a = shortcut_search(&m, &x, &c).unwrap();
            let b = rdt_guided_search(&m, &p, &x, &c).unwrap();
            assert!(a.iterations <= bound, "shortcut took {} iterations", a.iterations);
            assert!(b.iterations <= bound, "rdt-guided took {} iterations", b.iterations);
        }
    }

    #[test]
    fn result_is_sandwiched_by_feasibility_probes() {
        let m = model();
        let c = cfg(&m).with_h(300.0);
        for x in twenty_mission_states(&m) {
            let r = shortcut_search(&m, &x, &c).unwrap();
            if !r.feasible || r.i_max >= c.i_max_bound - c.eps {
                continue;
            }
            assert!(
                feasible_over_horizon(&m, &x, r.i_max - c.eps, &c).unwrap().is_feasible(),
                "i_max - eps rejected at {}",
                r.i_max
            );
            assert!(
                !feasible_over_horizon(&m, &x, r.i_max + 2.0 * c.eps, &c).unwrap().is_feasible(),
                "i_max + 2 eps accepted at {}",
                r.i_max
            );
        }
    }

    #[test]
    fn relaxing_constraints_never_reduces_the_limit() {
        let m = model();
        let c = cfg(&m).with_h(300.0);
        for x in twenty_mission_states(&m).into_iter().step_by(4) {
            let full = shortcut_search(&m, &x, &c).unwrap();
            let mut no_tmax = c;
            no_tmax.t_max = f64::INFINITY;
            let relaxed_t = shortcut_search(&m, &x, &no_tmax).unwrap();
            let mut no_el = c;
            no_el.h_el = 0.0;
            let relaxed_el = shortcut_search(&m, &x, &no_el).unwrap();
            assert!(relaxed_t.i_max >= full.i_max, "{} < {}", relaxed_t.i_max, full.i_max);
            assert!(relaxed_el.i_max >= full.i_max, "{} < {}", relaxed_el.i_max, full.i_max);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let m = model();
        let x = rest_state_for_soc(m.params(), 1.0, 25.0);
        let mut c = cfg(&m);
        c.eps = 0.0;
        assert!(shortcut_search(&m, &x, &c).is_err());
        let mut c = cfg(&m);
        c.h = 0.0;
        assert!(shortcut_search(&m, &x, &c).is_err());
        let mut c = cfg(&m);
        c.i_min = c.i_max_bound;
        assert!(shortcut_search(&m, &x, &c).is_err());
    }
}
