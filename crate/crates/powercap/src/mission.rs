//! Mission-profile replay, ablation comparison and the benchmark harness.
//!
//! The cell state is stepped open-loop along a piecewise-constant C-rate
//! schedule at 1 s resolution; every `cadence_s` seconds the selected
//! current-limit searches run for each configured horizon. Between search
//! steps the latest results are carried forward, so there is one record per
//! second of mission time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    rest_state_for_soc, CellState, CurrentProfile, HybridModel, ProfileSegment, StepPropagator,
};
use crate::rdt::RdtPredictor;
use crate::search::{rdt_guided_search, shortcut_search, SearchConfig, SearchResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPhase {
    pub name: String,
    pub c_rate: f64,
    pub duration_s: f64,
}

/// Piecewise-constant C-rate schedule with named phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionProfile {
    pub phases: Vec<MissionPhase>,
}

impl MissionProfile {
    /// The notional flight: 75 s take-off at 5C, 900 s cruise at 1.48C,
    /// 105 s landing at 5C.
    pub fn default_evtol() -> Self {
        Self {
            phases: vec![
                MissionPhase {
                    name: "take-off".into(),
                    c_rate: 5.0,
                    duration_s: 75.0,
                },
                MissionPhase {
                    name: "cruise".into(),
                    c_rate: 1.48,
                    duration_s: 900.0,
                },
                MissionPhase {
                    name: "landing".into(),
                    c_rate: 5.0,
                    duration_s: 105.0,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, p) in self.phases.iter().enumerate() {
            if !(p.duration_s > 0.0 && p.duration_s.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "phase {k} ({}) duration must be > 0",
                    p.name
                )));
            }
            if !(p.c_rate >= 0.0 && p.c_rate.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "phase {k} ({}) C-rate must be >= 0",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration_s(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    pub fn to_current_profile(&self, model: &HybridModel) -> CurrentProfile {
        CurrentProfile::new(
            self.phases
                .iter()
                .map(|p| ProfileSegment {
                    current_a: model.c_rate_to_amps(p.c_rate),
                    duration_s: p.duration_s,
                })
                .collect(),
        )
    }

    /// Phase current (amperes) applying at mission time `t`, with phases
    /// spanning `[start, end)`.
    pub fn current_at(&self, t: f64, model: &HybridModel) -> f64 {
        let mut start = 0.0;
        for p in &self.phases {
            if t < start + p.duration_s {
                return model.c_rate_to_amps(p.c_rate);
            }
            start += p.duration_s;
        }
        self.phases
            .last()
            .map_or(0.0, |p| model.c_rate_to_amps(p.c_rate))
    }
}

/// Constraint-set variants for the comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationMode {
    Full,
    /// Temperature ceiling removed.
    NoTmax,
    /// Emergency-landing segment removed.
    NoEmergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    RdtGuided,
    Shortcut,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::RdtGuided => "rdt",
            Method::Shortcut => "shortcut",
        }
    }
}

/// Latest search outcome for one (horizon, method) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSearch {
    pub h_s: f64,
    pub method: Method,
    pub result: SearchResult,
}

/// One second of mission time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub time_s: f64,
    pub current_a: f64,
    pub v_hybrid: f64,
    pub t_hybrid: f64,
    /// Latest per-(horizon, method) search results; recomputed when
    /// `fresh` is set, carried forward otherwise.
    pub searches: Vec<StepSearch>,
    pub fresh: bool,
}

#[derive(Debug, Clone)]
pub struct MissionOptions {
    pub horizons_s: Vec<f64>,
    /// Seconds of mission time between search invocations.
    pub cadence_s: u32,
    pub mode: AblationMode,
    pub methods: Vec<Method>,
}

impl MissionOptions {
    pub fn new(horizons_s: Vec<f64>, methods: Vec<Method>) -> Self {
        Self {
            horizons_s,
            cadence_s: 5,
            mode: AblationMode::Full,
            methods,
        }
    }
}

/// Apply an ablation mode to the search configuration and predictor.
pub fn apply_mode(
    cfg: &SearchConfig,
    predictor: Option<&RdtPredictor>,
    mode: AblationMode,
) -> (SearchConfig, Option<RdtPredictor>) {
    let mut cfg = *cfg;
    let predictor = predictor.cloned();
    match mode {
        AblationMode::Full => (cfg, predictor),
        AblationMode::NoTmax => {
            cfg.t_max = f64::INFINITY;
            (cfg, predictor.map(|p| p.with_t_max(f64::INFINITY)))
        }
        AblationMode::NoEmergency => {
            cfg.h_el = 0.0;
            (cfg, predictor)
        }
    }
}

fn run_search(
    model: &HybridModel,
    predictor: Option<&RdtPredictor>,
    x: &CellState,
    cfg: &SearchConfig,
    method: Method,
) -> Result<SearchResult> {
    match method {
        Method::Shortcut => shortcut_search(model, x, cfg),
        Method::RdtGuided => {
            let p = predictor.ok_or_else(|| {
                Error::MissingArtifact(
                    "trained RDT predictor (run the train-rdt step first)".into(),
                )
            })?;
            rdt_guided_search(model, p, x, cfg)
        }
    }
}

/// Replay the mission open-loop from full charge and run the selected
/// searches every `cadence_s` seconds for every horizon. Infeasible search
/// outcomes are recorded per step, not fatal.
pub fn run_mission(
    model: &HybridModel,
    predictor: Option<&RdtPredictor>,
    profile: &MissionProfile,
    opts: &MissionOptions,
    base_cfg: &SearchConfig,
) -> Result<Vec<MissionRecord>> {
    profile.validate()?;
    base_cfg.validate()?;
    if opts.horizons_s.is_empty() {
        return Err(Error::InvalidParameter("no horizons requested".into()));
    }
    if opts.methods.is_empty() {
        return Err(Error::InvalidParameter("no methods requested".into()));
    }
    if opts.cadence_s == 0 {
        return Err(Error::InvalidParameter("cadence must be >= 1 s".into()));
    }
    if opts.methods.contains(&Method::RdtGuided) && predictor.is_none() {
        return Err(Error::MissingArtifact(
            "trained RDT predictor (run the train-rdt step first)".into(),
        ));
    }
    let (cfg, predictor_owned) = apply_mode(base_cfg, predictor, opts.mode);
    let predictor = predictor_owned.as_ref();

    let total = profile.total_duration_s().round() as u64;
    let mut records = Vec::with_capacity(total as usize);
    let mut x = rest_state_for_soc(model.params(), 1.0, model.t_amb());
    let mut scratch = model.scratch();
    let mut latest: Vec<StepSearch> = Vec::new();
    let mut prop: Option<(f64, StepPropagator)> = None;

    for t in 0..total {
        let t_s = t as f64;
        let i_phase = profile.current_at(t_s, model);
        let fresh = t % opts.cadence_s as u64 == 0;
        if fresh {
            latest.clear();
            for &method in &opts.methods {
                for &h in &opts.horizons_s {
                    let cfg_h = cfg.with_h(h);
                    let result = run_search(model, predictor, &x, &cfg_h, method)?;
                    latest.push(StepSearch {
                        h_s: h,
                        method,
                        result,
                    });
                }
            }
        }
        records.push(MissionRecord {
            time_s: t_s,
            current_a: i_phase,
            v_hybrid: model.voltage_with(&x, i_phase, &mut scratch)?,
            t_hybrid: model.temperature_with(&x, &mut scratch)?,
            searches: latest.clone(),
            fresh,
        });

        // Advance one second at the phase current, reusing the transition
        // while the current is unchanged.
        let needs_new = prop.as_ref().map_or(true, |(i, _)| *i != i_phase);
        if needs_new {
            prop = Some((
                i_phase,
                StepPropagator::new(model.params(), i_phase, model.t_amb(), 1.0)?,
            ));
        }
        x = prop.as_ref().unwrap().1.step(&x);
    }
    Ok(records)
}

/// The mission states visited at each search step (used by tests and the
/// benchmark harness): (time, state) every `cadence_s` seconds.
pub fn mission_states(
    model: &HybridModel,
    profile: &MissionProfile,
    cadence_s: u32,
) -> Result<Vec<(f64, CellState)>> {
    profile.validate()?;
    if cadence_s == 0 {
        return Err(Error::InvalidParameter("cadence must be >= 1 s".into()));
    }
    let total = profile.total_duration_s().round() as u64;
    let mut out = Vec::new();
    let mut x = rest_state_for_soc(model.params(), 1.0, model.t_amb());
    let mut prop: Option<(f64, StepPropagator)> = None;
    for t in 0..total {
        let t_s = t as f64;
        if t % cadence_s as u64 == 0 {
            out.push((t_s, x));
        }
        let i_phase = profile.current_at(t_s, model);
        let needs_new = prop.as_ref().map_or(true, |(i, _)| *i != i_phase);
        if needs_new {
            prop = Some((
                i_phase,
                StepPropagator::new(model.params(), i_phase, model.t_amb(), 1.0)?,
            ));
        }
        x = prop.as_ref().unwrap().1.step(&x);
    }
    Ok(out)
}

/// Per-step comparison of the full constraint set against the two
/// simplifications, at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub time_s: f64,
    pub i_max_full: f64,
    pub p_max_full: f64,
    pub i_max_no_tmax: f64,
    pub p_max_no_tmax: f64,
    pub i_max_no_emergency: f64,
    pub p_max_no_emergency: f64,
}

/// Run all three constraint variants side by side along the mission (same
/// open-loop states for each, since replay ignores the searches).
pub fn run_ablation_comparison(
    model: &HybridModel,
    predictor: Option<&RdtPredictor>,
    profile: &MissionProfile,
    base_cfg: &SearchConfig,
    cadence_s: u32,
    method: Method,
) -> Result<Vec<AblationRecord>> {
    let states = mission_states(model, profile, cadence_s)?;
    let mut out = Vec::with_capacity(states.len());
    let variants = [
        AblationMode::Full,
        AblationMode::NoTmax,
        AblationMode::NoEmergency,
    ];
    for (t_s, x) in states {
        let mut results = [(0.0, 0.0); 3];
        for (k, &mode) in variants.iter().enumerate() {
            let (cfg, pred) = apply_mode(base_cfg, predictor, mode);
            let r = run_search(model, pred.as_ref(), &x, &cfg, method)?;
            results[k] = (r.i_max, r.p_max);
        }
        out.push(AblationRecord {
            time_s: t_s,
            i_max_full: results[0].0,
            p_max_full: results[0].1,
            i_max_no_tmax: results[1].0,
            p_max_no_tmax: results[1].1,
            i_max_no_emergency: results[2].0,
            p_max_no_emergency: results[2].1,
        });
    }
    Ok(out)
}

/// Timing summary for one (horizon, method) pair over the mission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub h_s: f64,
    pub method: Method,
    pub mean_s: f64,
    pub std_s: f64,
    pub iterations_mean: f64,
    pub steps: usize,
}

/// Time both methods across the mission states. Strictly sequential and
/// single-threaded so the per-step means are honest.
pub fn run_benchmark(
    model: &HybridModel,
    predictor: Option<&RdtPredictor>,
    profile: &MissionProfile,
    horizons_s: &[f64],
    methods: &[Method],
    base_cfg: &SearchConfig,
    cadence_s: u32,
    repetitions: usize,
) -> Result<Vec<BenchRow>> {
    if repetitions == 0 {
        return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
    }
    let states = mission_states(model, profile, cadence_s)?;
    let mut rows = Vec::new();
    for &h in horizons_s {
        for &method in methods {
            let cfg = base_cfg.with_h(h);
            let mut times = Vec::with_capacity(states.len() * repetitions);
            let mut iters = 0usize;
            for _ in 0..repetitions {
                for (_, x) in &states {
                    let r = run_search(model, predictor, x, &cfg, method)?;
                    times.push(r.wall_time_s);
                    iters += r.iterations;
                }
            }
            let n = times.len() as f64;
            let mean = times.iter().sum::<f64>() / n;
            let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
            rows.push(BenchRow {
                h_s: h,
                method,
                mean_s: mean,
                std_s: var.sqrt(),
                iterations_mean: iters as f64 / n,
                steps: times.len(),
            });
        }
    }
    Ok(rows)
}
