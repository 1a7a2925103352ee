//! Synthetic ground-truth reference cell and dataset builders.
//!
//! The reference cell wraps the linear circuit model with three mild
//! nonlinearities (temperature- and depth-of-discharge-dependent ohmic
//! resistance, extra polarization at high current) so the neural heads have
//! a real model-plant mismatch to learn. With all perturbations at zero it
//! collapses exactly to the linear model, which makes it an independent
//! fine-step integration oracle for the closed-form propagation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    rest_state_for_soc, CellState, CurrentProfile, HybridModel, ModelParams, NdcParams,
    TempInputMask, ThermalParams, EMPTY_OCV, FULL_CHARGE_OCV,
};

/// Reference temperature for the ohmic-resistance drift.
const R0_TEMP_REF_C: f64 = 25.0;

/// Nonlinear reference cell. `base` holds the underlying linear constants;
/// the remaining fields perturb it away from linearity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceCell {
    pub base: ModelParams,
    /// Ohmic resistance gain per degC of core temperature below 25 degC
    /// (resistance grows as the cell cools).
    pub r0_temp_coeff: f64,
    /// Piecewise-linear multiplicative factor on `r_0` versus depth of
    /// discharge in [0, 1]. Empty table means factor 1 everywhere.
    pub r0_soc_table: Vec<(f64, f64)>,
    /// Extra polarization drive at high current, scaled by `(i / i_8c)^2`.
    pub polarization_gain: f64,
}

impl ReferenceCell {
    /// Perturbation-free reference: exactly the linear model, integrated
    /// numerically.
    pub fn ideal(base: ModelParams) -> Self {
        Self {
            base,
            r0_temp_coeff: 0.0,
            r0_soc_table: Vec::new(),
            polarization_gain: 0.0,
        }
    }

    /// The default synthetic cell the shipped parameters are calibrated
    /// against.
    pub fn default_synthetic(base: ModelParams) -> Self {
        Self {
            base,
            r0_temp_coeff: 1.5e-4,
            r0_soc_table: vec![(0.0, 1.0), (0.5, 1.05), (0.8, 1.25), (1.0, 1.6)],
            polarization_gain: 0.15,
        }
    }

    fn dod(&self, v_b: f64) -> f64 {
        let v_full = self.base.ndc.ocv.inverse(FULL_CHARGE_OCV);
        let v_empty = self.base.ndc.ocv.inverse(EMPTY_OCV);
        ((v_full - v_b) / (v_full - v_empty)).clamp(0.0, 1.0)
    }

    fn soc_factor(&self, dod: f64) -> f64 {
        if self.r0_soc_table.is_empty() {
            return 1.0;
        }
        let pts = &self.r0_soc_table;
        if dod <= pts[0].0 {
            return pts[0].1;
        }
        if dod >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let idx = pts.partition_point(|&(x, _)| x <= dod);
        let (x0, f0) = pts[idx - 1];
        let (x1, f1) = pts[idx];
        f0 + (dod - x0) * (f1 - f0) / (x1 - x0)
    }

    /// Effective ohmic resistance at the given core temperature and depth
    /// of discharge. Floored at 20% of the nominal value.
    pub fn r0_eff(&self, t_core: f64, dod: f64) -> f64 {
        let r = (self.base.ndc.r_0 + self.r0_temp_coeff * (R0_TEMP_REF_C - t_core))
            * self.soc_factor(dod);
        r.max(0.2 * self.base.ndc.r_0)
    }

    fn polarization_factor(&self, i: f64) -> f64 {
        let i_8c = 8.0 * self.base.capacity_ah;
        1.0 + self.polarization_gain * (i / i_8c).powi(2)
    }

    /// Nonlinear state derivative.
    fn derivative(&self, x: &[f64; 5], i: f64, t_amb: f64) -> [f64; 5] {
        let p = &self.base;
        let k_b = 1.0 / (p.ndc.c_b * p.ndc.r_b);
        let k_s = 1.0 / (p.ndc.c_s * p.ndc.r_b);
        let dv_b = k_b * (x[1] - x[0]);
        let dv_s = k_s * (x[0] - x[1]) - i / p.ndc.c_s;
        let dv_1 = -x[2] / (p.ndc.r_1 * p.ndc.c_1) - i * self.polarization_factor(i) / p.ndc.c_1;

        let r0 = self.r0_eff(x[3], self.dod(x[0]));
        let th = &p.thermal;
        let dt_core = (x[4] - x[3]) / (th.r_core * th.c_core) + r0 * i * i / th.c_core;
        let dt_surf =
            (x[3] - x[4]) / (th.r_core * th.c_surf) + (t_amb - x[4]) / (th.r_surf * th.c_surf);
        [dv_b, dv_s, dv_1, dt_core, dt_surf]
    }

    /// Measured terminal voltage.
    pub fn voltage(&self, x: &CellState, i: f64) -> f64 {
        let r0 = self.r0_eff(x.t_core, self.dod(x.v_b));
        self.base.ndc.ocv.eval(x.v_s) + x.v_1 - r0 * i
    }

    /// Measured surface temperature.
    pub fn surface_temperature(&self, x: &CellState) -> f64 {
        x.t_surf
    }

    fn rk4_step(&self, x: &mut [f64; 5], i: f64, t_amb: f64, dt: f64) {
        let k1 = self.derivative(x, i, t_amb);
        let mut x2 = *x;
        for j in 0..5 {
            x2[j] = x[j] + 0.5 * dt * k1[j];
        }
        let k2 = self.derivative(&x2, i, t_amb);
        for j in 0..5 {
            x2[j] = x[j] + 0.5 * dt * k2[j];
        }
        let k3 = self.derivative(&x2, i, t_amb);
        for j in 0..5 {
            x2[j] = x[j] + dt * k3[j];
        }
        let k4 = self.derivative(&x2, i, t_amb);
        for j in 0..5 {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cell: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        cell.base.validate()?;
        Ok(cell)
    }

    pub fn to_json_file(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// One reference measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub time_s: f64,
    pub state: CellState,
    pub current_a: f64,
    pub v_true: f64,
    pub t_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefTrajectory {
    pub points: Vec<RefPoint>,
}

/// Fixed-step 4th-order integration of the reference cell over a
/// piecewise-constant profile, recording every `record_every` seconds.
/// `step` must not exceed 0.1 s.
pub fn reference_simulate(
    cell: &ReferenceCell,
    x0: &CellState,
    profile: &CurrentProfile,
    step: f64,
    t_amb: f64,
    record_every: f64,
) -> Result<RefTrajectory> {
    check_step(step)?;
    x0.ensure_finite()?;
    profile.validate()?;

    let mut points = Vec::new();
    let mut x = x0.as_array();
    let mut t = 0.0;
    let first_i = profile.segments.first().map_or(0.0, |s| s.current_a);
    points.push(make_ref_point(cell, t, &x, first_i)?);

    for seg in &profile.segments {
        let substeps_per_record = (record_every / step).round().max(1.0) as usize;
        let dt = record_every / substeps_per_record as f64;
        let n_records = (seg.duration_s / record_every).floor() as usize;
        for _ in 0..n_records {
            for _ in 0..substeps_per_record {
                cell.rk4_step(&mut x, seg.current_a, t_amb, dt);
            }
            t += record_every;
            points.push(make_ref_point(cell, t, &x, seg.current_a)?);
        }
        let rem = seg.duration_s - n_records as f64 * record_every;
        if rem > 1e-9 {
            let n_rem = (rem / step).ceil().max(1.0) as usize;
            let dt = rem / n_rem as f64;
            for _ in 0..n_rem {
                cell.rk4_step(&mut x, seg.current_a, t_amb, dt);
            }
            t += rem;
            points.push(make_ref_point(cell, t, &x, seg.current_a)?);
        }
    }
    Ok(RefTrajectory { points })
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::InvalidParameter(format!(
            "reference integration step must lie in (0, 0.1] s, got {step}"
        )));
    }
    Ok(())
}

fn make_ref_point(cell: &ReferenceCell, t: f64, x: &[f64; 5], i: f64) -> Result<RefPoint> {
    let state = CellState::from_array(*x);
    state.ensure_finite()?;
    Ok(RefPoint {
        time_s: t,
        state,
        current_a: i,
        v_true: cell.voltage(&state, i),
        t_true: cell.surface_temperature(&state),
    })
}

/// Constant-current reference discharge from `x0` until the measured
/// voltage drops below `v_cutoff` (or `cap_s` elapses), sampled every
/// second.
pub fn reference_discharge_to_cutoff(
    cell: &ReferenceCell,
    x0: &CellState,
    i: f64,
    step: f64,
    t_amb: f64,
    v_cutoff: f64,
    cap_s: f64,
) -> Result<RefTrajectory> {
    check_step(step)?;
    let substeps = (1.0 / step).round().max(1.0) as usize;
    let dt = 1.0 / substeps as f64;
    let mut x = x0.as_array();
    let mut t = 0.0;
    let mut points = vec![make_ref_point(cell, t, &x, i)?];
    while points.last().unwrap().v_true >= v_cutoff {
        if t >= cap_s {
            return Err(Error::CapExceeded {
                cap_s,
                current_a: i,
            });
        }
        for _ in 0..substeps {
            cell.rk4_step(&mut x, i, t_amb, dt);
        }
        t += 1.0;
        points.push(make_ref_point(cell, t, &x, i)?);
    }
    Ok(RefTrajectory { points })
}

/// One identification/training sample: the linear-model state under the
/// same current history, paired with the reference measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSample {
    pub c_rate: f64,
    pub time_s: f64,
    pub current_a: f64,
    pub linear_state: CellState,
    pub v_ref: f64,
    pub t_surf_ref: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDataset {
    pub samples: Vec<FitSample>,
}

impl FitDataset {
    /// Training pairs for the voltage head: (5 states + current) -> V.
    pub fn voltage_pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.samples
            .iter()
            .map(|s| {
                let mut x = s.linear_state.as_array().to_vec();
                x.push(s.current_a);
                (x, vec![s.v_ref])
            })
            .collect()
    }

    /// Training pairs for the temperature head under an input mask.
    pub fn temperature_pairs(&self, mask: TempInputMask) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut buf = Vec::with_capacity(5);
        self.samples
            .iter()
            .map(|s| {
                mask.apply(&s.linear_state, &mut buf);
                (buf.clone(), vec![s.t_surf_ref])
            })
            .collect()
    }

    /// Reference measurement series grouped per run, for parameter fitting.
    pub fn runs(&self) -> Vec<RefRun> {
        let mut runs: Vec<RefRun> = Vec::new();
        for s in &self.samples {
            let need_new = match runs.last() {
                Some(r) => r.current_a != s.current_a || s.time_s == 0.0,
                None => true,
            };
            if need_new {
                runs.push(RefRun {
                    c_rate: s.c_rate,
                    current_a: s.current_a,
                    samples: Vec::new(),
                });
            }
            runs.last_mut()
                .unwrap()
                .samples
                .push((s.time_s, s.v_ref, s.t_surf_ref));
        }
        runs
    }
}

/// Reference measurements from one constant-current discharge.
#[derive(Debug, Clone, PartialEq)]
pub struct RefRun {
    pub c_rate: f64,
    pub current_a: f64,
    /// (time, measured voltage, measured surface temperature) at 1 s.
    pub samples: Vec<(f64, f64, f64)>,
}

/// Measurement-only discharge runs across the given C-rates, from full
/// charge to `v_cutoff`. This is what the data-generation step persists;
/// linear states are paired in later with whatever parameters were fitted.
pub fn build_reference_runs(
    cell: &ReferenceCell,
    c_rates: &[f64],
    step: f64,
    v_cutoff: f64,
) -> Result<Vec<RefRun>> {
    let t_amb = cell.base.t_amb;
    let mut runs = Vec::with_capacity(c_rates.len());
    for &c in c_rates {
        if c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "reference run C-rates must be > 0, got {c}"
            )));
        }
        let i = cell.base.c_rate_to_amps(c);
        let x0 = rest_state_for_soc(&cell.base, 1.0, t_amb);
        let cap = 1.3 * 3600.0 / c + 600.0;
        let traj = reference_discharge_to_cutoff(cell, &x0, i, step, t_amb, v_cutoff, cap)?;
        runs.push(RefRun {
            c_rate: c,
            current_a: i,
            samples: traj.points.iter().map(|p| (p.time_s, p.v_true, p.t_true)).collect(),
        });
    }
    Ok(runs)
}

/// Recreate the paired identification dataset from measurement runs by
/// running the linear model on the same currents.
pub fn pair_runs_with_linear(runs: &[RefRun], params: &ModelParams) -> Result<FitDataset> {
    let mut samples = Vec::new();
    for run in runs {
        let prop = crate::model::StepPropagator::new(params, run.current_a, params.t_amb, 1.0)?;
        let mut lin = rest_state_for_soc(params, 1.0, params.t_amb);
        for (k, &(time_s, v_ref, t_surf_ref)) in run.samples.iter().enumerate() {
            if k > 0 {
                lin = prop.step(&lin);
            }
            samples.push(FitSample {
                c_rate: run.c_rate,
                time_s,
                current_a: run.current_a,
                linear_state: lin,
                v_ref,
                t_surf_ref,
            });
        }
    }
    Ok(FitDataset { samples })
}

pub const REF_RUNS_CSV_HEADER: &str = "c_rate,current_a,time_s,v_ref,t_surf_ref";

pub fn write_reference_runs_csv(runs: &[RefRun], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{REF_RUNS_CSV_HEADER}")?;
    for run in runs {
        for &(t, v, temp) in &run.samples {
            writeln!(
                w,
                "{},{:.17e},{},{:.17e},{:.17e}",
                run.c_rate, run.current_a, t, v, temp
            )?;
        }
    }
    Ok(())
}

pub fn read_reference_runs_csv(path: &std::path::Path) -> Result<Vec<RefRun>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REF_RUNS_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "unexpected reference runs header: {other:?}"
            )))
        }
    }
    let mut runs: Vec<RefRun> = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_f64_fields(line, 5, n + 2)?;
        let starts_new = f[2] == 0.0 || runs.last().map_or(true, |r| r.current_a != f[1]);
        if starts_new {
            runs.push(RefRun {
                c_rate: f[0],
                current_a: f[1],
                samples: Vec::new(),
            });
        }
        runs.last_mut().unwrap().samples.push((f[2], f[3], f[4]));
    }
    Ok(runs)
}

/// Build identification/training data: for each C-rate, discharge the
/// reference cell from full charge to `v_cutoff` and pair the linear-model
/// state (run on the same current with `linear_params`) with the reference
/// measurements, at 1 s resolution.
pub fn build_fit_dataset(
    cell: &ReferenceCell,
    linear_params: &ModelParams,
    c_rates: &[f64],
    step: f64,
    v_cutoff: f64,
) -> Result<FitDataset> {
    let mut samples = Vec::new();
    let t_amb = cell.base.t_amb;
    for &c in c_rates {
        if c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "fit dataset C-rates must be > 0, got {c}"
            )));
        }
        let i = cell.base.c_rate_to_amps(c);
        let x0 = rest_state_for_soc(&cell.base, 1.0, t_amb);
        let cap = 1.3 * 3600.0 / c + 600.0;
        let reference = reference_discharge_to_cutoff(cell, &x0, i, step, t_amb, v_cutoff, cap)?;
        let prop = crate::model::StepPropagator::new(linear_params, i, t_amb, 1.0)?;
        let mut lin = rest_state_for_soc(linear_params, 1.0, t_amb);
        for (k, p) in reference.points.iter().enumerate() {
            if k > 0 {
                lin = prop.step(&lin);
            }
            samples.push(FitSample {
                c_rate: c,
                time_s: p.time_s,
                current_a: i,
                linear_state: lin,
                v_ref: p.v_true,
                t_surf_ref: p.t_true,
            });
        }
    }
    Ok(FitDataset { samples })
}

// ---------------------------------------------------------------------------
// Least-squares parameter identification
// ---------------------------------------------------------------------------

/// Downhill-simplex minimizer; deterministic for fixed inputs.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    initial_step: f64,
    max_iters: usize,
) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for j in 0..n {
        let mut v = x0.to_vec();
        v[j] += initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let reordered: Vec<Vec<f64>> = order.iter().map(|&k| simplex[k].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&k| values[k]).collect();
        simplex = reordered;
        values = revalues;

        if (values[n] - values[0]).abs() < 1e-14 * (1.0 + values[0].abs()) {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();

        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + (centroid[j] - simplex[n][j]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect < values[0] {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - simplex[n][j]))
                .collect();
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                simplex[n] = expand;
                values[n] = f_expand;
            } else {
                simplex[n] = reflect;
                values[n] = f_reflect;
            }
        } else if f_reflect < values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 0.5 * (simplex[n][j] - centroid[j]))
                .collect();
            let f_contract = f(&contract);
            if f_contract < values[n] {
                simplex[n] = contract;
                values[n] = f_contract;
            } else {
                for k in 1..=n {
                    for j in 0..n {
                        simplex[k][j] = simplex[0][j] + 0.5 * (simplex[k][j] - simplex[0][j]);
                    }
                    values[k] = f(&simplex[k]);
                }
            }
        }
    }

    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .unwrap();
    simplex[best].clone()
}

/// Mean squared voltage error of a candidate circuit against reference runs.
fn ndc_voltage_mse(candidate: &NdcParams, capacity_ah: f64, t_amb: f64, runs: &[RefRun]) -> f64 {
    if candidate.validate().is_err() {
        return f64::INFINITY;
    }
    let params = ModelParams {
        ndc: candidate.clone(),
        thermal: ThermalParams {
            r_core: 1.0,
            r_surf: 1.0,
            c_core: 1.0,
            c_surf: 1.0,
        },
        capacity_ah,
        t_amb,
    };
    let mut sse = 0.0;
    let mut count = 0usize;
    for run in runs {
        let prop = match crate::model::StepPropagator::new(&params, run.current_a, t_amb, 1.0) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let mut x = rest_state_for_soc(&params, 1.0, t_amb);
        for (k, &(_, v_ref, _)) in run.samples.iter().enumerate() {
            if k > 0 {
                x = prop.step(&x);
            }
            let v = candidate.output_voltage(x.v_s, x.v_1, run.current_a);
            sse += (v - v_ref) * (v - v_ref);
            count += 1;
        }
    }
    sse / count.max(1) as f64
}

/// Least-squares identification of the six circuit constants from low-rate
/// reference runs. The OCV table is treated as known. Optimizes in
/// log-space starting from `init`.
pub fn fit_ndc_params(
    runs: &[RefRun],
    init: &NdcParams,
    capacity_ah: f64,
    t_amb: f64,
    max_iters: usize,
) -> Result<NdcParams> {
    if runs.is_empty() {
        return Err(Error::InvalidDataset("no runs to fit".into()));
    }
    init.validate()?;
    let ocv = init.ocv.clone();
    let x0: Vec<f64> = [init.r_b, init.c_b, init.c_s, init.r_0, init.r_1, init.c_1]
        .iter()
        .map(|v| v.ln())
        .collect();
    let to_params = |x: &[f64]| NdcParams {
        r_b: x[0].exp(),
        c_b: x[1].exp(),
        c_s: x[2].exp(),
        r_0: x[3].exp(),
        r_1: x[4].exp(),
        c_1: x[5].exp(),
        ocv: ocv.clone(),
    };
    let best = nelder_mead(
        |x| ndc_voltage_mse(&to_params(x), capacity_ah, t_amb, runs),
        &x0,
        0.12,
        max_iters,
    );
    let fitted = to_params(&best);
    fitted.validate()?;
    Ok(fitted)
}

fn thermal_mse(
    candidate: &ThermalParams,
    ndc: &NdcParams,
    capacity_ah: f64,
    t_amb: f64,
    runs: &[RefRun],
) -> f64 {
    if candidate.validate().is_err() {
        return f64::INFINITY;
    }
    let params = ModelParams {
        ndc: ndc.clone(),
        thermal: *candidate,
        capacity_ah,
        t_amb,
    };
    let mut sse = 0.0;
    let mut count = 0usize;
    for run in runs {
        let prop = match crate::model::StepPropagator::new(&params, run.current_a, t_amb, 1.0) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let mut x = rest_state_for_soc(&params, 1.0, t_amb);
        for (k, &(_, _, t_ref)) in run.samples.iter().enumerate() {
            if k > 0 {
                x = prop.step(&x);
            }
            sse += (x.t_surf - t_ref) * (x.t_surf - t_ref);
            count += 1;
        }
    }
    sse / count.max(1) as f64
}

/// Least-squares identification of the four thermal constants from the
/// surface-temperature series of low-rate reference runs.
pub fn fit_thermal_params(
    runs: &[RefRun],
    ndc: &NdcParams,
    init: &ThermalParams,
    capacity_ah: f64,
    t_amb: f64,
    max_iters: usize,
) -> Result<ThermalParams> {
    if runs.is_empty() {
        return Err(Error::InvalidDataset("no runs to fit".into()));
    }
    init.validate()?;
    let x0: Vec<f64> = [init.r_core, init.r_surf, init.c_core, init.c_surf]
        .iter()
        .map(|v| v.ln())
        .collect();
    let to_params = |x: &[f64]| ThermalParams {
        r_core: x[0].exp(),
        r_surf: x[1].exp(),
        c_core: x[2].exp(),
        c_surf: x[3].exp(),
    };
    let best = nelder_mead(
        |x| thermal_mse(&to_params(x), ndc, capacity_ah, t_amb, runs),
        &x0,
        0.12,
        max_iters,
    );
    let fitted = to_params(&best);
    fitted.validate()?;
    Ok(fitted)
}

// ---------------------------------------------------------------------------
// Remaining-discharge-time dataset
// ---------------------------------------------------------------------------

/// Grid over which RDT labels are generated. States are built per SoC level
/// either at rest (empty `preload_c_rates`) or by discharging from full to
/// the target SoC at each listed preload rate, which yields realistic
/// loaded states (diffusion gap, polarization, elevated temperatures).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RdtGrid {
    pub soc_levels: Vec<f64>,
    pub c_rates: Vec<f64>,
    pub t_amb_values: Vec<f64>,
    #[serde(default)]
    pub preload_c_rates: Vec<f64>,
}

impl RdtGrid {
    pub fn len(&self) -> usize {
        self.soc_levels.len()
            * self.c_rates.len()
            * self.t_amb_values.len()
            * self.preload_c_rates.len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One labelled RDT example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdtSample {
    pub state: CellState,
    pub current_a: f64,
    pub t_amb: f64,
    /// Seconds of constant-current discharge until the hybrid voltage
    /// crosses the cutoff.
    pub rdt_vmin_s: f64,
    /// The state already sat at/below the cutoff under this current.
    pub at_cutoff: bool,
}

/// Label every grid point by simulating the hybrid model to its voltage
/// cutoff. Grid points are independent and generated in parallel; output
/// order is the deterministic grid order (soc, then current, then ambient,
/// then preload).
pub fn build_rdt_dataset(
    model: &HybridModel,
    grid: &RdtGrid,
    v_min: f64,
    cap_s: f64,
) -> Result<Vec<RdtSample>> {
    let mut points = Vec::with_capacity(grid.len());
    let preloads: Vec<Option<f64>> = if grid.preload_c_rates.is_empty() {
        vec![None]
    } else {
        grid.preload_c_rates.iter().map(|&p| Some(p)).collect()
    };
    for &soc in &grid.soc_levels {
        for &c in &grid.c_rates {
            for &t_amb in &grid.t_amb_values {
                for &pre in &preloads {
                    points.push((soc, c, t_amb, pre));
                }
            }
        }
    }

    points
        .par_iter()
        .map(|&(soc, c, t_amb, pre)| -> Result<RdtSample> {
            if !(c > 0.0 && c <= 8.0) {
                return Err(Error::InvalidParameter(format!(
                    "RDT grid C-rates must lie in (0, 8], got {c}"
                )));
            }
            let state = grid_state(model, soc, t_amb, pre)?;
            let i = model.c_rate_to_amps(c);
            let rdt = crate::rdt::rdt_vmin_oracle(model, &state, i, t_amb, v_min, cap_s)?;
            Ok(RdtSample {
                state,
                current_a: i,
                t_amb,
                rdt_vmin_s: rdt,
                at_cutoff: rdt == 0.0,
            })
        })
        .collect()
}

fn grid_state(model: &HybridModel, soc: f64, t_amb: f64, pre: Option<f64>) -> Result<CellState> {
    match pre {
        None | Some(0.0) => Ok(rest_state_for_soc(model.params(), soc, t_amb)),
        Some(p) if p < 0.0 => Err(Error::InvalidParameter(format!(
            "preload C-rate must be >= 0, got {p}"
        ))),
        Some(p) => {
            let i_pre = model.c_rate_to_amps(p);
            let v_full = model.params().ndc.ocv.inverse(FULL_CHARGE_OCV);
            let v_empty = model.params().ndc.ocv.inverse(EMPTY_OCV);
            let q_usable = (model.params().ndc.c_b + model.params().ndc.c_s) * (v_full - v_empty);
            let duration = (1.0 - soc.clamp(0.0, 1.0)) * q_usable / i_pre;
            let full = CellState::rest(v_full, t_amb);
            crate::model::propagate(&full, i_pre, t_amb, duration, model.params())
        }
    }
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

pub const FIT_CSV_HEADER: &str =
    "c_rate,time_s,current_a,v_b,v_s,v_1,t_core,t_surf,v_ref,t_surf_ref";
pub const RDT_CSV_HEADER: &str = "v_b,v_s,v_1,t_core,t_surf,current_a,t_amb,rdt_vmin_s,at_cutoff";

pub fn write_fit_dataset_csv(ds: &FitDataset, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{FIT_CSV_HEADER}")?;
    for s in &ds.samples {
        let x = s.linear_state;
        writeln!(
            w,
            "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            s.c_rate, s.time_s, s.current_a, x.v_b, x.v_s, x.v_1, x.t_core, x.t_surf, s.v_ref,
            s.t_surf_ref
        )?;
    }
    Ok(())
}

pub fn read_fit_dataset_csv(path: &std::path::Path) -> Result<FitDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == FIT_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "unexpected fit dataset header: {other:?}"
            )))
        }
    }
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_f64_fields(line, 10, n + 2)?;
        samples.push(FitSample {
            c_rate: f[0],
            time_s: f[1],
            current_a: f[2],
            linear_state: CellState::new(f[3], f[4], f[5], f[6], f[7]),
            v_ref: f[8],
            t_surf_ref: f[9],
        });
    }
    Ok(FitDataset { samples })
}

pub fn write_rdt_samples_csv(samples: &[RdtSample], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{RDT_CSV_HEADER}")?;
    for s in samples {
        let x = s.state;
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e},{}",
            x.v_b,
            x.v_s,
            x.v_1,
            x.t_core,
            x.t_surf,
            s.current_a,
            s.t_amb,
            s.rdt_vmin_s,
            u8::from(s.at_cutoff)
        )?;
    }
    Ok(())
}

pub fn read_rdt_samples_csv(path: &std::path::Path) -> Result<Vec<RdtSample>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RDT_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "unexpected RDT dataset header: {other:?}"
            )))
        }
    }
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_f64_fields(line, 9, n + 2)?;
        samples.push(RdtSample {
            state: CellState::new(f[0], f[1], f[2], f[3], f[4]),
            current_a: f[5],
            t_amb: f[6],
            rdt_vmin_s: f[7],
            at_cutoff: f[8] != 0.0,
        });
    }
    Ok(samples)
}

fn parse_f64_fields(line: &str, expect: usize, line_no: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expect {
        return Err(Error::Parse(format!(
            "line {line_no}: expected {expect} fields, got {}",
            fields.len()
        )));
    }
    fields
        .iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {line_no}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rest_state_for_soc, ProfileSegment};

    fn base() -> ModelParams {
        ModelParams::default_calibrated()
    }

    fn mission_profile(p: &ModelParams) -> CurrentProfile {
        CurrentProfile::new(vec![
            ProfileSegment { current_a: p.c_rate_to_amps(5.0), duration_s: 75.0 },
            ProfileSegment { current_a: p.c_rate_to_amps(1.48), duration_s: 900.0 },
            ProfileSegment { current_a: p.c_rate_to_amps(5.0), duration_s: 105.0 },
        ])
    }

    #[test]
    fn ideal_cell_matches_closed_form_propagation() {
        // With perturbations off the reference is the linear model; its RK4
        // route must agree with the matrix-exponential route over the whole
        // mission profile.
        let p = base();
        let cell = ReferenceCell::ideal(p.clone());
        let x0 = rest_state_for_soc(&p, 1.0, 25.0);
        let profile = mission_profile(&p);
        let traj = reference_simulate(&cell, &x0, &profile, 0.02, 25.0, 1.0).unwrap();

        let mut x = x0;
        let mut t_prev = 0.0;
        for point in traj.points.iter().skip(1) {
            let seg_i = point.current_a;
            x = crate::model::propagate(&x, seg_i, 25.0, point.time_s - t_prev, &p).unwrap();
            t_prev = point.time_s;
            for (a, b) in x.as_array().iter().zip(point.state.as_array().iter()) {
                let scale = a.abs().max(1.0);
                assert!(
                    (a - b).abs() / scale < 1e-6,
                    "at t={}: exact {a} vs rk4 {b}",
                    point.time_s
                );
            }
        }
    }

    #[test]
    fn higher_rate_heats_more_at_every_matched_time() {
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let x0 = rest_state_for_soc(&p, 1.0, 25.0);
        let i1 = p.c_rate_to_amps(1.0);
        let i5 = p.c_rate_to_amps(5.0);
        let run1 = reference_simulate(&cell, &x0, &CurrentProfile::constant(i1, 400.0), 0.05, 25.0, 1.0).unwrap();
        let run5 = reference_simulate(&cell, &x0, &CurrentProfile::constant(i5, 400.0), 0.05, 25.0, 1.0).unwrap();
        for (a, b) in run1.points.iter().zip(run5.points.iter()).skip(1) {
            assert!(
                b.t_true - 25.0 > a.t_true - 25.0,
                "at t={}: 5C rise {} not above 1C rise {}",
                a.time_s,
                b.t_true - 25.0,
                a.t_true - 25.0
            );
        }
    }

    #[test]
    fn zero_current_equilibrium_stays_put() {
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let x0 = CellState::rest(3.8, 25.0);
        let traj = reference_simulate(&cell, &x0, &CurrentProfile::constant(0.0, 600.0), 0.1, 25.0, 10.0).unwrap();
        for point in &traj.points {
            for (a, b) in point.state.as_array().iter().zip(x0.as_array().iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let p = base();
        let cell = ReferenceCell::ideal(p.clone());
        let x0 = CellState::rest(3.8, 25.0);
        let err = reference_simulate(&cell, &x0, &CurrentProfile::constant(1.0, 10.0), 0.2, 25.0, 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn empty_c_rate_list_gives_empty_dataset() {
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let ds = build_fit_dataset(&cell, &p, &[], 0.1, 3.0).unwrap();
        assert!(ds.samples.is_empty());
    }

    #[test]
    fn duplicate_c_rates_double_the_dataset() {
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let once = build_fit_dataset(&cell, &p, &[3.0], 0.1, 3.4).unwrap();
        let twice = build_fit_dataset(&cell, &p, &[3.0, 3.0], 0.1, 3.4).unwrap();
        assert_eq!(twice.samples.len(), 2 * once.samples.len());
        for (a, b) in once.samples.iter().zip(&twice.samples[once.samples.len()..]) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ndc_fit_recovers_low_rate_voltage() {
        // Fit the circuit constants on 1C data from a deliberately wrong
        // starting point, then check the fitted model against the reference
        // at 0.5C.
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let ds = build_fit_dataset(&cell, &p, &[1.0], 0.1, 3.0).unwrap();
        let runs = ds.runs();
        assert_eq!(runs.len(), 1);

        let mut init = p.ndc.clone();
        init.r_b *= 1.6;
        init.c_b *= 0.75;
        init.c_s *= 1.45;
        init.r_0 *= 1.5;
        init.r_1 *= 0.6;
        init.c_1 *= 1.35;
        let fitted = fit_ndc_params(&runs, &init, p.capacity_ah, p.t_amb, 600).unwrap();

        let eval = build_fit_dataset(&cell, &p, &[0.5], 0.1, 3.0).unwrap();
        let eval_runs = eval.runs();
        let mse = {
            let fitted_params = ModelParams { ndc: fitted, ..p.clone() };
            let run = &eval_runs[0];
            let prop = crate::model::StepPropagator::new(&fitted_params, run.current_a, p.t_amb, 1.0).unwrap();
            let mut x = rest_state_for_soc(&fitted_params, 1.0, p.t_amb);
            let mut sse = 0.0;
            for (k, &(_, v_ref, _)) in run.samples.iter().enumerate() {
                if k > 0 {
                    x = prop.step(&x);
                }
                let v = fitted_params.ndc.output_voltage(x.v_s, x.v_1, run.current_a);
                sse += (v - v_ref) * (v - v_ref);
            }
            sse / run.samples.len() as f64
        };
        let rmse = mse.sqrt();
        assert!(rmse < 0.020, "fitted 0.5C voltage RMSE {rmse} V >= 20 mV");
    }

    #[test]
    fn thermal_fit_tracks_surface_temperature() {
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let ds = build_fit_dataset(&cell, &p, &[1.0], 0.1, 3.0).unwrap();
        let runs = ds.runs();
        let mut init = p.thermal;
        init.r_core *= 1.5;
        init.r_surf *= 0.7;
        init.c_core *= 1.4;
        init.c_surf *= 0.8;
        let fitted = fit_thermal_params(&runs, &p.ndc, &init, p.capacity_ah, p.t_amb, 400).unwrap();
        let mse = thermal_mse(&fitted, &p.ndc, p.capacity_ah, p.t_amb, &runs);
        assert!(mse.sqrt() < 0.5, "thermal surface RMSE {} degC", mse.sqrt());
    }

    #[test]
    fn rdt_grid_shape_and_finiteness() {
        let p = base();
        let model = HybridModel::physics_only(p).unwrap();
        let grid = RdtGrid {
            soc_levels: (1..=20).map(|k| 0.2 + 0.04 * k as f64).collect(),
            c_rates: (1..=16).map(|k| 0.5 * k as f64).collect(),
            t_amb_values: vec![25.0],
            preload_c_rates: vec![],
        };
        assert_eq!(grid.len(), 320);
        let samples = build_rdt_dataset(&model, &grid, 3.0, 30_000.0).unwrap();
        assert_eq!(samples.len(), 320);
        for s in &samples {
            assert!(s.rdt_vmin_s.is_finite() && s.rdt_vmin_s >= 0.0);
        }
    }

    #[test]
    fn rdt_labels_are_monotone_in_current_and_soc() {
        let p = base();
        let model = HybridModel::physics_only(p).unwrap();
        let socs: Vec<f64> = vec![0.4, 0.6, 0.8, 1.0];
        let rates: Vec<f64> = vec![1.0, 2.0, 4.0, 8.0];
        let grid = RdtGrid {
            soc_levels: socs.clone(),
            c_rates: rates.clone(),
            t_amb_values: vec![25.0],
            preload_c_rates: vec![],
        };
        let samples = build_rdt_dataset(&model, &grid, 3.0, 30_000.0).unwrap();
        let rdt = |si: usize, ri: usize| samples[si * rates.len() + ri].rdt_vmin_s;
        for si in 0..socs.len() {
            for ri in 1..rates.len() {
                assert!(
                    rdt(si, ri) < rdt(si, ri - 1),
                    "RDT not decreasing in current at soc {}",
                    socs[si]
                );
            }
        }
        for ri in 0..rates.len() {
            for si in 1..socs.len() {
                assert!(
                    rdt(si, ri) > rdt(si - 1, ri),
                    "RDT not increasing in soc at rate {}",
                    rates[ri]
                );
            }
        }
    }

    #[test]
    fn state_already_at_cutoff_labels_zero() {
        let p = base();
        let model = HybridModel::physics_only(p.clone()).unwrap();
        let grid = RdtGrid {
            soc_levels: vec![0.0],
            c_rates: vec![2.0],
            t_amb_values: vec![25.0],
            preload_c_rates: vec![],
        };
        let samples = build_rdt_dataset(&model, &grid, 3.0, 30_000.0).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].rdt_vmin_s, 0.0);
        assert!(samples[0].at_cutoff);
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let ds = build_fit_dataset(&cell, &p, &[4.0], 0.1, 3.3).unwrap();
        let path = dir.path().join("fit.csv");
        write_fit_dataset_csv(&ds, &path).unwrap();
        let back = read_fit_dataset_csv(&path).unwrap();
        assert_eq!(ds, back);

        let model = HybridModel::physics_only(p).unwrap();
        let grid = RdtGrid {
            soc_levels: vec![0.5, 1.0],
            c_rates: vec![2.0, 5.0],
            t_amb_values: vec![25.0],
            preload_c_rates: vec![1.0],
        };
        let samples = build_rdt_dataset(&model, &grid, 3.0, 30_000.0).unwrap();
        let path = dir.path().join("rdt.csv");
        write_rdt_samples_csv(&samples, &path).unwrap();
        let back = read_rdt_samples_csv(&path).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn reference_runs_round_trip_and_pair_like_direct_builds() {
        let dir = tempfile::tempdir().unwrap();
        let p = base();
        let cell = ReferenceCell::default_synthetic(p.clone());
        let runs = build_reference_runs(&cell, &[2.0, 5.0], 0.1, 3.3).unwrap();
        let path = dir.path().join("runs.csv");
        write_reference_runs_csv(&runs, &path).unwrap();
        let back = read_reference_runs_csv(&path).unwrap();
        assert_eq!(runs, back);

        // Pairing the measurement runs with the linear model reproduces the
        // direct dataset builder.
        let direct = build_fit_dataset(&cell, &p, &[2.0, 5.0], 0.1, 3.3).unwrap();
        let paired = pair_runs_with_linear(&runs, &p).unwrap();
        assert_eq!(direct, paired);
    }
}
