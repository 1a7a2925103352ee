//! The hybrid cell model: linear physics states feeding neural output heads
//! for terminal voltage and surface temperature, with a physics-only
//! fallback for both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{NeuralNet, Scratch};
use crate::model::{CellState, ModelParams, StepPropagator};

/// Which state components feed the temperature head. The voltage head always
/// sees the full state plus the applied current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempInputMask(pub [bool; 5]);

impl TempInputMask {
    /// Default wiring: bulk voltage plus both temperatures.
    pub const fn default_mask() -> Self {
        Self([true, false, false, true, true])
    }

    /// Full five-state input.
    pub const fn full() -> Self {
        Self([true; 5])
    }

    pub fn width(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn apply(&self, x: &CellState, out: &mut Vec<f64>) {
        out.clear();
        for (keep, v) in self.0.iter().zip(x.as_array().iter()) {
            if *keep {
                out.push(*v);
            }
        }
    }
}

/// Linear physics plus optional neural output heads.
///
/// With no heads attached the model must be built through
/// [`HybridModel::physics_only`], which opts in to the bare circuit outputs;
/// otherwise evaluating an output is an error.
#[derive(Debug, Clone)]
pub struct HybridModel {
    params: ModelParams,
    net_v: Option<NeuralNet>,
    net_t: Option<NeuralNet>,
    temp_mask: TempInputMask,
    allow_fallback: bool,
}

impl HybridModel {
    /// Model with trained voltage and temperature heads.
    pub fn with_nets(
        params: ModelParams,
        net_v: NeuralNet,
        net_t: NeuralNet,
        temp_mask: TempInputMask,
    ) -> Result<Self> {
        params.validate()?;
        if net_v.input_dim() != 6 {
            return Err(Error::DimensionMismatch {
                expected: 6,
                got: net_v.input_dim(),
                context: "voltage head input (5 states + current)".into(),
            });
        }
        if net_v.output_dim() != 1 || net_t.output_dim() != 1 {
            return Err(Error::InvalidParameter(
                "output heads must be scalar".into(),
            ));
        }
        if net_t.input_dim() != temp_mask.width() {
            return Err(Error::DimensionMismatch {
                expected: temp_mask.width(),
                got: net_t.input_dim(),
                context: "temperature head input vs mask".into(),
            });
        }
        Ok(Self {
            params,
            net_v: Some(net_v),
            net_t: Some(net_t),
            temp_mask,
            allow_fallback: false,
        })
    }

    /// Model that explicitly runs on the bare circuit equations (no neural
    /// correction). Useful before any training has happened.
    pub fn physics_only(params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            net_v: None,
            net_t: None,
            temp_mask: TempInputMask::default_mask(),
            allow_fallback: true,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn t_amb(&self) -> f64 {
        self.params.t_amb
    }

    pub fn capacity_ah(&self) -> f64 {
        self.params.capacity_ah
    }

    pub fn c_rate_to_amps(&self, c: f64) -> f64 {
        self.params.c_rate_to_amps(c)
    }

    pub fn temp_mask(&self) -> TempInputMask {
        self.temp_mask
    }

    pub fn voltage_net(&self) -> Option<&NeuralNet> {
        self.net_v.as_ref()
    }

    pub fn temperature_net(&self) -> Option<&NeuralNet> {
        self.net_t.as_ref()
    }

    /// Scratch buffers sized for either head.
    pub fn scratch(&self) -> ModelScratch {
        let net_scratch = match (&self.net_v, &self.net_t) {
            (Some(nv), _) => nv.scratch(),
            (None, Some(nt)) => nt.scratch(),
            (None, None) => NeuralNet::glorot(&[1, 1], crate::mlp::Activation::Identity, 0).scratch(),
        };
        ModelScratch {
            net: net_scratch,
            features: Vec::with_capacity(6),
        }
    }

    /// Terminal voltage under current `i` (positive = discharge).
    pub fn voltage(&self, x: &CellState, i: f64) -> Result<f64> {
        let mut s = self.scratch();
        self.voltage_with(x, i, &mut s)
    }

    /// Allocation-free voltage evaluation for hot loops.
    pub fn voltage_with(&self, x: &CellState, i: f64, s: &mut ModelScratch) -> Result<f64> {
        match &self.net_v {
            Some(net) => {
                s.features.clear();
                s.features.extend_from_slice(&x.as_array());
                s.features.push(i);
                Ok(net.forward_with(&s.features, &mut s.net)?[0])
            }
            None if self.allow_fallback => Ok(self.params.ndc.output_voltage(x.v_s, x.v_1, i)),
            None => Err(Error::UntrainedNet("voltage head")),
        }
    }

    /// Surface temperature estimate.
    pub fn temperature(&self, x: &CellState) -> Result<f64> {
        let mut s = self.scratch();
        self.temperature_with(x, &mut s)
    }

    pub fn temperature_with(&self, x: &CellState, s: &mut ModelScratch) -> Result<f64> {
        match &self.net_t {
            Some(net) => {
                self.temp_mask.apply(x, &mut s.features);
                Ok(net.forward_with(&s.features, &mut s.net)?[0])
            }
            None if self.allow_fallback => Ok(x.t_surf),
            None => Err(Error::UntrainedNet("temperature head")),
        }
    }

    /// Exact constant-input propagation using this model's parameters and
    /// default ambient.
    pub fn propagate(&self, x: &CellState, i: f64, dt: f64) -> Result<CellState> {
        crate::model::propagate(x, i, self.params.t_amb, dt, &self.params)
    }

    pub fn propagator(&self, i: f64, dt: f64) -> Result<StepPropagator> {
        StepPropagator::new(&self.params, i, self.params.t_amb, dt)
    }

    /// Simulate a piecewise-constant current profile, emitting one record
    /// per `step` seconds within each segment (plus the segment remainder
    /// and the initial state). Propagation is exact, so `step` only sets
    /// the output resolution.
    pub fn simulate(&self, x0: &CellState, profile: &CurrentProfile, step: f64) -> Result<Trajectory> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "simulate step must be > 0, got {step}"
            )));
        }
        x0.ensure_finite()?;
        profile.validate()?;

        let mut scratch = self.scratch();
        let mut points = Vec::new();
        let first_i = profile.segments.first().map_or(0.0, |s| s.current_a);
        let mut x = *x0;
        let mut t = 0.0;
        points.push(self.point(t, &x, first_i, &mut scratch)?);

        for seg in &profile.segments {
            let n_full = (seg.duration_s / step).floor() as usize;
            let remainder = seg.duration_s - n_full as f64 * step;
            let prop = StepPropagator::new(&self.params, seg.current_a, self.params.t_amb, step)?;
            for _ in 0..n_full {
                x = prop.step(&x);
                t += step;
                points.push(self.point(t, &x, seg.current_a, &mut scratch)?);
            }
            if remainder > 1e-12 {
                x = crate::model::propagate(&x, seg.current_a, self.params.t_amb, remainder, &self.params)?;
                t += remainder;
                points.push(self.point(t, &x, seg.current_a, &mut scratch)?);
            }
        }
        Ok(Trajectory { points })
    }

    fn point(
        &self,
        time_s: f64,
        x: &CellState,
        i: f64,
        s: &mut ModelScratch,
    ) -> Result<TrajectoryPoint> {
        x.ensure_finite()?;
        Ok(TrajectoryPoint {
            time_s,
            state: *x,
            current_a: i,
            v_hybrid: self.voltage_with(x, i, s)?,
            t_hybrid: self.temperature_with(x, s)?,
        })
    }
}

/// Reusable buffers for the output heads.
#[derive(Debug, Clone)]
pub struct ModelScratch {
    net: Scratch,
    features: Vec<f64>,
}

/// One constant-current stretch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub current_a: f64,
    pub duration_s: f64,
}

/// Piecewise-constant current schedule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurrentProfile {
    pub segments: Vec<ProfileSegment>,
}

impl CurrentProfile {
    pub fn new(segments: Vec<ProfileSegment>) -> Self {
        Self { segments }
    }

    pub fn constant(current_a: f64, duration_s: f64) -> Self {
        Self {
            segments: vec![ProfileSegment {
                current_a,
                duration_s,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, seg) in self.segments.iter().enumerate() {
            if !seg.current_a.is_finite() || !seg.duration_s.is_finite() {
                return Err(Error::NonFinite(format!("profile segment {k}")));
            }
            if seg.duration_s <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "profile segment {k} duration must be > 0"
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Signed charge drawn over the whole profile, in ampere-seconds.
    pub fn total_charge(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.current_a * s.duration_s)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub time_s: f64,
    pub state: CellState,
    pub current_a: f64,
    pub v_hybrid: f64,
    pub t_hybrid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory holds the initial point")
    }

    /// First time at which the recorded hybrid voltage drops below `v_min`.
    pub fn first_voltage_crossing(&self, v_min: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.v_hybrid < v_min)
            .map(|p| p.time_s)
    }
}
