//! CLI configuration file (JSON). Every field has a default, so the tool
//! runs without a config; a partial file overrides only what it names.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use powercap::datagen::RdtGrid;
use powercap::mission::MissionProfile;
use powercap::mlp::TrainConfig;
use powercap::model::{HybridModel, ModelParams};
use powercap::search::SearchConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    /// Base cell parameter file; `null` uses the bundled defaults.
    pub params_path: Option<PathBuf>,
    pub seed: u64,
    pub constraints: ConstraintConfig,
    pub mission: MissionProfile,
    /// Horizons used by `mission` and `bench` when no `--h` flag is given.
    pub horizons_s: Vec<f64>,
    /// Seconds of mission time between power-limit searches.
    pub cadence_s: u32,
    pub reference: ReferencePerturbations,
    pub datagen: DatagenConfig,
    pub training: TrainingConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            params_path: None,
            seed: 42,
            constraints: ConstraintConfig::default(),
            mission: MissionProfile::default_evtol(),
            horizons_s: vec![10.0, 180.0, 300.0, 420.0, 600.0],
            cadence_s: 5,
            reference: ReferencePerturbations::default(),
            datagen: DatagenConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintConfig {
    pub i_min_c: f64,
    pub i_max_c: f64,
    pub i_el_c: f64,
    pub h_el_s: f64,
    pub v_min: f64,
    pub t_max: f64,
    pub eps_a: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            i_min_c: 0.0,
            i_max_c: 8.0,
            i_el_c: 5.0,
            h_el_s: 105.0,
            v_min: 3.0,
            t_max: 50.0,
            eps_a: 0.025,
        }
    }
}

impl ConstraintConfig {
    pub fn to_search_config(&self, model: &HybridModel) -> SearchConfig {
        SearchConfig {
            h: 10.0,
            h_el: self.h_el_s,
            i_el: model.c_rate_to_amps(self.i_el_c),
            i_min: model.c_rate_to_amps(self.i_min_c),
            i_max_bound: model.c_rate_to_amps(self.i_max_c),
            v_min: self.v_min,
            t_max: self.t_max,
            eps: self.eps_a,
        }
    }
}

/// Perturbation section of the synthetic reference cell; combined with the
/// base parameters at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferencePerturbations {
    pub r0_temp_coeff: f64,
    pub r0_soc_table: Vec<(f64, f64)>,
    pub polarization_gain: f64,
}

impl Default for ReferencePerturbations {
    fn default() -> Self {
        let cell =
            powercap::datagen::ReferenceCell::default_synthetic(ModelParams::default_calibrated());
        Self {
            r0_temp_coeff: cell.r0_temp_coeff,
            r0_soc_table: cell.r0_soc_table,
            polarization_gain: cell.polarization_gain,
        }
    }
}

impl ReferencePerturbations {
    pub fn to_cell(&self, base: ModelParams) -> powercap::datagen::ReferenceCell {
        powercap::datagen::ReferenceCell {
            base,
            r0_temp_coeff: self.r0_temp_coeff,
            r0_soc_table: self.r0_soc_table.clone(),
            polarization_gain: self.polarization_gain,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    /// Discharge rates for the reference test campaign.
    pub fit_c_rates: Vec<f64>,
    /// Integration step for the reference cell.
    pub fit_step_s: f64,
    /// Runs at or below this rate feed the circuit/thermal identification.
    pub fit_max_c_rate: f64,
    /// Simplex iterations for each identification stage.
    pub fit_iterations: usize,
    /// Discharge-time cap when labelling RDT samples.
    pub rdt_cap_s: f64,
    pub rdt_train_grid: RdtGrid,
    pub rdt_holdout_grid: RdtGrid,
}

fn spread(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64)
        .collect()
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            fit_c_rates: vec![0.5, 1.0, 1.48, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            fit_step_s: 0.05,
            fit_max_c_rate: 1.0,
            fit_iterations: 600,
            rdt_cap_s: 30_000.0,
            rdt_train_grid: RdtGrid {
                soc_levels: spread(0.05, 1.0, 30),
                c_rates: spread(0.4, 8.0, 24),
                t_amb_values: vec![25.0],
                preload_c_rates: vec![0.0, 1.0, 3.0, 6.0],
            },
            rdt_holdout_grid: RdtGrid {
                soc_levels: spread(0.085, 0.975, 10),
                c_rates: spread(0.55, 7.8, 11),
                t_amb_values: vec![25.0],
                preload_c_rates: vec![0.0, 2.0],
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub voltage: TrainConfig,
    pub temperature: TrainConfig,
    pub rdt: TrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            voltage: TrainConfig {
                learning_rate: 2e-3,
                batch_size: 256,
                epochs: 400,
                seed: 42,
                validation_fraction: 0.1,
                early_stop_patience: 60,
            },
            temperature: TrainConfig {
                learning_rate: 2e-3,
                batch_size: 256,
                epochs: 400,
                seed: 43,
                validation_fraction: 0.1,
                early_stop_patience: 60,
            },
            rdt: TrainConfig {
                learning_rate: 2e-3,
                batch_size: 256,
                epochs: 3000,
                seed: 44,
                validation_fraction: 0.1,
                early_stop_patience: 300,
            },
        }
    }
}

impl CliConfig {
    /// Load a config file; `None` or the literal path "default" yields the
    /// built-in defaults.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) if p.as_os_str() == "default" => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                let cfg: Self = serde_json::from_str(&text)
                    .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Base (pre-identification) cell parameters.
    pub fn base_params(&self) -> anyhow::Result<ModelParams> {
        match &self.params_path {
            None => Ok(ModelParams::default_calibrated()),
            Some(p) => Ok(ModelParams::from_json_file(p)?),
        }
    }
}
