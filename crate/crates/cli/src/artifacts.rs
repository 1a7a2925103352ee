//! Artifact directory layout and loading with actionable error messages.

use std::path::{Path, PathBuf};

use powercap::datagen::RefRun;
use powercap::model::{HybridModel, ModelParams, TempInputMask};
use powercap::rdt::{RdtPredictor, VminSource};
use powercap::search::SearchConfig;
use powercap::{Error, Result};

use crate::config::CliConfig;

pub const REF_RUNS: &str = "ref_runs.csv";
pub const REFERENCE_CELL: &str = "reference_cell.json";
pub const FITTED_PARAMS: &str = "params.json";
pub const NET_V: &str = "net_v.net";
pub const NET_T: &str = "net_t.net";
pub const RDT_NET: &str = "rdt.net";
pub const RDT_TRAIN: &str = "rdt_train.csv";
pub const RDT_HOLDOUT: &str = "rdt_holdout.csv";
pub const RDT_VALIDATION: &str = "rdt_validation.csv";

pub fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn require(dir: &Path, name: &str, produced_by: &str) -> Result<PathBuf> {
    let p = path(dir, name);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingArtifact(format!(
            "{} not found in {} — run `powercap {produced_by}` first",
            name,
            dir.display()
        )))
    }
}

pub fn load_reference_runs(dir: &Path) -> Result<Vec<RefRun>> {
    let p = require(dir, REF_RUNS, "gen-data")?;
    powercap::datagen::read_reference_runs_csv(&p)
}

pub fn load_fitted_params(dir: &Path) -> Result<ModelParams> {
    let p = require(dir, FITTED_PARAMS, "fit-params")?;
    ModelParams::from_json_file(&p)
}

/// Identified parameters plus both trained output heads.
pub fn load_model(dir: &Path) -> Result<HybridModel> {
    let params = load_fitted_params(dir)?;
    let net_v = powercap::mlp::load(&require(dir, NET_V, "train-nets")?)?;
    let net_t = powercap::mlp::load(&require(dir, NET_T, "train-nets")?)?;
    HybridModel::with_nets(params, net_v, net_t, TempInputMask::default_mask())
}

/// Model running on the bare circuit equations (no trained heads needed).
pub fn physics_model(cfg: &CliConfig) -> anyhow::Result<HybridModel> {
    Ok(HybridModel::physics_only(cfg.base_params()?)?)
}

pub fn load_predictor(dir: &Path, model: &HybridModel, search: &SearchConfig) -> Result<RdtPredictor> {
    let net = powercap::mlp::load(&require(dir, RDT_NET, "train-rdt")?)?;
    let mut p = RdtPredictor::new(VminSource::Net(net), model, search.v_min, search.t_max)?;
    p.set_horizon_cap(f64::INFINITY); // net predictions are not capped
    Ok(p)
}

/// Exit codes: 1 usage/config, 2 missing artifact, 3 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::MissingArtifact(_)) => 2,
        Some(Error::NanLoss { .. })
        | Some(Error::CapExceeded { .. })
        | Some(Error::NonFinite(_)) => 3,
        _ => 1,
    }
}
