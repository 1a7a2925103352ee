//! CSV writers for mission, ablation and benchmark outputs.
//!
//! Mission rows deliberately exclude wall-clock columns so repeated runs
//! with the same configuration are byte-identical.

use std::io::Write;
use std::path::Path;

use powercap::mission::{AblationRecord, BenchRow, MissionRecord};
use powercap::search::BindingConstraint;
use powercap::Result;

pub fn horizon_token(h_s: f64) -> String {
    if h_s >= 60.0 && (h_s / 60.0).fract() == 0.0 {
        format!("{}m", (h_s / 60.0) as u64)
    } else {
        format!("{}s", h_s as u64)
    }
}

fn binding_label(b: BindingConstraint) -> &'static str {
    match b {
        BindingConstraint::Voltage => "voltage",
        BindingConstraint::Temperature => "temperature",
        BindingConstraint::CurrentBound => "current_bound",
        BindingConstraint::None => "none",
    }
}

pub fn write_mission_csv(records: &[MissionRecord], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("time_s,current_a,v_hybrid,t_hybrid");
    if let Some(first) = records.first() {
        for s in &first.searches {
            let tag = format!("{}_{}", s.method.label(), horizon_token(s.h_s));
            header.push_str(&format!(",i_max_{tag},p_max_{tag},binding_{tag}"));
        }
    }
    writeln!(w, "{header}")?;
    for r in records {
        write!(
            w,
            "{},{:.6},{:.6},{:.6}",
            r.time_s, r.current_a, r.v_hybrid, r.t_hybrid
        )?;
        for s in &r.searches {
            write!(
                w,
                ",{:.6},{:.6},{}",
                s.result.i_max,
                s.result.p_max,
                binding_label(s.result.binding)
            )?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv(rows: &[AblationRecord], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "time_s,i_max_full,p_max_full,i_max_no_tmax,p_max_no_tmax,\
         i_max_no_emergency,p_max_no_emergency"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.time_s,
            r.i_max_full,
            r.p_max_full,
            r.i_max_no_tmax,
            r.p_max_no_tmax,
            r.i_max_no_emergency,
            r.p_max_no_emergency
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "horizon_s,method,mean_s,std_s,iterations_mean,steps")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.9},{:.9},{:.3},{}",
            r.h_s,
            r.method.label(),
            r.mean_s,
            r.std_s,
            r.iterations_mean,
            r.steps
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Console summary of a benchmark, one line per (horizon, method).
pub fn print_bench_table(rows: &[BenchRow]) {
    println!(
        "{:>10} {:>10} {:>14} {:>14} {:>12}",
        "horizon", "method", "mean [ms]", "std [ms]", "iterations"
    );
    for r in rows {
        println!(
            "{:>10} {:>10} {:>14.3} {:>14.3} {:>12.2}",
            horizon_token(r.h_s),
            r.method.label(),
            r.mean_s * 1e3,
            r.std_s * 1e3,
            r.iterations_mean
        );
    }
}
