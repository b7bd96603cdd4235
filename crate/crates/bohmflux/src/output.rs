//! Deterministic file outputs: CSV time series with fixed 17-significant-
//! digit float formatting and fixed row order, JSON reports, and content
//! digests for the run manifest. Identical inputs produce byte-identical
//! files.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::conditional::EnergyLedger;
use crate::ensemble::EnsembleReport;
use crate::error::Result;
use crate::trajectories::TrajectorySet;

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Trajectory CSV: `sample_id,t,x,y,vx,vy`, one row per stored time per
/// trajectory, ordered by sample then time.
pub fn trajectories_csv(set: &TrajectorySet) -> String {
    let mut out = String::from("sample_id,t,x,y,vx,vy\n");
    for (sample, traj) in set.samples.iter().zip(&set.trajectories) {
        for (k, &t) in set.times.iter().enumerate() {
            let (x, y) = traj.positions[k];
            let (vx, vy) = traj.velocities[k];
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sample.id,
                fmt_f64(t),
                fmt_f64(x),
                fmt_f64(y),
                fmt_f64(vx),
                fmt_f64(vy)
            ));
        }
    }
    out
}

/// Ledger CSV:
/// `sample_id,t,u,du_ext,du_int,du_ent,cum_ext,cum_int,cum_ent,closure_residual`.
pub fn ledgers_csv(ledgers: &[EnergyLedger]) -> String {
    let mut out = String::from(
        "sample_id,t,u,du_ext,du_int,du_ent,cum_ext,cum_int,cum_ent,closure_residual\n",
    );
    for l in ledgers {
        for (k, &t) in l.times.iter().enumerate() {
            let sum = l.du_ext[k] + l.du_int[k] + l.du_ent[k];
            let resid = (sum - l.du_total_check[k]).abs() / (1.0 + l.du_total_check[k].abs());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                l.sample_id,
                fmt_f64(t),
                fmt_f64(l.u[k]),
                fmt_f64(l.du_ext[k]),
                fmt_f64(l.du_int[k]),
                fmt_f64(l.du_ent[k]),
                fmt_f64(l.cum_ext[k]),
                fmt_f64(l.cum_int[k]),
                fmt_f64(l.cum_ent[k]),
                fmt_f64(resid)
            ));
        }
    }
    out
}

/// Report CSV: ensemble means, variance decomposition, and identity
/// residuals per time. Residual columns: ensemble-mean energy vs <H_S>
/// (`res_mean_energy`), drive power vs mean external rate
/// (`res_drive_power`), and the flow split of d<H_S>/dt
/// (`res_flow_split`).
pub fn report_csv(
    report: &EnsembleReport,
    res_mean_energy: &[f64],
    res_drive_power: &[f64],
    res_flow_split: &[f64],
) -> String {
    let mut out = String::from(
        "t,mean_u,mean_du_ext,mean_du_int,mean_du_ent,var_total,var_int,var_ent,cov_int_ent,res_mean_energy,res_drive_power,res_flow_split\n",
    );
    for k in 0..report.times.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(report.times[k]),
            fmt_f64(report.mean_u[k]),
            fmt_f64(report.mean_du_ext[k]),
            fmt_f64(report.mean_du_int[k]),
            fmt_f64(report.mean_du_ent[k]),
            fmt_f64(report.var_total[k]),
            fmt_f64(report.var_int[k]),
            fmt_f64(report.var_ent[k]),
            fmt_f64(report.cov_int_ent[k]),
            fmt_f64(res_mean_energy[k]),
            fmt_f64(res_drive_power[k]),
            fmt_f64(res_flow_split[k]),
        ));
    }
    out
}

/// Write a file and return (relative name, sha256, byte count).
pub fn write_with_digest(dir: &Path, name: &str, contents: &str) -> Result<(String, String, u64)> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok((
        name.to_string(),
        sha256_hex(contents.as_bytes()),
        contents.len() as u64,
    ))
}
