//! Trajectory CSV and run-summary output.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Real;
use crate::solver::{IterationRecord, RunResult, StopReason};

pub const CSV_HEADER: [&str; 16] = [
    "k", "outcome", "step_kind", "soc", "delta", "eps", "mu", "pred", "ared", "kkt_est", "tau_est", "kkt_true", "tau_true", "batch_f",
    "batch_g", "batch_h",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn csv_row(r: &IterationRecord) -> [String; 16] {
    [
        r.k.to_string(),
        r.outcome.as_str().to_string(),
        r.step_kind.map(|s| s.as_str()).unwrap_or("none").to_string(),
        (r.soc as u8).to_string(),
        r.delta.to_string(),
        r.eps.to_string(),
        r.mu.to_string(),
        opt(r.pred),
        opt(r.ared),
        r.kkt_est.to_string(),
        r.tau_est.to_string(),
        opt(r.kkt_true),
        opt(r.tau_true),
        r.batch_f.to_string(),
        r.batch_g.to_string(),
        r.batch_h.to_string(),
    ]
}

/// Writes the header and one row per record.
pub fn write_trajectory<W: Write>(out: W, trajectory: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in trajectory {
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub problem: String,
    pub noise: f64,
    pub seed: u64,
    pub alpha: i32,
    pub hessian: String,
    pub iterations: usize,
    pub stop: StopReason,
    pub converged: bool,
    pub final_x: Vec<f64>,
    pub final_delta: f64,
    pub final_mu: f64,
    pub final_kkt_est: Option<f64>,
    pub final_kkt_true: Option<f64>,
    pub final_tau_true: Option<f64>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn from_run<T: Real>(problem: &str, noise: f64, alpha: i32, hessian: &str, result: &RunResult<T>, wall_time_s: f64) -> Self {
        let last = result.trajectory.last();
        let exact = result.state.exact;
        Self {
            problem: problem.to_string(),
            noise,
            seed: result.state.rng.seed(),
            alpha,
            hessian: hessian.to_string(),
            iterations: result.trajectory.len(),
            stop: result.stop,
            converged: result.converged(),
            final_x: result.state.x.iter().map(|v| v.as_f64()).collect(),
            final_delta: result.state.delta.as_f64(),
            final_mu: result.state.mu.as_f64(),
            final_kkt_est: last.map(|r| r.kkt_est),
            final_kkt_true: exact.map(|e| e.0),
            final_tau_true: exact.filter(|_| alpha == 1).map(|e| e.1),
            wall_time_s,
        }
    }
}
