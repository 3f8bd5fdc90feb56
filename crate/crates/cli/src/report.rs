//! Machine-readable run reports.
//!
//! Everything except `timings_ms` is a deterministic function of the config
//! and seed. Non-finite numbers are written as `null`.

use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub worst: f64,
    pub tolerance: f64,
    /// Where the worst value occurred (a jet point or a time), if any.
    pub location: Option<Vec<f64>>,
}

impl Check {
    /// Passes when `worst ≤ tolerance`.
    pub fn at_most(name: &str, worst: f64, tolerance: f64, location: Option<Vec<f64>>) -> Self {
        let status = if worst <= tolerance { Status::Pass } else { Status::Fail };
        Check { name: name.to_string(), status, worst, tolerance, location }
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub report_version: u32,
    pub command: String,
    pub which: Option<String>,
    pub config_digest: String,
    pub seed: u64,
    pub status: Status,
    pub checks: Vec<Check>,
    pub data: Value,
    pub timings_ms: Timings,
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub total: f64,
}

/// SHA-256 of the config document in canonical (sorted-key) form.
pub fn digest(config: &Value) -> String {
    let canonical = serde_json::to_vec(config).expect("JSON values serialize");
    hex::encode(Sha256::digest(&canonical))
}

pub struct Builder {
    command: String,
    which: Option<String>,
    digest: String,
    seed: u64,
    started: Instant,
}

impl Builder {
    pub fn new(command: &str, which: Option<&str>, config: &Value, seed: u64) -> Self {
        Builder {
            command: command.to_string(),
            which: which.map(str::to_string),
            digest: digest(config),
            seed,
            started: Instant::now(),
        }
    }

    pub fn finish(self, checks: Vec<Check>, data: Value) -> Report {
        let status = if checks.iter().all(|c| c.status == Status::Pass) { Status::Pass } else { Status::Fail };
        Report {
            report_version: REPORT_VERSION,
            command: self.command,
            which: self.which,
            config_digest: self.digest,
            seed: self.seed,
            status,
            checks,
            data,
            timings_ms: Timings { total: self.started.elapsed().as_secs_f64() * 1e3 },
        }
    }
}
