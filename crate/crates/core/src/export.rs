//! CSV and manifest writers.
//!
//! All CSV files use `,` as separator, `.` as decimal mark, LF line endings
//! and always carry a header row. Floats are written in Rust's shortest
//! round-trip form so reruns are byte-identical.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dof::DofRegion;
use crate::rates::RatePoint;
use crate::scenario::{Scenario, Seed, StreamAlloc};

pub const REGION_HEADER: &str = "d_P1,d_P2,d_S1,d_S2,feasible,frontier";
pub const PROJECTION_HEADER: &str = "dS_sum,dP_sum_max";
pub const DIFF_HEADER: &str = "d_P1,d_P2,d_S1,d_S2,closed_form,constructive";
pub const RATES_HEADER: &str =
    "qav,d_P1,d_P2,d_S1,d_S2,R_P_mean,R_S_mean,R_P_stderr,R_S_stderr,trials,seed";
pub const VERIFY_HEADER: &str =
    "trial,primary_intra,secondary_intra,inter_cell,cross_stream,worst_case,kkt_p,kkt_s";

fn alloc_fields(d: &StreamAlloc) -> String {
    format!("{},{},{},{}", d.d_p1, d.d_p2, d.d_s1, d.d_s2)
}

fn with_header(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Every grid point with its verdict and frontier membership (`1`/`0`).
pub fn region_csv(region: &DofRegion) -> String {
    with_header(
        REGION_HEADER,
        region.grid.iter().map(|(d, ok)| {
            format!(
                "{},{},{}",
                alloc_fields(d),
                u8::from(*ok),
                u8::from(region.is_frontier(d))
            )
        }),
    )
}

/// Largest primary DoF sum for each achievable secondary DoF sum.
pub fn projection_csv(region: &DofRegion) -> String {
    with_header(
        PROJECTION_HEADER,
        region
            .projection()
            .into_iter()
            .map(|(s, p)| format!("{s},{p}")),
    )
}

/// Tuples on which two regions over the same grid disagree.
pub fn region_diff(a: &DofRegion, b: &DofRegion) -> Vec<(StreamAlloc, bool, bool)> {
    a.grid
        .iter()
        .zip(&b.grid)
        .filter(|((_, x), (_, y))| x != y)
        .map(|((d, x), (_, y))| (*d, *x, *y))
        .collect()
}

pub fn diff_csv(diff: &[(StreamAlloc, bool, bool)]) -> String {
    with_header(
        DIFF_HEADER,
        diff.iter()
            .map(|(d, a, b)| format!("{},{},{}", alloc_fields(d), u8::from(*a), u8::from(*b))),
    )
}

pub fn rates_csv(points: &[RatePoint], seed: Seed) -> String {
    with_header(
        RATES_HEADER,
        points.iter().map(|p| {
            format!(
                "{},{},{},{},{},{},{},{}",
                p.qav,
                alloc_fields(&p.alloc),
                p.r_p,
                p.r_s,
                p.r_p_stderr,
                p.r_s_stderr,
                p.trials,
                seed.0
            )
        }),
    )
}

/// One row of the `verify` report.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub trial: usize,
    pub primary_intra: f64,
    pub secondary_intra: f64,
    pub inter_cell: f64,
    pub cross_stream: f64,
    pub worst_case: f64,
    pub kkt_p: bool,
    pub kkt_s: bool,
}

pub fn verify_csv(rows: &[VerifyRow]) -> String {
    with_header(
        VERIFY_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.trial,
                r.primary_intra,
                r.secondary_intra,
                r.inter_cell,
                r.cross_stream,
                r.worst_case,
                u8::from(r.kkt_p),
                u8::from(r.kkt_s)
            )
        }),
    )
}

/// Hex SHA-256 of the scenario's canonical JSON.
pub fn config_digest(scenario: &Scenario) -> String {
    Sha256::digest(scenario.canonical_json().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Provenance record written next to every output set.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub trials: usize,
    pub created: String,
    pub config: Scenario,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, scenario: &Scenario, outputs: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: config_digest(scenario),
            seed: scenario.seed.0,
            trials: scenario.trials,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config: scenario.clone(),
            outputs,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}
