//! Scenario description, validation and seeded channel generation.
//!
//! # Random streams
//!
//! Every random matrix comes from its own ChaCha20 stream. The 256-bit key is
//! expanded from the 64-bit [`Seed`] by `rand_core`'s `seed_from_u64`, and the
//! 64-bit ChaCha stream id names the matrix (see [`stream`]). Entries are drawn
//! i.i.d. standard normal (ziggurat sampler of `rand_distr`) in row-major
//! order. Adding a new matrix therefore never perturbs existing ones.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dof::{closed_form_feasible, FeasibilityVerdict};
use crate::numerics::Matrix;

/// Default per-dimension antenna cap.
pub const MAX_ANTENNAS: usize = 16;

/// ChaCha stream ids. Channels occupy 0..8, precoder columns 16.. .
pub mod stream {
    pub const H_P1: u64 = 0;
    pub const H_P2: u64 = 1;
    pub const HP_P1: u64 = 2;
    pub const HP_P2: u64 = 3;
    pub const H_S1: u64 = 4;
    pub const H_S2: u64 = 5;
    pub const HP_S1: u64 = 6;
    pub const HP_S2: u64 = 7;
    pub const PRECODER_P1: u64 = 16;
    pub const PRECODER_P2: u64 = 17;
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error("invalid noise/power: {0}")]
    InvalidNoisePower(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Antenna quartet `(M_P, M_S, N_P, N_S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDims {
    /// Primary base-station transmit antennas.
    #[serde(rename = "M_P")]
    pub m_p: usize,
    /// Secondary base-station transmit antennas.
    #[serde(rename = "M_S")]
    pub m_s: usize,
    /// Receive antennas at each primary user.
    #[serde(rename = "N_P")]
    pub n_p: usize,
    /// Receive antennas at each secondary user.
    #[serde(rename = "N_S")]
    pub n_s: usize,
}

impl NetworkDims {
    pub const fn new(m_p: usize, m_s: usize, n_p: usize, n_s: usize) -> Self {
        Self { m_p, m_s, n_p, n_s }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.validate_with_cap(MAX_ANTENNAS)
    }

    pub fn validate_with_cap(&self, cap: usize) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("M_P", self.m_p),
            ("M_S", self.m_s),
            ("N_P", self.n_p),
            ("N_S", self.n_s),
        ] {
            if v == 0 || v > cap {
                return Err(ScenarioError::InvalidDims(format!(
                    "{name} = {v} outside 1..={cap}"
                )));
            }
        }
        Ok(())
    }

    /// Dimension of the primary transmit null space toward one primary user,
    /// `(M_P - N_P)^+`.
    pub fn z(&self) -> usize {
        self.m_p.saturating_sub(self.n_p)
    }

    /// Secondary per-user stream bound `(M_S - N_S)^+`.
    pub fn secondary_bound(&self) -> usize {
        self.m_s.saturating_sub(self.n_s)
    }
}

impl std::fmt::Display for NetworkDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.m_p, self.m_s, self.n_p, self.n_s)
    }
}

/// Per-user stream counts `(d_P1, d_P2, d_S1, d_S2)`.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(deny_unknown_fields)]
pub struct StreamAlloc {
    #[serde(rename = "d_P1")]
    pub d_p1: usize,
    #[serde(rename = "d_P2")]
    pub d_p2: usize,
    #[serde(rename = "d_S1")]
    pub d_s1: usize,
    #[serde(rename = "d_S2")]
    pub d_s2: usize,
}

impl StreamAlloc {
    pub const fn new(d_p1: usize, d_p2: usize, d_s1: usize, d_s2: usize) -> Self {
        Self {
            d_p1,
            d_p2,
            d_s1,
            d_s2,
        }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.d_p1, self.d_p2, self.d_s1, self.d_s2]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&d| d == 0)
    }

    pub fn primary_sum(&self) -> usize {
        self.d_p1 + self.d_p2
    }

    pub fn secondary_sum(&self) -> usize {
        self.d_s1 + self.d_s2
    }

    /// Coordinate-wise `self <= other`.
    pub fn le_coordinatewise(&self, other: &StreamAlloc) -> bool {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .all(|(a, b)| *a <= b)
    }
}

impl std::fmt::Display for StreamAlloc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.d_p1, self.d_p2, self.d_s1, self.d_s2
        )
    }
}

/// The eight channel matrices of the two-cell network.
///
/// `h_*` are direct links, `hp_*` cross links: `hp_p*` from the secondary BS to
/// a primary user and `hp_s*` from the primary BS to a secondary user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub dims: NetworkDims,
    /// N_P x M_P
    pub h_p1: Matrix,
    pub h_p2: Matrix,
    /// N_P x M_S
    pub hp_p1: Matrix,
    pub hp_p2: Matrix,
    /// N_S x M_S
    pub h_s1: Matrix,
    pub h_s2: Matrix,
    /// N_S x M_P
    pub hp_s1: Matrix,
    pub hp_s2: Matrix,
}

impl ChannelSet {
    pub fn all(&self) -> [&Matrix; 8] {
        [
            &self.h_p1,
            &self.h_p2,
            &self.hp_p1,
            &self.hp_p2,
            &self.h_s1,
            &self.h_s2,
            &self.hp_s1,
            &self.hp_s2,
        ]
    }
}

/// Per-user noise variances and per-cell average power budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseAndPower {
    pub sigma2_p1: f64,
    pub sigma2_p2: f64,
    pub sigma2_s1: f64,
    pub sigma2_s2: f64,
    pub qav_p: f64,
    pub qav_s: f64,
}

impl Default for NoiseAndPower {
    fn default() -> Self {
        Self {
            sigma2_p1: 1.0,
            sigma2_p2: 1.0,
            sigma2_s1: 1.0,
            sigma2_s2: 1.0,
            qav_p: 1.0,
            qav_s: 1.0,
        }
    }
}

impl NoiseAndPower {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("sigma2_P1", self.sigma2_p1),
            ("sigma2_P2", self.sigma2_p2),
            ("sigma2_S1", self.sigma2_s1),
            ("sigma2_S2", self.sigma2_s2),
            ("Qav_P", self.qav_p),
            ("Qav_S", self.qav_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ScenarioError::InvalidNoisePower(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Same noise, both budgets set to `qav`.
    pub fn with_budget(&self, qav: f64) -> Self {
        Self {
            qav_p: qav,
            qav_s: qav,
            ..*self
        }
    }
}

/// 64-bit experiment seed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Child seed for sub-experiment `index` (SplitMix64 finalizer over
    /// `seed + (index + 1) * golden_gamma`).
    pub fn derive(self, index: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }

    /// The generator for sub-stream `id`.
    pub fn rng(self, id: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.0);
        rng.set_stream(id);
        rng
    }
}

/// Row-major i.i.d. standard normal matrix from sub-stream `id` of `seed`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: Seed, id: u64) -> Matrix {
    let mut rng = seed.rng(id);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Matrix::from_row_slice(rows, cols, &data)
}

pub fn generate_channels(dims: NetworkDims, seed: Seed) -> ChannelSet {
    let NetworkDims { m_p, m_s, n_p, n_s } = dims;
    ChannelSet {
        dims,
        h_p1: gaussian_matrix(n_p, m_p, seed, stream::H_P1),
        h_p2: gaussian_matrix(n_p, m_p, seed, stream::H_P2),
        hp_p1: gaussian_matrix(n_p, m_s, seed, stream::HP_P1),
        hp_p2: gaussian_matrix(n_p, m_s, seed, stream::HP_P2),
        h_s1: gaussian_matrix(n_s, m_s, seed, stream::H_S1),
        h_s2: gaussian_matrix(n_s, m_s, seed, stream::H_S2),
        hp_s1: gaussian_matrix(n_s, m_p, seed, stream::HP_S1),
        hp_s2: gaussian_matrix(n_s, m_p, seed, stream::HP_S2),
    }
}

pub fn validate_alloc(dims: &NetworkDims, d: &StreamAlloc) -> FeasibilityVerdict {
    closed_form_feasible(dims, d)
}

/// JSON noise block; field names follow the scenario file schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(rename = "sigma2_P1", default = "one")]
    pub sigma2_p1: f64,
    #[serde(rename = "sigma2_P2", default = "one")]
    pub sigma2_p2: f64,
    #[serde(rename = "sigma2_S1", default = "one")]
    pub sigma2_s1: f64,
    #[serde(rename = "sigma2_S2", default = "one")]
    pub sigma2_s2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    #[serde(rename = "Qav_P", default = "one")]
    pub qav_p: f64,
    #[serde(rename = "Qav_S", default = "one")]
    pub qav_s: f64,
}

fn one() -> f64 {
    1.0
}

fn one_trial() -> usize {
    1
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma2_p1: 1.0,
            sigma2_p2: 1.0,
            sigma2_s1: 1.0,
            sigma2_s2: 1.0,
        }
    }
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            qav_p: 1.0,
            qav_s: 1.0,
        }
    }
}

/// Rate sweep grid used by the `rates` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Stream splits as `[d_P1, d_P2, d_S1, d_S2]`.
    pub splits: Vec<[usize; 4]>,
    /// Per-cell average power budgets; each applies to both cells.
    pub budgets: Vec<f64>,
}

/// The scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub dims: NetworkDims,
    #[serde(default)]
    pub alloc: StreamAlloc,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub power: PowerConfig,
    #[serde(default)]
    pub seed: Seed,
    #[serde(default = "one_trial")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Name of the registered water-level solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waterfill: Option<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.dims.validate()?;
        self.noise_and_power().validate()?;
        if self.trials == 0 {
            return Err(ScenarioError::Invalid("trials must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.splits.is_empty() || sweep.budgets.is_empty() {
                return Err(ScenarioError::Invalid(
                    "sweep needs at least one split and one budget".into(),
                ));
            }
            if let Some(b) = sweep.budgets.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
                return Err(ScenarioError::Invalid(format!(
                    "sweep budget must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn noise_and_power(&self) -> NoiseAndPower {
        NoiseAndPower {
            sigma2_p1: self.noise.sigma2_p1,
            sigma2_p2: self.noise.sigma2_p2,
            sigma2_s1: self.noise.sigma2_s1,
            sigma2_s2: self.noise.sigma2_s2,
            qav_p: self.power.qav_p,
            qav_s: self.power.qav_s,
        }
    }

    /// Sweep splits and budgets, falling back to the single configured point.
    pub fn sweep_grid(&self) -> (Vec<StreamAlloc>, Vec<f64>) {
        match &self.sweep {
            Some(s) => (
                s.splits
                    .iter()
                    .map(|a| StreamAlloc::from_array(*a))
                    .collect(),
                s.budgets.clone(),
            ),
            None => (vec![self.alloc], vec![self.power.qav_p]),
        }
    }

    /// Canonical JSON used for digests and manifests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }
}
