//! Degrees-of-freedom feasibility and achievable regions.
//!
//! Two interchangeable [`FeasibilityOracle`]s are registered: `closed-form`
//! evaluates the analytic predicate, `constructive` runs the full alignment
//! pipeline on random channel draws. Region enumeration works with either.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::alignment::{align, check_construction};
use crate::numerics::TolerancePolicy;
use crate::registry::Registry;
use crate::scenario::{generate_channels, NetworkDims, Seed, StreamAlloc};

/// Default cap on the number of tuples a region may enumerate.
pub const DEFAULT_GRID_CAP: usize = 10_000;

/// Degenerate redraws allowed per trial before giving up.
pub const RETRIES_PER_TRIAL: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DofError {
    #[error("too many degenerate channel draws ({draws}) for {dims} with d = {alloc}")]
    TooManyDegenerateDraws {
        dims: NetworkDims,
        alloc: StreamAlloc,
        draws: usize,
    },
    #[error("grid of {size} tuples exceeds the cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },
    #[error("constructive check needs at least one trial")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionSource {
    /// Per-user secondary bound `d_Sj <= M_S - N_S`.
    Paper,
    /// Counting constraints implied by the matrix shapes.
    Structural,
    /// Conditions derived from the construction itself.
    Derived,
    /// Observed failure of an attempted construction.
    Constructive,
}

impl fmt::Display for ConditionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionSource::Paper => "paper",
            ConditionSource::Structural => "structural",
            ConditionSource::Derived => "derived",
            ConditionSource::Constructive => "constructive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub source: ConditionSource,
    /// The inequality that fails, with numbers substituted.
    pub text: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.source, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    pub violated: Vec<Violation>,
}

impl FeasibilityVerdict {
    fn from_violations(violated: Vec<Violation>) -> Self {
        Self {
            feasible: violated.is_empty(),
            violated,
        }
    }

    pub fn feasible() -> Self {
        Self::from_violations(Vec::new())
    }
}

/// Analytic feasibility predicate.
///
/// (i) `d_Sj <= M_S - N_S`; (ii) `d_Sj <= N_S`; (iii) `d_Pi <= M_P`;
/// (iv) `N_P >= d_Pi + d_S1 + d_S2` for every primary user with `d_Pi > 0`;
/// (v) `M_S >= N_P` whenever some `d_Pi > Z`.
pub fn closed_form_feasible(dims: &NetworkDims, d: &StreamAlloc) -> FeasibilityVerdict {
    let mut violated = Vec::new();
    let bound = dims.secondary_bound();
    let ds = d.secondary_sum();
    let z = dims.z();

    for (name, dj) in [("d_S1", d.d_s1), ("d_S2", d.d_s2)] {
        if dj > bound {
            violated.push(Violation {
                source: ConditionSource::Paper,
                text: format!("{name} = {dj} <= M_S - N_S = {bound}"),
            });
        }
        if dj > dims.n_s {
            violated.push(Violation {
                source: ConditionSource::Structural,
                text: format!("{name} = {dj} <= N_S = {}", dims.n_s),
            });
        }
    }
    for (name, di) in [("d_P1", d.d_p1), ("d_P2", d.d_p2)] {
        if di > dims.m_p {
            violated.push(Violation {
                source: ConditionSource::Structural,
                text: format!("{name} = {di} <= M_P = {}", dims.m_p),
            });
        }
        if di > 0 && dims.n_p < di + ds {
            violated.push(Violation {
                source: ConditionSource::Derived,
                text: format!("N_P = {} >= {name} + d_S1 + d_S2 = {}", dims.n_p, di + ds),
            });
        }
    }
    let corrected: Vec<_> = [("d_P1", d.d_p1), ("d_P2", d.d_p2)]
        .into_iter()
        .filter(|(_, di)| *di > z)
        .collect();
    if !corrected.is_empty() && dims.m_s < dims.n_p {
        let who = corrected
            .iter()
            .map(|(n, di)| format!("{n} = {di}"))
            .collect::<Vec<_>>()
            .join(", ");
        violated.push(Violation {
            source: ConditionSource::Derived,
            text: format!(
                "M_S = {} >= N_P = {} (corrections needed for {who} > Z = {z})",
                dims.m_s, dims.n_p
            ),
        });
    }
    FeasibilityVerdict::from_violations(violated)
}

/// Sub-seed for one tuple so that every tuple sees independent channels.
fn tuple_seed(seed: Seed, d: &StreamAlloc) -> Seed {
    let key = d
        .as_array()
        .iter()
        .fold(0u64, |acc, &x| (acc << 16) | (x as u64 & 0xFFFF));
    seed.derive(key)
}

/// Attempts the construction on `trials` channel draws.
///
/// Degenerate draws are redrawn, at most [`RETRIES_PER_TRIAL`] times per trial
/// on average; a structural failure on any draw makes the tuple infeasible.
pub fn constructive_check(
    dims: &NetworkDims,
    d: &StreamAlloc,
    trials: usize,
    seed: Seed,
    pol: &TolerancePolicy,
) -> Result<FeasibilityVerdict, DofError> {
    if trials == 0 {
        return Err(DofError::NoTrials);
    }
    if d.is_zero() {
        return Ok(FeasibilityVerdict::feasible());
    }
    let budget = RETRIES_PER_TRIAL * trials;
    let mut degenerate = 0;
    for t in 0..trials {
        let mut attempt = 0u64;
        loop {
            let draw = if attempt == 0 {
                seed.derive(t as u64)
            } else {
                seed.derive(t as u64).derive(attempt)
            };
            let ch = generate_channels(*dims, draw);
            let outcome =
                align(&ch, d, draw, pol).and_then(|prs| check_construction(&ch, &prs, pol));
            match outcome {
                Ok(_) => break,
                Err(e) if e.is_structural() => {
                    return Ok(FeasibilityVerdict::from_violations(vec![Violation {
                        source: ConditionSource::Constructive,
                        text: e.to_string(),
                    }]));
                }
                Err(_) => {
                    degenerate += 1;
                    if degenerate > budget {
                        return Err(DofError::TooManyDegenerateDraws {
                            dims: *dims,
                            alloc: *d,
                            draws: degenerate,
                        });
                    }
                    attempt += 1;
                }
            }
        }
    }
    Ok(FeasibilityVerdict::feasible())
}

/// A feasibility test selectable by name.
pub trait FeasibilityOracle: Send + Sync {
    fn name(&self) -> &'static str;
    fn verdict(&self, dims: &NetworkDims, d: &StreamAlloc) -> Result<FeasibilityVerdict, DofError>;
}

pub struct ClosedForm;

impl FeasibilityOracle for ClosedForm {
    fn name(&self) -> &'static str {
        "closed-form"
    }

    fn verdict(&self, dims: &NetworkDims, d: &StreamAlloc) -> Result<FeasibilityVerdict, DofError> {
        Ok(closed_form_feasible(dims, d))
    }
}

pub struct Constructive {
    pub trials: usize,
    pub seed: Seed,
    pub pol: TolerancePolicy,
}

impl FeasibilityOracle for Constructive {
    fn name(&self) -> &'static str {
        "constructive"
    }

    fn verdict(&self, dims: &NetworkDims, d: &StreamAlloc) -> Result<FeasibilityVerdict, DofError> {
        constructive_check(dims, d, self.trials, tuple_seed(self.seed, d), &self.pol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub trials: usize,
    pub seed: Seed,
    pub pol: TolerancePolicy,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: Seed(0),
            pol: TolerancePolicy::default(),
        }
    }
}

pub type OracleRegistry = Registry<dyn FeasibilityOracle, OracleParams>;

/// Registry holding `closed-form` and `constructive`.
pub fn oracle_registry() -> OracleRegistry {
    let mut reg = OracleRegistry::new("feasibility oracle");
    reg.register("closed-form", |_| Box::new(ClosedForm));
    reg.register("constructive", |p: &OracleParams| {
        Box::new(Constructive {
            trials: p.trials,
            seed: p.seed,
            pol: p.pol,
        })
    });
    reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofRegion {
    pub dims: NetworkDims,
    /// Name of the oracle that produced the region.
    pub oracle: &'static str,
    /// Every enumerated tuple with its verdict, in lexicographic order.
    pub grid: Vec<(StreamAlloc, bool)>,
    pub points: Vec<StreamAlloc>,
    /// Feasible points not dominated coordinate-wise by another feasible point.
    pub frontier: Vec<StreamAlloc>,
}

impl DofRegion {
    pub fn is_frontier(&self, d: &StreamAlloc) -> bool {
        self.frontier.binary_search(d).is_ok()
    }

    /// For each total secondary stream count, the largest total primary
    /// stream count achievable alongside it.
    pub fn projection(&self) -> Vec<(usize, usize)> {
        let mut best = std::collections::BTreeMap::new();
        for p in &self.points {
            let e = best.entry(p.secondary_sum()).or_insert(0);
            *e = (*e).max(p.primary_sum());
        }
        best.into_iter().collect()
    }
}

pub fn grid_size(dims: &NetworkDims) -> usize {
    (dims.m_p + 1).pow(2) * (dims.m_s + 1).pow(2)
}

fn dominates(a: &StreamAlloc, b: &StreamAlloc) -> bool {
    a != b && b.le_coordinatewise(a)
}

pub fn frontier_of(points: &[StreamAlloc]) -> Vec<StreamAlloc> {
    points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .copied()
        .collect()
}

/// Enumerates all tuples with `d_Pi <= M_P`, `d_Sj <= M_S`.
pub fn enumerate_region(
    dims: &NetworkDims,
    oracle: &dyn FeasibilityOracle,
    cap: usize,
) -> Result<DofRegion, DofError> {
    let size = grid_size(dims);
    if size > cap {
        return Err(DofError::GridTooLarge { size, cap });
    }
    let mut tuples = Vec::with_capacity(size);
    for d_p1 in 0..=dims.m_p {
        for d_p2 in 0..=dims.m_p {
            for d_s1 in 0..=dims.m_s {
                for d_s2 in 0..=dims.m_s {
                    tuples.push(StreamAlloc::new(d_p1, d_p2, d_s1, d_s2));
                }
            }
        }
    }
    let grid = tuples
        .par_iter()
        .map(|d| oracle.verdict(dims, d).map(|v| (*d, v.feasible)))
        .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<_> = grid.iter().filter(|(_, f)| *f).map(|(d, _)| *d).collect();
    let frontier = frontier_of(&points);
    Ok(DofRegion {
        dims: *dims,
        oracle: oracle.name(),
        grid,
        points,
        frontier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(m_p: usize, m_s: usize, n_p: usize, n_s: usize) -> NetworkDims {
        NetworkDims::new(m_p, m_s, n_p, n_s)
    }

    #[test]
    fn closed_form_examples() {
        let d5 = dims(5, 5, 5, 3);
        assert!(closed_form_feasible(&d5, &StreamAlloc::new(1, 0, 2, 2)).feasible);

        let v = closed_form_feasible(&d5, &StreamAlloc::new(0, 0, 3, 0));
        assert!(!v.feasible);
        assert_eq!(v.violated.len(), 1);
        assert_eq!(v.violated[0].source, ConditionSource::Paper);

        let v = closed_form_feasible(&d5, &StreamAlloc::new(2, 0, 2, 2));
        assert_eq!(
            v.violated,
            vec![Violation {
                source: ConditionSource::Derived,
                text: "N_P = 5 >= d_P1 + d_S1 + d_S2 = 6".into()
            }]
        );
    }

    #[test]
    fn corrections_condition() {
        // d_P1 > Z = 0 with M_S < N_P
        let v = closed_form_feasible(&dims(3, 2, 3, 1), &StreamAlloc::new(1, 0, 0, 0));
        assert!(!v.feasible);
        assert!(v.violated[0].text.starts_with("M_S = 2 >= N_P = 3"));
        // within Z no corrections are needed
        assert!(closed_form_feasible(&dims(5, 1, 3, 1), &StreamAlloc::new(2, 2, 0, 0)).feasible);
    }

    #[test]
    fn constructive_examples() {
        let pol = TolerancePolicy::default();
        let v = constructive_check(&dims(4, 4, 4, 4), &StreamAlloc::default(), 3, Seed(0), &pol)
            .unwrap();
        assert!(v.feasible);
        let v = constructive_check(
            &dims(5, 5, 5, 3),
            &StreamAlloc::new(1, 0, 2, 2),
            20,
            Seed(1),
            &pol,
        )
        .unwrap();
        assert!(v.feasible, "{v:?}");
        let v = constructive_check(
            &dims(3, 3, 3, 3),
            &StreamAlloc::new(0, 0, 1, 1),
            20,
            Seed(1),
            &pol,
        )
        .unwrap();
        assert!(!v.feasible);
        let v = constructive_check(
            &dims(5, 5, 5, 3),
            &StreamAlloc::new(2, 0, 2, 2),
            5,
            Seed(1),
            &pol,
        )
        .unwrap();
        assert!(!v.feasible);
        assert!(constructive_check(
            &dims(2, 2, 1, 1),
            &StreamAlloc::new(1, 0, 0, 0),
            0,
            Seed(1),
            &pol
        )
        .is_err());
    }

    #[test]
    fn region_collapses_without_secondary_room() {
        let r = enumerate_region(&dims(3, 3, 3, 3), &ClosedForm, DEFAULT_GRID_CAP).unwrap();
        assert!(r.points.iter().all(|p| p.secondary_sum() == 0));
        assert_eq!(r.projection().len(), 1);
    }

    #[test]
    fn region_of_five_five_five_three() {
        let r = enumerate_region(&dims(5, 5, 5, 3), &ClosedForm, DEFAULT_GRID_CAP).unwrap();
        let max_s = r.points.iter().map(|p| p.secondary_sum()).max().unwrap();
        assert_eq!(max_s, 4);
        for p in r.points.iter().filter(|p| p.secondary_sum() == 4) {
            assert!(p.d_p1 <= 1 && p.d_p2 <= 1);
        }
        assert!(r.projection().contains(&(4, 2)));
    }

    #[test]
    fn frontier_is_antichain() {
        let r = enumerate_region(&dims(4, 5, 3, 2), &ClosedForm, DEFAULT_GRID_CAP).unwrap();
        for a in &r.frontier {
            assert!(r.points.contains(a));
            for b in &r.frontier {
                assert!(!dominates(a, b));
            }
        }
        assert!(!r.frontier.is_empty());
    }

    #[test]
    fn grid_cap_is_enforced() {
        let err = enumerate_region(&dims(16, 16, 1, 1), &ClosedForm, DEFAULT_GRID_CAP).unwrap_err();
        assert_eq!(
            err,
            DofError::GridTooLarge {
                size: 83521,
                cap: 10_000
            }
        );
    }

    #[test]
    fn registry_builds_both_oracles() {
        let reg = oracle_registry();
        assert_eq!(
            reg.names().collect::<Vec<_>>(),
            vec!["closed-form", "constructive"]
        );
        let params = OracleParams {
            trials: 3,
            ..Default::default()
        };
        let d3 = dims(3, 4, 3, 2);
        let a = enumerate_region(
            &d3,
            &*reg.create("closed-form", &params).unwrap(),
            DEFAULT_GRID_CAP,
        )
        .unwrap();
        let b = enumerate_region(
            &d3,
            &*reg.create("constructive", &params).unwrap(),
            DEFAULT_GRID_CAP,
        )
        .unwrap();
        assert_eq!(a.grid, b.grid);
        assert_eq!(b.oracle, "constructive");
        assert!(reg.create("simplex", &params).is_err());
    }
}
