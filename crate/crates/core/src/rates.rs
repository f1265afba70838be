//! Water-filling power allocation and achievable sum rates.
//!
//! Each cell solves
//!
//! ```text
//! max  1/2 sum_i log2 det(I + A_i Q_i A_i^T / sigma_i^2)
//! s.t. Q_i >= 0,  1/2 sum_i tr(V_i Q_i V_i^T) <= Qav
//! ```
//!
//! where `A_i` is the combined effective channel of user `i` and `V_i` its
//! precoder. With `A_i = Phi_i diag(gamma_i) Psi_i^T`, the covariance is
//! `Q_i = Psi_i diag(q_i) Psi_i^T` with `q_l = (lambda - sigma_i^2 / gamma_l^2)^+`
//! and one water level `lambda` shared by all streams of the cell. The level
//! is set so the trace constraint holds with equality; because the columns of
//! `V_i` need not be orthogonal, each eigen-stream carries a transmit cost
//! `c_l = |V_i psi_l|^2` in that constraint.

use rayon::prelude::*;
use thiserror::Error;

use crate::alignment::{
    align, check_construction, effective_channels, AlignmentError, EffectiveChannels,
    PrecoderReceiverSet,
};
use crate::dof::{closed_form_feasible, RETRIES_PER_TRIAL};
use crate::numerics::{svd_factor, Matrix, TolerancePolicy, Vector};
use crate::registry::Registry;
use crate::scenario::{
    generate_channels, ChannelSet, NetworkDims, NoiseAndPower, Seed, StreamAlloc,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("invalid power budget {0}")]
    InvalidBudget(f64),
    #[error("split {alloc} is infeasible for {dims}: {reasons}")]
    InfeasibleSplit {
        dims: NetworkDims,
        alloc: StreamAlloc,
        reasons: String,
    },
    #[error("too many degenerate channel draws in trial {trial}")]
    TooManyDegenerateDraws { trial: usize },
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("sweep needs at least one trial")]
    NoTrials,
}

/// One stream as seen by the water-level search: its allocated power is
/// `(lambda - floor)^+` and that power costs `cost` in the trace constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamLevel {
    pub floor: f64,
    pub cost: f64,
}

fn constraint_at(levels: &[StreamLevel], lambda: f64) -> f64 {
    levels
        .iter()
        .map(|s| s.cost * (lambda - s.floor).max(0.0))
        .sum()
}

/// Finds the water level `lambda` solving `sum_l cost_l (lambda - floor_l)^+ = budget`.
pub trait WaterLevelSolver: Send + Sync {
    fn name(&self) -> &'static str;
    /// `levels` is nonempty, every cost positive and every floor finite.
    fn solve(&self, levels: &[StreamLevel], budget: f64) -> f64;
}

/// Geometric bracket growth followed by bisection to machine precision.
pub struct Bisection;

impl WaterLevelSolver for Bisection {
    fn name(&self) -> &'static str {
        "bisection"
    }

    fn solve(&self, levels: &[StreamLevel], budget: f64) -> f64 {
        let max_floor = levels.iter().map(|s| s.floor).fold(0.0, f64::max);
        let mut lo = 0.0_f64;
        let mut hi = max_floor + budget * levels.len() as f64;
        while constraint_at(levels, hi) < budget {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if constraint_at(levels, mid) < budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Exact solution by scanning active sets in order of increasing floor.
pub struct ActiveSet;

impl WaterLevelSolver for ActiveSet {
    fn name(&self) -> &'static str {
        "active-set"
    }

    fn solve(&self, levels: &[StreamLevel], budget: f64) -> f64 {
        let mut sorted = levels.to_vec();
        sorted.sort_by(|a, b| a.floor.total_cmp(&b.floor));
        let (mut weight, mut weighted_floor) = (0.0, 0.0);
        for (k, s) in sorted.iter().enumerate() {
            weight += s.cost;
            weighted_floor += s.cost * s.floor;
            let lambda = (budget + weighted_floor) / weight;
            if sorted.get(k + 1).is_none_or(|next| lambda <= next.floor) {
                return lambda;
            }
        }
        unreachable!("the last active set always accepts")
    }
}

pub type SolverRegistry = Registry<dyn WaterLevelSolver>;

pub const DEFAULT_SOLVER: &str = "bisection";

/// Registry holding `bisection` and `active-set`.
pub fn solver_registry() -> SolverRegistry {
    let mut reg = SolverRegistry::new("water-level solver");
    reg.register("bisection", |_| Box::new(Bisection));
    reg.register("active-set", |_| Box::new(ActiveSet));
    reg
}

/// One user's input to the joint water-filling of a cell.
#[derive(Debug, Clone)]
pub struct UserChannel<'a> {
    /// Singular values of the combined effective channel, nonincreasing.
    pub gammas: &'a Vector,
    /// Right singular vectors (d x d).
    pub right: &'a Matrix,
    /// Transmit precoder (antennas x d).
    pub precoder: &'a Matrix,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserAllocation {
    /// Power on each eigen-stream.
    pub per_stream_power: Vector,
    /// Transmit cost `|V psi_l|^2` of each eigen-stream.
    pub stream_cost: Vector,
    /// `Psi diag(q) Psi^T`
    pub covariance: Matrix,
    /// `tr(V Q V^T)`
    pub trace_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillResult {
    pub lambda: f64,
    pub users: Vec<UserAllocation>,
    /// `sum_i tr(V_i Q_i V_i^T)`
    pub achieved_constraint: f64,
    pub budget: f64,
    /// Set when no stream has a usable gain; the allocation is then all zero.
    pub no_positive_gain: bool,
}

/// KKT residuals of a water-filling solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktCertificate {
    /// Largest `|q_l - (lambda - floor_l)|` over active streams.
    pub active_gap: f64,
    /// Largest `lambda - floor_l` over inactive streams (should be <= 0).
    pub inactive_excess: f64,
    /// `|achieved - budget| / budget` when some stream is active.
    pub budget_gap: f64,
}

impl KktCertificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.active_gap <= tol && self.inactive_excess <= tol && self.budget_gap <= tol
    }
}

fn levels_for(
    users: &[UserChannel<'_>],
    pol: &TolerancePolicy,
) -> (Vec<Vec<Option<StreamLevel>>>, Vec<Vector>) {
    let gamma_max = users
        .iter()
        .flat_map(|u| u.gammas.iter().cloned())
        .fold(0.0, f64::max);
    let mut levels = Vec::with_capacity(users.len());
    let mut costs = Vec::with_capacity(users.len());
    for u in users {
        let d = u.gammas.len();
        let cost = Vector::from_iterator(
            d,
            (0..d).map(|l| (u.precoder * u.right.column(l)).norm_squared()),
        );
        let user_levels = (0..d)
            .map(|l| {
                let g = u.gammas[l];
                let alive = gamma_max > 0.0 && g > pol.rank_tol * gamma_max && cost[l] > 0.0;
                alive.then(|| StreamLevel {
                    floor: u.sigma2 / (g * g),
                    cost: cost[l],
                })
            })
            .collect();
        levels.push(user_levels);
        costs.push(cost);
    }
    (levels, costs)
}

/// Joint water-filling of all streams of one cell under a single budget on
/// `sum_i tr(V_i Q_i V_i^T)`.
pub fn waterfill(
    users: &[UserChannel<'_>],
    budget: f64,
    solver: &dyn WaterLevelSolver,
    pol: &TolerancePolicy,
) -> Result<WaterfillResult, RateError> {
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(RateError::InvalidBudget(budget));
    }
    let (levels, costs) = levels_for(users, pol);
    let active: Vec<StreamLevel> = levels.iter().flatten().flatten().copied().collect();
    let no_positive_gain = active.is_empty();
    let lambda = if no_positive_gain {
        0.0
    } else if budget == 0.0 {
        active.iter().map(|s| s.floor).fold(f64::INFINITY, f64::min)
    } else {
        solver.solve(&active, budget)
    };

    let mut out = Vec::with_capacity(users.len());
    let mut achieved = 0.0;
    for ((u, user_levels), cost) in users.iter().zip(&levels).zip(costs) {
        let q = Vector::from_iterator(
            user_levels.len(),
            user_levels
                .iter()
                .map(|s| s.map_or(0.0, |s| (lambda - s.floor).max(0.0))),
        );
        let covariance = u.right * Matrix::from_diagonal(&q) * u.right.transpose();
        let trace_power = (u.precoder * &covariance * u.precoder.transpose()).trace();
        achieved += trace_power;
        out.push(UserAllocation {
            per_stream_power: q,
            stream_cost: cost,
            covariance,
            trace_power,
        });
    }
    Ok(WaterfillResult {
        lambda,
        users: out,
        achieved_constraint: achieved,
        budget,
        no_positive_gain,
    })
}

/// KKT certificate of `result` against the inputs it was computed from.
pub fn kkt_certificate(
    users: &[UserChannel<'_>],
    result: &WaterfillResult,
    pol: &TolerancePolicy,
) -> KktCertificate {
    let (levels, _) = levels_for(users, pol);
    let mut cert = KktCertificate {
        inactive_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut any_active = false;
    for (user_levels, alloc) in levels.iter().zip(&result.users) {
        for (s, &q) in user_levels.iter().zip(alloc.per_stream_power.iter()) {
            let Some(s) = s else { continue };
            if q > 0.0 {
                any_active = true;
                cert.active_gap = cert.active_gap.max((q - (result.lambda - s.floor)).abs());
            } else {
                cert.inactive_excess = cert.inactive_excess.max(result.lambda - s.floor);
            }
        }
    }
    cert.inactive_excess = cert.inactive_excess.max(0.0);
    if any_active {
        cert.budget_gap = (result.achieved_constraint - result.budget).abs() / result.budget;
    }
    cert
}

/// `1/2 log2 det(I + A Q A^T / sigma2)`.
pub fn user_rate(effective: &Matrix, covariance: &Matrix, sigma2: f64) -> f64 {
    let n = effective.nrows();
    if n == 0 || effective.ncols() == 0 {
        return 0.0;
    }
    let m = Matrix::identity(n, n) + effective * covariance * effective.transpose() / sigma2;
    let chol = m
        .cholesky()
        .expect("I + A Q A^T is positive definite for PSD Q");
    let log_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    0.5 * log_det / std::f64::consts::LN_2
}

/// One user of a cell: combined effective channel, precoder, noise.
#[derive(Debug, Clone)]
pub struct CellUser {
    pub effective: Matrix,
    pub precoder: Matrix,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRate {
    pub rate: f64,
    pub allocation: WaterfillResult,
    pub kkt: KktCertificate,
}

/// Water-filled sum rate of a cell with per-cell average budget `qav`
/// (the trace budget is `2 * qav` because of the 1/2 in the constraint).
pub fn cell_sum_rate(
    users: &[CellUser],
    qav: f64,
    solver: &dyn WaterLevelSolver,
    pol: &TolerancePolicy,
) -> Result<CellRate, RateError> {
    let svds: Vec<_> = users.iter().map(|u| svd_factor(&u.effective)).collect();
    let inputs: Vec<UserChannel<'_>> = users
        .iter()
        .zip(&svds)
        .map(|(u, s)| UserChannel {
            gammas: &s.singular_values,
            right: &s.right,
            precoder: &u.precoder,
            sigma2: u.sigma2,
        })
        .collect();
    let allocation = waterfill(&inputs, 2.0 * qav, solver, pol)?;
    let kkt = kkt_certificate(&inputs, &allocation, pol);
    let rate = users
        .iter()
        .zip(&allocation.users)
        .map(|(u, a)| user_rate(&u.effective, &a.covariance, u.sigma2))
        .sum();
    Ok(CellRate {
        rate,
        allocation,
        kkt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryCellRate {
    pub cell: CellRate,
    /// `1/2 sum_i tr(Vbar_i Q_i Vbar_i^T)`: secondary power spent on
    /// corrections, which neither cell's constraint charges.
    pub correction_power: f64,
}

pub fn primary_users(
    prs: &PrecoderReceiverSet,
    eff: &EffectiveChannels,
    np: &NoiseAndPower,
) -> [CellUser; 2] {
    [
        CellUser {
            effective: prs.u_p1.transpose() * &eff.g_p1,
            precoder: prs.v_p1.clone(),
            sigma2: np.sigma2_p1,
        },
        CellUser {
            effective: prs.u_p2.transpose() * &eff.g_p2,
            precoder: prs.v_p2.clone(),
            sigma2: np.sigma2_p2,
        },
    ]
}

pub fn secondary_users(
    prs: &PrecoderReceiverSet,
    eff: &EffectiveChannels,
    np: &NoiseAndPower,
) -> [CellUser; 2] {
    [
        CellUser {
            effective: eff.d_s1.clone(),
            precoder: prs.v_s1.clone(),
            sigma2: np.sigma2_s1,
        },
        CellUser {
            effective: eff.d_s2.clone(),
            precoder: prs.v_s2.clone(),
            sigma2: np.sigma2_s2,
        },
    ]
}

/// Primary-cell sum rate `R_P`.
pub fn pcell_sum_rate(
    prs: &PrecoderReceiverSet,
    eff: &EffectiveChannels,
    np: &NoiseAndPower,
    solver: &dyn WaterLevelSolver,
    pol: &TolerancePolicy,
) -> Result<PrimaryCellRate, RateError> {
    let cell = cell_sum_rate(&primary_users(prs, eff, np), np.qav_p, solver, pol)?;
    let correction_power = 0.5
        * [&prs.vbar_p1, &prs.vbar_p2]
            .iter()
            .zip(&cell.allocation.users)
            .map(|(vbar, a)| (*vbar * &a.covariance * vbar.transpose()).trace())
            .sum::<f64>();
    Ok(PrimaryCellRate {
        cell,
        correction_power,
    })
}

/// Secondary-cell sum rate `R_S`, interference-free under ideal dirty-paper
/// coding against the known primary signals.
pub fn scell_sum_rate(
    prs: &PrecoderReceiverSet,
    eff: &EffectiveChannels,
    np: &NoiseAndPower,
    solver: &dyn WaterLevelSolver,
    pol: &TolerancePolicy,
) -> Result<CellRate, RateError> {
    cell_sum_rate(&secondary_users(prs, eff, np), np.qav_s, solver, pol)
}

/// Mean rates of one `(split, budget)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub qav: f64,
    pub alloc: StreamAlloc,
    pub r_p: f64,
    pub r_s: f64,
    pub r_p_stderr: f64,
    pub r_s_stderr: f64,
    pub trials: usize,
    /// Mean uncharged correction power.
    pub correction_power: f64,
}

#[derive(Debug, Clone)]
pub struct SweepPlan<'a> {
    pub dims: NetworkDims,
    pub splits: &'a [StreamAlloc],
    pub budgets: &'a [f64],
    pub noise: NoiseAndPower,
    pub trials: usize,
    pub seed: Seed,
}

/// Aligns every split on the channel draw of `trial`, redrawing degenerate
/// channels up to [`RETRIES_PER_TRIAL`] times.
pub fn aligned_draw(
    dims: NetworkDims,
    splits: &[StreamAlloc],
    seed: Seed,
    trial: usize,
    pol: &TolerancePolicy,
) -> Result<(ChannelSet, Vec<PrecoderReceiverSet>), RateError> {
    let base = seed.derive(trial as u64);
    'attempt: for attempt in 0..=RETRIES_PER_TRIAL as u64 {
        let draw = if attempt == 0 {
            base
        } else {
            base.derive(attempt)
        };
        let ch = generate_channels(dims, draw);
        let mut sets = Vec::with_capacity(splits.len());
        for d in splits {
            match align(&ch, d, draw, pol).and_then(|prs| {
                check_construction(&ch, &prs, pol)?;
                Ok(prs)
            }) {
                Ok(prs) => sets.push(prs),
                Err(e) if e.is_structural() => return Err(e.into()),
                Err(_) => continue 'attempt,
            }
        }
        return Ok((ch, sets));
    }
    Err(RateError::TooManyDegenerateDraws { trial })
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo rate region: one [`RatePoint`] per `(budget, split)`, budgets
/// outermost. All splits and budgets share the same channel draws.
pub fn rate_region_sweep(
    cfg: &SweepPlan<'_>,
    solver: &dyn WaterLevelSolver,
    pol: &TolerancePolicy,
) -> Result<Vec<RatePoint>, RateError> {
    if cfg.trials == 0 {
        return Err(RateError::NoTrials);
    }
    for &b in cfg.budgets {
        if !(b.is_finite() && b > 0.0) {
            return Err(RateError::InvalidBudget(b));
        }
    }
    for d in cfg.splits {
        let v = closed_form_feasible(&cfg.dims, d);
        if !v.feasible {
            return Err(RateError::InfeasibleSplit {
                dims: cfg.dims,
                alloc: *d,
                reasons: v
                    .violated
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
    }

    // per trial: [budget][split] -> (R_P, R_S, correction power)
    let per_trial: Vec<Vec<Vec<(f64, f64, f64)>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let (ch, sets) = aligned_draw(cfg.dims, cfg.splits, cfg.seed, t, pol)?;
            let effs: Vec<_> = sets
                .iter()
                .map(|prs| effective_channels(&ch, prs))
                .collect();
            cfg.budgets
                .iter()
                .map(|&b| {
                    let np = cfg.noise.with_budget(b);
                    sets.iter()
                        .zip(&effs)
                        .map(|(prs, eff)| {
                            let p = pcell_sum_rate(prs, eff, &np, solver, pol)?;
                            let s = scell_sum_rate(prs, eff, &np, solver, pol)?;
                            Ok((p.cell.rate, s.rate, p.correction_power))
                        })
                        .collect::<Result<Vec<_>, RateError>>()
                })
                .collect::<Result<Vec<_>, RateError>>()
        })
        .collect::<Result<Vec<_>, RateError>>()?;

    let mut points = Vec::with_capacity(cfg.budgets.len() * cfg.splits.len());
    for (bi, &qav) in cfg.budgets.iter().enumerate() {
        for (si, d) in cfg.splits.iter().enumerate() {
            let rp: Vec<f64> = per_trial.iter().map(|t| t[bi][si].0).collect();
            let rs: Vec<f64> = per_trial.iter().map(|t| t[bi][si].1).collect();
            let corr = per_trial.iter().map(|t| t[bi][si].2).sum::<f64>() / cfg.trials as f64;
            let (r_p, r_p_stderr) = mean_and_stderr(&rp);
            let (r_s, r_s_stderr) = mean_and_stderr(&rs);
            points.push(RatePoint {
                qav,
                alloc: *d,
                r_p,
                r_s,
                r_p_stderr,
                r_s_stderr,
                trials: cfg.trials,
                correction_power: corr,
            });
        }
    }
    Ok(points)
}
