//! Transmit precoders, secondary correction vectors and receive combiners for
//! the two-cell cognitive downlink.
//!
//! The primary BS serves `P1` and `P2`. Its first `Z = (M_P - N_P)^+` streams
//! per user sit in the null space of the other primary user's channel; every
//! further primary stream is sent on a random unit direction and the secondary
//! BS (which knows the primary data) transmits a correction vector that cancels
//! it at the unintended primary user. Secondary streams are zero-forced inside
//! the secondary cell by null-space alignment, and primary users remove the
//! inter-cell interference with zero-forcing combiners.

use thiserror::Error;

use crate::numerics::{
    self, hstack, min_norm_right_solve, null_space_basis, orth_complement_vector, project_off_rows,
    vstack, without_row, Matrix, TolerancePolicy,
};
use crate::scenario::{gaussian_matrix, stream, ChannelSet, NetworkDims, Seed, StreamAlloc};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignmentError {
    #[error("infeasible allocation: {0}")]
    InfeasibleAlloc(String),
    #[error("degenerate channel draw: {0}")]
    DegenerateChannel(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("no zero-forcing complement: {0}")]
    NoComplement(String),
    #[error("desired stream annihilated: {0}")]
    StreamLost(String),
}

impl AlignmentError {
    /// Failures that recur on every generic draw, as opposed to measure-zero
    /// accidents of one channel realisation.
    pub fn is_structural(&self) -> bool {
        !matches!(self, AlignmentError::DegenerateChannel(_))
    }
}

/// Every transmit and receive matrix of the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderReceiverSet {
    pub alloc: StreamAlloc,
    /// `(M_P - N_P)^+`
    pub z: usize,
    /// M_P x d_P1
    pub v_p1: Matrix,
    pub v_p2: Matrix,
    /// M_S x d_Pi corrections sent by the secondary BS; columns `< z` are zero.
    pub vbar_p1: Matrix,
    pub vbar_p2: Matrix,
    /// M_S x d_Sj
    pub v_s1: Matrix,
    pub v_s2: Matrix,
    /// N_P x d_Pi
    pub u_p1: Matrix,
    pub u_p2: Matrix,
    /// N_S x d_Sj
    pub u_s1: Matrix,
    pub u_s2: Matrix,
}

/// End-to-end channels seen after precoding and correction.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    /// N_P x d_Pi, column l multiplies primary symbol l at its own user.
    pub g_p1: Matrix,
    pub g_p2: Matrix,
    /// d_Sj x d_Sj, `U_Sj^T H_Sj V_Sj`.
    pub d_s1: Matrix,
    pub d_s2: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferenceKind {
    /// Primary cross-user leakage after correction.
    PrimaryIntraCell,
    /// Secondary cross-user leakage.
    SecondaryIntraCell,
    /// Secondary streams reaching a primary user after combining.
    InterCell,
    /// Off-diagonal coupling between a user's own streams after combining.
    CrossStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceEntry {
    pub receiver: &'static str,
    pub source: &'static str,
    pub kind: InterferenceKind,
    /// Frobenius norm of the leakage relative to the magnitude of the
    /// cancelled terms (floored at 1).
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterferenceReport {
    pub entries: Vec<InterferenceEntry>,
    pub worst_case: f64,
}

impl InterferenceReport {
    fn push(
        &mut self,
        receiver: &'static str,
        source: &'static str,
        kind: InterferenceKind,
        relative: f64,
    ) {
        self.worst_case = self.worst_case.max(relative);
        self.entries.push(InterferenceEntry {
            receiver,
            source,
            kind,
            relative,
        });
    }

    pub fn worst_of(&self, kind: InterferenceKind) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.relative)
            .fold(0.0, f64::max)
    }
}

fn unit_columns(mut m: Matrix) -> Matrix {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    m
}

/// Primary precoders `(V_P1, V_P2)`.
///
/// The first `min(Z, d_Pi)` columns of `V_Pi` are null-space directions of the
/// other primary user's channel; the rest are isotropic unit vectors drawn from
/// the precoder sub-streams of `seed`.
pub fn build_primary_precoders(
    ch: &ChannelSet,
    d: &StreamAlloc,
    seed: Seed,
    pol: &TolerancePolicy,
) -> Result<(Matrix, Matrix), AlignmentError> {
    let z = ch.dims.z();
    let v1 = primary_precoder(&ch.h_p2, d.d_p1, z, seed, stream::PRECODER_P1, "P1", pol)?;
    let v2 = primary_precoder(&ch.h_p1, d.d_p2, z, seed, stream::PRECODER_P2, "P2", pol)?;
    Ok((v1, v2))
}

fn primary_precoder(
    other: &Matrix,
    streams: usize,
    z: usize,
    seed: Seed,
    stream_id: u64,
    user: &str,
    pol: &TolerancePolicy,
) -> Result<Matrix, AlignmentError> {
    let m_p = other.ncols();
    let mut v = Matrix::zeros(m_p, streams);
    if streams == 0 {
        return Ok(v);
    }
    let aligned = z.min(streams);
    if aligned > 0 {
        let null = null_space_basis(other, pol);
        if null.ncols() < aligned {
            return Err(AlignmentError::DegenerateChannel(format!(
                "null space toward the other primary user has {} < {aligned} dimensions",
                null.ncols()
            )));
        }
        v.columns_mut(0, aligned)
            .copy_from(&null.columns(0, aligned));
    }
    let free = streams - aligned;
    if free > 0 {
        let random = unit_columns(gaussian_matrix(m_p, free, seed, stream_id));
        v.columns_mut(aligned, free).copy_from(&random);
    }
    if numerics::rank(&v, pol) < streams {
        let msg =
            format!("{user}: {streams} streams on {m_p} transmit antennas are not independent");
        return Err(if streams > m_p {
            AlignmentError::InfeasibleAlloc(msg)
        } else {
            AlignmentError::DegenerateChannel(msg)
        });
    }
    Ok(v)
}

/// Secondary correction matrices `(Vbar_P1, Vbar_P2)`.
///
/// For primary stream `l >= Z` of `P1`, the correction is the minimum-norm
/// solution of `H'_P2 vbar = -H_P2 v_l`, i.e.
/// `vbar = -H'_P2^T (H'_P2 H'_P2^T)^{-1} H_P2 v_l`; symmetric for `P2`.
pub fn build_corrections(
    ch: &ChannelSet,
    v_p1: &Matrix,
    v_p2: &Matrix,
    z: usize,
    pol: &TolerancePolicy,
) -> Result<(Matrix, Matrix), AlignmentError> {
    let c1 = corrections(&ch.hp_p2, &ch.h_p2, v_p1, z, "P1", pol)?;
    let c2 = corrections(&ch.hp_p1, &ch.h_p1, v_p2, z, "P2", pol)?;
    Ok((c1, c2))
}

fn corrections(
    cross_other: &Matrix,
    direct_other: &Matrix,
    v: &Matrix,
    z: usize,
    user: &str,
    pol: &TolerancePolicy,
) -> Result<Matrix, AlignmentError> {
    let mut out = Matrix::zeros(cross_other.ncols(), v.ncols());
    for l in z..v.ncols() {
        let rhs = -(direct_other * v.column(l));
        let vbar = min_norm_right_solve(cross_other, &rhs, pol).map_err(|e| {
            AlignmentError::RankDeficient(format!(
                "correction for {user} stream {}: secondary cross channel {}x{}: {e}",
                l + 1,
                cross_other.nrows(),
                cross_other.ncols()
            ))
        })?;
        out.set_column(l, &vbar);
    }
    Ok(out)
}

/// Secondary precoders `(V_S1, V_S2)`.
///
/// Stream `g` of `S1` is the first null-space basis vector of `H_S2` stacked
/// with the first `d_S1` rows of `H_S1`, row `g` excluded. It must not be
/// orthogonal to row `g`, so the stream lands on receive coordinate `g`.
pub fn build_secondary_precoders(
    ch: &ChannelSet,
    d: &StreamAlloc,
    pol: &TolerancePolicy,
) -> Result<(Matrix, Matrix), AlignmentError> {
    let bound = ch.dims.secondary_bound();
    let v1 = secondary_precoder(&ch.h_s1, &ch.h_s2, d.d_s1, bound, "S1", pol)?;
    let v2 = secondary_precoder(&ch.h_s2, &ch.h_s1, d.d_s2, bound, "S2", pol)?;
    Ok((v1, v2))
}

fn secondary_precoder(
    own: &Matrix,
    other: &Matrix,
    streams: usize,
    bound: usize,
    user: &str,
    pol: &TolerancePolicy,
) -> Result<Matrix, AlignmentError> {
    let (n_s, m_s) = own.shape();
    let mut v = Matrix::zeros(m_s, streams);
    if streams == 0 {
        return Ok(v);
    }
    if streams > n_s {
        return Err(AlignmentError::InfeasibleAlloc(format!(
            "d_{user} = {streams} exceeds the {n_s} receive antennas available for alignment"
        )));
    }
    let stacked = vstack(&own.rows(0, streams).into_owned(), other);
    for g in 0..streams {
        let avoid = without_row(&stacked, g);
        let dir = orth_complement_vector(&avoid, pol).map_err(|_| {
            AlignmentError::InfeasibleAlloc(format!(
                "d_{user} = {streams}: aligned null space is empty (M_S - N_S = {bound})"
            ))
        })?;
        let row = own.row(g);
        if (row * &dir)[0].abs() <= pol.rank_tol * row.norm() {
            return Err(AlignmentError::DegenerateChannel(format!(
                "{user} stream {} is orthogonal to its own receive row",
                g + 1
            )));
        }
        v.set_column(g, &dir);
    }
    Ok(v)
}

/// Per-user end-to-end primary matrix `H_Pi V_Pi + H'_Pi Vbar_Pi`.
fn primary_effective(direct: &Matrix, cross: &Matrix, v: &Matrix, vbar: &Matrix) -> Matrix {
    direct * v + cross * vbar
}

/// Zero-forcing primary combiners `(U_P1, U_P2)`.
///
/// Column `l` of `U_Pi` is the normalised projection of the desired column
/// `G_Pi(:, l)` onto the orthogonal complement of the user's other desired
/// columns and of the secondary streams arriving through `H'_Pi`.
#[allow(clippy::too_many_arguments)]
pub fn build_primary_receivers(
    ch: &ChannelSet,
    v_p1: &Matrix,
    v_p2: &Matrix,
    vbar_p1: &Matrix,
    vbar_p2: &Matrix,
    v_s1: &Matrix,
    v_s2: &Matrix,
    pol: &TolerancePolicy,
) -> Result<(Matrix, Matrix), AlignmentError> {
    let v_s = hstack(v_s1, v_s2);
    let g1 = primary_effective(&ch.h_p1, &ch.hp_p1, v_p1, vbar_p1);
    let g2 = primary_effective(&ch.h_p2, &ch.hp_p2, v_p2, vbar_p2);
    let u1 = zero_forcing_combiner(&g1, &(&ch.hp_p1 * &v_s), "P1", pol)?;
    let u2 = zero_forcing_combiner(&g2, &(&ch.hp_p2 * &v_s), "P2", pol)?;
    Ok((u1, u2))
}

fn zero_forcing_combiner(
    desired: &Matrix,
    interference: &Matrix,
    user: &str,
    pol: &TolerancePolicy,
) -> Result<Matrix, AlignmentError> {
    let (n, d) = desired.shape();
    let mut u = Matrix::zeros(n, d);
    for l in 0..d {
        let others = desired.clone().remove_column(l);
        let avoid = hstack(&others, interference).transpose();
        let target = desired.column(l).into_owned();
        let Some(p) = project_off_rows(&avoid, &target, pol) else {
            return Err(AlignmentError::NoComplement(format!(
                "{user} stream {}: {} interference directions fill the {n} receive dimensions",
                l + 1,
                avoid.nrows()
            )));
        };
        let norm = p.norm();
        if norm <= pol.rank_tol * target.norm().max(f64::MIN_POSITIVE) {
            return Err(AlignmentError::StreamLost(format!(
                "{user} stream {} lies in the span of its interference",
                l + 1
            )));
        }
        u.set_column(l, &(p / norm));
    }
    Ok(u)
}

/// Selectors of the first `d_Sj` receive coordinates.
pub fn build_secondary_receivers(
    dims: &NetworkDims,
    d: &StreamAlloc,
) -> Result<(Matrix, Matrix), AlignmentError> {
    let selector = |streams: usize, user: &str| {
        if streams > dims.n_s {
            return Err(AlignmentError::InfeasibleAlloc(format!(
                "d_{user} = {streams} exceeds N_S = {}",
                dims.n_s
            )));
        }
        Ok(Matrix::identity(dims.n_s, streams))
    };
    Ok((selector(d.d_s1, "S1")?, selector(d.d_s2, "S2")?))
}

/// Runs the whole construction for one channel draw.
pub fn align(
    ch: &ChannelSet,
    d: &StreamAlloc,
    seed: Seed,
    pol: &TolerancePolicy,
) -> Result<PrecoderReceiverSet, AlignmentError> {
    let z = ch.dims.z();
    let (v_p1, v_p2) = build_primary_precoders(ch, d, seed, pol)?;
    let (vbar_p1, vbar_p2) = build_corrections(ch, &v_p1, &v_p2, z, pol)?;
    let (v_s1, v_s2) = build_secondary_precoders(ch, d, pol)?;
    let (u_p1, u_p2) =
        build_primary_receivers(ch, &v_p1, &v_p2, &vbar_p1, &vbar_p2, &v_s1, &v_s2, pol)?;
    let (u_s1, u_s2) = build_secondary_receivers(&ch.dims, d)?;
    Ok(PrecoderReceiverSet {
        alloc: *d,
        z,
        v_p1,
        v_p2,
        vbar_p1,
        vbar_p2,
        v_s1,
        v_s2,
        u_p1,
        u_p2,
        u_s1,
        u_s2,
    })
}

pub fn effective_channels(ch: &ChannelSet, prs: &PrecoderReceiverSet) -> EffectiveChannels {
    EffectiveChannels {
        g_p1: primary_effective(&ch.h_p1, &ch.hp_p1, &prs.v_p1, &prs.vbar_p1),
        g_p2: primary_effective(&ch.h_p2, &ch.hp_p2, &prs.v_p2, &prs.vbar_p2),
        d_s1: prs.u_s1.transpose() * &ch.h_s1 * &prs.v_s1,
        d_s2: prs.u_s2.transpose() * &ch.h_s2 * &prs.v_s2,
    }
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in (0..m.nrows()).filter(|&i| i != j) {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

fn relative(leak: &Matrix, scale: f64) -> f64 {
    leak.norm() / scale.max(1.0)
}

/// Residual interference of every kind the construction is meant to remove.
pub fn interference_report(
    ch: &ChannelSet,
    prs: &PrecoderReceiverSet,
    _pol: &TolerancePolicy,
) -> InterferenceReport {
    let mut report = InterferenceReport::default();

    // Primary cross-user leakage: streams of Pi at Pj, i != j.
    for (rx, src, direct, cross, v, vbar) in [
        ("P2", "P1", &ch.h_p2, &ch.hp_p2, &prs.v_p1, &prs.vbar_p1),
        ("P1", "P2", &ch.h_p1, &ch.hp_p1, &prs.v_p2, &prs.vbar_p2),
    ] {
        let leak = direct * v + cross * vbar;
        let scale = direct.norm() * v.norm() + cross.norm() * vbar.norm();
        report.push(
            rx,
            src,
            InterferenceKind::PrimaryIntraCell,
            relative(&leak, scale),
        );
    }

    for (rx, src, direct, v) in [
        ("S2", "S1", &ch.h_s2, &prs.v_s1),
        ("S1", "S2", &ch.h_s1, &prs.v_s2),
    ] {
        let leak = direct * v;
        report.push(
            rx,
            src,
            InterferenceKind::SecondaryIntraCell,
            relative(&leak, direct.norm() * v.norm()),
        );
    }

    for (rx, u, cross) in [("P1", &prs.u_p1, &ch.hp_p1), ("P2", &prs.u_p2, &ch.hp_p2)] {
        for (src, v) in [("S1", &prs.v_s1), ("S2", &prs.v_s2)] {
            let leak = u.transpose() * (cross * v);
            let scale = u.norm() * cross.norm() * v.norm();
            report.push(rx, src, InterferenceKind::InterCell, relative(&leak, scale));
        }
    }

    let eff = effective_channels(ch, prs);
    for (rx, combined) in [
        ("P1", prs.u_p1.transpose() * &eff.g_p1),
        ("P2", prs.u_p2.transpose() * &eff.g_p2),
        ("S1", eff.d_s1.clone()),
        ("S2", eff.d_s2.clone()),
    ] {
        let scale = combined.norm();
        report.push(
            rx,
            rx,
            InterferenceKind::CrossStream,
            off_diagonal_norm(&combined) / scale.max(1.0),
        );
    }
    report
}

/// Residual interference within `zero_tol` and every desired stream alive
/// after combining. Excess residual is blamed on the draw (ill-conditioned
/// channels), a lost stream on the allocation.
pub fn check_construction(
    ch: &ChannelSet,
    prs: &PrecoderReceiverSet,
    pol: &TolerancePolicy,
) -> Result<InterferenceReport, AlignmentError> {
    let report = interference_report(ch, prs, pol);
    if report.worst_case > pol.zero_tol {
        return Err(AlignmentError::DegenerateChannel(format!(
            "residual interference {:.3e} above {:.1e}",
            report.worst_case, pol.zero_tol
        )));
    }
    let eff = effective_channels(ch, prs);
    for (user, combined) in [
        ("P1", prs.u_p1.transpose() * &eff.g_p1),
        ("P2", prs.u_p2.transpose() * &eff.g_p2),
        ("S1", eff.d_s1),
        ("S2", eff.d_s2),
    ] {
        if combined.ncols() > 0 && numerics::rank(&combined, pol) < combined.ncols() {
            return Err(AlignmentError::StreamLost(format!(
                "{user}: combined effective channel is rank deficient"
            )));
        }
    }
    Ok(report)
}
