//! Interference cancellation through interference alignment for the downlink
//! of a two-cell cognitive network: one primary cell and one secondary cell,
//! two users each.
//!
//! * [`numerics`]: null spaces, SVD and minimum-norm solves.
//! * [`scenario`]: antenna quartet, stream allocation, seeded channels.
//! * [`alignment`]: precoders, correction vectors, combiners, residual checks.
//! * [`dof`]: feasibility predicates and achievable DoF regions.
//! * [`rates`]: water-filling power allocation and sum-rate sweeps.
//! * [`export`]: CSV and manifest writers used by the CLI.
//! * [`cli`]: the `cogia` command line (`verify`, `dof-region`, `rates`).

pub mod alignment;
pub mod cli;
pub mod dof;
pub mod export;
pub mod numerics;
pub mod rates;
pub mod registry;
pub mod scenario;
