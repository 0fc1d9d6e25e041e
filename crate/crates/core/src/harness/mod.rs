//! Configured experiments: runs, bound curves, grid sweeps and the property
//! suite, writing CSV traces and TOML headers.
//!
//! Files written per run directory:
//!
//! * `trace.csv`: `k, objective, w2_moment, kl_moment, grad_norm_sq,
//!   est_err_sq, uplink_bits, downlink_bits, cum_bits, refresh_flag`.
//! * `run_header.toml`: the configuration with resolved `"auto"` fields, the
//!   derived constants (`α, θ, p`, caps, `C, τ, Ψ`) and a result summary.
//! * `bounds.csv` (bounds) and `summary.csv` (sweep root).

pub mod bounds;
pub mod config;
pub mod run;
pub mod sweep;
pub mod validate;

pub use bounds::{bounds, BoundRow, BoundsOutcome};
pub use config::{ExperimentConfig, Mode, Resolved, StepSize, SweepGrid};
pub use run::{execute, run_experiment, RunOutcome, Summary, TraceRow};
pub use sweep::{sweep, GridPoint, SweepOutcome, SweepRow};
pub use validate::{validate, Check, ValidateOptions, ValidationReport};

use crate::error::Error;

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const CAP: i32 = 2;
    pub const VALIDATE: i32 = 3;
}

/// Exit code for a failed command: cap violations map to [`exit::CAP`],
/// everything else to [`exit::CONFIG`].
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::CapViolation { .. } => exit::CAP,
        _ => exit::CONFIG,
    }
}
