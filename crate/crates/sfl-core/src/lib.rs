//! Extended-precision numerical laboratory for scale-free rescaling analysis.
//!
//! The crate is organized around a single numeric substrate and five
//! computational layers on top of it:
//!
//! * [`bigscale`] — configurable-precision reals ([`bigscale::BigReal`]) and
//!   the dyadic scale ladder x, x^2, x^4, ..., x^(2^n) that underflows
//!   hardware floats after a handful of levels.
//! * [`cascade`] — the residual-rescaling iteration that perturbs the scale
//!   ladder with seeded random draws and the multiplicative-product solutions
//!   built from its traces.
//! * [`genint`] — ordinary fixed-node quadrature plus the measure-replacement
//!   corrections that extend it over a cascade trace, and the closed-form
//!   Cantor-style length bookkeeping.
//! * [`picardx`] — fixed-point (successive substitution) solvers for
//!   d ln tau / d ln t = f(t, tau), in standard form and with the
//!   trace-corrected integral.
//! * [`fracdim`] — recursive interval families, deterministic box counting
//!   over dyadic scale sweeps, and the ratio-based dimension estimate.
//!
//! Everything is deterministic: randomness is confined to [`rng::SplitMix64`]
//! seeded draws, quadrature nodes are fixed, and parallel sweeps (feature
//! `parallel`, on by default) collect results in task-index order so outputs
//! are independent of thread count.

pub mod bigscale;
pub mod cascade;
pub mod error;
pub mod fracdim;
pub mod genint;
pub mod parallel;
pub mod picardx;
pub mod quad;
pub mod rng;

pub use bigscale::BigReal;
pub use error::SflError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SflError>;
