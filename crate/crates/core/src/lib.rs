//! Relational quantum dynamics with quantum clocks.
//!
//! The crate evaluates measurement statistics in a timeless (constraint-based)
//! formulation of quantum mechanics, where time is read off a quantum clock
//! entangled with the system. Two measurement pictures are implemented and
//! cross-checked: twirled observables ([`twirled`]) and purified measurements
//! ([`purified`]), for ideal clocks and for clocks with a bounded energy
//! spectrum.

pub mod clock;
pub mod discrete;
pub mod error;
pub mod experiments;
pub mod measurement;
pub mod order;
pub mod purified;
pub mod tensor;
pub mod twirled;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
