//! Fixtures shared by the acceptance checks.

pub mod stub;
