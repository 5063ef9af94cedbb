//! Shared conic interior-point machinery behind the LP and SDP solvers.

pub mod cone;
pub mod hsd;
pub mod kkt;
