//! Numerical tolerances shared by every module.
//!
//! Every threshold used for feasibility, membership, interior margins and
//! certificate checks lives here so runs can be reproduced from one record.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Primal feasibility tolerance of the LP kernel.
    pub lp_feasibility: f64,
    /// Reduced-cost / KKT optimality tolerance of the LP kernel.
    pub lp_optimality: f64,
    /// Pivot magnitudes below this are treated as zero.
    pub lp_pivot: f64,
    /// Strict-interior margin for C-set checks (`g_i > strict`).
    pub strict_interior: f64,
    /// Relative margin that defines the boundary band of S.
    pub interior_eps: f64,
    /// Minimum slack accepted by certificate verification.
    pub certificate_slack: f64,
    /// Membership tolerance for runtime safety assertions.
    pub membership: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            lp_feasibility: 1e-9,
            lp_optimality: 1e-8,
            lp_pivot: 1e-11,
            strict_interior: 1e-9,
            interior_eps: 1e-7,
            certificate_slack: 1e-9,
            membership: 1e-8,
        }
    }
}
