use serde::Serialize;

use crate::dual::DualSolution;
use crate::error::{Error, Result};
use crate::market::{ConstraintKind, ConstraintSet, FiniteMarket};
use crate::utility::UtilityFunction;

/// Largest residual of each part of the optimality system.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    /// Normalization, constraint satisfaction and nonnegativity of `Z`.
    pub feasibility: f64,
    /// Complementary slackness and multiplier signs, which certify
    /// `⟨g, Θ(Z)⟩ ≤ ⟨g, f⟩` over the polytope for GE/EQ constraints.
    pub variational: f64,
    /// `max_i |Z_i − y·(U⁻¹)'((w_i)₊)|`.
    pub pointwise: f64,
}

impl OptimalityReport {
    pub fn max(&self) -> f64 {
        self.feasibility.max(self.variational).max(self.pointwise)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Re-checks a dual solution against the three-part optimality system.
pub fn verify_optimality(
    market: &FiniteMarket,
    constraints: &ConstraintSet,
    uf: &UtilityFunction,
    y: f64,
    sol: &DualSolution,
) -> Result<OptimalityReport> {
    let rows = constraints.resolve(market)?;
    let n = market.n();
    if sol.z.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: sol.z.len(),
        });
    }
    if sol.point.g.len() != rows.len() {
        return Err(Error::LengthMismatch {
            expected: rows.len(),
            got: sol.point.g.len(),
        });
    }
    let z = &sol.z;
    let mut feasibility = (market.mean(z) - 1.0).abs();
    feasibility = z.iter().fold(feasibility, |m, v| m.max(-v));
    let mut variational = 0.0_f64;
    for (g, r) in sol.point.g.iter().zip(&rows) {
        let slack = market.mean_by(|i| z[i] * r.h[i]) - r.bound;
        match r.kind {
            ConstraintKind::Ge => {
                feasibility = feasibility.max(-slack);
                variational = variational.max(-g);
            }
            ConstraintKind::Eq => feasibility = feasibility.max(slack.abs()),
        }
        variational = variational.max((g * slack).abs());
    }
    let pointwise = (0..n).fold(0.0_f64, |m, i| {
        let w = sol.point.level(&rows, i);
        let target = if w <= 0.0 { 0.0 } else { y * uf.inv_prime(w) };
        m.max((z[i] - target).abs())
    });
    Ok(OptimalityReport {
        feasibility: feasibility.max(0.0),
        variational: variational.max(0.0),
        pointwise,
    })
}
