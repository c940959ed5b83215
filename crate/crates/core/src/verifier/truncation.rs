//! The mean-constrained set `{Q : E_Q[h] ≥ A}` with `h = S_T` is not closed
//! under convergence in probability: the conditional laws `Q_n = P(· | h ≥ nA)`
//! all belong to it while their densities collapse to zero. Along that
//! sequence `u_{Q_n}` grows without bound, and the minimizers of `E[Z^r]` over
//! the set depend on the utility: affine in `h` for `r = 2` (square root
//! utility), quadratic for `r = 3/2` (`α = 1/3`), so no single measure is
//! least favourable for every utility.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dual::{solve_dual, DualOptions};
use crate::error::{Error, Result};
use crate::market::{gauss_hermite_market, ConstraintSet, FiniteMarket, LognormalSpec, TERMINAL_PRICE};
use crate::robust::classical_u_q;
use crate::utility::UtilityFunction;

#[derive(Debug, Clone, Serialize)]
pub struct TruncationRow {
    pub n: usize,
    /// `P(h ≥ nA)`.
    pub tail_prob: f64,
    /// `E_{Q_n}[h]`, at least `A` by construction.
    pub mean_h: f64,
    /// `u_{Q_n}(x)` under square-root utility.
    pub u_q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    pub a: f64,
    pub x: f64,
    pub rows: Vec<TruncationRow>,
    /// Tail probabilities strictly decrease along the sequence.
    pub tail_decreasing: bool,
    /// `u_{Q_n}` is nondecreasing along the sequence (no attained infimum drift downward).
    pub value_nondecreasing: bool,
    /// Worst-case density for `α = 1/2` (minimizer of `E[Z²]`).
    pub minimizer_half: Vec<f64>,
    /// Worst-case density for `α = 1/3` (minimizer of `E[Z^{3/2}]`).
    pub minimizer_third: Vec<f64>,
    /// `max_i |Z_{1/2} − Z_{1/3}|`.
    pub minimizer_distance: f64,
    /// Relative weighted residual of the best affine fit in `h` of `Z_{1/2}` on its support.
    pub affine_residual_half: f64,
    /// Same for `Z_{1/3}`; bounded away from zero.
    pub affine_residual_third: f64,
    /// Relative weighted residual of the best quadratic fit in `h` of `Z_{1/3}`.
    pub quadratic_residual_third: f64,
}

/// `p`-weighted least squares of `z` on `1, h, …, h^degree` over `{z > 0}`;
/// returns `‖residual‖ / ‖z‖`.
fn polynomial_residual(market: &FiniteMarket, h: &[f64], z: &[f64], degree: usize) -> f64 {
    let support: Vec<usize> = (0..z.len()).filter(|&i| z[i] > 0.0).collect();
    let p = market.probs();
    let cols = degree + 1;
    let design = DMatrix::from_fn(support.len(), cols, |r, c| p[support[r]].sqrt() * h[support[r]].powi(c as i32));
    let target = DVector::from_iterator(support.len(), support.iter().map(|&i| p[i].sqrt() * z[i]));
    let Ok(coef) = design.clone().svd(true, true).solve(&target, 1e-14) else {
        return f64::INFINITY;
    };
    let resid = &design * coef - &target;
    resid.norm() / target.norm()
}

fn worst_case(market: &FiniteMarket, constraints: &ConstraintSet, alpha: f64) -> Result<Vec<f64>> {
    let uf = UtilityFunction::power(alpha)?;
    // for power utilities the worst-case density does not depend on the level
    Ok(solve_dual(market, constraints, &uf, 1.0, &DualOptions::default())?.z)
}

/// Builds the truncated sequence on a lognormal quadrature market for
/// `n = 1..=levels` (stopping early once the tail event is empty) and
/// computes the two worst-case densities for the constraint `E_Q[S_T] ≥ A`.
pub fn truncation_check(spec: &LognormalSpec, a: f64, x: f64, levels: usize) -> Result<TruncationReport> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::domain(format!("A must be positive, got {a}")));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("wealth must be positive, got {x}")));
    }
    let market = gauss_hermite_market(spec)?;
    let h = market.observable(TERMINAL_PRICE)?.to_vec();
    let half = UtilityFunction::power(0.5)?;
    let mut rows = Vec::new();
    for n in 1..=levels.max(1) {
        let threshold = n as f64 * a;
        let indicator: Vec<f64> = h.iter().map(|v| if *v >= threshold { 1.0 } else { 0.0 }).collect();
        let tail_prob = market.mean(&indicator);
        if tail_prob <= 0.0 {
            break;
        }
        let z: Vec<f64> = indicator.iter().map(|v| v / tail_prob).collect();
        let mean_h = market.mean_by(|i| z[i] * h[i]);
        let u_q = classical_u_q(&market, &half, &z, x)?.u;
        rows.push(TruncationRow {
            n,
            tail_prob,
            mean_h,
            u_q,
        });
    }
    let tail_decreasing = rows.windows(2).all(|w| w[1].tail_prob < w[0].tail_prob);
    let value_nondecreasing = rows.windows(2).all(|w| w[1].u_q >= w[0].u_q * (1.0 - 1e-12));

    let constraints = ConstraintSet::empty().ge(TERMINAL_PRICE, a);
    let minimizer_half = worst_case(&market, &constraints, 0.5)?;
    let minimizer_third = worst_case(&market, &constraints, 1.0 / 3.0)?;
    let minimizer_distance = minimizer_half
        .iter()
        .zip(&minimizer_third)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(TruncationReport {
        a,
        x,
        tail_decreasing,
        value_nondecreasing,
        affine_residual_half: polynomial_residual(&market, &h, &minimizer_half, 1),
        affine_residual_third: polynomial_residual(&market, &h, &minimizer_third, 1),
        quadratic_residual_third: polynomial_residual(&market, &h, &minimizer_third, 2),
        rows,
        minimizer_half,
        minimizer_third,
        minimizer_distance,
    })
}
