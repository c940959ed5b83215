//! Coercivity of the single-model value in the density:
//! `(1+x)‖Z‖^l ≥ u_Q(x) ≥ min(1, x)‖Z‖^a` for the η* modular with `Y ≡ 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::FiniteMarket;
use crate::orlicz::{amemiya_norm, luxemburg_norm, Modular, ModularKind};
use crate::par;
use crate::robust::classical_u_q;
use crate::utility::UtilityFunction;

const SLACK: f64 = 1e-8;

/// Random probability density on the market: exponential draws raised to a
/// random power (so some densities are nearly flat and some very peaked),
/// normalised to mean one.
pub fn random_density(market: &FiniteMarket, rng: &mut impl Rng) -> Vec<f64> {
    let shape = rng.random_range(0.2..3.0);
    let raw: Vec<f64> = (0..market.n())
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e.powf(shape)
        })
        .collect();
    let mean = market.mean(&raw);
    raw.iter().map(|r| r / mean).collect()
}

/// `count` densities drawn from independent per-index streams of `seed`.
pub fn random_densities(market: &FiniteMarket, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| random_density(market, &mut ChaCha8Rng::seed_from_u64(par::task_seed(seed, k))))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichRow {
    pub density: usize,
    pub x: f64,
    pub u_q: f64,
    pub luxemburg: f64,
    pub amemiya: f64,
    /// `(1+x)‖Z‖^l`.
    pub upper: f64,
    /// `min(1,x)‖Z‖^a`.
    pub lower: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    pub violations: usize,
    /// Smallest `upper − u_q` over all rows.
    pub min_upper_margin: f64,
    /// Smallest `u_q − lower` over all rows.
    pub min_lower_margin: f64,
}

/// Evaluates both bounds for every density and wealth level. Densities must be
/// nonnegative with mean one.
pub fn sandwich_check(
    market: &FiniteMarket,
    densities: &[Vec<f64>],
    uf: &UtilityFunction,
    wealths: &[f64],
) -> Result<SandwichReport> {
    if let Some(x) = wealths.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::domain(format!("wealth must be positive, got {x}")));
    }
    let modular = Modular::new(market, uf, ModularKind::EtaStar);
    let per_density = par::map_indexed(densities.len(), |d| -> Result<Vec<SandwichRow>> {
        let z = &densities[d];
        let luxemburg = luxemburg_norm(&modular, z)?;
        let amemiya = amemiya_norm(&modular, z)?;
        wealths
            .iter()
            .map(|&x| {
                let u_q = classical_u_q(market, uf, z, x)?.u;
                let upper = (1.0 + x) * luxemburg;
                let lower = x.min(1.0) * amemiya;
                let holds = upper - u_q >= -SLACK * (1.0 + upper.abs()) && u_q - lower >= -SLACK * (1.0 + lower.abs());
                Ok(SandwichRow {
                    density: d,
                    x,
                    u_q,
                    luxemburg,
                    amemiya,
                    upper,
                    lower,
                    holds,
                })
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_density {
        rows.extend(r?);
    }
    let violations = rows.iter().filter(|r| !r.holds).count();
    let min_upper_margin = rows.iter().map(|r| r.upper - r.u_q).fold(f64::INFINITY, f64::min);
    let min_lower_margin = rows.iter().map(|r| r.u_q - r.lower).fold(f64::INFINITY, f64::min);
    Ok(SandwichReport {
        rows,
        violations,
        min_upper_margin,
        min_lower_margin,
    })
}
