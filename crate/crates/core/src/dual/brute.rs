//! Brute-force primal oracle: minimizes `E[γ*_y(Z)]` directly over the
//! density polytope. Independent of the multiplier machinery except for the
//! polytope projection, which is itself a tiny concave dual.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::concave::{maximize, AscentOptions, Eval};
use crate::error::{Error, Result};
use crate::market::{feasibility_check, ConstraintKind, ConstraintSet, FiniteMarket, ResolvedConstraint};
use crate::numeric::KahanSum;
use crate::par;
use crate::utility::UtilityFunction;

const MAX_STATES: usize = 12;

#[derive(Debug, Clone)]
pub struct BruteForceOptions {
    pub starts: usize,
    pub seed: u64,
    /// Dense grid sweep for `n ≤ 4` (GE-only constraint sets).
    pub grid: bool,
    pub max_iter: usize,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        Self {
            starts: 100,
            seed: 42,
            grid: true,
            max_iter: 3000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceResult {
    /// Best value found (an upper bound on the primal infimum).
    pub value: f64,
    pub z: Vec<f64>,
    /// Best value on the grid, when the sweep ran.
    pub grid_value: Option<f64>,
}

/// Linear rows `E[Z·c_k] (≥ | =) b_k`, with the normalization first.
struct Polytope {
    p: Vec<f64>,
    c: Vec<Vec<f64>>,
    b: Vec<f64>,
    nonneg: Vec<bool>,
}

impl Polytope {
    fn new(market: &FiniteMarket, rows: &[ResolvedConstraint]) -> Self {
        let n = market.n();
        let mut c = vec![vec![1.0; n]];
        let mut b = vec![1.0];
        let mut nonneg = vec![false];
        for r in rows {
            c.push(r.h.clone());
            b.push(r.bound);
            nonneg.push(r.kind == ConstraintKind::Ge);
        }
        Self {
            p: market.probs().to_vec(),
            c,
            b,
            nonneg,
        }
    }

    fn primal(&self, v: &[f64], mu: &[f64]) -> Vec<f64> {
        (0..v.len())
            .map(|i| {
                let s = v[i] + mu.iter().zip(&self.c).map(|(m, c)| m * c[i]).sum::<f64>();
                s.max(0.0)
            })
            .collect()
    }

    /// `p`-weighted Euclidean projection of `v`, via the concave dual in the
    /// row multipliers: `Z(μ) = (v + Σ μ_k c_k)₊`.
    fn project(&self, v: &[f64], warm: &mut Vec<f64>) -> Vec<f64> {
        let k = self.c.len();
        let dual = |mu: &[f64]| {
            let z = self.primal(v, mu);
            let mut value = KahanSum::new();
            let mut grad: Vec<KahanSum> = self.b.iter().map(|b| KahanSum::from_iter([*b])).collect();
            let mut hess = DMatrix::zeros(k, k);
            for (m, b) in mu.iter().zip(&self.b) {
                value.add(m * b);
            }
            for i in 0..v.len() {
                let p = self.p[i];
                let dz = z[i] - v[i];
                let lin: f64 = mu.iter().zip(&self.c).map(|(m, c)| m * c[i]).sum();
                value.add(p * (0.5 * dz * dz - lin * z[i]));
                for (g, c) in grad.iter_mut().zip(&self.c) {
                    g.add(-p * z[i] * c[i]);
                }
                if z[i] > 0.0 {
                    for a in 0..k {
                        for bb in 0..k {
                            hess[(a, bb)] -= p * self.c[a][i] * self.c[bb][i];
                        }
                    }
                }
            }
            Eval {
                value: value.total(),
                grad: grad.iter().map(|g| g.total()).collect(),
                hess,
            }
        };
        let r = maximize(
            dual,
            &self.nonneg,
            warm,
            &AscentOptions {
                tol: 1e-15,
                max_iter: 200,
                unbounded_at: f64::INFINITY,
            },
        );
        *warm = r.x.clone();
        self.primal(v, &r.x)
    }

    fn violation(&self, z: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for ((c, b), nn) in self.c.iter().zip(&self.b).zip(&self.nonneg) {
            let m: f64 = (0..z.len()).map(|i| self.p[i] * z[i] * c[i]).sum();
            worst = worst.max(if *nn { (b - m).max(0.0) } else { (m - b).abs() });
        }
        worst
    }
}

fn objective(p: &[f64], uf: &UtilityFunction, y: f64, z: &[f64]) -> f64 {
    z.iter()
        .zip(p)
        .map(|(zi, pi)| pi * uf.gamma_star(y, *zi))
        .collect::<KahanSum>()
        .total()
}

fn descend(poly: &Polytope, uf: &UtilityFunction, y: f64, start: &[f64], max_iter: usize) -> (f64, Vec<f64>) {
    let p = &poly.p;
    let mut warm = vec![0.0; poly.c.len()];
    let mut z = poly.project(start, &mut warm);
    let mut f = objective(p, uf, y, &z);
    let mut t = 1.0;
    for _ in 0..max_iter {
        let g: Vec<f64> = z.iter().map(|zi| uf.gamma_star_prime(y, *zi)).collect();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let zc = poly.project(&trial, &mut warm);
            let fc = objective(p, uf, y, &zc);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for i in 0..z.len() {
                let d = zc[i] - z[i];
                lin += p[i] * g[i] * d;
                quad += p[i] * d * d;
            }
            if fc.is_finite() && fc <= f + lin + quad / (2.0 * t) + 1e-15 * (1.0 + f.abs()) {
                accepted = Some((zc, fc, quad));
                break;
            }
            t *= 0.5;
        }
        let Some((zc, fc, quad)) = accepted else {
            break;
        };
        let mapping = quad.sqrt() / t;
        let gain = f - fc;
        z = zc;
        f = fc.min(f);
        t *= 2.0;
        if mapping <= 1e-13 || (gain >= 0.0 && gain <= 1e-16 * (1.0 + f.abs()) && mapping <= 1e-9) {
            break;
        }
    }
    (f, z)
}

/// Best feasible density on the simplex grid with spacing `1/steps` in mass
/// coordinates `q_i = p_i Z_i`.
fn grid_sweep(poly: &Polytope, uf: &UtilityFunction, y: f64, steps: usize) -> Option<(f64, Vec<f64>)> {
    let n = poly.p.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut counts = vec![0usize; n];
    fn rec(
        idx: usize,
        remaining: usize,
        counts: &mut [usize],
        steps: usize,
        poly: &Polytope,
        uf: &UtilityFunction,
        y: f64,
        best: &mut Option<(f64, Vec<f64>)>,
    ) {
        let n = counts.len();
        if idx == n - 1 {
            counts[idx] = remaining;
            let z: Vec<f64> = (0..n).map(|i| counts[i] as f64 / steps as f64 / poly.p[i]).collect();
            if poly.violation(&z) <= 1e-12 {
                let f = objective(&poly.p, uf, y, &z);
                if best.as_ref().is_none_or(|b| f < b.0) {
                    *best = Some((f, z));
                }
            }
            return;
        }
        for k in 0..=remaining {
            counts[idx] = k;
            rec(idx + 1, remaining - k, counts, steps, poly, uf, y, best);
        }
    }
    rec(0, steps, &mut counts, steps, poly, uf, y, &mut best);
    best
}

/// Minimizes `E[γ*_y(Z)]` over `{Z ≥ 0, E[Z] = 1, constraints}` by projected
/// gradient from random interior starts, plus a simplex grid sweep for small `n`.
pub fn primal_brute_force(
    market: &FiniteMarket,
    constraints: &ConstraintSet,
    uf: &UtilityFunction,
    y: f64,
    opts: &BruteForceOptions,
) -> Result<BruteForceResult> {
    let n = market.n();
    if n > MAX_STATES {
        return Err(Error::DimensionGuard(format!(
            "brute-force oracle supports at most {MAX_STATES} states, got {n}"
        )));
    }
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::domain(format!("dual level y must be positive, got {y}")));
    }
    let rows = constraints.resolve(market)?;
    let report = feasibility_check(market, constraints, false)?;
    if !report.feasible {
        return Err(Error::InfeasibleModel(Box::new(report)));
    }
    let poly = Polytope::new(market, &rows);
    let starts = opts.starts.max(1);
    let runs = par::map_indexed(starts, |s| {
        let start: Vec<f64> = if s == 0 {
            vec![1.0; n]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(par::task_seed(opts.seed, s));
            let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            let mean: f64 = raw.iter().zip(market.probs()).map(|(r, p)| r * p).sum();
            raw.iter().map(|r| r / mean).collect()
        };
        descend(&poly, uf, y, &start, opts.max_iter)
    });
    let (mut value, mut z) = runs
        .into_iter()
        .filter(|(f, z)| f.is_finite() && poly.violation(z) <= 1e-9)
        .fold((f64::INFINITY, Vec::new()), |b, r| if r.0 < b.0 { r } else { b });
    let has_eq = rows.iter().any(|r| r.kind == ConstraintKind::Eq);
    let mut grid_value = None;
    if opts.grid && !has_eq && (2..=4).contains(&n) {
        let steps = if n <= 3 { 1000 } else { 100 };
        if let Some((gv, gz)) = grid_sweep(&poly, uf, y, steps) {
            grid_value = Some(gv);
            if gv < value {
                value = gv;
                z = gz;
            }
        }
    }
    if z.is_empty() {
        return Err(Error::Convergence("no projected-gradient start produced a feasible density".into()));
    }
    Ok(BruteForceResult { value, z, grid_value })
}
